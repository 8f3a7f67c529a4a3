"""Best-fit online baseline.

Decides about each request once, at its arrival, with no knowledge of
future requests: one instance per VNF, cheapest candidates that can carry
the whole flow, normal-mode CPU assignment, no backtracking, no cache and
no critical mode.  Any VNF failure rejects the request; admitted requests
keep their resources until departure with no later migration.  A request
whose VMs are cold begins service one setup step after arrival, provided
its lifetime still covers that step.
"""

from __future__ import annotations

from .heuristic import (BESTFIT_POLICY, DecisionRecord, PlanResult,
                        admit_fresh)
from .state import DeploymentState
from .workload import ServiceRequest


def bestfit_admit(state: DeploymentState, req: ServiceRequest) -> PlanResult:
    """Decide request `req` at its arrival step against the current state."""
    return admit_fresh(state, req, req.arrival, BESTFIT_POLICY)


def run_bestfit(network, services, workload):
    """Process all requests in arrival order; returns (state, records)."""
    state = DeploymentState(network, services, workload)
    records: list[DecisionRecord] = []
    for req in sorted(workload.requests, key=lambda r: (r.arrival, r.id)):
        result = bestfit_admit(state, req)
        if result.admitted:
            state.add_segment(req.id, result.segment)
            assert result.backtracks == 0
            assert all(n == 1 for n in result.instance_counts.values())
            records.append(DecisionRecord(req.arrival, req.id, True,
                                          result.segment.start, None, 0))
        else:
            records.append(DecisionRecord(req.arrival, req.id, False, None,
                                          result.reason, 0))
    state.write_lifecycle(0, workload.lifespan)
    return state, records
