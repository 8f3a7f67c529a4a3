"""Revenue, cost and objective accounting over a deployment state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .state import DeploymentState
from .units import UnitSystem


@dataclass
class MetricsReport:
    revenue: float
    link_cost: float
    cpu_cost: float
    idle_cost: float
    served_traffic: float               # Gb
    admission_fractions: dict[str, float | None] = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return self.link_cost + self.cpu_cost + self.idle_cost

    @property
    def objective(self) -> float:
        return self.revenue - self.total_cost

    @property
    def cost_per_traffic(self) -> float | None:
        if self.served_traffic <= 0:
            return None
        return self.total_cost / self.served_traffic


def compute_metrics(state: DeploymentState, units: UnitSystem) -> MetricsReport:
    """Evaluate all revenue/cost sums per step and aggregate.

    Revenue accrues at the offered ingress rate for every served step; a
    request is either served at full rate or not at all on a given step.
    """
    net = state.network
    revenue = 0.0
    served_gb = 0.0
    cpu_cost = 0.0
    for k, segs in sorted(state.plans.items()):
        svc = state.services[state.workload.by_id(k).service]
        gb_step = units.rate_to_gb_per_step(svc.ingress_rate)
        for seg in segs:
            steps = seg.end - seg.start
            revenue += svc.revenue_rate * gb_step * steps
            served_gb += gb_step * steps
            for q, inst in seg.instances():
                omega = svc.vnf(q).complexity
                cpu_cost += net.vms[inst.vm].cpu_cost * inst.rate * omega * steps

    link_cost = 0.0
    for link in net.links:
        if link.tx_cost:
            link_cost += link.tx_cost * float(state._usage[link.id].sum())

    idle_steps = state.turning_on.sum(axis=1) + state.active.sum(axis=1)
    idle_cost = float(sum(vm.idle_cost * int(idle_steps[vm.id])
                          for vm in net.vms))

    return MetricsReport(revenue, link_cost, cpu_cost, idle_cost, served_gb,
                         admission_fractions(state))


def admission_fractions(state: DeploymentState) -> dict[str, float | None]:
    """Served requests over offered requests, per service.  A request counts
    as served when it has at least one served step."""
    offered: dict[str, int] = {sid: 0 for sid in state.services}
    served: dict[str, int] = {sid: 0 for sid in state.services}
    for req in state.workload.requests:
        offered[req.service] += 1
        if state.served_steps(req.id) > 0:
            served[req.service] += 1
    return {sid: (served[sid] / offered[sid] if offered[sid] else None)
            for sid in sorted(offered)}
