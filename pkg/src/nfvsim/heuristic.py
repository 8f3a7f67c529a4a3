"""Sliding-horizon planner.

Every ``period`` steps the planner looks at the requests whose lifetime
intersects the next ``horizon`` steps, re-plans the ones already in service
(falling back to their previous deployment when re-planning fails) and then
admits new ones in decreasing order of window revenue.  Per request, a
backtracking chain deployment places VNF instances one by one: placement
and routing picks candidate (logical link, destination VM) pairs by a cost
or capacity strategy and water-fills them; CPU assignment gives each
instance the lowest service rate that meets its share of the delay target,
or the maximum rate when compensating for an earlier overrun.

Decisions only bind for the committed window; everything beyond it is
provisional and rebuilt at the next execution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .services import delay_budgets, is_chain
from .state import ABS_TOL, DeploymentState, Instance, LinkKey, Segment
from .topology import DUMMY_VM
from .workload import ServiceRequest, active_in_window, horizon_revenue
from .units import UnitSystem

log = logging.getLogger(__name__)

NORMAL, CRITICAL = "normal", "critical"
CHEAPEST, LARGEST = "cheapest", "largest"

#: rejection reason codes shared with the best-fit baseline
REASON_TRAFFIC = "traffic"
REASON_DELAY = "delay"
REASON_STRUCTURE = "structure"

_FILL_TOL = 1e-12


@dataclass
class PlannerConfig:
    horizon: int
    period: int
    k_paths: int = 3
    units: UnitSystem = field(default_factory=UnitSystem)

    def __post_init__(self):
        if not (1 <= self.period <= self.horizon):
            raise ValueError("require 1 <= period <= horizon")


@dataclass(frozen=True)
class PlanPolicy:
    """Feature switches distinguishing the planner from the online baseline."""

    use_max_instances: bool = True
    backtracking: bool = True
    compensation: bool = True
    critical_mode: bool = True
    strategies: tuple[str, ...] = (CHEAPEST, LARGEST)
    require_fit: bool = False    # destinations must fit the whole edge flow


HEURISTIC_POLICY = PlanPolicy()
BESTFIT_POLICY = PlanPolicy(use_max_instances=False, backtracking=False,
                            compensation=False, critical_mode=False,
                            strategies=(CHEAPEST,), require_fit=True)


@dataclass
class PlanContext:
    """Per-request deployment context (status, backtrack token, cache)."""

    status: str = NORMAL
    can_backtrack: bool = False
    cache_vnf: str | None = None
    cache: dict[int, float] = field(default_factory=dict)  # vm -> satisfied D
    backtracks: int = 0
    rounds: int = 0


@dataclass
class PlanResult:
    admitted: bool
    reason: str | None = None
    segment: Segment | None = None
    backtracks: int = 0
    instance_counts: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class DecisionRecord:
    window: int
    request: int
    admitted: bool
    start: int | None
    reason: str | None
    backtracks: int
    migrated: bool = False


@dataclass
class _DeployedVnf:
    q: str
    intakes: dict[int, float]
    rates: dict[int, float]
    in_routes: list[tuple[LinkKey, float]]
    delta_bar: dict[int, float]


class _Draft:
    """Transactional working set for one request's deployment attempt."""

    def __init__(self, state: DeploymentState, req: ServiceRequest,
                 span: tuple[int, int], warm_only: bool):
        self.state = state
        self.req = req
        self.svc = state.services[req.service]
        self.profile = state.profiles[req.service]
        self.chain = list(self.svc.vnf_ids)
        self.span = span
        free = state.free_vms_over(*span).copy()
        if warm_only:
            t = span[0]
            warm = state.hosted_at(t - 1)
            if t >= 1:
                warm = warm | state.turning_on[:, t - 1]
            free &= warm
        self.free = free
        self.vnfs: list[_DeployedVnf | None] = [None] * len(self.chain)
        self.hop_pending: dict[int, float] = {}
        self.dc_pending: dict[int, float] = {}

    def commit_vnf(self, i: int, rec: _DeployedVnf) -> None:
        net = self.state.network
        omega = self.svc.vnf(rec.q).complexity
        for m in rec.intakes:
            self.free[m] = False
        for m, mu in rec.rates.items():
            d = net.vms[m].datacenter
            self.dc_pending[d] = self.dc_pending.get(d, 0.0) + mu * omega
        catalog = net.logical_links
        for key, traffic in rec.in_routes:
            for hop in catalog.link(key).hops:
                self.hop_pending[hop] = self.hop_pending.get(hop, 0.0) + traffic
        self.vnfs[i] = rec

    def discard_vnf(self, i: int) -> None:
        rec = self.vnfs[i]
        if rec is None:
            return
        net = self.state.network
        omega = self.svc.vnf(rec.q).complexity
        for m in rec.intakes:
            self.free[m] = True
        for m, mu in rec.rates.items():
            d = net.vms[m].datacenter
            self.dc_pending[d] -= mu * omega
        catalog = net.logical_links
        for key, traffic in rec.in_routes:
            for hop in catalog.link(key).hops:
                self.hop_pending[hop] -= traffic
        self.vnfs[i] = None

    def residual_bw(self, key: LinkKey) -> float:
        link = self.state.network.logical_links.link(key)
        if not link.hops:
            return math.inf
        t0, t1 = self.span
        residual = math.inf
        for hop in link.hops:
            cap = self.state.network.links[hop].bandwidth
            if not math.isfinite(cap):
                continue
            used = float(self.state._usage[hop, t0:t1].max())
            used += self.hop_pending.get(hop, 0.0)
            residual = min(residual, cap - used)
        return residual

    def to_segment(self) -> Segment:
        placement: dict[str, tuple[Instance, ...]] = {}
        routing: dict = {}
        for i, rec in enumerate(self.vnfs):
            placement[rec.q] = tuple(
                Instance(m, rec.rates[m]) for m in sorted(rec.rates))
            q1 = self.chain[i - 1] if i > 0 else None
            routing[(q1, rec.q)] = tuple(rec.in_routes)
        last = self.vnfs[-1]
        alpha = self.profile.scaling[last.q]
        egress = tuple(
            ((m, DUMMY_VM, 0), alpha * last.intakes[m])
            for m in sorted(last.intakes) if alpha * last.intakes[m] > 0)
        routing[(last.q, None)] = egress
        return Segment(self.span[0], self.span[1], placement, routing)


# ---------------------------------------------------------------------------
# VPTR: placement and routing for one VNF

def vptr(draft: _Draft, i: int, n: int, strategy: str, ctx: PlanContext,
         policy: PlanPolicy):
    """Pick candidate (link, destination VM) entities for the i-th VNF and
    water-fill the edge traffic across them.

    Returns (fail_reason, in_routes, intakes); fail_reason None on success.
    On a traffic shortfall the satisfied per-source outflows are preserved
    in the context cache for a later backtracking round.
    """
    state, svc, profile = draft.state, draft.svc, draft.profile
    net = state.network
    q2 = draft.chain[i]
    q1 = draft.chain[i - 1] if i > 0 else None
    omega2 = svc.vnf(q2).complexity
    demand = profile.edge_traffic[(q1, q2)]

    if q1 is None:
        budgets = {DUMMY_VM: demand}
    else:
        prev = draft.vnfs[i - 1]
        alpha1 = profile.scaling[q1]
        budgets = {m: alpha1 * intake for m, intake in prev.intakes.items()}

    remaining = demand
    routes: list[tuple[LinkKey, float]] = []
    intakes: dict[int, float] = {}
    caps = state.vm_caps

    try:
        # consume cached outflows first: pin the previously satisfied VMs
        if policy.backtracking and ctx.cache and ctx.cache_vnf == q2:
            alpha2 = profile.scaling[q2]
            for m, d_out in sorted(ctx.cache.items()):
                if not draft.free[m] or remaining <= _FILL_TOL:
                    continue
                limit = d_out / alpha2 if alpha2 > 0 else 0.0
                cands = sorted(
                    ((link.delay, link.key) for src in sorted(budgets)
                     for link in net.logical_links.links_between(src, m)))
                got = 0.0
                for _, key in cands:
                    src = key[0]
                    room = min(budgets.get(src, 0.0), draft.residual_bw(key),
                               limit - got, remaining,
                               caps[m] / omega2 - got)
                    if room <= _FILL_TOL:
                        continue
                    routes.append((key, room))
                    budgets[src] = budgets.get(src, 0.0) - room
                    remaining -= room
                    got += room
                if got > 0:
                    intakes[m] = intakes.get(m, 0.0) + got
                    draft.free[m] = False
            ctx.cache = {}
            ctx.cache_vnf = None

        n_more = max(0, n - len(intakes))

        if remaining > _FILL_TOL:
            order, srcs, dsts, paths = _sorted_candidates(
                draft, budgets, q2, omega2, strategy, remaining, policy)
            chosen: list[int] = []
            seen: set[int] = set()
            for idx in order:
                m = int(dsts[idx])
                if m not in seen and len(seen) >= n_more:
                    continue
                seen.add(m)
                chosen.append(idx)
            if len(seen) < n_more:
                _write_cache(ctx, policy, q1, routes)
                return REASON_STRUCTURE, None, None

            if seen:
                total_cap = sum(caps[m] for m in seen)
                hat = {m: caps[m] / total_cap * remaining for m in seen}
                room_vm = {m: caps[m] / omega2 for m in seen}
                for idx in chosen:
                    if remaining <= _FILL_TOL:
                        break
                    m = int(dsts[idx])
                    src = int(srcs[idx])
                    key = (src, m, int(paths[idx]))
                    fill = min(budgets.get(src, 0.0), draft.residual_bw(key),
                               hat[m], room_vm[m], remaining)
                    if fill <= _FILL_TOL:
                        continue
                    routes.append((key, fill))
                    budgets[src] -= fill
                    hat[m] -= fill
                    room_vm[m] -= fill
                    remaining -= fill
                    intakes[m] = intakes.get(m, 0.0) + fill
                    draft.free[m] = False
    finally:
        # claims made here are provisional; commit_vnf re-applies them
        for m in intakes:
            draft.free[m] = True

    if remaining > max(_FILL_TOL, 1e-9 * demand):
        _write_cache(ctx, policy, q1, routes)
        return REASON_TRAFFIC, None, None
    return None, routes, intakes


def _write_cache(ctx: PlanContext, policy: PlanPolicy, q1: str | None,
                 routes: list[tuple[LinkKey, float]]) -> None:
    if not policy.backtracking or q1 is None:
        return
    satisfied: dict[int, float] = {}
    for (src, _, _), traffic in routes:
        if src != DUMMY_VM:
            satisfied[src] = satisfied.get(src, 0.0) + traffic
    if satisfied:
        ctx.cache_vnf = q1
        ctx.cache = satisfied


def _sorted_candidates(draft: _Draft, budgets: dict[int, float], q2: str,
                       omega2: float, strategy: str, demand: float,
                       policy: PlanPolicy):
    """Vectorized candidate scoring: flattened (source, destination, path)
    triples sorted by the strategy key with deterministic tie-breaking."""
    state = draft.state
    net = state.network
    catalog = net.logical_links
    tdelay, tcost, tbw = catalog.tables()
    free_ids = np.flatnonzero(draft.free)
    empty = (np.empty(0, int),) * 4
    if free_ids.size == 0:
        return empty
    caps = state.vm_caps[free_ids]
    cpu = state.vm_cpu_costs[free_ids]
    dcs = state.vm_dcs[free_ids]

    src_list, dst_list, path_list, cost_list, width_list = [], [], [], [], []
    for src in sorted(budgets):
        if budgets[src] <= _FILL_TOL:
            continue
        if src == DUMMY_VM:
            delay = np.zeros((free_ids.size, 1))
            link_cost = np.zeros((free_ids.size, 1))
            bw = np.full((free_ids.size, 1), math.inf)
        else:
            d0 = net.vms[src].datacenter
            delay = tdelay[d0, dcs, :]
            link_cost = tcost[d0, dcs, :]
            bw = tbw[d0, dcs, :]
        ok = np.isfinite(delay)
        dst_idx, path_idx = np.nonzero(ok)
        if dst_idx.size == 0:
            continue
        src_list.append(np.full(dst_idx.size, src))
        dst_list.append(free_ids[dst_idx])
        path_list.append(path_idx)
        cost_list.append(omega2 * cpu[dst_idx] + link_cost[dst_idx, path_idx])
        width_list.append(np.minimum(bw[dst_idx, path_idx],
                                     caps[dst_idx] / omega2))
    if not src_list:
        return empty
    srcs = np.concatenate(src_list)
    dsts = np.concatenate(dst_list)
    paths = np.concatenate(path_list)
    costs = np.concatenate(cost_list)
    widths = np.concatenate(width_list)

    if policy.require_fit:
        cap_rate = np.array([net.vms[m].capacity for m in dsts]) / omega2
        fit = (cap_rate > demand * (1 + 1e-12)) & \
              (widths >= demand * (1 - 1e-12))
        srcs, dsts, paths = srcs[fit], dsts[fit], paths[fit]
        costs, widths = costs[fit], widths[fit]

    key = costs if strategy == CHEAPEST else -widths
    order = np.lexsort((paths, dsts, srcs, key))
    return order, srcs, dsts, paths


# ---------------------------------------------------------------------------
# CA: CPU assignment for one VNF

def ca(draft: _Draft, i: int, in_routes, intakes, ctx: PlanContext,
       cum_budget: float):
    """Assign service rates to the VMs deployed for the i-th VNF.

    Normal mode picks the lowest rate whose processing time fits the
    remaining share of the delay budget; critical mode (and any out-of-range
    rate) uses the VM's maximum.  Returns (fail_reason, rates, delta_bar);
    on a delay failure the rates are still returned so the caller may keep
    them and compensate later.
    """
    state, svc = draft.state, draft.svc
    net = state.network
    q2 = draft.chain[i]
    omega2 = svc.vnf(q2).complexity
    catalog = net.logical_links
    prev = draft.vnfs[i - 1] if i > 0 else None

    arrival_front: dict[int, float] = {}
    for key, traffic in in_routes:
        src, dst, _ = key
        base = 0.0 if src == DUMMY_VM else prev.delta_bar[src]
        cand = base + catalog.link(key).delay
        arrival_front[dst] = max(arrival_front.get(dst, -math.inf), cand)

    rates: dict[int, float] = {}
    delta_bar: dict[int, float] = {}
    for m in sorted(intakes):
        intake = intakes[m]
        cap_rate = net.vms[m].capacity / omega2
        if ctx.status == CRITICAL:
            mu = cap_rate
        else:
            slack = cum_budget - arrival_front[m]
            mu = intake + 1.0 / slack if slack > 0 else math.inf
            if not (intake < mu <= cap_rate):
                mu = cap_rate
        rates[m] = mu
        margin = mu - intake
        delta_bar[m] = arrival_front[m] + (1.0 / margin if margin > 0
                                           else math.inf)

    if max(delta_bar.values()) > cum_budget + ABS_TOL:
        return REASON_DELAY, rates, delta_bar
    return None, rates, delta_bar


# ---------------------------------------------------------------------------
# BSRD: backtracking deployment of a whole request

def bsrd(state: DeploymentState, req: ServiceRequest, span: tuple[int, int],
         *, warm_only: bool = False,
         policy: PlanPolicy = HEURISTIC_POLICY) -> PlanResult:
    """Deploy all VNFs of a chain request over the given service span.

    Rejections are outcomes, not exceptions; an admitted result carries the
    full segment (placement, rates, routing including ingress/egress)."""
    svc = state.services[req.service]
    if not is_chain(svc):
        log.debug("request %d: service %s is not a chain; unsupported by the "
                  "planner", req.id, svc.id)
        return PlanResult(False, REASON_STRUCTURE)
    budgets = delay_budgets(svc)
    chain = list(svc.vnf_ids)
    cum = np.cumsum([budgets[q] for q in chain])

    draft = _Draft(state, req, span, warm_only)
    ctx = PlanContext()
    n_vnfs = len(chain)

    i = 0
    while i < n_vnfs:
        ctx.rounds += 1
        if ctx.rounds > 2 * n_vnfs:
            raise RuntimeError("deployment rounds exceeded the 2|Q| bound")
        q = chain[i]
        limit = svc.vnf(q).max_instances if policy.use_max_instances else 1
        if ctx.status == NORMAL:
            attempts = [(n, s) for n in range(1, limit + 1)
                        for s in policy.strategies]
        else:
            ctx.can_backtrack = False
            attempts = [(limit, LARGEST)]

        success = None
        last_reason = None
        last_partial = None
        for n_inst, strategy in attempts:
            reason, routes, intakes = vptr(draft, i, n_inst, strategy, ctx,
                                           policy)
            if reason is not None:
                last_reason, last_partial = reason, None
                continue
            ca_reason, rates, dbar = ca(draft, i, routes, intakes, ctx,
                                        float(cum[i]))
            rec = _DeployedVnf(q, intakes, rates, routes, dbar)
            if ca_reason is None:
                success = rec
                break
            last_reason, last_partial = ca_reason, rec

        committed = None
        if success is not None:
            if ctx.status == NORMAL:
                ctx.can_backtrack = True
            draft.commit_vnf(i, success)
            committed = success
            ctx.status = NORMAL
            i += 1
        else:
            ctx.status = CRITICAL
            if policy.backtracking and ctx.can_backtrack and i > 0:
                ctx.backtracks += 1
                draft.discard_vnf(i - 1)
                i -= 1
                continue
            if policy.compensation and last_reason == REASON_DELAY \
                    and last_partial is not None and policy.critical_mode:
                draft.commit_vnf(i, last_partial)
                committed = last_partial
                i += 1
            else:
                return PlanResult(False, last_reason, backtracks=ctx.backtracks)

        # result-set feasibility: target delay and datacenter budgets
        if committed is not None:
            if max(committed.delta_bar.values()) > svc.target_delay + ABS_TOL:
                return PlanResult(False, REASON_DELAY,
                                  backtracks=ctx.backtracks)
            for d, extra in draft.dc_pending.items():
                if extra > state.dc_headroom(d, *span) + ABS_TOL:
                    return PlanResult(False, REASON_TRAFFIC,
                                      backtracks=ctx.backtracks)

    segment = draft.to_segment()
    counts = {q: len(segment.placement[q]) for q in segment.placement}
    return PlanResult(True, None, segment, ctx.backtracks, counts)


def admit_fresh(state: DeploymentState, req: ServiceRequest, now: int,
                policy: PlanPolicy) -> PlanResult:
    """Admit a not-yet-served request at window time `now`.

    Service starts at max(arrival, now) when warm (already active) VMs can
    host it; otherwise one step later so the VMs can be turned on.  The
    request earns revenue only for the steps it is actually served."""
    s0 = max(req.arrival, now)
    attempts: list[tuple[int, bool]] = []
    if s0 < req.departure:
        attempts.append((s0, s0 == now))
    if s0 == now and now + 1 < req.departure:
        attempts.append((now + 1, False))
    result = PlanResult(False, REASON_STRUCTURE)
    for start, warm in attempts:
        result = bsrd(state, req, (start, req.departure),
                      warm_only=warm, policy=policy)
        if result.admitted:
            return result
    return result


# ---------------------------------------------------------------------------
# Main loop

def plan_horizon(state: DeploymentState, t: int, config: PlannerConfig,
                 policy: PlanPolicy = HEURISTIC_POLICY) -> list[DecisionRecord]:
    """One planner execution at window start t (Algorithm main body).

    Serving requests are re-planned first (migration), keeping their prior
    deployment when re-planning fails; new requests follow, both groups in
    descending window-revenue order with arrival/id tie-breaking."""
    workload = state.workload
    window = active_in_window(workload, t, config.horizon)

    def revenue_key(req: ServiceRequest):
        r = horizon_revenue(req, state.services[req.service], t,
                            config.horizon, config.units)
        return (-r, req.arrival, req.id)

    # drop provisional plans of requests whose service has not started
    for req in window:
        segs = state.plans.get(req.id)
        if segs and segs[0].start >= t:
            state.remove_plan_from(req.id, segs[0].start)

    serving = [req for req in window if req.id in state.plans
               and req.departure > t]
    fresh = [req for req in window if req.id not in state.plans]

    records: list[DecisionRecord] = []
    for req in sorted(serving, key=revenue_key):
        prior_tail = state.remove_plan_from(req.id, t)
        if not prior_tail:
            continue
        result = bsrd(state, req, (t, req.departure), warm_only=True,
                      policy=policy)
        if result.admitted:
            state.add_segment(req.id, result.segment)
            migrated = result.segment.placement != prior_tail[0].placement
            records.append(DecisionRecord(t, req.id, True, t, None,
                                          result.backtracks, migrated))
        else:
            for seg in prior_tail:
                state.add_segment(req.id, seg)
            records.append(DecisionRecord(t, req.id, True, t,
                                          f"kept:{result.reason}",
                                          result.backtracks))

    for req in sorted(fresh, key=revenue_key):
        if max(req.arrival, t) >= req.departure:
            continue
        result = admit_fresh(state, req, t, policy)
        if result.admitted:
            state.add_segment(req.id, result.segment)
            records.append(DecisionRecord(t, req.id, True,
                                          result.segment.start, None,
                                          result.backtracks))
        else:
            records.append(DecisionRecord(t, req.id, False, None,
                                          result.reason, result.backtracks))
            log.debug("window %d: rejected request %d (%s)", t, req.id,
                      result.reason)
    return records


def run_simulation(network, services, workload, config: PlannerConfig,
                   policy: PlanPolicy = HEURISTIC_POLICY):
    """Iterate the planner every `period` steps over the whole lifespan.

    Decisions are committed only for the elapsed window; the final state
    carries the committed plans and derived VM lifecycles."""
    state = DeploymentState(network, services, workload)
    records: list[DecisionRecord] = []
    for t in range(0, workload.lifespan, config.period):
        records.extend(plan_horizon(state, t, config, policy))
        state.write_lifecycle(t, min(t + config.period, workload.lifespan))
    return state, records
