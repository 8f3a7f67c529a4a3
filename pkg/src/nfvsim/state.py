"""Time-indexed deployment state and the constraint validator.

A deployment plan for a request is a list of segments; within a segment the
placement (VNF instances with service rates) and routing (per VNFFG edge,
traffic on logical links) are constant.  Segment boundaries occur at service
start, replanning migrations, and departure.  VM lifecycle state is kept in
explicit turning-on / active boolean arrays so that every constraint family
of the underlying optimization model is independently expressible and
checkable, including on hand-built infeasible states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .services import Edge, ServiceSpec, TrafficProfile, build_traffic_profile, vnf_sequences
from .topology import DUMMY_VM, PhysicalNetwork
from .workload import Workload

ABS_TOL = 1e-9
REL_TOL = 1e-6

LinkKey = tuple[int, int, int]

CONSTRAINT_FAMILIES = (
    "lifetime",              # (1) service only inside [arv, dpr), contiguous until departure
    "instance_limit",        # (2) at most N(s,q) instances per VNF
    "exclusive_hosting",     # (3) at most one VNF instance per VM
    "state_conflict",        # (4) never turning-on and active together
    "setup",                 # (5) active only after enough turning-on steps
    "availability",          # (6) instances only on active VMs
    "dc_capacity",           # (7) datacenter computation budget
    "vm_capacity",           # (8) per-VM computation budget
    "routing_completeness",  # (10)-(12) each VNFFG edge fully routed
    "placement_consistency", # (12)-(13) routed links end on hosting VMs
    "stability",             # (18) incoming traffic within service rate
    "flow_conservation",     # (21) outgoing = alpha * incoming
    "latency",               # (27) worst path delay within target
    "link_capacity",         # (30) physical link load within bandwidth
)


class PlanningError(RuntimeError):
    pass


def _exceeds(value: float, bound: float) -> bool:
    return value > bound + max(ABS_TOL, REL_TOL * abs(bound))


@dataclass(frozen=True)
class Instance:
    vm: int
    rate: float   # mu, packets/ms


@dataclass(frozen=True)
class Segment:
    start: int
    end: int      # [start, end)
    placement: dict[str, tuple[Instance, ...]]
    routing: dict[Edge, tuple[tuple[LinkKey, float], ...]]

    def instances(self):
        for q, insts in self.placement.items():
            for inst in insts:
                yield q, inst

    def incoming(self, q: str) -> dict[int, float]:
        """Traffic entering each VM hosting q, summed over inbound links."""
        acc: dict[int, float] = {}
        for (q1, q2), entries in self.routing.items():
            if q2 != q:
                continue
            for (src, dst, _), traffic in entries:
                acc[dst] = acc.get(dst, 0.0) + traffic
        return acc

    def outgoing(self, q: str) -> dict[int, float]:
        acc: dict[int, float] = {}
        for (q1, q2), entries in self.routing.items():
            if q1 != q:
                continue
            for (src, dst, _), traffic in entries:
                acc[src] = acc.get(src, 0.0) + traffic
        return acc


@dataclass(frozen=True)
class Violation:
    family: str
    indices: tuple
    slack: float
    detail: str = ""


@dataclass
class FeasibilityReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def families(self) -> set[str]:
        return {v.family for v in self.violations}

    def rows(self) -> list[tuple[str, str, float, str]]:
        return [(v.family, repr(v.indices), v.slack, v.detail)
                for v in self.violations]


class DeploymentState:
    """Single source of truth for one simulation run."""

    def __init__(self, network: PhysicalNetwork,
                 services: dict[str, ServiceSpec],
                 workload: Workload,
                 profiles: dict[str, TrafficProfile] | None = None):
        self.network = network
        self.services = services
        self.workload = workload
        self.profiles = profiles or {
            sid: build_traffic_profile(s) for sid, s in services.items()}
        self.T = workload.lifespan
        m, t = network.n_vms, self.T
        self.turning_on = np.zeros((m, t), dtype=bool)   # U(m, t)
        self.active = np.zeros((m, t), dtype=bool)       # O(m, t)
        self.plans: dict[int, list[Segment]] = {}
        self._occupancy = np.zeros((m, t), dtype=np.int32)  # request id + 1
        self._usage = np.zeros((len(network.links), t))     # L(e, t)
        self._dc_load = np.zeros((len(network.datacenters), t))  # sum mu*omega
        self.vm_caps = np.array([vm.capacity for vm in network.vms])
        self.vm_cpu_costs = np.array([vm.cpu_cost for vm in network.vms])
        self.vm_dcs = np.array([vm.datacenter for vm in network.vms])

    # -- plan bookkeeping ---------------------------------------------------

    def add_segment(self, k: int, seg: Segment, *, enforce: bool = True) -> None:
        if enforce:
            for _, inst in seg.instances():
                if self._occupancy[inst.vm, seg.start:seg.end].any():
                    raise PlanningError(
                        f"VM {inst.vm} already occupied in "
                        f"[{seg.start}, {seg.end})")
        for _, inst in seg.instances():
            self._occupancy[inst.vm, seg.start:seg.end] = k + 1
        self._apply_usage(seg, +1.0)
        self._apply_dc_load(k, seg, +1.0)
        self.plans.setdefault(k, []).append(seg)
        self.plans[k].sort(key=lambda s: s.start)

    def remove_plan_from(self, k: int, t: int) -> list[Segment]:
        """Drop and return the parts of k's plan at steps >= t."""
        removed: list[Segment] = []
        kept: list[Segment] = []
        for seg in self.plans.get(k, []):
            if seg.start >= t:
                self._unapply(k, seg)
                removed.append(seg)
            elif seg.end > t:
                self._unapply(k, seg)
                head = Segment(seg.start, t, seg.placement, seg.routing)
                tail = Segment(t, seg.end, seg.placement, seg.routing)
                for _, inst in head.instances():
                    self._occupancy[inst.vm, head.start:head.end] = k + 1
                self._apply_usage(head, +1.0)
                self._apply_dc_load(k, head, +1.0)
                kept.append(head)
                removed.append(tail)
            else:
                kept.append(seg)
        if kept:
            self.plans[k] = kept
        else:
            self.plans.pop(k, None)
        return removed

    def _unapply(self, k: int, seg: Segment) -> None:
        for _, inst in seg.instances():
            self._occupancy[inst.vm, seg.start:seg.end] = 0
        self._apply_usage(seg, -1.0)
        self._apply_dc_load(k, seg, -1.0)

    def _apply_usage(self, seg: Segment, sign: float) -> None:
        catalog = self.network.logical_links
        for entries in seg.routing.values():
            for key, traffic in entries:
                for hop in catalog.link(key).hops:
                    self._usage[hop, seg.start:seg.end] += sign * traffic

    def _apply_dc_load(self, k: int, seg: Segment, sign: float) -> None:
        svc = self.services[self.workload.by_id(k).service]
        for q, inst in seg.instances():
            d = self.network.vms[inst.vm].datacenter
            load = inst.rate * svc.vnf(q).complexity
            self._dc_load[d, seg.start:seg.end] += sign * load

    def dc_headroom(self, d: int, t0: int, t1: int) -> float:
        cap = self.network.datacenters[d].capacity
        window = self._dc_load[d, t0:t1]
        return cap - (float(window.max()) if window.size else 0.0)

    # -- queries ------------------------------------------------------------

    def served_intervals(self, k: int) -> list[tuple[int, int]]:
        return [(s.start, s.end) for s in self.plans.get(k, [])]

    def served_steps(self, k: int) -> int:
        return sum(s.end - s.start for s in self.plans.get(k, []))

    def segment_at(self, k: int, t: int) -> Segment | None:
        for seg in self.plans.get(k, []):
            if seg.start <= t < seg.end:
                return seg
        return None

    def link_usage(self, link_id: int, t: int) -> float:
        return float(self._usage[link_id, t])

    def vm_free(self, m: int, t0: int, t1: int) -> bool:
        return not self._occupancy[m, t0:t1].any()

    def free_vms_over(self, t0: int, t1: int) -> np.ndarray:
        return ~self._occupancy[:, t0:t1].any(axis=1)

    def hosted_at(self, t: int) -> np.ndarray:
        if t < 0 or t >= self.T:
            return np.zeros(self.network.n_vms, dtype=bool)
        return self._occupancy[:, t] != 0

    # -- lifecycle ----------------------------------------------------------

    def write_lifecycle(self, t0: int, t1: int) -> None:
        """Derive U/O for steps [t0, t1) from the current plans.

        Active exactly while hosting; a VM whose service run begins at step a
        turns on over [a - setup_steps, a) unless it is already active
        (warm handover from a departing tenant).
        """
        setup = self.network.setup_steps
        hosted = self._occupancy != 0
        self.active[:, t0:t1] = hosted[:, t0:t1]
        for t in range(t0, t1):
            nxt = np.zeros(len(hosted), dtype=bool)
            for dt in range(1, setup + 1):
                if t + dt < self.T:
                    nxt |= hosted[:, t + dt] & ~hosted[:, t:t + dt].any(axis=1)
            self.turning_on[:, t] = nxt & ~hosted[:, t]

    # -- derived quantities ---------------------------------------------------

    def incoming_traffic(self, k: int, m: int, q: str, t: int) -> float:
        seg = self.segment_at(k, t)
        if seg is None:
            return 0.0
        return seg.incoming(q).get(m, 0.0)

    def outgoing_traffic(self, k: int, m: int, q: str, t: int) -> float:
        seg = self.segment_at(k, t)
        if seg is None:
            return 0.0
        return seg.outgoing(q).get(m, 0.0)

    def processing_time(self, m: int, t: int) -> float:
        """1 / sum(mu - I) over instances hosted on m at t (Eq. form of a
        processor-sharing queue).  Raises on violated stability."""
        total = 0.0
        found = False
        for k, segs in self.plans.items():
            for seg in segs:
                if not (seg.start <= t < seg.end):
                    continue
                for q, inst in seg.instances():
                    if inst.vm == m:
                        found = True
                        total += inst.rate - seg.incoming(q).get(m, 0.0)
        if not found:
            raise PlanningError(f"no instance on VM {m} at step {t}")
        if total <= 0:
            raise PlanningError(
                f"stability violated on VM {m} at step {t}: mu - I <= 0")
        return 1.0 / total


def path_delay(state: DeploymentState, k: int, w: list[str],
               p: list[LinkKey], t: int) -> float:
    """Delay along VNF sequence w over the logical links in p: used-link
    delays plus processing times of hosting VMs on the path."""
    seg = state.segment_at(k, t)
    if seg is None:
        return 0.0
    catalog = state.network.logical_links
    total = 0.0
    for q1, q2 in zip(w, w[1:]):
        used = {key for key, traffic in seg.routing.get((q1, q2), ())
                if traffic > 0}
        for key in p:
            if key in used:
                total += catalog.link(key).delay
    vms_on_path: set[int] = set()
    for key in p:
        src, dst, _ = key
        for m in (src, dst):
            if m != DUMMY_VM:
                vms_on_path.add(m)
    for q in w:
        for inst in seg.placement.get(q, ()):
            if inst.vm in vms_on_path:
                total += state.processing_time(inst.vm, t)
    return total


def max_path_delay(state: DeploymentState, k: int, seg: Segment) -> float:
    """Worst end-to-end delay over all routing-consistent paths of a segment.

    Dynamic program over the VNF sequence: the worst arrival front at each
    instance is the max over used inbound links of (front at source + link
    delay), plus the instance's processing time.  Equivalent to maximizing
    over all (w, p) pairs with positive routing indicators.
    """
    s = state.services[state.workload.by_id(k).service]
    catalog = state.network.logical_links
    worst = 0.0

    def proc(m: int, q: str) -> float:
        for inst in seg.placement.get(q, ()):
            if inst.vm == m:
                margin = inst.rate - seg.incoming(q).get(m, 0.0)
                return math.inf if margin <= 0 else 1.0 / margin
        return math.inf

    for w in vnf_sequences(s):
        front: dict[int, float] = {}
        for key, traffic in seg.routing.get((None, w[0]), ()):
            if traffic <= 0:
                continue
            m = key[1]
            front[m] = max(front.get(m, -math.inf), proc(m, w[0]))
        for q1, q2 in zip(w, w[1:]):
            nxt: dict[int, float] = {}
            for key, traffic in seg.routing.get((q1, q2), ()):
                if traffic <= 0:
                    continue
                src, dst, _ = key
                if src not in front:
                    continue
                cand = front[src] + catalog.link(key).delay + proc(dst, q2)
                nxt[dst] = max(nxt.get(dst, -math.inf), cand)
            front = nxt
        if front:
            worst = max(worst, max(front.values()))
    return worst


def validate(state: DeploymentState) -> FeasibilityReport:
    """Evaluate every constraint family; violations are data, not errors."""
    report = FeasibilityReport()
    _check_lifetime(state, report)
    _check_placement_families(state, report)
    _check_lifecycle(state, report)
    _check_capacities(state, report)
    _check_routing(state, report)
    _check_link_capacity(state, report)
    return report


def _add(report, family, indices, slack, detail=""):
    report.violations.append(Violation(family, indices, float(slack), detail))


def _check_lifetime(state, report):
    for k, segs in sorted(state.plans.items()):
        req = state.workload.by_id(k)
        steps = sorted((s.start, s.end) for s in segs)
        for start, end in steps:
            if start < req.arrival or end > req.departure:
                _add(report, "lifetime", (k, start, end), 1.0,
                     "service outside request lifetime")
        for (_, e1), (s2, _) in zip(steps, steps[1:]):
            if s2 != e1:
                _add(report, "lifetime", (k, e1, s2), float(s2 - e1),
                     "gap in service interval")
        if steps and steps[-1][1] < req.departure:
            _add(report, "lifetime", (k, steps[-1][1]), 1.0,
                 "service abandoned before departure")


def _check_placement_families(state, report):
    n_vms, T = state.network.n_vms, state.T
    occupancy = np.zeros((n_vms, T), dtype=np.int16)
    for k, segs in sorted(state.plans.items()):
        svc = state.services[state.workload.by_id(k).service]
        for seg in segs:
            for q, insts in seg.placement.items():
                limit = svc.vnf(q).max_instances
                if len(insts) > limit:
                    _add(report, "instance_limit", (k, q, seg.start),
                         len(insts) - limit)
                vms = [inst.vm for inst in insts]
                if len(set(vms)) != len(vms):
                    _add(report, "exclusive_hosting", (k, q, seg.start), 1.0,
                         "duplicate VM within one VNF")
                for inst in insts:
                    occupancy[inst.vm, seg.start:seg.end] += 1
                    cap = state.network.vms[inst.vm].capacity
                    used = inst.rate * svc.vnf(q).complexity
                    if _exceeds(used, cap):
                        _add(report, "vm_capacity", (k, inst.vm, q, seg.start),
                             used - cap)
                    if not state.active[inst.vm, seg.start:seg.end].all():
                        t_bad = seg.start + int(
                            np.argmin(state.active[inst.vm, seg.start:seg.end]))
                        _add(report, "availability", (k, inst.vm, q, t_bad),
                             1.0, "instance on inactive VM")
    over = np.argwhere(occupancy > 1)
    for m, t in over[:64]:
        _add(report, "exclusive_hosting", (int(m), int(t)),
             float(occupancy[m, t] - 1))


def _check_lifecycle(state, report):
    both = state.turning_on & state.active
    for m, t in np.argwhere(both)[:64]:
        _add(report, "state_conflict", (int(m), int(t)), 1.0)
    setup = state.network.setup_steps
    for m in range(state.network.n_vms):
        active = state.active[m]
        turning = state.turning_on[m]
        starts = np.flatnonzero(active & ~np.concatenate(([False], active[:-1])))
        for a in starts:
            a = int(a)
            run = 0
            t = a - 1
            while t >= 0 and turning[t]:
                run += 1
                t -= 1
            if run < setup:
                _add(report, "setup", (m, a), float(setup - run),
                     "active without enough turning-on steps")


def _check_capacities(state, report):
    net = state.network
    dc_load = np.zeros((len(net.datacenters), state.T))
    for k, segs in sorted(state.plans.items()):
        svc = state.services[state.workload.by_id(k).service]
        for seg in segs:
            for q, inst in seg.instances():
                d = net.vms[inst.vm].datacenter
                dc_load[d, seg.start:seg.end] += inst.rate * svc.vnf(q).complexity
    for d in range(len(net.datacenters)):
        cap = net.datacenters[d].capacity
        worst = np.argwhere(dc_load[d] > cap + max(ABS_TOL, REL_TOL * cap))
        for (t,) in worst[:16]:
            _add(report, "dc_capacity", (d, int(t)), dc_load[d, t] - cap)


def _check_routing(state, report):
    catalog = state.network.logical_links
    for k, segs in sorted(state.plans.items()):
        req = state.workload.by_id(k)
        svc = state.services[req.service]
        profile = state.profiles[req.service]
        for seg in segs:
            hosted = {q: {inst.vm for inst in insts}
                      for q, insts in seg.placement.items()}
            # routing completeness over every positive-traffic edge
            for edge, demand in profile.edge_traffic.items():
                routed = sum(t for _, t in seg.routing.get(edge, ()))
                frac = routed / demand if demand > 0 else 1.0
                if frac < 1.0 - REL_TOL:
                    _add(report, "routing_completeness",
                         (k, edge, seg.start), 1.0 - frac, "underrouted edge")
                elif frac > 1.0 + REL_TOL:
                    _add(report, "routing_completeness",
                         (k, edge, seg.start), frac - 1.0, "overrouted edge")
            # placement consistency of every routed link
            for (q1, q2), entries in seg.routing.items():
                for key, traffic in entries:
                    if traffic <= 0:
                        continue
                    src, dst, _ = key
                    if q1 is None and src != DUMMY_VM:
                        _add(report, "placement_consistency",
                             (k, key, seg.start), 1.0, "ingress not from dummy")
                    if q1 is not None and src not in hosted.get(q1, ()):
                        _add(report, "placement_consistency",
                             (k, key, seg.start), 1.0,
                             f"link source does not host {q1}")
                    if q2 is None and dst != DUMMY_VM:
                        _add(report, "placement_consistency",
                             (k, key, seg.start), 1.0, "egress not to dummy")
                    if q2 is not None and dst not in hosted.get(q2, ()):
                        _add(report, "placement_consistency",
                             (k, key, seg.start), 1.0,
                             f"link destination does not host {q2}")
            # stability and generalized flow conservation per instance
            for q, insts in seg.placement.items():
                alpha = profile.scaling[q]
                inc = seg.incoming(q)
                out = seg.outgoing(q)
                for inst in insts:
                    i_val = inc.get(inst.vm, 0.0)
                    d_val = out.get(inst.vm, 0.0)
                    if _exceeds(i_val, inst.rate):
                        _add(report, "stability", (k, inst.vm, q, seg.start),
                             i_val - inst.rate)
                    expect = alpha * i_val
                    scale = max(abs(expect), abs(d_val), 1e-12)
                    if abs(d_val - expect) > max(ABS_TOL, REL_TOL * scale):
                        _add(report, "flow_conservation",
                             (k, inst.vm, q, seg.start), abs(d_val - expect))
            worst = max_path_delay(state, k, seg)
            if _exceeds(worst, svc.target_delay):
                _add(report, "latency", (k, seg.start),
                     worst - svc.target_delay)


def _check_link_capacity(state, report):
    for link in state.network.links:
        if not math.isfinite(link.bandwidth):
            continue
        over = np.argwhere(
            state._usage[link.id] > link.bandwidth
            + max(ABS_TOL, REL_TOL * link.bandwidth))
        for (t,) in over[:16]:
            _add(report, "link_capacity", (link.id, int(t)),
                 state._usage[link.id, t] - link.bandwidth)


def step_forward(state: DeploymentState, new_segments: list[tuple[int, Segment]],
                 t: int, tau: int, *, check: bool = False) -> DeploymentState:
    """Commit planner decisions for the window starting at t: install the
    given segments, derive lifecycle for the committed steps [t, t+tau).

    With check=True, validates the committed prefix and raises PlanningError
    on any violation there.
    """
    for k, seg in new_segments:
        state.add_segment(k, seg)
    state.write_lifecycle(t, min(t + tau, state.T))
    if check:
        report = validate(state)
        end = min(t + tau, state.T)
        bad = [v for v in report.violations
               if _violation_step(v) is None or _violation_step(v) < end]
        if bad:
            raise PlanningError(
                f"committed prefix infeasible: {bad[0].family} {bad[0].indices}")
    return state


def _violation_step(v: Violation):
    for idx in reversed(v.indices):
        if isinstance(idx, (int, np.integer)):
            return int(idx)
    return None
