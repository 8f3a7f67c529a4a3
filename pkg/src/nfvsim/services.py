"""Service model: VNF forwarding graphs and derived traffic quantities.

Services are directed graphs of VNFs with per-edge transition probabilities.
The dummy endpoint VNF (ingress/egress) is represented by ``None`` in edge
keys.  Traffic rates are packets/ms, delays ms, complexity computation
units per packet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: traffic-equation tolerance for the fixed-point / linear-solve agreement
RATE_TOL = 1e-9

#: cap on materialized ingress->egress VNF sequences per service
MAX_PATHS = 64

Edge = tuple[str | None, str | None]


class ServiceModelError(ValueError):
    pass


class DivergentTrafficError(ServiceModelError):
    """The VNFFG cycle structure does not dissipate traffic."""


@dataclass(frozen=True)
class VnfSpec:
    id: str
    complexity: float        # omega: computation units per packet
    max_instances: int = 1   # N(s, q)


@dataclass(frozen=True)
class ServiceSpec:
    id: str
    vnfs: tuple[VnfSpec, ...]
    transitions: dict[tuple[str, str], float]
    ingress_probs: dict[str, float]
    egress_probs: dict[str, float]
    ingress_rate: float      # lambda_new, packets/ms
    target_delay: float      # D_QoS, ms
    revenue_rate: float      # eur/Gb

    def vnf(self, vnf_id: str) -> VnfSpec:
        for q in self.vnfs:
            if q.id == vnf_id:
                return q
        raise KeyError(vnf_id)

    @property
    def vnf_ids(self) -> tuple[str, ...]:
        return tuple(q.id for q in self.vnfs)

    def scaled(self, traffic_multiplier: float) -> "ServiceSpec":
        return ServiceSpec(self.id, self.vnfs, self.transitions,
                           self.ingress_probs, self.egress_probs,
                           self.ingress_rate * traffic_multiplier,
                           self.target_delay, self.revenue_rate)


@dataclass(frozen=True)
class TrafficProfile:
    vnf_rates: dict[str, float]            # lambda(s, q)
    edge_traffic: dict[Edge, float]        # Lambda(s, q1, q2), incl. dummy ends
    scaling: dict[str, float]              # alpha(s, q)


@dataclass
class ServiceReport:
    service: str
    ok: bool
    chain: bool
    issues: list[str] = field(default_factory=list)


def solve_vnf_rates(s: ServiceSpec) -> dict[str, float]:
    """Total incoming traffic per VNF from the open traffic equations.

    lambda(q) = lambda_new * P(in, q) + sum_{q' != q} lambda(q') * P(q', q),
    solved in topological order for acyclic graphs and by a dense linear
    system otherwise.  Raises DivergentTrafficError when the cycle structure
    keeps traffic circulating forever.
    """
    ids = list(s.vnf_ids)
    index = {q: i for i, q in enumerate(ids)}
    n = len(ids)
    b = np.zeros(n)
    for q, p in s.ingress_probs.items():
        b[index[q]] = s.ingress_rate * p
    P = np.zeros((n, n))
    for (q1, q2), p in s.transitions.items():
        if p > 0:
            P[index[q1], index[q2]] = p

    order = _topological_order(ids, s.transitions)
    if order is not None:
        rates = np.zeros(n)
        for q in order:
            i = index[q]
            rates[i] = b[i] + float(P[:, i] @ rates)
        return {q: float(rates[index[q]]) for q in ids}

    radius = max(abs(np.linalg.eigvals(P))) if n else 0.0
    if radius >= 1.0 - RATE_TOL:
        raise DivergentTrafficError(
            f"service {s.id}: transition cycles have spectral radius "
            f"{radius:.6f} >= 1; traffic does not dissipate")
    rates = np.linalg.solve(np.eye(n) - P.T, b)
    return {q: float(rates[index[q]]) for q in ids}


def edge_traffic(s: ServiceSpec, rates: dict[str, float]) -> dict[Edge, float]:
    """Per-edge traffic Lambda, including ingress (None, q) and egress
    (q, None) edges."""
    out: dict[Edge, float] = {}
    for q, p in s.ingress_probs.items():
        if p > 0:
            out[(None, q)] = s.ingress_rate * p
    for (q1, q2), p in s.transitions.items():
        if p > 0:
            out[(q1, q2)] = rates[q1] * p
    for q, p in s.egress_probs.items():
        if p > 0:
            out[(q, None)] = rates[q] * p
    return out

def scaling_factor(s: ServiceSpec, edges: dict[Edge, float]) -> dict[str, float]:
    """alpha(q): outgoing over incoming traffic per VNF."""
    out: dict[str, float] = {}
    for q in s.vnf_ids:
        incoming = sum(v for (q1, q2), v in edges.items() if q2 == q)
        outgoing = sum(v for (q1, q2), v in edges.items() if q1 == q)
        if incoming <= 0:
            raise ServiceModelError(
                f"service {s.id}: VNF {q} receives no traffic")
        out[q] = outgoing / incoming
    return out


def build_traffic_profile(s: ServiceSpec) -> TrafficProfile:
    rates = solve_vnf_rates(s)
    edges = edge_traffic(s, rates)
    return TrafficProfile(rates, edges, scaling_factor(s, edges))


def delay_budgets(s: ServiceSpec) -> dict[str, float]:
    """Per-VNF share of the target delay, proportional to complexity.

    Only defined for chain services (the heuristic's scope).  The last
    budget absorbs rounding so the budgets sum to D_QoS exactly.
    """
    if not is_chain(s):
        raise ServiceModelError(
            f"service {s.id} is not a chain; delay budgets undefined")
    total = sum(q.complexity for q in s.vnfs)
    budgets = {q.id: s.target_delay * q.complexity / total for q in s.vnfs}
    last = s.vnfs[-1].id
    budgets[last] = s.target_delay - sum(
        v for q, v in budgets.items() if q != last)
    return budgets


def is_chain(s: ServiceSpec) -> bool:
    """True when the VNFFG is the probability-1 chain over s.vnfs order."""
    ids = s.vnf_ids
    if not ids:
        return False
    if s.ingress_probs.get(ids[0], 0.0) != 1.0:
        return False
    if any(q != ids[0] and p > 0 for q, p in s.ingress_probs.items()):
        return False
    expected = {(a, b): 1.0 for a, b in zip(ids, ids[1:])}
    actual = {e: p for e, p in s.transitions.items() if p > 0}
    if actual != expected:
        return False
    if s.egress_probs.get(ids[-1], 0.0) != 1.0:
        return False
    return not any(q != ids[-1] and p > 0 for q, p in s.egress_probs.items())


def vnf_sequences(s: ServiceSpec) -> list[tuple[str, ...]]:
    """All ingress->egress VNF sequences (the path set W_s), DFS-enumerated.

    Raises on cyclic graphs and when more than MAX_PATHS paths exist.
    """
    if _topological_order(list(s.vnf_ids), s.transitions) is None:
        raise ServiceModelError(
            f"service {s.id}: path set undefined on cyclic VNFFG")
    succ: dict[str, list[str]] = {q: [] for q in s.vnf_ids}
    for (q1, q2), p in s.transitions.items():
        if p > 0:
            succ[q1].append(q2)
    paths: list[tuple[str, ...]] = []

    def walk(q: str, prefix: tuple[str, ...]) -> None:
        prefix = prefix + (q,)
        if s.egress_probs.get(q, 0.0) > 0:
            paths.append(prefix)
            if len(paths) > MAX_PATHS:
                raise ServiceModelError(
                    f"service {s.id}: more than {MAX_PATHS} ingress->egress "
                    "paths")
        for nxt in succ[q]:
            walk(nxt, prefix)

    for q in s.vnf_ids:
        if s.ingress_probs.get(q, 0.0) > 0:
            walk(q, ())
    return paths


def validate_service(s: ServiceSpec) -> ServiceReport:
    """Check probability normalization, positivity and heuristic eligibility."""
    issues: list[str] = []
    ids = set(s.vnf_ids)
    if len(ids) != len(s.vnfs):
        issues.append("duplicate VNF ids")
    for q in s.vnfs:
        if q.complexity <= 0:
            issues.append(f"VNF {q.id}: nonpositive complexity")
        if q.max_instances < 1:
            issues.append(f"VNF {q.id}: max_instances < 1")
    if s.target_delay <= 0:
        issues.append("nonpositive target delay")
    if s.ingress_rate < 0:
        issues.append("negative ingress rate")

    probs = list(s.transitions.values()) + list(s.ingress_probs.values()) \
        + list(s.egress_probs.values())
    if any(p < 0 or p > 1 for p in probs):
        issues.append("probability outside [0, 1]")
    for (q1, q2) in s.transitions:
        if q1 == q2:
            issues.append(f"self-loop on VNF {q1}")
        if q1 not in ids or q2 not in ids:
            issues.append(f"transition references unknown VNF ({q1}, {q2})")
    for q in list(s.ingress_probs) + list(s.egress_probs):
        if q not in ids:
            issues.append(f"unknown VNF {q} in ingress/egress")

    total_in = sum(s.ingress_probs.values())
    if abs(total_in - 1.0) > RATE_TOL:
        issues.append(f"ingress probabilities sum to {total_in:.6f}, not 1")
    for q in s.vnf_ids:
        total = s.egress_probs.get(q, 0.0) + sum(
            p for (q1, _), p in s.transitions.items() if q1 == q)
        if abs(total - 1.0) > RATE_TOL:
            issues.append(
                f"VNF {q}: outgoing probabilities sum to {total:.6f}, not 1")

    return ServiceReport(s.id, ok=not issues, chain=is_chain(s),
                         issues=issues)


def make_chain(service_id: str, vnfs: list[VnfSpec], ingress_rate: float,
               target_delay: float, revenue_rate: float) -> ServiceSpec:
    """Convenience constructor for probability-1 chains."""
    ids = [q.id for q in vnfs]
    return ServiceSpec(
        service_id, tuple(vnfs),
        transitions={(a, b): 1.0 for a, b in zip(ids, ids[1:])},
        ingress_probs={ids[0]: 1.0},
        egress_probs={ids[-1]: 1.0},
        ingress_rate=ingress_rate,
        target_delay=target_delay,
        revenue_rate=revenue_rate,
    )


def _topological_order(ids: list[str],
                       transitions: dict[tuple[str, str], float]) -> list[str] | None:
    """Kahn's algorithm; None when the positive-probability graph has a cycle."""
    indeg = {q: 0 for q in ids}
    succ: dict[str, list[str]] = {q: [] for q in ids}
    for (q1, q2), p in transitions.items():
        if p > 0 and q1 in indeg and q2 in indeg:
            indeg[q2] += 1
            succ[q1].append(q2)
    frontier = [q for q in ids if indeg[q] == 0]
    order: list[str] = []
    while frontier:
        q = frontier.pop()
        order.append(q)
        for nxt in succ[q]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                frontier.append(nxt)
    return order if len(order) == len(ids) else None
