"""Clairvoyant brute-force optimum for desk-scale instances.

Enumerates admission choices (including the service start step, which may
be delayed past arrival until resources free up), per-request VNF-to-VM
placements with a concrete logical link per chain edge, and assigns service
rates with a closed-form minimum-cost allocation.  Time is organized into
epochs delimited by service start/departure events; placements are constant
within an epoch and may change at epoch boundaries (instant migration under
the VM state machine, with setup steps accounted).  A dynamic program over
epochs with the active-VM set as interface state makes idle/setup cost
accounting exact for epoch-constant plans.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .services import is_chain
from .state import DeploymentState, Instance, Segment, validate
from .topology import DUMMY_VM, PhysicalNetwork
from .units import UnitSystem
from .workload import Workload


class ExactCapError(RuntimeError):
    """Instance exceeds the brute-force enumeration caps."""


class RateInfeasibleError(ValueError):
    pass


@dataclass
class ExactConfig:
    max_vms: int = 8
    max_requests: int = 10
    max_vnfs: int = 4
    max_enumeration: float = 1e7
    rate_mode: str = "closed_form"


@dataclass(frozen=True)
class _Placement:
    """One feasible chain embedding with its constant per-step economics."""

    vms: tuple[int, ...]                 # per-VNF host
    links: tuple[tuple[int, int, int], ...]   # per chain edge
    rates: tuple[float, ...]             # mu per VNF
    cpu_cost: float                      # eur per served step
    link_cost: float                     # eur per served step
    vm_set: frozenset[int] = field(hash=True, default=frozenset())


def min_cost_rates(intakes: list[float], max_rates: list[float],
                   budget: float, costs: list[float]) -> list[float]:
    """Cheapest service rates meeting a total processing-time budget.

    Minimizes sum(costs[i] * mu_i) subject to sum(1 / (mu_i - I_i)) <= budget
    and I_i < mu_i <= max_rates[i].  Unconstrained optimum puts
    mu_i - I_i = (sum_j sqrt(a_j)) / (budget * sqrt(a_i)); rates above a VM
    maximum are clamped there and the residual budget is re-solved over the
    rest.  Raises RateInfeasibleError when even maximum rates miss the budget.
    """
    n = len(intakes)
    if n == 0:
        return []
    if budget <= 0:
        raise RateInfeasibleError("no delay budget left for processing")
    head = [max_rates[i] - intakes[i] for i in range(n)]
    if min(head) <= 0:
        raise RateInfeasibleError("intake at or above VM maximum rate")
    if sum(1.0 / h for h in head) > budget:
        raise RateInfeasibleError("even maximum rates exceed the budget")

    free = list(range(n))
    x = [0.0] * n
    b = budget
    while True:
        root_sum = sum(math.sqrt(costs[i]) for i in free)
        clamped_any = False
        for i in free:
            x[i] = root_sum / (b * math.sqrt(costs[i]))
        for i in list(free):
            if x[i] > head[i]:
                x[i] = head[i]
                b -= 1.0 / head[i]
                free.remove(i)
                clamped_any = True
        if not clamped_any or not free:
            break
    return [intakes[i] + x[i] for i in range(n)]


def _chain_placements(net: PhysicalNetwork, svc, profile,
                      units_omega=None) -> list[_Placement]:
    """All feasible single-instance embeddings of a chain service."""
    chain = list(svc.vnf_ids)
    omegas = [svc.vnf(q).complexity for q in chain]
    catalog = net.logical_links
    vm_ids = list(range(net.n_vms))
    out: list[_Placement] = []
    for hosts in itertools.permutations(vm_ids, len(chain)):
        link_options = []
        ok = True
        for a, b in zip(hosts, hosts[1:]):
            links = catalog.links_between(a, b)
            if not links:
                ok = False
                break
            link_options.append(links)
        if not ok:
            continue
        for combo in itertools.product(*link_options) if link_options \
                else [()]:
            net_delay = sum(link.delay for link in combo)
            budget = svc.target_delay - net_delay
            intakes = [profile.vnf_rates[q] for q in chain]
            caps = [net.vms[m].capacity / w for m, w in zip(hosts, omegas)]
            costs = [net.vms[m].cpu_cost * w for m, w in zip(hosts, omegas)]
            try:
                rates = min_cost_rates(intakes, caps, budget, costs)
            except RateInfeasibleError:
                continue
            cpu = sum(c * mu for c, mu in zip(costs, rates))
            link_cost = sum(
                link.tx_cost * profile.edge_traffic[(q1, q2)]
                for link, (q1, q2) in zip(combo, zip(chain, chain[1:])))
            out.append(_Placement(hosts, tuple(l.key for l in combo),
                                  tuple(rates), cpu, link_cost,
                                  frozenset(hosts)))
    out.sort(key=lambda p: (p.cpu_cost + p.link_cost, p.vms, p.links))
    return out


def solve_exact(network: PhysicalNetwork, services, workload: Workload,
                config: ExactConfig, units: UnitSystem | None = None):
    """Globally optimal epoch-constant deployment by guarded brute force.

    Returns (state, objective, revenue).  Requires chain services with a
    single allowed instance per VNF and an instance within the caps.
    """
    units = units or UnitSystem()
    if network.n_vms > config.max_vms:
        raise ExactCapError(f"{network.n_vms} VMs exceed cap {config.max_vms}")
    if len(workload.requests) > config.max_requests:
        raise ExactCapError(f"{len(workload.requests)} requests exceed cap "
                            f"{config.max_requests}")
    for svc in services.values():
        if len(svc.vnfs) > config.max_vnfs:
            raise ExactCapError(f"service {svc.id} exceeds VNF cap")
        if not is_chain(svc):
            raise ExactCapError(f"service {svc.id} is not a chain")
        if any(q.max_instances != 1 for q in svc.vnfs):
            raise ExactCapError("exact solver assumes N(s, q) = 1")

    probe = DeploymentState(network, services, workload)
    placements = {
        sid: _chain_placements(network, services[sid], probe.profiles[sid])
        for sid in services}

    departures = sorted({r.departure for r in workload.requests})
    options: list[list[tuple[int, float] | None]] = []
    requests = list(workload.requests)
    for req in requests:
        svc = services[req.service]
        starts = {max(req.arrival, 1)}
        starts.update(d for d in departures if req.arrival < d < req.departure)
        starts = sorted(s for s in starts if s < req.departure)
        rate_gb = units.rate_to_gb_per_step(svc.ingress_rate)
        opts: list = [(s, svc.revenue_rate * rate_gb * (req.departure - s))
                      for s in starts]
        if not placements[req.service]:
            opts = []
        opts.sort(key=lambda o: -o[1])
        opts.append(None)
        options.append(opts)

    count = 1.0
    for opts in options:
        count *= len(opts)
    if count > config.max_enumeration:
        raise ExactCapError(f"{count:.0f} admission profiles exceed cap")

    best = {"objective": -math.inf, "encoding": None, "profile": None}
    idle = np.array([vm.idle_cost for vm in network.vms])
    setup_steps = network.setup_steps
    config_cache: dict[frozenset, list] = {}

    def joint_configs(active: frozenset) -> list:
        if active in config_cache:
            return config_cache[active]
        reqs = sorted(active)
        combos: list[tuple[dict, frozenset, float]] = []

        def rec(idx: int, used: frozenset, chosen: dict, step_cost: float):
            if idx == len(reqs):
                combos.append((dict(chosen), used, step_cost))
                return
            k = reqs[idx]
            for pl in placements[requests[k].service]:
                if pl.vm_set & used:
                    continue
                chosen[k] = pl
                rec(idx + 1, used | pl.vm_set, chosen,
                    step_cost + pl.cpu_cost + pl.link_cost)
                del chosen[k]

        rec(0, frozenset(), {}, 0.0)
        # enforce datacenter capacity on the joint rate assignment
        feasible = []
        for chosen, used, step_cost in combos:
            load = np.zeros(len(network.datacenters))
            for k, pl in chosen.items():
                svc = services[requests[k].service]
                for q, m, mu in zip(svc.vnf_ids, pl.vms, pl.rates):
                    load[network.vms[m].datacenter] += \
                        mu * svc.vnf(q).complexity
            if all(load[d.id] <= d.capacity + 1e-9
                   for d in network.datacenters):
                feasible.append((chosen, used, step_cost))
        config_cache[active] = feasible
        return feasible

    def evaluate(assignment: list) -> tuple[float, list] | None:
        """Min total cost for the given starts via the epoch DP."""
        intervals = {k: (opt[0], requests[k].departure)
                     for k, opt in enumerate(assignment) if opt is not None}
        if not intervals:
            return 0.0, []
        events = sorted({v for iv in intervals.values() for v in iv})
        epochs = list(zip(events, events[1:]))
        # dp: active-vm-set -> (cost, chain of (epoch, chosen))
        dp: dict[frozenset, tuple[float, list]] = {frozenset(): (0.0, [])}
        for (t0, t1) in epochs:
            active = frozenset(k for k, (s, e) in intervals.items()
                               if s <= t0 < e)
            nxt: dict[frozenset, tuple[float, list]] = {}
            configs = joint_configs(active)
            if not configs and active:
                return None
            if not active:
                configs = [({}, frozenset(), 0.0)]
            for prev_set, (cost, hist) in dp.items():
                for chosen, used, step_cost in configs:
                    setup = sum(float(idle[m]) * setup_steps
                                for m in used - prev_set)
                    step_idle = sum(float(idle[m]) for m in used)
                    total = cost + setup \
                        + (t1 - t0) * (step_cost + step_idle)
                    if used not in nxt or total < nxt[used][0]:
                        nxt[used] = (total,
                                     hist + [((t0, t1), dict(chosen))])
            if not nxt:
                return None
            dp = nxt
        return min(dp.values(), key=lambda v: v[0])


    n_req = len(requests)

    def search(idx: int, assignment: list, fixed_rev: float, rest_max: float):
        if fixed_rev + rest_max <= best["objective"]:
            return
        if idx == n_req:
            outcome = evaluate(assignment)
            if outcome is None:
                return
            cost, history = outcome
            objective = fixed_rev - cost
            encoding = tuple(opt[0] if opt else None for opt in assignment)
            if objective > best["objective"] - 1e-12:
                better = objective > best["objective"] + 1e-12
                tie = (abs(objective - best["objective"]) <= 1e-12
                       and (best["encoding"] is None
                            or encoding < best["encoding"]))
                if better or tie:
                    best.update(objective=objective, encoding=encoding,
                                profile=(list(assignment), history))
            return
        remaining = rest_max - (options[idx][0][1] if options[idx][0] else 0.0)
        for opt in options[idx]:
            assignment.append(opt)
            rev = opt[1] if opt else 0.0
            search(idx + 1, assignment, fixed_rev + rev, remaining)
            assignment.pop()

    rest = [0.0] * (n_req + 1)
    for i in range(n_req - 1, -1, -1):
        top = options[i][0][1] if options[i][0] else 0.0
        rest[i] = rest[i + 1] + top
    search(0, [], 0.0, rest[0])

    state = DeploymentState(network, services, workload)
    revenue = 0.0
    if best["profile"] is not None:
        assignment, history = best["profile"]
        for (t0, t1), chosen in history:
            for k, pl in sorted(chosen.items()):
                svc = services[requests[k].service]
                profile = probe.profiles[requests[k].service]
                seg = _placement_segment(t0, t1, svc, profile, pl)
                state.add_segment(k, seg)
        for k, opt in enumerate(assignment):
            if opt is not None:
                svc = services[requests[k].service]
                revenue += opt[1]
    state.write_lifecycle(0, workload.lifespan)
    report = validate(state)
    if not report.feasible:
        raise RuntimeError(
            f"exact solver produced an infeasible state: "
            f"{report.violations[0]}")
    objective = best["objective"] if best["profile"] is not None else 0.0
    return state, objective, revenue


def _placement_segment(t0: int, t1: int, svc, profile, pl: _Placement) -> Segment:
    chain = list(svc.vnf_ids)
    placement = {q: (Instance(m, mu),)
                 for q, m, mu in zip(chain, pl.vms, pl.rates)}
    routing = {
        (None, chain[0]): (((DUMMY_VM, pl.vms[0], 0),
                            profile.edge_traffic[(None, chain[0])]),),
        (chain[-1], None): (((pl.vms[-1], DUMMY_VM, 0),
                             profile.edge_traffic[(chain[-1], None)]),),
    }
    for (q1, q2), key in zip(zip(chain, chain[1:]), pl.links):
        routing[(q1, q2)] = ((key, profile.edge_traffic[(q1, q2)]),)
    return Segment(t0, t1, placement, routing)
