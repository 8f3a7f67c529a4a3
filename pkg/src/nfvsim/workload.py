"""Time-stamped service request sets: generation, windows, revenue."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .services import ServiceSpec
from .units import UnitSystem


@dataclass(frozen=True)
class ServiceRequest:
    id: int
    service: str
    arrival: int      # t_arv, step index
    departure: int    # t_dpr, step index; service interval is [arrival, departure)

    @property
    def duration(self) -> int:
        return self.departure - self.arrival


@dataclass(frozen=True)
class Workload:
    requests: tuple[ServiceRequest, ...]
    lifespan: int          # total steps T
    step_ms: float = 60_000.0

    def by_id(self, request_id: int) -> ServiceRequest:
        return self.requests[request_id]


def generate_poisson(services: list[str], rate: float, mean_duration: float,
                     lifespan: int, seed: int) -> Workload:
    """Poisson arrivals with exponential durations, deterministic per seed.

    Arrival steps are the floor of continuous Poisson-process arrival times
    on [0, lifespan); durations are rounded up to at least one step and
    clipped at the lifespan.  Service types come from a balanced multiset of
    the given services, shuffled with the same generator.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if mean_duration < 1:
        raise ValueError("mean_duration must be >= 1 step")
    rng = np.random.default_rng(seed)
    arrivals: list[int] = []
    t = 0.0
    while True:
        t += rng.exponential(1.0 / rate)
        if t >= lifespan:
            break
        arrivals.append(int(math.floor(t)))

    n = len(arrivals)
    types = [services[i % len(services)] for i in range(n)]
    rng.shuffle(types)

    requests = []
    for i, (arv, svc) in enumerate(zip(arrivals, types)):
        dur = max(1, int(math.ceil(rng.exponential(mean_duration))))
        dpr = min(arv + dur, lifespan)
        requests.append(ServiceRequest(i, svc, arv, dpr))
    return Workload(tuple(requests), lifespan)


def active_in_window(w: Workload, t: int, horizon: int) -> list[ServiceRequest]:
    """Requests whose lifetime [arrival, departure) intersects [t, t+horizon)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return [k for k in w.requests
            if k.arrival < t + horizon and k.departure > t]


def horizon_revenue(k: ServiceRequest, s: ServiceSpec, t: int, horizon: int,
                    units: UnitSystem) -> float:
    """Revenue obtainable from k inside the window [t, t+horizon):
    X_rev * overlap * lambda_new, converted packets -> Gb."""
    overlap = min(t + horizon, k.departure) - max(t, k.arrival)
    if overlap <= 0:
        return 0.0
    return s.revenue_rate * units.rate_to_gb_per_step(s.ingress_rate) * overlap


def save_workload(w: Workload, path: str | Path) -> None:
    payload = {
        "lifespan_steps": w.lifespan,
        "step_ms": w.step_ms,
        "requests": [
            {"id": k.id, "service": k.service,
             "arrival": k.arrival, "departure": k.departure}
            for k in w.requests
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_workload(path: str | Path) -> Workload:
    payload = json.loads(Path(path).read_text())
    requests = tuple(
        ServiceRequest(r["id"], r["service"], r["arrival"], r["departure"])
        for r in payload["requests"])
    ids = [k.id for k in requests]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate request ids")
    for k in requests:
        if not (0 <= k.arrival < k.departure <= payload["lifespan_steps"]):
            raise ValueError(f"request {k.id}: invalid lifetime")
    return Workload(requests, payload["lifespan_steps"],
                    payload.get("step_ms", 60_000.0))
