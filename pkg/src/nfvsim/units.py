"""Unit conventions and conversions.

Internal units used everywhere in the simulator:

* time step index       -- integer; one step is ``step_ms`` milliseconds
* traffic rate          -- packets/ms, where one "packet" is a fluid traffic
                           quantum of ``packet_bits`` bits (1 Mb by default)
* computation rate      -- computation units/ms (1 unit = 1 million instructions)
* VNF complexity omega  -- computation units per packet
* money                 -- euro; all per-hour / per-Gb table rates are folded
                           into per-step rates here, once, so the rest of the
                           code never converts

Scenario files carry the paper-style table units (Mb/s, MIPS, eur/MIPS/hour,
eur/hour, eur/Gb); this module is the single place they are translated.
"""

from __future__ import annotations

from dataclasses import dataclass

MS_PER_HOUR = 3_600_000.0
BITS_PER_GB = 1e9


@dataclass(frozen=True)
class UnitSystem:
    """Conversion constants for one scenario."""

    step_ms: float = 60_000.0      # one minute per step
    packet_bits: float = 1e6       # one traffic unit = 1 Mb

    @property
    def step_hours(self) -> float:
        return self.step_ms / MS_PER_HOUR

    def mbps_to_rate(self, mbps: float) -> float:
        """Mb/s -> packets/ms."""
        return mbps * 1e3 / self.packet_bits

    def mips_to_capacity(self, mips: float) -> float:
        """MIPS -> computation units per ms."""
        return mips / 1e3

    def rate_to_gb_per_step(self, rate: float) -> float:
        """packets/ms -> Gb carried in one step."""
        return rate * self.step_ms * self.packet_bits / BITS_PER_GB

    def cpu_cost_per_step(self, eur_per_mips_hour: float) -> float:
        """eur/MIPS/hour -> eur per (computation unit/ms) per step.

        Cost of one step is then ``value * mu * omega``.
        """
        return eur_per_mips_hour * 1e3 * self.step_hours

    def idle_cost_per_step(self, eur_per_hour: float) -> float:
        """eur/hour -> eur per step."""
        return eur_per_hour * self.step_hours

    def tx_cost_per_step(self, eur_per_gb: float) -> float:
        """eur/Gb -> eur per (packet/ms of link load) per step."""
        return eur_per_gb * self.step_ms * self.packet_bits / BITS_PER_GB

    def revenue_per_step(self, eur_per_gb: float, rate: float) -> float:
        """Revenue earned in one served step at offered rate (packets/ms)."""
        return eur_per_gb * self.rate_to_gb_per_step(rate)
