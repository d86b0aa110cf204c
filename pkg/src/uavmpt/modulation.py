"""Per-contact modulation choice: pick the order that maximizes net harvested energy.

The uplink of one packet takes B/(phi*W) seconds out of the contact window;
the rest of the window charges the device. A higher order shortens the uplink
(more charging time) but costs more transmit energy. The optimum balances the
two via a first-order condition that is strictly increasing in phi, so a
bisection plus a check of the two neighbouring integers finds the argmax. The
choice depends only on geometry and channel, never on queue or battery state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .channel import LN2

_INTERVAL_TOL = 1e-6
_RESIDUAL_TOL = 1e-9
_MAX_BISECT = 60


@dataclass(frozen=True)
class ModulationProblem:
    contact_time: float          # seconds the device is serviceable
    bits_per_packet: float
    bandwidth: float             # Hz
    power_gain: float            # linear channel power gain
    uav_tx_power: float          # watts
    efficiency: float            # omega(d, theta), dimensionless
    ber_target: float
    kappa1: float = 0.2
    kappa2: float = 1.5
    max_order: int = 8

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError(f"max_order must be >= 1, got {self.max_order}")
        for name in ("contact_time", "bits_per_packet", "bandwidth", "power_gain",
                     "uav_tx_power", "kappa2"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.efficiency < 0:
            raise ValueError("efficiency must be >= 0")
        if not 0 < self.ber_target <= self.kappa1:
            raise ValueError("ber_target must lie in (0, kappa1]")

    @property
    def harvest_power(self) -> float:
        """Received charging power while the downlink is on."""
        return self.efficiency * self.uav_tx_power * self.power_gain

    @property
    def energy_coeff(self) -> float:
        """kappa2^-1 * ln(kappa1 / ber_target), the uplink power scale."""
        return math.log(self.kappa1 / self.ber_target) / self.kappa2

    def uplink_seconds(self, phi: float) -> float:
        return self.bits_per_packet / (phi * self.bandwidth)

    def feasible(self, phi: int) -> bool:
        """An order is usable only if one packet fits inside the contact window."""
        return self.uplink_seconds(phi) <= self.contact_time


def net_energy(problem: ModulationProblem, phi: int) -> float:
    """Energy balance of a contact at order phi (joules, may be negative):
    harvest over the residual window minus the uplink transmit energy."""
    if not 1 <= phi <= problem.max_order:
        raise ValueError(f"phi must lie in [1, {problem.max_order}]")
    up = problem.uplink_seconds(phi)
    harvest = (problem.contact_time - up) * problem.harvest_power
    tx = (problem.bits_per_packet * problem.energy_coeff
          / (problem.power_gain * phi * problem.bandwidth)) * (2.0 ** phi - 1.0)
    return harvest - tx


def foc_residual(problem: ModulationProblem, phi: float) -> float:
    """First-order-condition residual, strictly increasing in phi.

    The stationary point of the continuous-phi energy balance satisfies
    phi*2**phi*ln2 - 2**phi = efficiency*P_tx*gain**2*kappa2/ln(kappa1/eps) - 1;
    this returns LHS - RHS, so the root is the unconstrained optimum.
    """
    if phi <= 0:
        raise ValueError("phi must be positive")
    lhs = phi * 2.0 ** phi * LN2 - 2.0 ** phi
    rhs = problem.harvest_power * problem.power_gain / problem.energy_coeff - 1.0
    return lhs - rhs


def _fixed_point(problem: ModulationProblem) -> float:
    """Bisection on the FOC residual over [1, max_order], clamped at the ends."""
    lo, hi = 1.0, float(problem.max_order)
    f_lo = foc_residual(problem, lo)
    if f_lo >= 0:
        return lo
    if foc_residual(problem, hi) <= 0:
        return hi
    mid = 0.5 * (lo + hi)
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        f_mid = foc_residual(problem, mid)
        if abs(f_mid) < _RESIDUAL_TOL or hi - lo < _INTERVAL_TOL:
            break
        if f_mid < 0:
            lo = mid
        else:
            hi = mid
    return mid


def optimal_modulation(problem: ModulationProblem) -> int | None:
    """Order in [1, max_order] maximizing net_energy, or None if no order is feasible.

    Bisects the first-order condition, then compares net_energy at the two
    integers closest to the fixed point (clamped into the feasible range).
    Ties go to the smaller order.
    """
    min_feasible = None
    for phi in range(1, problem.max_order + 1):
        if problem.feasible(phi):
            min_feasible = phi
            break
    if min_feasible is None:
        return None
    x = _fixed_point(problem)
    cands = sorted({
        min(problem.max_order, max(min_feasible, int(math.floor(x)))),
        min(problem.max_order, max(min_feasible, int(math.ceil(x)))),
    })
    best = cands[0]
    best_val = net_energy(problem, best)
    for phi in cands[1:]:
        val = net_energy(problem, phi)
        if val > best_val:
            best, best_val = phi, val
    return best


def brute_force_modulation(problem: ModulationProblem) -> int | None:
    """Exhaustive argmax of net_energy over feasible orders; oracle for the bisection."""
    best = None
    best_val = -math.inf
    for phi in range(1, problem.max_order + 1):
        if not problem.feasible(phi):
            continue
        val = net_energy(problem, phi)
        if val > best_val:
            best, best_val = phi, val
    return best
