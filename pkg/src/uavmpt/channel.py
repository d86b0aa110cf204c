"""Link-level physics: fading draws, BER, transmit power, power transfer, contact time.

Everything here is a pure function of its arguments (plus an explicit random
stream for the fading draw), so the simulation layers above can be replayed
bit-for-bit from a seed.

Conventions: gains and SNRs are linear (not dB) unless a name says otherwise,
powers are watts, distances are meters, angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaincinv

LN2 = math.log(2.0)


@dataclass(frozen=True)
class FadingParams:
    """Nakagami-m channel constants.

    m = 1 is Rayleigh fading (exponentially distributed power gain). The mean
    power gain at distance d is mean_gain_1m * d**(-pathloss_exp).
    """

    m: int = 1
    mean_gain_1m: float = 1e-3
    pathloss_exp: float = 2.0
    noise_power: float = 1e-13          # -100 dBm
    kappa1: float = 0.2
    kappa2: float = 1.5

    def __post_init__(self):
        if not isinstance(self.m, (int, np.integer)) or self.m < 1:
            raise ValueError(f"Nakagami shape m must be an integer >= 1, got {self.m!r}")
        if self.mean_gain_1m <= 0:
            raise ValueError("mean_gain_1m must be positive")
        if self.pathloss_exp < 0:
            raise ValueError("pathloss_exp must be >= 0")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if not 0 < self.kappa1 <= 1:
            raise ValueError("kappa1 must lie in (0, 1]")
        if self.kappa2 <= 0:
            raise ValueError("kappa2 must be positive")


@dataclass(frozen=True)
class LinkGeometry:
    """UAV-to-device geometry: 3D distance, UAV altitude, antenna alignment angle.

    The alignment angle is measured from the vertical, so a device directly
    under the UAV has alignment 0.
    """

    distance: float
    altitude: float
    alignment: float

    def __post_init__(self):
        if not 0 <= self.altitude <= self.distance:
            raise ValueError(
                f"need distance >= altitude >= 0, got d={self.distance}, b={self.altitude}"
            )
        if not 0 <= self.alignment <= math.pi / 2 + 1e-12:
            raise ValueError(f"alignment must lie in [0, pi/2], got {self.alignment}")


def link_geometry(horizontal_distance: float, altitude: float) -> LinkGeometry:
    """Geometry from the horizontal offset between device and the UAV's ground track."""
    d = math.hypot(horizontal_distance, altitude)
    theta = math.acos(altitude / d) if d > 0 else 0.0
    return LinkGeometry(distance=d, altitude=altitude, alignment=theta)


@dataclass(frozen=True)
class ChannelDraw:
    power_gain: float
    gain_bin: int


@dataclass(frozen=True)
class EfficiencyModel:
    """Power-transfer efficiency omega(d, theta) = eta0 * max(0, cos theta) * exp(-d / decay_distance).

    Monotone decreasing in both distance and misalignment, bounded in [0, eta0].
    """

    eta0: float = 0.6
    decay_distance: float = 200.0

    def omega(self, distance: float, alignment: float) -> float:
        return self.eta0 * max(0.0, math.cos(alignment)) * math.exp(-distance / self.decay_distance)


class GainQuantizer:
    """Maps linear power gains to one of H bins via ascending dB thresholds.

    A gain at or above threshold k (dB) lands in bin k+1; below every
    threshold is bin 0. center_db is the reference (median) gain in dB used
    to normalize gains for learning inputs.
    """

    def __init__(self, thresholds_db, center_db: float | None = None):
        self.thresholds_db = np.asarray(sorted(thresholds_db), dtype=float)
        if center_db is None:
            center_db = float(np.mean(self.thresholds_db)) if len(self.thresholds_db) else 0.0
        self.center_db = center_db

    @property
    def num_bins(self) -> int:
        return len(self.thresholds_db) + 1

    @classmethod
    def from_distribution(cls, params: FadingParams, ref_distance: float, num_bins: int,
                          lo_pct: float = 5.0, hi_pct: float = 95.0) -> "GainQuantizer":
        """Thresholds uniform in dB between two percentiles of the gain distribution
        at a reference distance."""
        if num_bins < 1:
            raise ValueError("num_bins must be >= 1")
        scale = mean_power_gain(ref_distance, params) / params.m
        lo, med, hi = (float(gammaincinv(params.m, q / 100.0)) * scale
                       for q in (lo_pct, 50.0, hi_pct))
        center_db = 10.0 * math.log10(med)
        if num_bins == 1:
            return cls([], center_db=center_db)
        edges = np.linspace(10.0 * math.log10(lo), 10.0 * math.log10(hi), num_bins + 1)
        return cls(edges[1:-1], center_db=center_db)

    def bin_of(self, power_gain: float) -> int:
        if power_gain <= 0:
            return 0
        db = 10.0 * math.log10(power_gain)
        return int(np.searchsorted(self.thresholds_db, db, side="right"))


def mean_power_gain(distance: float, params: FadingParams) -> float:
    """Average linear power gain at the given distance (path loss only)."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    return params.mean_gain_1m * distance ** (-params.pathloss_exp)


def sample_power_gain(geom: LinkGeometry, params: FadingParams, rng: np.random.Generator,
                      quantizer: GainQuantizer | None = None) -> ChannelDraw:
    """One fading realization: mean path gain scaled by a unit-mean Gamma(m, 1/m) variate."""
    mean = mean_power_gain(geom.distance, params)
    factor = rng.gamma(shape=params.m, scale=1.0 / params.m)
    gain = mean * factor
    gain_bin = quantizer.bin_of(gain) if quantizer is not None else 0
    return ChannelDraw(power_gain=gain, gain_bin=gain_bin)


def _upper_incomplete_gamma(m: int, x: float) -> float:
    # Finite series for integer m: Gamma(m, x) = (m-1)! * exp(-x) * sum_{k<m} x^k / k!
    if x < 0:
        raise ValueError("x must be >= 0")
    acc = 0.0
    term = 1.0
    for k in range(m):
        if k > 0:
            term *= x / k
        acc += term
    return math.factorial(m - 1) * math.exp(-x) * acc


def ber_nakagami(phi: int, snr_lo: float, snr_hi: float, mean_snr: float,
                 params: FadingParams) -> float:
    """Average bit error rate of a 2**phi constellation on a Nakagami-m channel,
    integrated over the SNR interval [snr_lo, snr_hi]:

        0.2/Gamma(m) * (m/mean_snr)**m
            * [Gamma(m, b*snr_lo) - Gamma(m, b*snr_hi)] / b**m,
        b = m/mean_snr + 3 / (2*(2**phi - 1)).

    Returns a value in [0, 0.2]; exactly 0 when the interval is empty.
    """
    if phi < 1:
        raise ValueError("modulation order must be >= 1")
    if not 0 <= snr_lo <= snr_hi:
        raise ValueError("need 0 <= snr_lo <= snr_hi")
    if mean_snr <= 0:
        raise ValueError("mean_snr must be positive")
    m = params.m
    b = m / mean_snr + 3.0 / (2.0 * (2.0 ** phi - 1.0))
    diff = _upper_incomplete_gamma(m, b * snr_lo) - _upper_incomplete_gamma(m, b * snr_hi)
    return 0.2 / math.factorial(m - 1) * (m / mean_snr) ** m * diff / b ** m


def required_tx_power(phi: int, power_gain: float, params: FadingParams,
                      ber_target: float) -> float:
    """Device transmit power needed to hit the BER target at the given gain:
    kappa2^-1 * ln(kappa1 / ber_target) * (2**phi - 1) / power_gain.

    Increasing in phi, decreasing in power_gain. ber_target == kappa1 gives 0.
    """
    if phi < 1:
        raise ValueError("modulation order must be >= 1")
    if power_gain <= 0:
        raise ValueError("power_gain must be positive")
    if not 0 < ber_target <= params.kappa1:
        raise ValueError(
            f"ber_target must lie in (0, kappa1={params.kappa1}], got {ber_target}"
        )
    return math.log(params.kappa1 / ber_target) / params.kappa2 * (2.0 ** phi - 1.0) / power_gain


def mpt_received_power(geom: LinkGeometry, power_gain: float, uav_tx_power: float,
                       efficiency_model: EfficiencyModel) -> float:
    """Power harvested by the device: omega(d, theta) * uav_tx_power * power_gain."""
    if uav_tx_power <= 0:
        raise ValueError("uav_tx_power must be positive")
    return efficiency_model.omega(geom.distance, geom.alignment) * uav_tx_power * power_gain


def contact_time(geom: LinkGeometry, velocity: float) -> float:
    """Seconds the device stays within service range of the passing UAV:
    2 * sqrt(d**2 - b**2) / v."""
    if velocity <= 0:
        raise ValueError("velocity must be positive")
    gap = geom.distance ** 2 - geom.altitude ** 2
    return 2.0 * math.sqrt(max(0.0, gap)) / velocity
