import math

import numpy as np
import pytest
from scipy.integrate import quad

from uavmpt.channel import (EfficiencyModel, FadingParams, GainQuantizer,
                            LinkGeometry, _upper_incomplete_gamma, ber_nakagami,
                            contact_time, link_geometry, mean_power_gain,
                            mpt_received_power, required_tx_power,
                            sample_power_gain)


class _UnitGamma:
    """Random-stream stub whose gamma variate is always 1 (the mean)."""

    def gamma(self, shape, scale):
        return 1.0


def upper_gamma_quadrature(m, x):
    val, _ = quad(lambda t: t ** (m - 1) * math.exp(-t), x, np.inf)
    return val


class TestIncompleteGamma:
    def test_m1_equals_exponential(self):
        for x in np.linspace(0.0, 50.0, 101):
            series = _upper_incomplete_gamma(1, x)
            assert series == pytest.approx(math.exp(-x), rel=1e-12)

    def test_matches_quadrature_for_small_m(self):
        for m in (1, 2, 3, 5):
            for x in (0.0, 0.3, 1.7, 6.0, 20.0):
                assert _upper_incomplete_gamma(m, x) == pytest.approx(
                    upper_gamma_quadrature(m, x), rel=1e-9)


class TestBerNakagami:
    def test_rayleigh_closed_form(self):
        # m=1: 0.2 * (1/mean_snr) * (exp(-b*lo) - exp(-b*hi)) / b, b = 1/10 + 1.5
        params = FadingParams(m=1)
        got = ber_nakagami(1, 1.0, 2.0, 10.0, params)
        b = 0.1 + 1.5
        want = 0.2 * 0.1 * (math.exp(-b * 1.0) - math.exp(-b * 2.0)) / b
        assert got == pytest.approx(want, rel=1e-12)
        assert got == pytest.approx(2.014e-3, rel=1e-3)

    def test_equal_snr_bounds_give_zero(self):
        params = FadingParams(m=1)
        assert ber_nakagami(2, 1.5, 1.5, 8.0, params) == 0.0

    def test_m2_against_quadrature(self):
        params = FadingParams(m=2)
        phi, lo, hi, mean = 2, 0.8, 3.5, 12.0
        b = 2.0 / mean + 3.0 / (2.0 * (2 ** phi - 1))
        want = (0.2 / math.factorial(1) * (2.0 / mean) ** 2
                * (upper_gamma_quadrature(2, b * lo) - upper_gamma_quadrature(2, b * hi))
                / b ** 2)
        assert ber_nakagami(phi, lo, hi, mean, params) == pytest.approx(want, rel=1e-9)

    def test_stays_in_unit_interval(self, rng):
        for m in (1, 2, 4):
            params = FadingParams(m=m)
            for _ in range(300):
                lo = rng.uniform(0, 20)
                hi = lo + rng.uniform(0, 20)
                mean = rng.uniform(1e-3, 1e3)
                phi = int(rng.integers(1, 9))
                ber = ber_nakagami(phi, lo, hi, mean, params)
                assert 0.0 <= ber <= 1.0

    def test_non_integer_shape_rejected(self):
        with pytest.raises(ValueError, match="integer"):
            FadingParams(m=1.5)


class TestRequiredTxPower:
    def test_reference_value(self):
        params = FadingParams(kappa1=0.2, kappa2=1.5)
        got = required_tx_power(1, 1.0, params, 5e-4)
        assert got == pytest.approx(math.log(400.0) / 1.5, rel=1e-12)
        assert got == pytest.approx(3.9943, rel=1e-4)

    def test_target_at_kappa1_boundary_gives_zero(self):
        params = FadingParams(kappa1=0.2, kappa2=1.5)
        assert required_tx_power(1, 1.0, params, 0.2) == 0.0

    def test_order_two_triples_order_one(self):
        params = FadingParams(kappa1=0.2, kappa2=1.5)
        p1 = required_tx_power(1, 1.0, params, 5e-4)
        p2 = required_tx_power(2, 1.0, params, 5e-4)
        assert p2 == pytest.approx(3.0 * p1, rel=1e-12)

    def test_target_above_kappa1_rejected(self):
        params = FadingParams(kappa1=0.2, kappa2=1.5)
        with pytest.raises(ValueError, match="kappa1"):
            required_tx_power(1, 1.0, params, 0.21)
        with pytest.raises(ValueError, match="kappa1"):
            required_tx_power(1, 1.0, params, -1e-3)

    def test_monotone_in_order_and_gain(self, rng):
        for _ in range(1000):
            params = FadingParams(
                m=int(rng.integers(1, 4)),
                kappa1=rng.uniform(0.05, 1.0),
                kappa2=rng.uniform(0.1, 10.0),
            )
            eps = params.kappa1 * rng.uniform(1e-6, 0.99)
            gain = 10.0 ** rng.uniform(-9, 0)
            phi = int(rng.integers(1, 8))
            p_lo = required_tx_power(phi, gain, params, eps)
            p_hi = required_tx_power(phi + 1, gain, params, eps)
            assert p_hi > p_lo
            assert required_tx_power(phi, gain * 2.0, params, eps) < p_lo


class TestSamplePowerGain:
    def test_sample_mean_matches_path_loss(self):
        params = FadingParams(m=1, mean_gain_1m=1e-3, pathloss_exp=2.0)
        geom = link_geometry(math.sqrt(100.0 ** 2 - 50.0 ** 2), 50.0)
        assert geom.distance == pytest.approx(100.0)
        rng = np.random.default_rng(7)
        draws = np.array([
            sample_power_gain(geom, params, rng).power_gain for _ in range(100_000)
        ])
        assert draws.mean() == pytest.approx(1e-7, rel=0.02)

    def test_stubbed_variate_gives_exact_mean_gain(self):
        params = FadingParams(m=1, mean_gain_1m=1e-3, pathloss_exp=2.0)
        geom = LinkGeometry(distance=100.0, altitude=50.0, alignment=0.5)
        draw = sample_power_gain(geom, params, _UnitGamma())
        assert draw.power_gain == mean_power_gain(100.0, params)

    def test_binning_at_zero_db_threshold(self):
        quantizer = GainQuantizer(thresholds_db=[0.0])
        assert quantizer.bin_of(10.0) == 1
        assert quantizer.bin_of(0.1) == 0

    def test_zero_distance_rejected(self):
        params = FadingParams()
        geom = LinkGeometry(distance=0.0, altitude=0.0, alignment=0.0)
        with pytest.raises(ValueError, match="distance"):
            sample_power_gain(geom, params, np.random.default_rng(0))

    def test_quantizer_from_distribution(self):
        params = FadingParams(m=1, mean_gain_1m=1e-3, pathloss_exp=2.0)
        q = GainQuantizer.from_distribution(params, ref_distance=100.0, num_bins=4)
        assert q.num_bins == 4
        assert np.all(np.diff(q.thresholds_db) > 0)
        # exponential median = mean * ln 2
        median = 1e-7 * math.log(2.0)
        assert q.center_db == pytest.approx(10 * math.log10(median), rel=1e-9)


class TestMptReceivedPower:
    def test_explicit_efficiency_product(self):
        model = EfficiencyModel(eta0=0.5, decay_distance=1e30)   # omega == 0.5
        geom = LinkGeometry(distance=5.0, altitude=5.0, alignment=0.0)
        got = mpt_received_power(geom, 0.01, 0.1, model)
        assert got == pytest.approx(5.0e-4, rel=1e-12)

    def test_orthogonal_alignment_kills_transfer(self):
        model = EfficiencyModel()
        geom = LinkGeometry(distance=100.0, altitude=0.0, alignment=math.pi / 2)
        assert mpt_received_power(geom, 1.0, 1.0, model) == pytest.approx(0.0, abs=1e-16)

    def test_efficiency_at_decay_distance(self):
        model = EfficiencyModel(eta0=0.6, decay_distance=200.0)
        assert model.omega(200.0, 0.0) == pytest.approx(0.6 / math.e, rel=1e-12)
        assert model.omega(200.0, 0.0) == pytest.approx(0.2207, rel=1e-3)

    def test_zero_iff_omega_zero(self, rng):
        model = EfficiencyModel()
        for _ in range(200):
            b = rng.uniform(1.0, 100.0)
            d = b * rng.uniform(1.0, 5.0)
            theta = rng.uniform(0.0, math.pi / 2)
            geom = LinkGeometry(distance=d, altitude=b, alignment=theta)
            power = mpt_received_power(geom, 1e-6, 1.0, model)
            if model.omega(d, theta) == 0.0:
                assert power == 0.0
            else:
                assert power > 0.0


class TestContactTime:
    def test_reference_values(self):
        assert contact_time(LinkGeometry(130.0, 120.0, 0.4), 10.0) == pytest.approx(10.0)
        assert contact_time(LinkGeometry(125.0, 120.0, 0.3), 14.0) == pytest.approx(5.0)

    def test_degenerate_overhead_geometry(self):
        assert contact_time(LinkGeometry(120.0, 120.0, 0.0), 10.0) == 0.0

    def test_velocity_must_be_positive(self):
        with pytest.raises(ValueError, match="velocity"):
            contact_time(LinkGeometry(130.0, 120.0, 0.4), 0.0)

    def test_halves_when_velocity_doubles(self, rng):
        for _ in range(100):
            b = rng.uniform(0.0, 200.0)
            d = b + rng.uniform(0.1, 300.0)
            v = rng.uniform(0.5, 30.0)
            geom = LinkGeometry(d, b, 0.0)
            assert contact_time(geom, 2 * v) == pytest.approx(
                contact_time(geom, v) / 2.0, rel=1e-12)


class TestLinkGeometry:
    def test_invariants_enforced(self):
        with pytest.raises(ValueError):
            LinkGeometry(distance=10.0, altitude=20.0, alignment=0.0)
        with pytest.raises(ValueError):
            LinkGeometry(distance=10.0, altitude=5.0, alignment=2.0)

    def test_alignment_from_geometry(self):
        geom = link_geometry(horizontal_distance=100.0, altitude=100.0)
        assert geom.alignment == pytest.approx(math.pi / 4, rel=1e-12)
        assert geom.distance == pytest.approx(100.0 * math.sqrt(2.0), rel=1e-12)
