from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate as spi
from scipy.stats import kurtosis

from capa_kit.channel import bandlimit_basis
from capa_kit.errors import EstimationError
from capa_kit.fading import (
    FadingEnsembleSpec,
    SpdaLattice,
    channel_gains,
    db_to_linear,
    ergodic_capacity,
    estimate_dmt,
    outage_probability,
    sample_wavenumber_channel,
    sample_wavenumber_channels,
    spda_channel_from_field,
    wilson_interval,
)
from capa_kit.geometry import Aperture, SpdaConfig

LAM = 0.125


@pytest.fixture(scope="module")
def big2x2():
    spec = FadingEnsembleSpec(2, 2, 100_000, seed=11)
    return spec, sample_wavenumber_channels(spec, 0, spec.trials)


class TestSampling:
    def test_unit_variance(self, big2x2):
        _, H = big2x2
        assert np.mean(abs(H) ** 2) == pytest.approx(1.0, rel=1e-2)

    def test_gaussian_moments(self, big2x2):
        _, H = big2x2
        x = H[:, 0, 0]
        for part in (x.real, x.imag):
            assert kurtosis(part, fisher=False) == pytest.approx(3.0, abs=0.1)
            assert np.var(part) == pytest.approx(0.5, rel=2e-2)

    def test_bit_identical_repeat(self):
        spec = FadingEnsembleSpec(3, 2, 50, seed=5)
        a, b = sample_wavenumber_channel(spec, 17), sample_wavenumber_channel(spec, 17)
        assert a.tobytes() == b.tobytes()

    def test_batch_equals_single_in_any_order(self):
        spec = FadingEnsembleSpec(3, 3, 40, seed=9)
        batch = sample_wavenumber_channels(spec, 0, 40)
        for t in reversed(range(40)):
            assert np.array_equal(sample_wavenumber_channel(spec, t), batch[t])
        assert np.array_equal(sample_wavenumber_channels(spec, 13, 7), batch[13:20])

    def test_seeds_differ(self):
        a = sample_wavenumber_channel(FadingEnsembleSpec(2, 2, 1, seed=1), 0)
        b = sample_wavenumber_channel(FadingEnsembleSpec(2, 2, 1, seed=2), 0)
        assert not np.allclose(a, b)

    def test_out_of_range_trial(self):
        with pytest.raises(IndexError):
            sample_wavenumber_channel(FadingEnsembleSpec(2, 2, 5), 5)

    def test_mode_variance_profile(self):
        v = np.array([[4.0, 1.0], [0.25, 0.0]])
        spec = FadingEnsembleSpec(2, 2, 50_000, seed=3, mode_variance=v)
        H = sample_wavenumber_channels(spec, 0, spec.trials)
        assert np.allclose(np.mean(abs(H) ** 2, axis=0), v, rtol=3e-2, atol=1e-12)

    @pytest.mark.parametrize("kw", [dict(m_tx=0, m_rx=1, trials=1), dict(m_tx=1, m_rx=1, trials=0)])
    def test_invalid_ensemble(self, kw):
        with pytest.raises(ValueError):
            FadingEnsembleSpec(**kw)


def lattice(L, spacing, basis=None):
    ap = Aperture.linear(L, LAM)
    return SpdaLattice(ap, SpdaConfig.for_aperture(ap, spacing), basis or bandlimit_basis(ap))


class TestSpda:
    def test_mode_count_from_bandlimit(self):
        B = bandlimit_basis(Aperture.linear(4.5 * LAM, LAM))
        spec = FadingEnsembleSpec.from_bases(B, B, 10)
        assert spec.m_tx == spec.m_rx == B.size == 9
        assert np.linalg.matrix_rank(sample_wavenumber_channel(spec, 0)) == 9

    def test_half_wavelength_lattice_full_rank(self):
        spec = FadingEnsembleSpec(9, 9, 4, seed=1)
        tx = lattice(4.5 * LAM, LAM / 2)
        rx = lattice(4.5 * LAM, LAM / 2)
        h = spda_channel_from_field(sample_wavenumber_channel(spec, 0), tx, rx)
        assert np.linalg.matrix_rank(h) == min(9, 9, tx.size, rx.size)
        # the half-wavelength sampling matrix is unitary on this aperture
        F = tx.sampling_matrix()
        assert np.allclose(F.conj().T @ F, np.eye(9), atol=1e-12)

    def test_sparse_lattice_rank(self):
        spec = FadingEnsembleSpec(9, 9, 4, seed=1)
        tx, rx = lattice(4.5 * LAM, 2 * LAM), lattice(4.5 * LAM, LAM)
        h = spda_channel_from_field(sample_wavenumber_channel(spec, 0), tx, rx)
        assert h.shape == (rx.size, tx.size)
        assert np.linalg.matrix_rank(h) == min(tx.size, rx.size)

    def test_single_element_variance(self):
        tx = lattice(0.3, 1.0)
        rx = lattice(0.3, 1.0)
        assert tx.size == rx.size == 1
        B = tx.basis
        spec = FadingEnsembleSpec(B.size, B.size, 40_000, seed=4)
        h = spda_channel_from_field(sample_wavenumber_channels(spec, 0, spec.trials), tx, rx)[:, 0, 0]
        expected = np.sum(abs(rx.sampling_matrix()) ** 2) * np.sum(abs(tx.sampling_matrix()) ** 2)
        se = np.std(abs(h) ** 2) / math.sqrt(h.size)
        assert abs(np.mean(abs(h) ** 2) - expected) < 3 * se

    def test_dimension_mismatch(self):
        tx = lattice(4.5 * LAM, LAM / 2)
        with pytest.raises(ValueError):
            spda_channel_from_field(np.ones((3, 3)), tx, tx)

    def test_wider_spacing_on_fixed_aperture_lowers_ecc(self):
        L = 4.5 * LAM
        B = bandlimit_basis(Aperture.linear(L, LAM))
        spec = FadingEnsembleSpec.from_bases(B, B, 5000, seed=8)
        eccs = []
        for d in (0.5, 1.0, 2.0):
            lt = lattice(L, d * LAM, B)
            eccs.append(ergodic_capacity(spec, 10.0, spda=(lt, lt)).mean)
        assert eccs[0] > eccs[1] > eccs[2]


class TestOutage:
    def test_zero_rate_never_outage(self):
        spec = FadingEnsembleSpec(2, 2, 1000, seed=1)
        assert outage_probability(spec, 10.0, 0.0).probability == 0.0

    def test_vanishing_snr_always_outage(self):
        spec = FadingEnsembleSpec(2, 2, 20_000, seed=1)
        est = outage_probability(spec, db_to_linear(-30), 1.0)
        assert est.probability > 0.999
        assert est.interval[0] <= est.probability <= est.interval[1]

    def test_one_bit_target_slope_near_full_diversity(self):
        spec = FadingEnsembleSpec(2, 2, 200_000, seed=3)
        curve = estimate_dmt(spec, [0.0], np.arange(0, 17, 2), r0_rate=1.0)
        assert curve.points[0].d == pytest.approx(4.0, rel=0.2)

    def test_snr_must_be_positive(self):
        with pytest.raises(ValueError):
            outage_probability(FadingEnsembleSpec(1, 1, 10), 0.0, 1.0)


class TestWilson:
    def test_zero_events_of_ten(self):
        lo, hi = wilson_interval(0, 10)
        assert lo == 0.0 and hi == pytest.approx(0.2775, abs=1e-4)

    def test_half(self):
        lo, hi = wilson_interval(50, 100)
        assert (lo + hi) / 2 == pytest.approx(0.5) and hi - lo == pytest.approx(0.1923, abs=1e-3)

    def test_no_trials(self):
        with pytest.raises(EstimationError):
            wilson_interval(0, 0)


@pytest.fixture(scope="module")
def curve():
    spec = FadingEnsembleSpec(2, 2, 100_000, seed=21)
    return estimate_dmt(spec, [0.0, 0.5, 1.0, 1.5, 2.0], np.arange(10, 31, 2))


class TestDmt:
    def test_full_multiplexing_has_no_diversity(self, curve):
        assert curve.points[-1].d == pytest.approx(0.0, abs=0.1)

    def test_nonincreasing(self, curve):
        assert curve.is_nonincreasing()
        assert np.all(curve.d >= 0)

    def test_diagnostics(self, curve):
        p = curve.points[0]
        assert p.used_points >= 2 and p.snr_window[0] >= 10
        assert set(curve.outage) == {0.0, 0.5, 1.0, 1.5, 2.0}

    def test_no_events_raises(self):
        spec = FadingEnsembleSpec(2, 2, 500, seed=1)
        with pytest.raises(EstimationError, match="trial"):
            estimate_dmt(spec, [0.0], np.arange(40, 61, 5), r0_rate=0.5)

    def test_narrow_grid_rejected(self):
        with pytest.raises(ValueError):
            estimate_dmt(FadingEnsembleSpec(2, 2, 10), [0.0], [10, 12, 14])

    def test_gain_above_min_dimension_rejected(self):
        with pytest.raises(ValueError):
            estimate_dmt(FadingEnsembleSpec(2, 2, 10), [2.5], np.arange(10, 31, 5))


class TestErgodic:
    def test_siso_matches_exponential_quadrature(self):
        rho = 10.0
        spec = FadingEnsembleSpec(1, 1, 100_000, seed=6)
        est = ergodic_capacity(spec, rho)
        ref, _ = spi.quad(lambda x: math.log2(1 + rho * x) * math.exp(-x), 0, np.inf)
        assert abs(est.mean - ref) < 3 * est.stderr

    def test_monotone_in_snr(self):
        spec = FadingEnsembleSpec(2, 3, 5000, seed=2)
        vals = [e.mean for e in ergodic_capacity(spec, db_to_linear([0, 5, 10, 15, 20]))]
        assert np.all(np.diff(vals) > 0)

    def test_capa_beats_sparse_spda(self):
        L = 4.5 * LAM
        B = bandlimit_basis(Aperture.linear(L, LAM))
        spec = FadingEnsembleSpec.from_bases(B, B, 5000, seed=8)
        snr = db_to_linear([0, 5, 10, 15, 20])
        capa = ergodic_capacity(spec, snr)
        lt = lattice(L, 2 * LAM, B)
        eigs, _ = channel_gains(spec, (lt, lt))
        spda = ergodic_capacity(spec, snr, spda=(lt, lt), eigs=eigs)
        assert all(c.mean >= s.mean for c, s in zip(capa, spda))
