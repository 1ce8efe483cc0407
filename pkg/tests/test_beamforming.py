from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from capa_kit.beamforming import (
    CurrentDistribution,
    OptimizerConfig,
    SubspaceBasis,
    design,
    evaluate_se,
    heuristic_set,
    mmse,
    mmse_coefficients,
    mrt,
    optimize_cov,
    optimize_discretized,
    optimize_subspace,
    se_functional_gradient,
    sum_se_wmmse,
    zf,
)
from capa_kit.channel import LinkBudget, SpatialResponse, bandlimit_basis, los_response, response_matrix
from capa_kit.errors import ScopeError, SingularGramError
from capa_kit.geometry import Aperture, build_quadrature

LAM = 0.125
BUDGET = LinkBudget(1.0, 1e-6)


@pytest.fixture
def responses(planar_grid, users4):
    return [los_response(u, planar_grid) for u in users4]


@pytest.fixture
def basis(responses):
    return SubspaceBasis.from_responses(responses)


class TestSingleUser:
    def test_all_methods_reach_mrt_capacity(self, planar_grid):
        h = los_response((0.3, 0.2, 1.5), planar_grid)
        exact = math.log2(1 + BUDGET.power * h.norm2 / BUDGET.noise)
        basis = SubspaceBasis.from_responses([h])
        assert optimize_subspace(basis, BUDGET).sum_se == pytest.approx(exact, abs=1e-10)
        assert optimize_cov([h], BUDGET).sum_se == pytest.approx(exact, abs=1e-10)
        w = mrt(h, BUDGET.power)
        assert w.power == pytest.approx(BUDGET.power, rel=1e-12)
        assert evaluate_se([w], [h], BUDGET)[0] == pytest.approx(exact, abs=1e-10)


class TestHeuristics:
    def test_zf_nulls_other_users(self, basis):
        for k in range(basis.k):
            w = zf(basis, k, 0.25)
            assert w.power == pytest.approx(0.25, rel=1e-10)
            c = np.array([np.sum(r.grid.weights * np.conj(r.samples) * w.samples) for r in basis.responses])
            for j, r in enumerate(basis.responses):
                if j != k:
                    assert abs(c[j]) <= 1e-8 * r.norm * math.sqrt(w.power)

    def test_zf_identical_users_raises(self, planar_grid):
        r = los_response((0.3, 0.2, 1.5), planar_grid)
        basis = SubspaceBasis.from_responses([r, los_response((0.3, 0.2, 1.5), planar_grid)])
        with pytest.raises(SingularGramError, match="reduce"):
            zf(basis, 0, 1.0)

    def test_mmse_solves_fredholm_equation(self, basis):
        p = BUDGET.powers(basis.k)
        for k in range(basis.k):
            a = mmse_coefficients(basis.gram, p, BUDGET.noise, k)
            w = basis.matrix @ a
            H = basis.matrix
            wts = basis.grid.weights
            lhs = BUDGET.noise * w + H @ (p * (H.conj().T @ (wts * w)))
            resid = np.sqrt(np.sum(wts * abs(lhs - H[:, k]) ** 2)) / basis.responses[k].norm
            assert resid < 1e-10

    def test_mmse_limits(self, basis):
        # high noise -> matched filter direction; low noise -> zero-forcing direction
        def direction(w):
            return w.samples / np.linalg.norm(w.samples)

        hi = mmse(basis, LinkBudget(1.0, 1e6), 0)
        m = heuristic_set("mrt", basis, BUDGET).beams[0]
        assert abs(np.vdot(direction(hi), direction(m))) == pytest.approx(1.0, abs=1e-9)
        lo = mmse(basis, LinkBudget(1.0, 1e-16), 0)
        z = zf(basis, 0, 1.0)
        assert abs(np.vdot(direction(lo), direction(z))) == pytest.approx(1.0, abs=1e-6)

    def test_equal_power_split(self, basis):
        for method in ("mrt", "zf", "mmse"):
            s = heuristic_set(method, basis, BUDGET)
            assert [b.power for b in s.beams] == pytest.approx([0.25] * 4, rel=1e-10)
            assert s.total_power == pytest.approx(1.0, rel=1e-10)

    def test_unknown_heuristic(self, basis):
        with pytest.raises(ScopeError):
            heuristic_set("dpc", basis, BUDGET)


class TestGradient:
    def test_matches_finite_differences(self, responses, rng):
        H = response_matrix(responses)
        w = responses[0].grid.weights
        W = rng.normal(size=H.shape) + 1j * rng.normal(size=H.shape)
        W *= math.sqrt(1.0 / np.sum(w[:, None] * abs(W) ** 2))
        f0, g = se_functional_gradient(W, H, w, BUDGET.noise)
        for _ in range(5):
            D = rng.normal(size=H.shape) + 1j * rng.normal(size=H.shape)
            h = 1e-6
            fp, _ = se_functional_gradient(W + h * D, H, w, BUDGET.noise)
            fm, _ = se_functional_gradient(W - h * D, H, w, BUDGET.noise)
            fd = (fp - fm) / (2 * h)
            an = 2 * np.real(np.sum(w[:, None] * np.conj(g) * D))
            assert fd == pytest.approx(an, rel=1e-5)


class TestOptimizers:
    def test_wmmse_monotone_and_power_tight(self, basis):
        res = optimize_subspace(basis, BUDGET)
        h = np.array(res.history)
        assert np.all(np.diff(h) >= -1e-12 * h[:-1])
        assert res.converged
        assert res.total_power == pytest.approx(BUDGET.power, rel=1e-9)

    def test_cov_matches_subspace(self, responses, basis):
        sub = optimize_subspace(basis, BUDGET)
        cov = optimize_cov(responses, BUDGET)
        assert abs(cov.sum_se - sub.sum_se) / sub.sum_se <= 5e-3
        assert np.all(np.diff(cov.history) >= 0)
        assert cov.total_power <= BUDGET.power * (1 + 1e-9)

    def test_subspace_beats_heuristics(self, basis):
        sub = optimize_subspace(basis, BUDGET).sum_se
        for m in ("mrt", "zf", "mmse"):
            assert heuristic_set(m, basis, BUDGET).sum_se <= sub + 1e-9

    def test_discretized_bounded_by_subspace(self, responses, basis):
        sub = optimize_subspace(basis, BUDGET).sum_se
        B = bandlimit_basis(basis.grid.aperture, 2.0, "cosine")
        disc = optimize_discretized(responses, BUDGET, B)
        assert disc.sum_se <= sub + 1e-9
        assert disc.sum_se >= 0.9 * sub
        assert disc.total_power <= BUDGET.power * (1 + 1e-9)

    def test_discretized_equals_subspace_when_modes_span_responses(self, rng):
        ap = Aperture.planar(0.25, 0.25, LAM)
        g = build_quadrature(ap)
        B = bandlimit_basis(ap)
        Phi = B.evaluate(g.local)
        resp = []
        for k in range(3):
            c = (rng.normal(size=B.size) + 1j * rng.normal(size=B.size)) * 1e-3
            resp.append(SpatialResponse(Phi @ c, g, (0, 0, 1 + k)))
        sub = optimize_subspace(SubspaceBasis.from_responses(resp), BUDGET)
        disc = optimize_discretized(resp, BUDGET, B)
        assert disc.sum_se == pytest.approx(sub.sum_se, abs=1e-6)

    def test_nonconvergence_returns_best_iterate(self, basis):
        res = optimize_subspace(basis, BUDGET, config=OptimizerConfig(max_iters=2))
        assert not res.converged
        assert res.sum_se == pytest.approx(max(res.history), rel=1e-12)

    def test_wmmse_on_discrete_channel(self, rng):
        Hc = rng.normal(size=(3, 5)) + 1j * rng.normal(size=(3, 5))
        V0 = Hc.conj().T * 0.1
        V, hist, ok = sum_se_wmmse(Hc, 2.0, 0.5, V0)
        assert ok and np.sum(abs(V) ** 2) == pytest.approx(2.0, rel=1e-9)
        assert np.all(np.diff(hist) >= -1e-12)

    @given(seed=st.integers(0, 10_000))
    def test_subspace_never_worse_than_mrt(self, seed):
        r = np.random.default_rng(seed)
        ap = Aperture.planar(0.15, 0.15, LAM)
        g = build_quadrature(ap, 8)
        users = [(r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(0.5, 3)) for _ in range(2)]
        basis = SubspaceBasis.from_responses([los_response(u, g) for u in users])
        b = LinkBudget(1.0, 10 ** r.uniform(-8, -4))
        assert optimize_subspace(basis, b).sum_se >= heuristic_set("mrt", basis, b).sum_se - 1e-9


class TestDispatch:
    def test_unknown_method_names_valid_set(self, responses):
        with pytest.raises(ScopeError, match="subspace"):
            design("genetic", responses, BUDGET)

    def test_unknown_objective(self, basis):
        with pytest.raises(ScopeError):
            optimize_subspace(basis, BUDGET, objective="max-min")

    def test_discretized_needs_basis(self, responses):
        with pytest.raises(ValueError):
            design("discretized", responses, BUDGET)

    def test_evaluate_rejects_bad_noise(self, responses, basis):
        beams = heuristic_set("mrt", basis, BUDGET)
        with pytest.raises(ValueError):
            evaluate_se(beams, responses, 0.0)

    def test_current_rejects_wrong_size(self, planar_grid):
        with pytest.raises(ValueError):
            CurrentDistribution(np.ones(3), planar_grid)
