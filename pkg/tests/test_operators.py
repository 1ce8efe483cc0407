from __future__ import annotations

import numpy as np
import pytest

from capa_kit.channel import bandlimit_basis
from capa_kit.errors import OperatorSVDError, ResolutionError, SingularGeometryError
from capa_kit.geometry import Aperture, build_quadrature
from capa_kit.operators import (
    KernelMatrix,
    build_kernel,
    count_edof,
    degenerate_coefficients,
    edof,
    operator_svd_degenerate,
    operator_svd_nystrom,
    spectrum_rows,
)

LAM = 0.125


def link(L=0.5, D=5.0, lam=LAM, nodes=None, planar=False):
    if planar:
        tx = Aperture.planar(L, L, lam)
        rx = Aperture.planar(L, L, lam, center=(0, 0, D))
    else:
        tx = Aperture.linear(L, lam)
        rx = Aperture.linear(L, lam, center=(0, 0, D))
    return build_kernel(build_quadrature(tx, nodes), build_quadrature(rx, nodes))


@pytest.fixture(scope="module")
def k_ref():
    return link()


class TestNystrom:
    def test_rank_one_kernel(self):
        K0 = link(nodes=12)
        rx, tx = K0.rx_grid, K0.tx_grid
        u = np.exp(1j * rx.local[:, 0]) * (1 + rx.local[:, 0])
        v = np.cos(3 * tx.local[:, 0]) + 0.5j
        svd = operator_svd_nystrom(KernelMatrix(np.outer(u, v.conj()), tx, rx))
        s = svd.singular_values
        nu = np.sqrt(np.sum(rx.weights * abs(u) ** 2))
        nv = np.sqrt(np.sum(tx.weights * abs(v) ** 2))
        assert s[0] == pytest.approx(nu * nv, rel=1e-12)
        assert np.sum(s > 1e-10) == 1

    def test_hilbert_schmidt_identity(self, k_ref):
        svd = operator_svd_nystrom(k_ref)
        assert np.sum(svd.singular_values**2) == pytest.approx(k_ref.hs_norm2, rel=1e-10)

    def test_singular_functions_orthonormal_and_consistent(self, k_ref):
        svd = operator_svd_nystrom(k_ref)
        wr, wt = k_ref.rx_grid.weights, k_ref.tx_grid.weights
        U, V = svd.left, svd.right
        assert np.allclose(U.conj().T @ (wr[:, None] * U), np.eye(U.shape[1]), atol=1e-8)
        assert np.allclose(V.conj().T @ (wt[:, None] * V), np.eye(V.shape[1]), atol=1e-8)
        KV = k_ref.values @ (wt[:, None] * V[:, :3])
        assert np.allclose(KV, U[:, :3] * svd.singular_values[:3], rtol=1e-9, atol=1e-14)

    def test_nonincreasing(self, k_ref):
        assert np.all(np.diff(operator_svd_nystrom(k_ref).singular_values) <= 0)

    def test_grid_refinement(self, k_ref):
        coarse = operator_svd_nystrom(k_ref)
        fine = operator_svd_nystrom(link(nodes=48))
        n = coarse.edof
        assert np.allclose(coarse.singular_values[:n], fine.singular_values[:n], rtol=1e-4)

    def test_fresnel_oracle(self):
        # Paraxial kernel ~ e^{-j pi (x - s)^2 / (lambda D)} / (4 pi D): after removing
        # the unitary chirps its singular values are those of a finite Fourier
        # transform, computed here independently on a fine midpoint grid.
        L, D = 0.5, 10.0
        svd = operator_svd_nystrom(link(L, D))
        n = 1200
        x = (np.arange(n) + 0.5) / n * L - L / 2
        F = np.exp(2j * np.pi * np.outer(x, x) / (LAM * D)) * (L / n)
        ref = np.linalg.svd(F, compute_uv=False) / (4 * np.pi * D)
        assert np.allclose(svd.singular_values[:3], ref[:3], rtol=1e-2)

    def test_overlapping_apertures_rejected(self):
        ap = Aperture.linear(0.5, LAM)
        g = build_quadrature(ap, 8)
        with pytest.raises(SingularGeometryError):
            build_kernel(g, build_quadrature(ap, 9))

    def test_svd_failure_reports_diagnostics(self, monkeypatch, k_ref):
        def boom(*a, **k):
            raise np.linalg.LinAlgError("SVD did not converge")

        monkeypatch.setattr(np.linalg, "svd", boom)
        with pytest.raises(OperatorSVDError) as info:
            operator_svd_nystrom(k_ref)
        assert info.value.diagnostics["backend"] == "nystrom"
        assert "frobenius_norm" in info.value.diagnostics


class TestDegenerate:
    def test_single_mode_pair(self):
        K0 = link(nodes=48)
        tb = bandlimit_basis(K0.tx_grid.aperture)
        rb = bandlimit_basis(K0.rx_grid.aperture)
        phr = rb.evaluate(K0.rx_grid.local)[:, 2]
        pht = tb.evaluate(K0.tx_grid.local)[:, 5]
        B, _, _ = degenerate_coefficients(KernelMatrix(np.outer(phr, pht.conj()), K0.tx_grid, K0.rx_grid), tb, rb)
        assert np.sum(np.abs(B) > 1e-10) == 1
        assert abs(B[2, 5]) == pytest.approx(1.0, rel=1e-10)

    def test_agrees_with_nystrom_on_leading_values(self):
        # the default index set reaches twice the band limit, so the grid must resolve it
        K0 = link(nodes=32)
        ny = operator_svd_nystrom(K0)
        dg = operator_svd_degenerate(K0)
        n = ny.edof
        assert np.allclose(dg.singular_values[:n], ny.singular_values[:n], rtol=1e-2)

    def test_truncation_contracts_coefficients(self):
        k_ref = link(nodes=32)
        tb = bandlimit_basis(k_ref.tx_grid.aperture, 2.0, "cosine")
        rb = bandlimit_basis(k_ref.rx_grid.aperture, 2.0, "cosine")
        norms = []
        for f in (2.0, 1.5, 1.0, 0.5):
            B, _, _ = degenerate_coefficients(k_ref, tb.truncated(f), rb.truncated(f))
            norms.append(np.sum(np.abs(B) ** 2))
        assert np.all(np.diff(norms) <= 1e-15)
        assert norms[-1] <= k_ref.hs_norm2

    def test_under_resolved_grid_raises(self):
        K0 = link(L=1.0, nodes=8)
        with pytest.raises(ResolutionError):
            operator_svd_degenerate(K0)


class TestEdof:
    def test_three_equal_terms(self):
        for eps in (1e-6, 0.3, 0.999):
            assert count_edof([2.0, 2.0, 2.0, 0.0], eps) == 3

    def test_scale_invariant(self, k_ref):
        a = operator_svd_nystrom(k_ref)
        b = operator_svd_nystrom(KernelMatrix(k_ref.values * 1e6, k_ref.tx_grid, k_ref.rx_grid))
        assert edof(a) == edof(b)

    def test_zero_spectrum_raises(self):
        with pytest.raises(ValueError):
            count_edof([0.0, 0.0])

    def test_matches_finer_oracle(self, k_ref):
        assert abs(edof(operator_svd_nystrom(k_ref)) - edof(operator_svd_nystrom(link(nodes=96)))) <= 1

    def test_doubling_apertures_roughly_doubles(self, k_ref):
        e1 = edof(operator_svd_nystrom(k_ref))
        e2 = edof(operator_svd_nystrom(link(L=1.0)))
        assert abs(e2 - 2 * e1) <= 1

    def test_edof_not_above_count(self, k_ref):
        svd = operator_svd_nystrom(k_ref)
        assert 1 <= svd.edof <= svd.singular_values.size

    def test_spectrum_rows(self, k_ref):
        rows = spectrum_rows(operator_svd_nystrom(k_ref))
        assert rows[0][0] == 1 and rows[-1][2] == pytest.approx(1.0)
        assert all(r1[2] <= r2[2] for r1, r2 in zip(rows, rows[1:]))
