"""Singular systems of CAPA-to-CAPA radiation operators.

Two interchangeable backends are provided. The Nystrom backend takes the SVD
of the symmetrically weighted kernel matrix ``W_r^1/2 K W_t^1/2``, whose
singular vectors become quadrature-orthonormal singular functions after
unweighting. The degenerate-kernel backend expands the kernel in Fourier modes
on both apertures and decomposes the finite coefficient matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import BandlimitIndexSet, bandlimit_basis, check_resolution, los_kernel
from .errors import OperatorSVDError, SingularGeometryError
from .geometry import QuadratureGrid

DEFAULT_EDOF_THRESHOLD = 1e-2
# Degenerate-kernel truncation, as a multiple of the band-limit radius.
DEFAULT_DEGENERATE_FACTOR = 2.0


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Kernel values K(r_i, s_j) on rx nodes (rows) by tx nodes (columns)."""

    values: np.ndarray
    tx_grid: QuadratureGrid
    rx_grid: QuadratureGrid

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != (self.rx_grid.size, self.tx_grid.size):
            raise ValueError(f"kernel shape {v.shape} does not match grids "
                             f"({self.rx_grid.size}, {self.tx_grid.size})")
        if not np.all(np.isfinite(v)):
            raise ValueError("kernel entries must be finite")
        object.__setattr__(self, "values", v)

    def weighted(self) -> np.ndarray:
        """W_r^1/2 K W_t^1/2."""
        return np.sqrt(self.rx_grid.weights)[:, None] * self.values * np.sqrt(self.tx_grid.weights)[None, :]

    @property
    def hs_norm2(self) -> float:
        """Quadrature estimate of the double integral of |K|^2."""
        w = np.outer(self.rx_grid.weights, self.tx_grid.weights)
        return float(np.sum(w * np.abs(self.values) ** 2))


@dataclass(frozen=True, eq=False)
class OperatorSVD:
    """Singular values (nonincreasing) and singular functions sampled on the grids.

    ``left[:, i]`` lives on the rx grid and ``right[:, i]`` on the tx grid,
    so that ``K right_i = sigma_i left_i``.
    """

    singular_values: np.ndarray
    left: np.ndarray
    right: np.ndarray
    rx_grid: QuadratureGrid
    tx_grid: QuadratureGrid
    backend: str
    hs_norm: float
    coefficients: np.ndarray | None = None
    edof: int = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.singular_values, dtype=float)
        object.__setattr__(self, "singular_values", s)
        object.__setattr__(self, "edof", count_edof(s, DEFAULT_EDOF_THRESHOLD) if s.size and s[0] > 0 else 0)

    @property
    def operator_norm(self) -> float:
        return float(self.singular_values[0]) if self.singular_values.size else 0.0

    def cumulative_energy(self) -> np.ndarray:
        e = np.cumsum(self.singular_values**2)
        return e / e[-1] if e[-1] > 0 else e


def _check_disjoint(tx_grid: QuadratureGrid, rx_grid: QuadratureGrid) -> None:
    tx_ap, rx_ap = tx_grid.aperture, rx_grid.aperture
    scale = max(tx_ap.lx, tx_ap.ly, rx_ap.lx, rx_ap.ly)
    gap = min(np.min(tx_ap.distance_to(rx_grid.nodes)), np.min(rx_ap.distance_to(tx_grid.nodes)))
    if gap <= 1e-12 * scale:
        raise SingularGeometryError("tx and rx apertures overlap; the LoS kernel is singular there")


def build_kernel(tx_grid: QuadratureGrid, rx_grid: QuadratureGrid, wavelength: float | None = None) -> KernelMatrix:
    """LoS Green's-function kernel between two disjoint apertures."""
    _check_disjoint(tx_grid, rx_grid)
    lam = tx_grid.aperture.wavelength if wavelength is None else wavelength
    return KernelMatrix(los_kernel(rx_grid.nodes, tx_grid.nodes, lam), tx_grid, rx_grid)


def _svd(A: np.ndarray, backend: str):
    try:
        return np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        diag = {
            "backend": backend,
            "shape": A.shape,
            "frobenius_norm": float(np.linalg.norm(A)),
            "max_abs": float(np.max(np.abs(A))),
        }
        raise OperatorSVDError(f"SVD did not converge ({exc})", diag) from exc


def operator_svd_nystrom(kernel: KernelMatrix) -> OperatorSVD:
    """Singular system of the integral operator via the weighted kernel matrix."""
    A = kernel.weighted()
    U, s, Vh = _svd(A, "nystrom")
    left = U / np.sqrt(kernel.rx_grid.weights)[:, None]
    right = Vh.conj().T / np.sqrt(kernel.tx_grid.weights)[:, None]
    return OperatorSVD(s, left, right, kernel.rx_grid, kernel.tx_grid, "nystrom",
                       float(np.sqrt(np.sum(s**2))))


def degenerate_coefficients(kernel: KernelMatrix, tx_basis: BandlimitIndexSet,
                            rx_basis: BandlimitIndexSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficient matrix B[p, q] = <phi_p, K phi_q> plus the two mode matrices."""
    check_resolution(kernel.tx_grid, tx_basis)
    check_resolution(kernel.rx_grid, rx_basis)
    Pr = rx_basis.evaluate(kernel.rx_grid.local)
    Pt = tx_basis.evaluate(kernel.tx_grid.local)
    WKW = kernel.rx_grid.weights[:, None] * kernel.values * kernel.tx_grid.weights[None, :]
    return Pr.conj().T @ WKW @ Pt, Pr, Pt


def operator_svd_degenerate(kernel: KernelMatrix, tx_basis: BandlimitIndexSet | None = None,
                            rx_basis: BandlimitIndexSet | None = None) -> OperatorSVD:
    """Singular system of the Fourier-truncated (degenerate) kernel.

    Index sets default to half-range cosine modes out to twice the band-limit
    radius of each aperture.
    """
    if tx_basis is None:
        tx_basis = bandlimit_basis(kernel.tx_grid.aperture, DEFAULT_DEGENERATE_FACTOR, "cosine")
    if rx_basis is None:
        rx_basis = bandlimit_basis(kernel.rx_grid.aperture, DEFAULT_DEGENERATE_FACTOR, "cosine")
    B, Pr, Pt = degenerate_coefficients(kernel, tx_basis, rx_basis)
    U, s, Vh = _svd(B, "degenerate")
    return OperatorSVD(s, Pr @ U, Pt @ Vh.conj().T, kernel.rx_grid, kernel.tx_grid, "degenerate",
                       float(np.sqrt(np.sum(s**2))), coefficients=B)


def count_edof(singular_values, threshold: float = DEFAULT_EDOF_THRESHOLD) -> int:
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0 or not s[0] > 0:
        raise ValueError("EDoF undefined for an all-zero spectrum")
    return int(np.sum(s >= threshold * s[0]))


def edof(svd: OperatorSVD, threshold: float = DEFAULT_EDOF_THRESHOLD) -> int:
    """Number of singular values at or above ``threshold * sigma_1``."""
    return count_edof(svd.singular_values, threshold)


def spectrum_rows(svd: OperatorSVD):
    """(index, sigma, cumulative energy fraction) rows, 1-based index."""
    cum = svd.cumulative_energy()
    return [(i + 1, float(s), float(c)) for i, (s, c) in enumerate(zip(svd.singular_values, cum))]
