"""Line-of-sight spatial responses and their wavenumber-domain representation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GeometryError, GridMismatchError, ResolutionError, SingularGeometryError
from .geometry import Aperture, QuadratureGrid, wavelength_from_frequency

# Nodes per period of the highest retained Fourier mode.
MIN_NODES_PER_PERIOD = 4


def green_function(distance: np.ndarray, wavelength: float) -> np.ndarray:
    """Scalar free-space Green's function exp(-j 2 pi d / lambda) / (4 pi d)."""
    d = np.asarray(distance, dtype=float)
    return np.exp(-2j * np.pi * d / wavelength) / (4.0 * np.pi * d)


def los_kernel(field_points, source_points, wavelength: float) -> np.ndarray:
    """Green's function matrix G[i, j] between field point i and source point j."""
    a = np.asarray(field_points, dtype=float).reshape(-1, 3)
    b = np.asarray(source_points, dtype=float).reshape(-1, 3)
    d = np.sqrt(np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1))
    if np.any(d == 0.0) or not np.all(np.isfinite(d)):
        i, j = np.argwhere(~(d > 0))[0]
        raise SingularGeometryError(f"field point {i} coincides with source point {j} (zero distance)")
    return green_function(d, wavelength)


@dataclass(frozen=True, eq=False)
class SpatialResponse:
    """Channel function H(r) of one single-antenna user, sampled on a grid."""

    samples: np.ndarray
    grid: QuadratureGrid
    user_position: tuple

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex).reshape(-1)
        if s.shape[0] != self.grid.size:
            raise GridMismatchError("response samples do not match the grid size")
        if not np.all(np.isfinite(s)):
            raise GeometryError("response samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "user_position", tuple(np.asarray(self.user_position, float).tolist()))
        if self.norm2 <= 0:
            raise GeometryError("a spatial response must have positive energy")

    @property
    def norm2(self) -> float:
        return float(np.sum(self.grid.weights * np.abs(self.samples) ** 2))

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm2)


def los_response(user_position, grid: QuadratureGrid, wavelength: float | None = None) -> SpatialResponse:
    """Near-field LoS response of a point user, sampled at the grid nodes."""
    lam = grid.aperture.wavelength if wavelength is None else wavelength
    h = los_kernel(np.asarray(user_position, float).reshape(1, 3), grid.nodes, lam)[0]
    return SpatialResponse(h, grid, tuple(np.asarray(user_position, float).reshape(3)))


def shared_grid(responses) -> QuadratureGrid:
    responses = list(responses)
    if not responses:
        raise ValueError("need at least one response")
    grid = responses[0].grid
    for r in responses[1:]:
        if r.grid is not grid:
            raise GridMismatchError("all responses must be sampled on the same grid")
    return grid


def response_matrix(responses) -> np.ndarray:
    """Stack responses as columns of an (N, K) array."""
    shared_grid(responses)
    return np.column_stack([r.samples for r in responses])


def gram_matrix(responses) -> np.ndarray:
    """Hermitian Gram matrix G[i, j] = <H_i, H_j>."""
    grid = shared_grid(responses)
    H = response_matrix(responses)
    G = H.conj().T @ (grid.weights[:, None] * H)
    return 0.5 * (G + G.conj().T)


@dataclass(frozen=True, eq=False)
class BandlimitIndexSet:
    """Fourier indices (n, m) retained inside the wavenumber ellipse.

    Two orthonormal mode families are supported. ``"exponential"`` modes
    exp(j 2 pi (n u / lx + m v / ly)) / sqrt(lx ly) are periodic on the aperture
    and carry wavenumber n / lx. ``"cosine"`` modes are the half-range cosine
    series (periodic on the even extension), indexed by n, m >= 0 with
    wavenumber n / (2 lx); they avoid the edge discontinuity of the periodic
    extension and converge much faster for non-periodic kernels. Either family
    keeps modes with ``|wavenumber| <= factor / lambda`` on an ellipse.
    """

    indices: np.ndarray
    lx: float
    ly: float
    wavelength: float
    factor: float = 1.0
    family: str = "exponential"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        idx = np.asarray(self.indices, dtype=int).reshape(-1, 2)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    def __len__(self) -> int:
        return self.indices.shape[0]

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    @property
    def is_linear(self) -> bool:
        return self.ly == 0

    @property
    def max_order(self) -> tuple[int, int]:
        a = np.abs(self.indices)
        return int(a[:, 0].max()), int(a[:, 1].max())

    @property
    def max_cycles(self) -> tuple[float, float]:
        """Oscillation periods of the highest mode across each side."""
        nx, my = self.max_order
        if self.family == "cosine":
            return nx / 2.0, my / 2.0
        return float(nx), float(my)

    def truncated(self, factor: float) -> "BandlimitIndexSet":
        """Subset inside a smaller ellipse of the same shape."""
        keep = _inside(self.indices, self.lx, self.ly, self.wavelength, factor, self.family)
        return BandlimitIndexSet(self.indices[keep], self.lx, self.ly, self.wavelength, factor, self.family)

    def evaluate(self, local) -> np.ndarray:
        """Orthonormal modes at local (centered) coordinates; returns (N, M)."""
        loc = np.asarray(local, dtype=float).reshape(-1, 2)
        if self.family == "cosine":
            out = _cosine_modes(loc[:, 0], self.indices[:, 0], self.lx)
            if not self.is_linear:
                out = out * _cosine_modes(loc[:, 1], self.indices[:, 1], self.ly)
            return out
        n = self.indices[:, 0].astype(float)
        phase = np.outer(loc[:, 0], n / self.lx)
        norm = self.lx
        if not self.is_linear:
            m = self.indices[:, 1].astype(float)
            phase = phase + np.outer(loc[:, 1], m / self.ly)
            norm = self.lx * self.ly
        return np.exp(2j * np.pi * phase) / math.sqrt(norm)


FAMILIES = ("exponential", "cosine")


def _cosine_modes(u, orders, length) -> np.ndarray:
    out = np.cos(np.pi * np.outer(u + length / 2.0, orders) / length) * math.sqrt(2.0 / length)
    out[:, orders == 0] = 1.0 / math.sqrt(length)
    return out.astype(complex)


def _inside(indices, lx, ly, wavelength, factor, family="exponential") -> np.ndarray:
    scale = 2.0 if family == "cosine" else 1.0
    r2 = (indices[:, 0] * wavelength / (scale * lx)) ** 2
    if ly > 0:
        r2 = r2 + (indices[:, 1] * wavelength / (scale * ly)) ** 2
    # boundary modes are kept
    return r2 <= factor**2 * (1 + 1e-9)


def bandlimit_basis(aperture: Aperture, factor: float = 1.0, family: str = "exponential") -> BandlimitIndexSet:
    """Fourier index set inside the (scaled) wavenumber band limit of ``aperture``."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}, got {family!r}")
    lam = aperture.wavelength
    scale = 2.0 if family == "cosine" else 1.0

    def orders(side):
        top = int(math.floor(scale * factor * side / lam + 1e-9))
        return np.arange(0, top + 1) if family == "cosine" else np.arange(-top, top + 1)

    ns = orders(aperture.lx)
    if aperture.is_linear:
        idx = np.column_stack([ns, np.zeros_like(ns)])
    else:
        N, M = np.meshgrid(ns, orders(aperture.ly), indexing="ij")
        idx = np.column_stack([N.ravel(), M.ravel()])
    idx = idx[_inside(idx, aperture.lx, aperture.ly, lam, factor, family)]
    return BandlimitIndexSet(idx, aperture.lx, aperture.ly, lam, factor, family)


def required_nodes(basis: BandlimitIndexSet) -> tuple[int, int]:
    """Minimum tensor-grid nodes per side that resolve every mode of ``basis``."""
    nx, my = basis.max_cycles
    need_x = max(2, int(math.ceil(MIN_NODES_PER_PERIOD * nx)))
    need_y = 1 if basis.is_linear else max(2, int(math.ceil(MIN_NODES_PER_PERIOD * my)))
    return need_x, need_y


def check_resolution(grid: QuadratureGrid, basis: BandlimitIndexSet) -> None:
    """Raise :class:`ResolutionError` unless the grid resolves every retained mode."""
    if grid.shape is None:
        raise ResolutionError("Fourier projection needs a tensor quadrature grid")
    ap = grid.aperture
    if not (math.isclose(ap.lx, basis.lx, rel_tol=1e-12) and math.isclose(ap.ly, basis.ly, rel_tol=1e-12, abs_tol=0.0)):
        raise ResolutionError("index set was built for a different aperture")
    need = required_nodes(basis)
    sides = 1 if ap.is_linear else 2
    for h, n in zip(grid.shape[:sides], need[:sides]):
        if h < n:
            raise ResolutionError(
                f"grid has {h} nodes per side but the highest retained mode needs {n} "
                f"({MIN_NODES_PER_PERIOD} per period)"
            )


@dataclass(frozen=True, eq=False)
class WavenumberVector:
    """Fourier coefficients of an aperture function over an index set."""

    coefficients: np.ndarray
    basis: BandlimitIndexSet

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if c.shape[0] != self.basis.size:
            raise ValueError("coefficient count must equal the index-set size")
        object.__setattr__(self, "coefficients", c)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.coefficients) ** 2))


def fourier_coefficients(response: SpatialResponse, basis: BandlimitIndexSet) -> WavenumberVector:
    """Project a response onto the orthonormal Fourier modes: c_p = <phi_p, H>."""
    grid = response.grid
    check_resolution(grid, basis)
    Phi = basis.evaluate(grid.local)
    c = Phi.conj().T @ (grid.weights * response.samples)
    return WavenumberVector(c, basis)


@dataclass(frozen=True)
class LinkBudget:
    """Total transmit power, noise variance and optional per-user powers (W)."""

    power: float
    noise: float
    user_powers: tuple | None = None

    def __post_init__(self):
        if not (np.isfinite(self.power) and self.power > 0):
            raise ValueError(f"power must be positive, got {self.power}")
        if not (np.isfinite(self.noise) and self.noise > 0):
            raise ValueError(f"noise variance must be positive, got {self.noise}")
        if self.user_powers is not None:
            p = tuple(float(x) for x in self.user_powers)
            if any(not np.isfinite(x) or x < 0 for x in p):
                raise ValueError("per-user powers must be nonnegative")
            object.__setattr__(self, "user_powers", p)

    @property
    def snr(self) -> float:
        return self.power / self.noise

    def powers(self, k: int) -> np.ndarray:
        """Per-user powers, defaulting to an equal split of the total."""
        if self.user_powers is None:
            return np.full(k, self.power / k)
        if len(self.user_powers) != k:
            raise ValueError(f"expected {k} user powers, got {len(self.user_powers)}")
        return np.asarray(self.user_powers, dtype=float)


@dataclass(frozen=True)
class Scene:
    """A CAPA and a set of single-antenna users."""

    aperture: Aperture
    users: tuple
    frequency: float

    @property
    def wavelength(self) -> float:
        return self.aperture.wavelength


def aperture_from_dict(d: dict, wavelength: float) -> Aperture:
    kind = d.get("kind", "planar")
    if kind == "linear":
        return Aperture.linear(float(d["lx"]), wavelength, d.get("center", (0, 0, 0)),
                               d.get("normal", (0, 0, 1)), d.get("axis"))
    return Aperture.planar(float(d["lx"]), float(d.get("ly", d["lx"])), wavelength,
                           d.get("center", (0, 0, 0)), d.get("normal", (0, 0, 1)), d.get("axis"))


def scene_from_dict(d: dict) -> Scene:
    freq = float(d["frequency_hz"])
    lam = wavelength_from_frequency(freq)
    ap = aperture_from_dict(d["aperture"], lam)
    users = tuple(tuple(float(c) for c in u) for u in d["users"])
    for u in users:
        if len(u) != 3:
            raise GeometryError(f"user positions must be 3D, got {u}")
    return Scene(ap, users, freq)


def load_scene(path) -> Scene:
    """Read a JSON scene: ``frequency_hz``, ``aperture`` and ``users`` (meters)."""
    with open(Path(path), encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))
