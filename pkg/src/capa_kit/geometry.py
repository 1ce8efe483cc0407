"""Apertures, quadrature grids and discrete-array lattices.

Every continuous integral over a CAPA surface is evaluated with a
Gauss-Legendre tensor rule mapped onto the aperture. A spatially discrete
array (SPDA) is represented by the same :class:`QuadratureGrid` type, with
one node per element and the element's effective measure as its weight, so
the multiuser and operator code runs unchanged on either array type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import GeometryError, QuadratureError

SPEED_OF_LIGHT = 3.0e8

LINEAR = "linear"
PLANAR = "planar"
_KINDS = (LINEAR, PLANAR)


def wavelength_from_frequency(frequency: float) -> float:
    if not (np.isfinite(frequency) and frequency > 0):
        raise GeometryError(f"frequency must be positive and finite, got {frequency!r}")
    return SPEED_OF_LIGHT / frequency


def _unit(vec, name: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if not np.all(np.isfinite(v)) or n == 0.0:
        raise GeometryError(f"{name} must be a finite nonzero 3-vector, got {vec!r}")
    return v / n


@dataclass(frozen=True)
class Aperture:
    """A flat, rectangular (or line-segment) radiating aperture.

    The aperture is axis-aligned in its own local frame ``(axis, normal x axis,
    normal)``; ``axis`` is the direction of the ``lx`` side. For a linear
    aperture ``ly`` is zero and ``normal`` only fixes the broadside direction.
    """

    kind: str
    lx: float
    wavelength: float
    ly: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)
    normal: tuple = (0.0, 0.0, 1.0)
    axis: tuple | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise GeometryError(f"aperture kind must be one of {_KINDS}, got {self.kind!r}")
        for name in ("lx", "ly", "wavelength"):
            val = getattr(self, name)
            if not np.isfinite(val):
                raise GeometryError(f"aperture {name} must be finite, got {val!r}")
        if self.lx <= 0:
            raise GeometryError(f"aperture lx must be positive, got {self.lx}")
        if self.wavelength <= 0:
            raise GeometryError(f"wavelength must be positive, got {self.wavelength}")
        if self.kind == LINEAR and self.ly != 0:
            raise GeometryError("a linear aperture must have ly = 0")
        if self.kind == PLANAR and self.ly <= 0:
            raise GeometryError(f"a planar aperture needs ly > 0, got {self.ly}")
        center = np.asarray(self.center, dtype=float).reshape(3)
        if not np.all(np.isfinite(center)):
            raise GeometryError(f"aperture center must be finite, got {self.center!r}")
        n = _unit(self.normal, "normal")
        if self.axis is None:
            # first global axis not parallel to the normal
            trial = np.eye(3)[int(np.argmin(np.abs(n)))] if abs(n[0]) > 0.9 else np.eye(3)[0]
        else:
            trial = np.asarray(self.axis, dtype=float).reshape(3)
        ex = trial - np.dot(trial, n) * n
        ex = _unit(ex, "axis (projected onto the aperture plane)")
        object.__setattr__(self, "center", tuple(center.tolist()))
        object.__setattr__(self, "normal", tuple(n.tolist()))
        object.__setattr__(self, "axis", tuple(ex.tolist()))

    @classmethod
    def linear(cls, length: float, wavelength: float, center=(0.0, 0.0, 0.0),
               normal=(0.0, 0.0, 1.0), axis=None) -> "Aperture":
        return cls(LINEAR, float(length), float(wavelength), 0.0, center, normal, axis)

    @classmethod
    def planar(cls, lx: float, ly: float, wavelength: float, center=(0.0, 0.0, 0.0),
               normal=(0.0, 0.0, 1.0), axis=None) -> "Aperture":
        return cls(PLANAR, float(lx), float(wavelength), float(ly), center, normal, axis)

    @property
    def is_linear(self) -> bool:
        return self.kind == LINEAR

    @property
    def measure(self) -> float:
        """Length (linear) or area (planar) of the aperture."""
        return self.lx if self.is_linear else self.lx * self.ly

    @property
    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = np.asarray(self.normal)
        ex = np.asarray(self.axis)
        return ex, np.cross(n, ex), n

    @property
    def sides(self) -> tuple[float, float]:
        return self.lx, self.ly

    def to_global(self, u, v=None) -> np.ndarray:
        """Map local coordinates (along ``axis`` and ``normal x axis``) to 3D."""
        u = np.asarray(u, dtype=float)
        v = np.zeros_like(u) if v is None else np.asarray(v, dtype=float)
        ex, ey, _ = self.frame
        return np.asarray(self.center) + u[..., None] * ex + v[..., None] * ey

    def to_local(self, points) -> np.ndarray:
        """Project 3D points onto the local frame; returns (..., 3) as (u, v, w)."""
        ex, ey, n = self.frame
        rel = np.asarray(points, dtype=float) - np.asarray(self.center)
        return np.stack([rel @ ex, rel @ ey, rel @ n], axis=-1)

    def distance_to(self, points) -> np.ndarray:
        """Euclidean distance from points to the closed aperture set."""
        loc = self.to_local(points)
        hx, hy = self.lx / 2, self.ly / 2
        du = np.maximum(np.abs(loc[..., 0]) - hx, 0.0)
        dv = np.maximum(np.abs(loc[..., 1]) - hy, 0.0)
        return np.sqrt(du**2 + dv**2 + loc[..., 2] ** 2)

    def with_sides(self, lx: float, ly: float | None = None) -> "Aperture":
        ly = self.ly if ly is None else ly
        return Aperture(self.kind, float(lx), self.wavelength, 0.0 if self.is_linear else float(ly),
                        self.center, self.normal, self.axis)

    def with_wavelength(self, wavelength: float) -> "Aperture":
        return Aperture(self.kind, self.lx, float(wavelength), self.ly, self.center, self.normal, self.axis)

    def moved(self, center) -> "Aperture":
        return Aperture(self.kind, self.lx, self.wavelength, self.ly, tuple(center), self.normal, self.axis)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Nodes and positive weights discretizing an aperture.

    ``local`` holds the in-plane coordinates ``(u, v)`` of every node relative
    to the aperture center. ``shape`` is the per-dimension node count, or
    ``None`` for point sets such as SPDA lattices.
    """

    nodes: np.ndarray
    weights: np.ndarray
    aperture: Aperture
    local: np.ndarray = field(default=None)
    shape: tuple | None = None
    kind: str = "gauss-legendre"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if nodes.shape[0] != weights.shape[0] or nodes.shape[0] == 0:
            raise QuadratureError("nodes and weights must be nonempty and of equal length")
        if not np.all(np.isfinite(nodes)):
            raise QuadratureError("grid nodes must be finite")
        if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
            raise QuadratureError("grid weights must be finite and strictly positive")
        local = self.local
        if local is None:
            local = self.aperture.to_local(nodes)[:, :2]
        local = np.asarray(local, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "local", _frozen(local))

    def __len__(self) -> int:
        return self.weights.shape[0]

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))


def default_nodes_per_dim(length: float, wavelength: float) -> int:
    """max(16, ceil(6 L / lambda)): about six nodes per wavelength."""
    return max(16, int(math.ceil(6.0 * length / wavelength - 1e-9)))


def _gauss_legendre(n: int, length: float) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * length * x, 0.5 * length * w


def build_quadrature(aperture: Aperture, nodes_per_dim: Union[int, Sequence[int], None] = None) -> QuadratureGrid:
    """Gauss-Legendre tensor grid mapped onto ``aperture``.

    Parameters
    ----------
    aperture : Aperture
    nodes_per_dim : int or (int, int), optional
        Nodes along each side. Defaults to :func:`default_nodes_per_dim`
        evaluated per side.

    Returns
    -------
    QuadratureGrid
        Weights sum to the aperture length or area.
    """
    for name in ("lx", "ly", "wavelength"):
        if not np.isfinite(getattr(aperture, name)):
            raise GeometryError(f"aperture {name} is not finite")
    lam = aperture.wavelength
    if nodes_per_dim is None:
        nx = default_nodes_per_dim(aperture.lx, lam)
        ny = default_nodes_per_dim(aperture.ly, lam) if not aperture.is_linear else 1
    elif np.ndim(nodes_per_dim) == 0:
        nx = ny = int(nodes_per_dim)
    else:
        nx, ny = (int(v) for v in nodes_per_dim)
    if aperture.is_linear:
        ny = 1
        if nx < 2:
            raise QuadratureError(f"nodes_per_dim must be >= 2, got {nx}")
    elif min(nx, ny) < 2:
        raise QuadratureError(f"nodes_per_dim must be >= 2, got {(nx, ny)}")

    ux, wx = _gauss_legendre(nx, aperture.lx)
    if aperture.is_linear:
        u, v, w = ux, np.zeros_like(ux), wx
        shape = (nx,)
    else:
        uy, wy = _gauss_legendre(ny, aperture.ly)
        U, V = np.meshgrid(ux, uy, indexing="ij")
        u, v = U.ravel(), V.ravel()
        w = np.outer(wx, wy).ravel()
        shape = (nx, ny)
    return QuadratureGrid(aperture.to_global(u, v), w, aperture, np.column_stack([u, v]), shape)


def _node_values(grid: QuadratureGrid, f) -> np.ndarray:
    vals = f(grid.nodes) if callable(f) else f
    vals = np.asarray(vals, dtype=complex)
    if vals.shape[0] != grid.size:
        raise QuadratureError(f"expected {grid.size} node values, got shape {vals.shape}")
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = int(np.argwhere(bad.reshape(grid.size, -1).any(axis=1))[0, 0])
        raise QuadratureError(f"non-finite integrand value at node {idx}")
    return vals


def integrate(grid: QuadratureGrid, f: Union[Callable, np.ndarray]):
    """Quadrature sum ``sum_i w_i f(r_i)``.

    ``f`` is either an array of node values (leading axis over nodes; extra
    axes are integrated independently) or a callable taking the ``(N, 3)``
    node array.
    """
    vals = _node_values(grid, f)
    out = np.tensordot(grid.weights, vals, axes=(0, 0))
    return complex(out) if np.ndim(out) == 0 else out


def inner_product(grid: QuadratureGrid, f, g) -> complex:
    """``<f, g> = sum_i w_i conj(f(r_i)) g(r_i)``, antilinear in ``f``."""
    fv = _node_values(grid, f)
    gv = _node_values(grid, g)
    return complex(np.sum(grid.weights * np.conj(fv) * gv))


@dataclass(frozen=True)
class SpdaConfig:
    """Uniform lattice: element spacing and count along each aperture side."""

    spacing_x: float
    count_x: int
    spacing_y: float | None = None
    count_y: int = 1

    def __post_init__(self):
        sy = self.spacing_x if self.spacing_y is None else self.spacing_y
        object.__setattr__(self, "spacing_y", float(sy))
        for d in (self.spacing_x, sy):
            if not (np.isfinite(d) and d > 0):
                raise GeometryError(f"SPDA spacing must be positive, got {d}")
        if self.count_x < 1 or self.count_y < 1:
            raise GeometryError("SPDA element counts must be >= 1")

    @classmethod
    def for_aperture(cls, aperture: Aperture, spacing: float, spacing_y: float | None = None) -> "SpdaConfig":
        """Largest centered lattice with ``count * spacing <= side`` (at least one element)."""
        sy = spacing if spacing_y is None else spacing_y
        nx = max(1, int(math.floor(aperture.lx / spacing + 1e-9)))
        ny = 1 if aperture.is_linear else max(1, int(math.floor(aperture.ly / sy + 1e-9)))
        return cls(float(spacing), nx, float(sy), ny)

    @property
    def size(self) -> int:
        return self.count_x * self.count_y


def _lattice_1d(count: int, spacing: float, side: float, name: str) -> np.ndarray:
    extent = (count - 1) * spacing
    if extent > side * (1 + 1e-12):
        raise GeometryError(
            f"SPDA lattice along {name} spans {extent:.6g} m, exceeding the aperture side {side:.6g} m"
        )
    return (np.arange(count) - (count - 1) / 2.0) * spacing


def _spda_local(aperture: Aperture, cfg: SpdaConfig) -> np.ndarray:
    ux = _lattice_1d(cfg.count_x, cfg.spacing_x, aperture.lx, "x")
    if aperture.is_linear:
        if cfg.count_y != 1:
            raise GeometryError("a linear aperture takes a single row of elements")
        return np.column_stack([ux, np.zeros_like(ux)])
    uy = _lattice_1d(cfg.count_y, cfg.spacing_y, aperture.ly, "y")
    U, V = np.meshgrid(ux, uy, indexing="ij")
    return np.column_stack([U.ravel(), V.ravel()])


def sample_spda(aperture: Aperture, cfg: SpdaConfig) -> np.ndarray:
    """Element positions (M, 3) of an aperture-centered uniform lattice."""
    loc = _spda_local(aperture, cfg)
    return aperture.to_global(loc[:, 0], loc[:, 1])


def element_measure(aperture: Aperture, cfg: SpdaConfig) -> float:
    """Effective length/area of one SPDA element.

    Per dimension this is the spacing, capped at half a wavelength (a point
    element cannot collect more than a Nyquist cell of a band-limited field)
    and at the share of the aperture side it occupies.
    """
    half = aperture.wavelength / 2.0
    mx = min(cfg.spacing_x, half, aperture.lx / cfg.count_x)
    if aperture.is_linear:
        return mx
    my = min(cfg.spacing_y, half, aperture.ly / cfg.count_y)
    return mx * my


def spda_grid(aperture: Aperture, cfg: SpdaConfig) -> QuadratureGrid:
    """SPDA lattice as a point grid weighted by :func:`element_measure`."""
    loc = _spda_local(aperture, cfg)
    nodes = aperture.to_global(loc[:, 0], loc[:, 1])
    w = np.full(len(loc), element_measure(aperture, cfg))
    return QuadratureGrid(nodes, w, aperture, loc, None, kind="spda")
