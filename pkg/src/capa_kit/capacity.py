"""Single-user capacity by water-filling and two-user MAC/BC capacity regions.

Multiuser rates only need the user Gram matrix: with G[i, j] = <H_i, H_j> the
continuous MAC sum rate for a user subset S is log2 det(I + G_S diag(p_S) / noise),
the same determinant a discrete MIMO MAC gives after Sylvester's identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .channel import gram_matrix
from .errors import ScopeError
from .operators import OperatorSVD

DEFAULT_POWER_SPLITS = 64
DEFAULT_REFINE_TOL = 1e-10
BOUNDARY_ANGLES = 19


@dataclass(frozen=True)
class PowerAllocation:
    """Per-mode powers q and water level mu, with q_i = max(0, mu - noise / sigma_i^2)."""

    powers: np.ndarray
    level: float
    floors: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.powers))

    def kkt_residual(self) -> float:
        """Largest violation of the water-filling optimality conditions."""
        q, f, mu = self.powers, self.floors, self.level
        active = q > 0
        r_active = np.abs(f[active] + q[active] - mu)
        r_idle = np.maximum(mu - f[~active & np.isfinite(f)], 0.0)
        return float(max(r_active.max(initial=0.0), r_idle.max(initial=0.0)))


def waterfill(singular_values, power: float, noise: float) -> PowerAllocation:
    """Water-filling over parallel modes with gains sigma_i^2.

    The water level is located by bisection on [0, noise / sigma_1^2 + power]
    and then fixed exactly from the resulting active set, so the total power
    matches ``power`` to rounding.
    """
    s = np.asarray(singular_values, dtype=float).reshape(-1)
    if not (power > 0 and np.isfinite(power)):
        raise ValueError(f"power must be positive, got {power}")
    if not noise > 0:
        raise ValueError(f"noise variance must be positive, got {noise}")
    if s.size == 0 or not np.any(s > 0):
        raise ValueError("water-filling needs at least one nonzero singular value")
    with np.errstate(divide="ignore"):
        floors = np.where(s > 0, noise / np.where(s > 0, s, 1.0) ** 2, np.inf)

    def used(mu):
        return float(np.sum(np.maximum(mu - floors, 0.0)))

    lo, hi = 0.0, float(floors.min()) + power
    while hi - lo > 1e-12 * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if used(mid) > power:
            hi = mid
        else:
            lo = mid
    active = floors < hi
    mu = (power + float(np.sum(floors[active]))) / int(np.sum(active))
    # the exact level may drop a marginal mode; settle the active set
    while np.any(active & (floors >= mu)):
        active &= floors < mu
        mu = (power + float(np.sum(floors[active]))) / int(np.sum(active))
    n = int(np.sum(active))
    mean_floor = float(np.mean(floors[active]))
    # P / n + (mean floor - floor) avoids cancellation when floors dwarf the power
    q = np.where(active, power / n + (mean_floor - np.where(active, floors, 0.0)), 0.0)
    q[active] += (power - q[active].sum()) / n
    return PowerAllocation(q, mean_floor + power / n, floors)


def p2p_capacity(svd: OperatorSVD | np.ndarray, power: float, noise: float) -> float:
    """Capacity sum_i log2(1 + q_i sigma_i^2 / noise) in bit/s/Hz."""
    s = svd.singular_values if isinstance(svd, OperatorSVD) else np.asarray(svd, dtype=float)
    alloc = waterfill(s, power, noise)
    return float(np.sum(np.log2(1.0 + alloc.powers * s**2 / noise)))


def _gram(G) -> np.ndarray:
    if isinstance(G, np.ndarray) or np.ndim(G) == 2:
        G = np.asarray(G, dtype=complex)
    else:
        G = gram_matrix(G)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError("Gram matrix must be square")
    return 0.5 * (G + G.conj().T)


def _logdet2(G, p, noise, subset) -> float:
    idx = np.asarray(sorted(subset), dtype=int)
    if idx.size == 0:
        return 0.0
    M = np.eye(idx.size) + G[np.ix_(idx, idx)] * p[idx][None, :] / noise
    sign, ld = np.linalg.slogdet(M)
    return float(ld / math.log(2.0))


def mac_corner_rates(G, powers, noise: float, order) -> np.ndarray:
    """Chain-rule SIC rates for decoding ``order`` (first entry decoded first).

    The user decoded at position i sees interference from every user decoded
    after it; the last user sees only noise.
    """
    G = _gram(G)
    K = G.shape[0]
    p = np.asarray(powers, dtype=float).reshape(-1)
    if p.shape[0] != K or np.any(p < 0):
        raise ValueError("need one nonnegative power per user")
    if not noise > 0:
        raise ValueError(f"noise variance must be positive, got {noise}")
    order = [int(k) for k in order]
    if sorted(order) != list(range(K)):
        raise ValueError(f"decoding order must be a permutation of 0..{K - 1}, got {order}")
    rates = np.zeros(K)
    for i, k in enumerate(order):
        rates[k] = _logdet2(G, p, noise, order[i:]) - _logdet2(G, p, noise, order[i + 1:])
    return np.maximum(rates, 0.0)


# -- convex polygons ------------------------------------------------------------------


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise hull vertices; collinear inputs give a 2-vertex segment."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if pts.shape[0] <= 2:
        return pts
    try:
        return pts[ConvexHull(pts).vertices]
    except QhullError:
        c = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - c)
        t = (pts - c) @ vt[0]
        return pts[[int(np.argmin(t)), int(np.argmax(t))]]


def _edge_normal_angles(V: np.ndarray) -> np.ndarray:
    e = np.roll(V, -1, axis=0) - V
    return np.mod(np.arctan2(-e[:, 0], e[:, 1]), 2 * np.pi)


def _support_vertices(V: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Vertex of polygon V attaining the support value in each direction theta."""
    if V.shape[0] == 1:
        return np.zeros(theta.shape, dtype=int)
    alpha = _edge_normal_angles(V)
    order = np.argsort(alpha)
    j = np.searchsorted(alpha[order], theta, side="right") - 1
    edge = order[np.mod(j, V.shape[0])]
    return np.mod(edge + 1, V.shape[0])


def hausdorff(a, b) -> float:
    """Exact Hausdorff distance between two convex polygons.

    For convex sets it equals the sup over unit directions of the difference
    of support functions; between consecutive edge normals of either polygon
    that difference is a single sinusoid, maximized in closed form.
    """
    A = a.boundary if isinstance(a, CapacityRegion) else convex_hull(a)
    B = b.boundary if isinstance(b, CapacityRegion) else convex_hull(b)
    brk = np.concatenate([[0.0, 2 * np.pi]] + [_edge_normal_angles(X) for X in (A, B) if X.shape[0] > 1])
    brk = np.unique(brk)
    lo, hi = brk[:-1], brk[1:]
    mid = 0.5 * (lo + hi)
    d = A[_support_vertices(A, mid)] - B[_support_vertices(B, mid)]
    phi = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
    cands = [lo, hi]
    for shift in (0.0, np.pi):
        t = np.mod(phi + shift, 2 * np.pi)
        cands.append(np.where((t > lo) & (t < hi), t, lo))
    best = 0.0
    for t in cands:
        best = max(best, float(np.max(np.abs(d[:, 0] * np.cos(t) + d[:, 1] * np.sin(t)))))
    return best


@dataclass(eq=False)
class CapacityRegion:
    """Two-user rate region: stored rate points and their convex hull.

    ``boundary`` holds the counter-clockwise hull vertices (origin included),
    which is the polyline emitted by the CLI. A BC region keeps the dual-MAC
    regions it was built from in ``constituents``.
    """

    points: np.ndarray
    metadata: dict = field(default_factory=dict)
    constituents: list = field(default_factory=list)
    boundary: np.ndarray = field(init=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if np.any(pts < -1e-12) or not np.all(np.isfinite(pts)):
            raise ValueError("rates must be finite and nonnegative")
        pts = np.vstack([np.maximum(pts, 0.0), [[0.0, 0.0]]])
        self.points = pts
        self.boundary = convex_hull(pts)

    @property
    def max_rates(self) -> np.ndarray:
        return self.boundary.max(axis=0)

    def support(self, direction) -> float:
        u = np.asarray(direction, dtype=float)
        return float(np.max(self.boundary @ u))

    def contains_point(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        V = self.boundary
        if V.shape[0] == 1:
            return bool(np.linalg.norm(x - V[0]) <= tol)
        if V.shape[0] == 2:
            a, b = V
            t = np.clip(np.dot(x - a, b - a) / max(np.dot(b - a, b - a), 1e-300), 0.0, 1.0)
            return bool(np.linalg.norm(a + t * (b - a) - x) <= tol)
        e = np.roll(V, -1, axis=0) - V
        n = np.column_stack([e[:, 1], -e[:, 0]])
        n /= np.linalg.norm(n, axis=1)[:, None]
        return bool(np.all(np.einsum("ij,ij->i", n, x[None, :] - V) <= tol))

    def radial_extent(self, theta: float) -> float:
        """Distance from the origin to the boundary along angle ``theta``."""
        u = np.array([math.cos(theta), math.sin(theta)])
        V = self.boundary
        if V.shape[0] <= 2:
            ends = [v for v in V if abs(v[0] * u[1] - v[1] * u[0]) <= 1e-12 * max(1.0, np.linalg.norm(v))]
            return float(max([np.dot(v, u) for v in ends], default=0.0))
        e = np.roll(V, -1, axis=0) - V
        n = np.column_stack([e[:, 1], -e[:, 0]])
        off = np.einsum("ij,ij->i", n, V)
        nu = n @ u
        ok = nu > 1e-15 * np.linalg.norm(n, axis=1)
        return float(np.min(off[ok] / nu[ok])) if np.any(ok) else 0.0

    def contains(self, other: "CapacityRegion", n_angles: int = BOUNDARY_ANGLES, tol: float = 1e-9) -> bool:
        """Check the other region's boundary at ``n_angles`` angles in [0, 90] degrees."""
        return all(self.radial_extent(t) >= other.radial_extent(t) - tol for t in boundary_angles(n_angles))

    def contains_region_points(self, other: "CapacityRegion", tol: float = 1e-9) -> bool:
        return all(self.contains_point(p, tol) for p in other.boundary)


def boundary_angles(n: int = BOUNDARY_ANGLES) -> np.ndarray:
    return np.linspace(0.0, 0.5 * np.pi, n)


def _check_two(G: np.ndarray) -> None:
    if G.shape[0] != 2:
        raise ScopeError(f"capacity regions are implemented for exactly two users, got {G.shape[0]}")


def mac_region(G, powers, noise: float, n_timeshare: int = 16) -> CapacityRegion:
    """Two-user MAC region with per-user powers: SIC corners plus time-sharing."""
    G = _gram(G)
    _check_two(G)
    p = np.asarray(powers, dtype=float)
    ca = mac_corner_rates(G, p, noise, (1, 0))
    cb = mac_corner_rates(G, p, noise, (0, 1))
    single = [
        (math.log2(1.0 + p[0] * G[0, 0].real / noise), 0.0),
        (0.0, math.log2(1.0 + p[1] * G[1, 1].real / noise)),
    ]
    t = np.linspace(0.0, 1.0, n_timeshare + 2)[1:-1]
    share = np.outer(1.0 - t, ca) + np.outer(t, cb)
    pts = np.vstack([single, [ca, cb], share])
    meta = {"kind": "mac", "powers": p.tolist(), "noise": noise,
            "corners": {"user0_last": ca.tolist(), "user1_last": cb.tolist()}}
    return CapacityRegion(pts, meta)


def _split_corners(G, p1, total, noise):
    """Dual-MAC corner points for the splits (p1, total - p1), vectorized."""
    p2 = total - p1
    a, b = G[0, 0].real, G[1, 1].real
    g = abs(G[0, 1]) ** 2
    x1, x2 = a * p1 / noise, b * p2 / noise
    s = np.log2((1.0 + x1) * (1.0 + x2) - g * p1 * p2 / noise**2)
    r1, r2 = np.log2(1.0 + x1), np.log2(1.0 + x2)
    return np.column_stack([r1, s - r1]), np.column_stack([s - r2, r2])


def _sagitta(c: np.ndarray, m: np.ndarray) -> np.ndarray:
    d = c[1:] - c[:-1]
    v = m - c[:-1]
    return np.abs(d[:, 0] * v[:, 1] - d[:, 1] * v[:, 0]) / np.maximum(np.hypot(d[:, 0], d[:, 1]), 1e-300)


def bc_region_two_user(responses, power: float, noise: float, n_power_splits: int = DEFAULT_POWER_SPLITS,
                       n_timeshare: int = 16, refine_tol: float = DEFAULT_REFINE_TOL) -> CapacityRegion:
    """Two-user BC (DPC) region as the hull of dual-MAC regions over power splits.

    Splits start on a uniform grid of ``n_power_splits`` intervals; any
    interval whose corner curve deviates from its chord by more than
    ``refine_tol`` (bits) is bisected until none does. The hull is therefore
    insensitive to the starting grid at the level of ``refine_tol``.

    Parameters
    ----------
    responses : sequence of SpatialResponse or (2, 2) Gram matrix
    power : float
        Sum power shared by the dual uplink users.
    """
    G = _gram(responses)
    _check_two(G)
    if not power > 0:
        raise ValueError("power must be positive")
    if n_power_splits < 1:
        raise ValueError("n_power_splits must be >= 1")
    t = np.linspace(0.0, power, n_power_splits + 1)
    for _ in range(64):
        ca, cb = _split_corners(G, t, power, noise)
        mid = 0.5 * (t[:-1] + t[1:])
        ma, mb = _split_corners(G, mid, power, noise)
        bad = np.maximum(_sagitta(ca, ma), _sagitta(cb, mb)) > refine_tol
        bad &= (t[1:] - t[:-1]) > 1e-15 * power
        if not np.any(bad):
            break
        t = np.sort(np.concatenate([t, mid[bad]]))
    ca, cb = _split_corners(G, t, power, noise)
    grid = np.linspace(0.0, power, n_power_splits + 1)
    constituent = [mac_region(G, (p1, power - p1), noise, n_timeshare) for p1 in grid]
    pts = np.vstack([ca, cb] + [r.points for r in constituent])
    meta = {"kind": "bc", "power": power, "noise": noise, "n_power_splits": n_power_splits,
            "refined_splits": int(t.size), "refine_tol": refine_tol}
    return CapacityRegion(pts, meta, constituent)


def single_user_rate(G, k: int, power: float, noise: float) -> float:
    G = _gram(G)
    return math.log2(1.0 + power * G[k, k].real / noise)
