"""Downlink multiuser beamforming for a CAPA serving single-antenna users.

A beamformer is a current distribution w_k(r) on the aperture. User k sees
the couplings <H_k, w_j>, so the SINR depends on a beamformer only through
its inner products with the user responses. Three design routes are
implemented:

* subspace: w_k = sum_i A[i, k] H_i, optimized over the K x K coefficients;
* calculus of variations (CoV): projected functional-gradient ascent directly
  on grid-sampled currents;
* discretization: the same discrete optimizer on wavenumber-domain vectors,
  lifted back to the aperture through the Fourier modes.

plus the closed-form MRT, ZF and MMSE heuristics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    BandlimitIndexSet,
    LinkBudget,
    SpatialResponse,
    fourier_coefficients,
    gram_matrix,
    response_matrix,
    shared_grid,
)
from .errors import ScopeError, SingularGramError
from .geometry import QuadratureGrid

log = logging.getLogger(__name__)

METHODS = ("mrt", "zf", "mmse", "subspace", "cov", "discretized")
HEURISTICS = ("mrt", "zf", "mmse")

# cond(G) above this is treated as linearly dependent users
_GRAM_COND_LIMIT = 1e13


@dataclass(frozen=True)
class OptimizerConfig:
    tol: float = 1e-8
    max_iters: int = 500
    armijo: float = 1e-4
    max_backtracks: int = 60


# CoV takes many cheap first-order steps; its budget is larger by default.
COV_DEFAULTS = OptimizerConfig(tol=1e-10, max_iters=20000)


@dataclass(frozen=True, eq=False)
class CurrentDistribution:
    """A continuous current J(r), held as grid samples.

    ``representation`` records how it was designed: ``"grid"`` (sampled
    directly), ``"subspace"`` (``coefficients`` over the user responses) or
    ``"wavenumber"`` (``coefficients`` over Fourier modes). The samples are
    always the lossless expansion of the coefficients.
    """

    samples: np.ndarray
    grid: QuadratureGrid
    representation: str = "grid"
    coefficients: np.ndarray | None = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex).reshape(-1)
        if s.shape[0] != self.grid.size:
            raise ValueError("current samples do not match the grid size")
        if not np.all(np.isfinite(s)):
            raise ValueError("current samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def power(self) -> float:
        return float(np.sum(self.grid.weights * np.abs(self.samples) ** 2))


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    """The user responses {H_j} spanning the signal subspace, with their Gram matrix."""

    responses: tuple
    gram: np.ndarray
    matrix: np.ndarray

    @classmethod
    def from_responses(cls, responses) -> "SubspaceBasis":
        responses = tuple(responses)
        return cls(responses, gram_matrix(responses), response_matrix(responses))

    @property
    def grid(self) -> QuadratureGrid:
        return self.responses[0].grid

    @property
    def k(self) -> int:
        return len(self.responses)

    def expand(self, coefficients, representation="subspace") -> CurrentDistribution:
        a = np.asarray(coefficients, dtype=complex).reshape(self.k)
        return CurrentDistribution(self.matrix @ a, self.grid, representation, a)

    def interference_basis(self, k: int) -> "SubspaceBasis":
        """Leave-one-out basis spanning the interference subspace of user k."""
        return SubspaceBasis.from_responses(r for i, r in enumerate(self.responses) if i != k)


@dataclass(eq=False)
class BeamformerSet:
    """One current per user, with the achieved per-user spectral efficiency."""

    beams: list
    se: np.ndarray
    method: str
    history: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0

    @property
    def total_power(self) -> float:
        return float(sum(b.power for b in self.beams))

    @property
    def sum_se(self) -> float:
        return float(np.sum(self.se))

    @property
    def samples(self) -> np.ndarray:
        return np.column_stack([b.samples for b in self.beams])

    def coefficient_matrix(self) -> np.ndarray | None:
        if any(b.coefficients is None for b in self.beams):
            return None
        return np.column_stack([b.coefficients for b in self.beams])


def _noise(budget) -> float:
    noise = budget.noise if isinstance(budget, LinkBudget) else float(budget)
    if not noise > 0:
        raise ValueError(f"noise variance must be positive, got {noise}")
    return noise


def se_from_couplings(C: np.ndarray, noise: float) -> np.ndarray:
    """Per-user SE from the coupling matrix C[k, j] = <H_k, w_j>."""
    P = np.abs(C) ** 2
    sig = np.diag(P)
    interf = P.sum(axis=1) - sig
    return np.log2(1.0 + sig / (interf + noise))


def couplings(responses, beams) -> np.ndarray:
    grid = shared_grid(responses)
    H = response_matrix(responses)
    W = _beam_samples(beams, grid)
    return H.conj().T @ (grid.weights[:, None] * W)


def _beam_samples(beams, grid) -> np.ndarray:
    if isinstance(beams, BeamformerSet):
        beams = beams.beams
    if isinstance(beams, np.ndarray):
        W = np.asarray(beams, dtype=complex)
        return W.reshape(grid.size, -1)
    for b in beams:
        if b.grid is not grid:
            raise ValueError("beams and responses must share one grid")
    return np.column_stack([b.samples for b in beams])


def evaluate_se(beams, responses, budget) -> np.ndarray:
    """Per-user SE log2(1 + SINR_k) in bit/s/Hz.

    ``beams`` is a :class:`BeamformerSet`, a list of currents, or an (N, K)
    sample array on the responses' grid.
    """
    noise = _noise(budget)
    return se_from_couplings(couplings(responses, beams), noise)


def mrt(response: SpatialResponse, power: float) -> CurrentDistribution:
    """Matched current sqrt(power) H / ||H||."""
    nrm = response.norm
    if not nrm > 0:
        raise ValueError("MRT needs a nonzero response")
    a = math.sqrt(power) / nrm
    return CurrentDistribution(a * response.samples, response.grid, "subspace", np.array([a], dtype=complex))


def _scaled(basis: SubspaceBasis, a: np.ndarray, power: float) -> CurrentDistribution:
    p = float(np.real(a.conj() @ basis.gram @ a))
    if not p > 0:
        raise SingularGramError("beamformer has zero energy in the signal subspace")
    return basis.expand(a * math.sqrt(power / p))


def _check_gram(G: np.ndarray) -> None:
    if np.linalg.cond(G) > _GRAM_COND_LIMIT:
        raise SingularGramError(
            "user responses are (numerically) linearly dependent; "
            "zero-forcing needs a reduced user set without coincident users"
        )


def zf(basis: SubspaceBasis, k: int, power: float) -> CurrentDistribution:
    """Zero-forcing current for user k: coefficients G^{-1} e_k scaled to ``power``."""
    G = basis.gram
    _check_gram(G)
    e = np.zeros(basis.k, dtype=complex)
    e[k] = 1.0
    return _scaled(basis, np.linalg.solve(G, e), power)


def mmse_coefficients(gram: np.ndarray, powers, noise: float, k: int) -> np.ndarray:
    """Unscaled MMSE coefficients: solve (noise I + diag(p) G) a = e_k.

    This is the separable Fredholm equation
    noise w(r) + sum_j p_j H_j(r) <H_j, w> = H_k(r)
    restricted to w = sum_i a_i H_i.
    """
    K = gram.shape[0]
    e = np.zeros(K, dtype=complex)
    e[k] = 1.0
    M = noise * np.eye(K) + np.asarray(powers, float)[:, None] * gram
    return np.linalg.solve(M, e)


def mmse(basis: SubspaceBasis, budget: LinkBudget, k: int) -> CurrentDistribution:
    """Regularized (MMSE) current for user k, scaled to the user's power share."""
    p = budget.powers(basis.k)
    a = mmse_coefficients(basis.gram, p, _noise(budget), k)
    return _scaled(basis, a, float(p[k]))


def heuristic_set(method: str, basis: SubspaceBasis, budget: LinkBudget) -> BeamformerSet:
    """MRT / ZF / MMSE beams for all users with the budget's per-user powers."""
    p = budget.powers(basis.k)
    if method == "mrt":
        beams = []
        for k, r in enumerate(basis.responses):
            a = np.zeros(basis.k, dtype=complex)
            a[k] = math.sqrt(p[k]) / r.norm
            beams.append(basis.expand(a))
    elif method == "zf":
        beams = [zf(basis, k, p[k]) for k in range(basis.k)]
    elif method == "mmse":
        beams = [mmse(basis, budget, k) for k in range(basis.k)]
    else:
        raise ScopeError(f"unknown heuristic {method!r}; expected one of {HEURISTICS}")
    return BeamformerSet(beams, evaluate_se(beams, basis.responses, budget), method)


# -- reduced discrete sum-SE problem -------------------------------------------------


def _power_for(mu, D, X2):
    return float(np.sum(X2 / (D[:, None] + mu) ** 2))


def _precoder_update(Hc, u, w, power):
    """Weighted-MMSE transmit update with the total power constraint.

    Returns V (r x K) and the multiplier mu.
    """
    A = Hc.conj().T @ ((w * np.abs(u) ** 2)[:, None] * Hc)
    A = 0.5 * (A + A.conj().T)
    B = Hc.conj().T * (u * w)[None, :]
    D, Q = np.linalg.eigh(A)
    D = np.maximum(D, 0.0)
    X = Q.conj().T @ B
    X2 = np.abs(X) ** 2
    tiny = 1e-14 * max(D.max(), 1e-300)
    mu = 0.0
    if D.min() <= tiny or _power_for(0.0, D, X2) > power:
        lo, hi = 0.0, math.sqrt(X2.sum() / power) + 1e-300
        while _power_for(hi, D, X2) > power:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _power_for(mid, D, X2) > power:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        mu = hi
    V = Q @ (X / (D + mu)[:, None])
    if mu > 0:
        # land exactly on the constraint surface
        V *= math.sqrt(power / np.sum(np.abs(V) ** 2))
    return V, mu


def sum_se_wmmse(Hc: np.ndarray, power: float, noise: float, V0: np.ndarray,
                 config: OptimizerConfig = OptimizerConfig()):
    """Maximize sum log2(1 + SINR) over precoders V with ||V||_F^2 <= power.

    ``Hc`` is K x r with couplings C = Hc @ V. Alternating weighted-MMSE
    updates; the sum SE is nondecreasing across iterations.

    Returns
    -------
    V : ndarray
        Best precoder found.
    history : list of float
        Sum SE after each iteration (index 0 is the start point).
    converged : bool
    """
    V = np.array(V0, dtype=complex)
    f = float(np.sum(se_from_couplings(Hc @ V, noise)))
    history = [f]
    best_V, best_f = V, f
    converged = False
    for _ in range(config.max_iters):
        C = Hc @ V
        T = np.sum(np.abs(C) ** 2, axis=1) + noise
        d = np.diag(C)
        u = d / T
        e = np.maximum(1.0 - np.abs(d) ** 2 / T, 1e-300)
        V, _ = _precoder_update(Hc, u, 1.0 / e, power)
        f_new = float(np.sum(se_from_couplings(Hc @ V, noise)))
        history.append(f_new)
        if f_new > best_f:
            best_V, best_f = V, f_new
        if abs(f_new - f) <= config.tol * max(abs(f), 1e-300):
            converged = True
            break
        f = f_new
    if not converged:
        log.warning("sum-SE optimizer stopped after %d iterations without converging", config.max_iters)
    return best_V, history, converged


def _gram_factor(G: np.ndarray):
    """G = R^H R with R (r x K) from the eigendecomposition; drops null directions."""
    lam, Q = np.linalg.eigh(0.5 * (G + G.conj().T))
    keep = lam > 1e-12 * lam.max()
    lam, Q = lam[keep], Q[:, keep]
    R = np.sqrt(lam)[:, None] * Q.conj().T
    Rpinv = Q / np.sqrt(lam)[None, :]
    return R, Rpinv


def _check_objective(objective: str) -> None:
    if objective not in ("sum-se", "sum_se"):
        raise ScopeError(f"only the sum-SE objective is supported, got {objective!r}")


def optimize_subspace(basis: SubspaceBasis, budget: LinkBudget, objective: str = "sum-se",
                      config: OptimizerConfig = OptimizerConfig()) -> BeamformerSet:
    """Sum-SE beamforming with currents restricted to span{H_j}.

    The K x K coefficient problem is mapped to an equivalent discrete
    broadcast channel through G = R^H R and solved by alternating
    weighted-MMSE updates, started from the equal-power MRT set.
    """
    _check_objective(objective)
    noise = _noise(budget)
    R, Rpinv = _gram_factor(basis.gram)
    Hc = R.conj().T
    A0 = np.diag([math.sqrt(budget.power / basis.k) / r.norm for r in basis.responses]).astype(complex)
    V, history, converged = sum_se_wmmse(Hc, budget.power, noise, R @ A0, config)
    A = Rpinv @ V
    beams = [basis.expand(A[:, k]) for k in range(basis.k)]
    return BeamformerSet(beams, evaluate_se(beams, basis.responses, budget), "subspace",
                         history, converged, len(history) - 1)


def se_functional_gradient(W: np.ndarray, H: np.ndarray, weights: np.ndarray, noise: float):
    """Sum SE and its functional gradient with respect to grid-sampled currents.

    With C = H^H diag(weights) W, the returned ``grad`` satisfies
    df = 2 Re <grad, dW> in the quadrature inner product, i.e. it is the
    first variation of the SE functional. Each gradient column lies in
    span{H_k}.
    """
    C = H.conj().T @ (weights[:, None] * W)
    P = np.abs(C) ** 2
    T = P.sum(axis=1) + noise
    I = T - np.diag(P)
    f = float(np.sum(np.log2(T) - np.log2(I)))
    D = C / T[:, None] - C / I[:, None]
    np.fill_diagonal(D, np.diag(C) / T)
    D /= math.log(2.0)
    return f, H @ D


def _ip(weights, a, b) -> float:
    return float(np.real(np.sum(weights[:, None] * np.conj(a) * b)))


def optimize_cov(responses, budget: LinkBudget, config: OptimizerConfig = COV_DEFAULTS) -> BeamformerSet:
    """Sum-SE beamforming by projected functional-gradient ascent on the currents.

    Each iteration takes a Barzilai-Borwein trial step along the functional
    gradient, projects onto the total-power ball and backtracks (halving)
    until the Armijo condition holds, so the objective never decreases.
    """
    responses = list(responses)
    grid = shared_grid(responses)
    noise = _noise(budget)
    H = response_matrix(responses)
    w = grid.weights
    K = len(responses)
    P = budget.power

    def project(X):
        p = _ip(w, X, X)
        return X * math.sqrt(P / p) if p > P else X

    W = H * np.array([math.sqrt(P / K) / r.norm for r in responses])[None, :]
    f, g = se_functional_gradient(W, H, w, noise)
    history = [f]
    step = math.sqrt(P) / max(math.sqrt(_ip(w, g, g)), 1e-300)
    W_prev = g_prev = None
    converged = False
    small = 0
    for it in range(config.max_iters):
        if W_prev is not None:
            s, y = W - W_prev, g - g_prev
            sy = -_ip(w, s, y)
            if sy > 0:
                step = _ip(w, s, s) / sy
            else:
                step *= 2.0
        t = step
        accepted = False
        for _ in range(config.max_backtracks):
            W_new = project(W + t * g)
            f_new, g_new = se_functional_gradient(W_new, H, w, noise)
            if f_new >= f + config.armijo * 2.0 * _ip(w, g, W_new - W):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            converged = True
            break
        W_prev, g_prev = W, g
        rel = abs(f_new - f) / max(abs(f), 1e-300)
        W, f, g = W_new, f_new, g_new
        history.append(f)
        small = small + 1 if rel < config.tol else 0
        if small >= 3:
            converged = True
            break
    if not converged:
        log.warning("CoV ascent stopped after %d iterations without converging", config.max_iters)
    beams = [CurrentDistribution(W[:, k], grid, "grid") for k in range(K)]
    return BeamformerSet(beams, evaluate_se(beams, responses, budget), "cov",
                         history, converged, len(history) - 1)


def optimize_discretized(responses, budget: LinkBudget, basis: BandlimitIndexSet,
                         config: OptimizerConfig = OptimizerConfig()) -> BeamformerSet:
    """Sum-SE beamforming on wavenumber-domain vectors over ``basis``.

    Responses are projected onto the Fourier modes, the discrete problem is
    solved with the same weighted-MMSE optimizer, and the resulting vectors
    are lifted back to aperture currents. The reported SE is evaluated on the
    true (unprojected) responses.
    """
    responses = list(responses)
    grid = shared_grid(responses)
    noise = _noise(budget)
    Cw = np.vstack([fourier_coefficients(r, basis).coefficients for r in responses])
    Hc = Cw.conj()
    K = len(responses)
    norms = np.linalg.norm(Cw, axis=1)
    if np.any(norms == 0):
        raise SingularGramError("a user's response has no energy inside the index set")
    X0 = (Cw / norms[:, None]).T * math.sqrt(budget.power / K)
    X, history, converged = sum_se_wmmse(Hc, budget.power, noise, X0, config)
    Phi = basis.evaluate(grid.local)
    W = Phi @ X
    p = _ip(grid.weights, W, W)
    if p > budget.power:
        W *= math.sqrt(budget.power / p)
    beams = [CurrentDistribution(W[:, k], grid, "wavenumber", X[:, k]) for k in range(K)]
    return BeamformerSet(beams, evaluate_se(beams, responses, budget), "discretized",
                         history, converged, len(history) - 1)


def design(method: str, responses, budget: LinkBudget, *, basis: BandlimitIndexSet | None = None,
           config: OptimizerConfig | None = None) -> BeamformerSet:
    """Dispatch to one of :data:`METHODS`."""
    responses = list(responses)
    if method in HEURISTICS:
        return heuristic_set(method, SubspaceBasis.from_responses(responses), budget)
    if method == "subspace":
        return optimize_subspace(SubspaceBasis.from_responses(responses), budget,
                                 config=config or OptimizerConfig())
    if method == "cov":
        return optimize_cov(responses, budget, config or COV_DEFAULTS)
    if method == "discretized":
        if basis is None:
            raise ValueError("the discretized method needs a wavenumber index set")
        return optimize_discretized(responses, budget, basis, config or OptimizerConfig())
    raise ScopeError(f"unknown method {method!r}; valid methods are {', '.join(METHODS)}")
