"""Monte-Carlo outage, DMT and ergodic capacity for wavenumber-domain fading.

The CAPA-to-CAPA link is represented by its M_r x M_t wavenumber matrix with
i.i.d. CN(0, 1) entries (isotropic Rayleigh fading over the band-limited
modes). An SPDA baseline observes the same random field at its lattice:
h = F_r H F_t^H, with F holding the Fourier modes at the element positions
scaled by the square root of the element measure.

Random numbers come from a counter-based generator. Trial t of a seed always
reads the same Philox counter range, so any batching or evaluation order
reproduces identical matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .channel import BandlimitIndexSet
from .errors import EstimationError
from .geometry import Aperture, SpdaConfig, element_measure, sample_spda

MIN_EVENTS = 10
# Target rate used at multiplexing gain zero (r * log2(1 + snr) would be 0).
DEFAULT_R0_RATE = 3.0
_BATCH = 8192


@dataclass(frozen=True)
class FadingEnsembleSpec:
    """Ensemble of M_r x M_t wavenumber channels.

    ``mode_variance`` optionally scales entry variances (an M_r x M_t array);
    the default is flat unit power over the retained modes.
    """

    m_tx: int
    m_rx: int
    trials: int
    seed: int = 0
    mode_variance: np.ndarray | None = None
    tx_basis: BandlimitIndexSet | None = None
    rx_basis: BandlimitIndexSet | None = None

    def __post_init__(self):
        if self.m_tx < 1 or self.m_rx < 1:
            raise ValueError("mode counts must be >= 1")
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if self.mode_variance is not None:
            v = np.asarray(self.mode_variance, dtype=float)
            if v.shape != (self.m_rx, self.m_tx) or np.any(v < 0):
                raise ValueError("mode_variance must be a nonnegative (m_rx, m_tx) array")
            object.__setattr__(self, "mode_variance", v)

    @classmethod
    def from_bases(cls, tx_basis: BandlimitIndexSet, rx_basis: BandlimitIndexSet, trials: int,
                   seed: int = 0, mode_variance=None) -> "FadingEnsembleSpec":
        """Mode counts taken from the band-limit index sets of the two apertures."""
        return cls(tx_basis.size, rx_basis.size, trials, seed, mode_variance, tx_basis, rx_basis)

    @property
    def entries(self) -> int:
        return self.m_tx * self.m_rx

    @property
    def _blocks(self) -> int:
        # Philox yields four 64-bit words per counter step; two words per entry
        return (2 * self.entries + 3) // 4


def _uniforms(raw: np.ndarray) -> np.ndarray:
    """Map 64-bit words to doubles strictly inside (0, 1)."""
    return ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53


def _raw_words(spec: FadingEnsembleSpec, start: int, count: int) -> np.ndarray:
    bg = np.random.Philox(counter=start * spec._blocks, key=spec.seed)
    return bg.random_raw(count * 4 * spec._blocks).reshape(count, 4 * spec._blocks)


def sample_wavenumber_channels(spec: FadingEnsembleSpec, start: int, count: int) -> np.ndarray:
    """Channels for trials ``start .. start + count - 1``, shape (count, M_r, M_t)."""
    if start < 0 or count < 0 or start + count > spec.trials:
        raise IndexError(f"trials {start}..{start + count - 1} outside 0..{spec.trials - 1}")
    u = _uniforms(_raw_words(spec, start, count)[:, : 2 * spec.entries])
    amp = np.sqrt(-np.log(u[:, 0::2]))
    h = amp * np.exp(2j * np.pi * u[:, 1::2])
    h = h.reshape(count, spec.m_rx, spec.m_tx)
    if spec.mode_variance is not None:
        h = h * np.sqrt(spec.mode_variance)[None]
    return h


def sample_wavenumber_channel(spec: FadingEnsembleSpec, trial_index: int) -> np.ndarray:
    """One M_r x M_t channel with i.i.d. CN(0, 1) entries, keyed by (seed, trial)."""
    return sample_wavenumber_channels(spec, trial_index, 1)[0]


@dataclass(frozen=True, eq=False)
class SpdaLattice:
    """SPDA element positions on an aperture, with the Fourier-mode sampling matrix."""

    aperture: Aperture
    config: SpdaConfig
    basis: BandlimitIndexSet

    @property
    def local(self) -> np.ndarray:
        return self.aperture.to_local(sample_spda(self.aperture, self.config))[:, :2]

    @property
    def size(self) -> int:
        return self.config.size

    def sampling_matrix(self) -> np.ndarray:
        """F[n, m] = phi_m(r_n) sqrt(element measure); shape (N, M)."""
        if not (math.isclose(self.aperture.lx, self.basis.lx) and math.isclose(self.aperture.ly, self.basis.ly)):
            raise ValueError("lattice aperture and index set disagree")
        return self.basis.evaluate(self.local) * math.sqrt(element_measure(self.aperture, self.config))


def spda_channel_from_field(h_wavenumber: np.ndarray, tx: SpdaLattice | np.ndarray,
                            rx: SpdaLattice | np.ndarray) -> np.ndarray:
    """SPDA channel F_r H F_t^H seen by element lattices in the same random field.

    ``h_wavenumber`` may be a single (M_r, M_t) matrix or a stack (T, M_r, M_t).
    ``tx`` and ``rx`` are lattices or precomputed sampling matrices.
    """
    Ft = tx.sampling_matrix() if isinstance(tx, SpdaLattice) else np.asarray(tx)
    Fr = rx.sampling_matrix() if isinstance(rx, SpdaLattice) else np.asarray(rx)
    H = np.asarray(h_wavenumber)
    if H.shape[-2] != Fr.shape[1] or H.shape[-1] != Ft.shape[1]:
        raise ValueError(f"wavenumber matrix {H.shape[-2:]} does not match mode counts "
                         f"(rx {Fr.shape[1]}, tx {Ft.shape[1]})")
    return Fr @ H @ Ft.conj().T


def _gains(spec: FadingEnsembleSpec, spda=None) -> tuple[np.ndarray, int]:
    """Eigenvalues of H H^H for every trial (ascending) and the input count."""
    if spda is not None:
        Ft = spda[0].sampling_matrix() if isinstance(spda[0], SpdaLattice) else np.asarray(spda[0])
        Fr = spda[1].sampling_matrix() if isinstance(spda[1], SpdaLattice) else np.asarray(spda[1])
        n_in = Ft.shape[0]
    else:
        n_in = spec.m_tx
    out = []
    for start in range(0, spec.trials, _BATCH):
        H = sample_wavenumber_channels(spec, start, min(_BATCH, spec.trials - start))
        if spda is not None:
            H = spda_channel_from_field(H, Ft, Fr)
        # the smaller Gram side carries all nonzero eigenvalues
        M = H @ H.conj().transpose(0, 2, 1) if H.shape[1] <= H.shape[2] else H.conj().transpose(0, 2, 1) @ H
        out.append(np.maximum(np.linalg.eigvalsh(M), 0.0))
    return np.concatenate(out), n_in


def mutual_information(eigs: np.ndarray, snr: float, n_inputs: int) -> np.ndarray:
    """log2 det(I + (snr / n_inputs) H H^H) per trial, from the eigenvalues."""
    return np.sum(np.log2(1.0 + (snr / n_inputs) * eigs), axis=-1)


def db_to_linear(db) -> np.ndarray:
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def wilson_interval(events: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1:
        raise EstimationError("no trials")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = events / trials
    den = 1.0 + z * z / trials
    c = (p + z * z / (2 * trials)) / den
    h = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    lo = 0.0 if events == 0 else max(0.0, c - h)
    hi = 1.0 if events == trials else min(1.0, c + h)
    return lo, hi


@dataclass(frozen=True)
class OutageEstimate:
    probability: float
    events: int
    trials: int
    interval: tuple

    @property
    def half_width(self) -> float:
        return 0.5 * (self.interval[1] - self.interval[0])


def _outage(mi: np.ndarray, rate: float) -> OutageEstimate:
    n = int(mi.size)
    k = int(np.count_nonzero(mi < rate))
    return OutageEstimate(k / n, k, n, wilson_interval(k, n))


def outage_probability(spec: FadingEnsembleSpec, snr: float, rate: float, spda=None,
                       eigs: np.ndarray | None = None) -> OutageEstimate:
    """Fraction of trials whose mutual information falls below ``rate`` (linear ``snr``)."""
    if not snr > 0:
        raise ValueError("snr must be positive")
    if eigs is None:
        eigs, n_in = _gains(spec, spda)
    else:
        n_in = spec.m_tx
    return _outage(mutual_information(eigs, snr, n_in), rate)


@dataclass(frozen=True)
class DmtPoint:
    r: float
    d: float
    d_raw: float
    r2: float
    snr_window: tuple
    used_points: int


@dataclass(eq=False)
class DmtCurve:
    """Diversity estimates d(r) by least-squares slope of log10 OP against log10 SNR."""

    points: list
    snr_db: np.ndarray
    outage: dict = field(default_factory=dict)

    @property
    def r(self) -> np.ndarray:
        return np.array([p.r for p in self.points])

    @property
    def d(self) -> np.ndarray:
        return np.array([p.d for p in self.points])

    @property
    def r2(self) -> np.ndarray:
        return np.array([p.r2 for p in self.points])

    def is_nonincreasing(self, tol: float = 0.0) -> bool:
        d = self.d
        return bool(np.all(np.diff(d) <= tol))


def target_rate(r: float, snr: float, r0_rate: float = DEFAULT_R0_RATE) -> float:
    """r log2(1 + snr), or the fixed ``r0_rate`` at r = 0."""
    return r0_rate if r == 0 else r * math.log2(1.0 + snr)


def _fit(snr_db, probs):
    x = np.asarray(snr_db) / 10.0
    y = np.log10(probs)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), r2


def estimate_dmt(spec: FadingEnsembleSpec, r_list, snr_db, r0_rate: float = DEFAULT_R0_RATE,
                 min_events: int = MIN_EVENTS) -> DmtCurve:
    """Finite-SNR DMT estimate.

    For each multiplexing gain r, outage is estimated at every SNR of the
    grid and d(r) is minus the slope of log10 OP versus log10 SNR, fitted over
    the points with at least ``min_events`` outages. Estimates are clipped at
    zero (``d_raw`` keeps the fitted value).
    """
    snr_db = np.asarray(snr_db, dtype=float)
    if snr_db.size < 2 or snr_db.max() - snr_db.min() < 15.0:
        raise ValueError("the SNR grid must span at least 15 dB")
    eigs, n_in = _gains(spec)
    mi = {float(s): mutual_information(eigs, float(db_to_linear(s)), n_in) for s in snr_db}
    points, table = [], {}
    for r in r_list:
        r = float(r)
        if r < 0 or r > min(spec.m_tx, spec.m_rx):
            raise ValueError(f"multiplexing gain {r} outside [0, {min(spec.m_tx, spec.m_rx)}]")
        ests = [_outage(mi[float(s)], target_rate(r, float(db_to_linear(s)), r0_rate)) for s in snr_db]
        table[r] = ests
        use = np.array([e.events >= min_events for e in ests])
        if use.sum() < 2:
            raise EstimationError(
                f"fewer than two SNR points with >= {min_events} outage events at r={r}; "
                "lower the SNR grid or raise the trial count"
            )
        probs = np.array([e.probability for e in ests])[use]
        slope, r2 = _fit(snr_db[use], probs)
        window = (float(snr_db[use].min()), float(snr_db[use].max()))
        points.append(DmtPoint(r, max(0.0, -slope), -slope, r2, window, int(use.sum())))
    return DmtCurve(points, snr_db, table)


@dataclass(frozen=True)
class ErgodicEstimate:
    mean: float
    stderr: float
    trials: int


def ergodic_capacity(spec: FadingEnsembleSpec, snr, spda=None, eigs: np.ndarray | None = None):
    """Mean mutual information with its standard error.

    ``spda`` is an optional (tx, rx) pair of :class:`SpdaLattice` (or sampling
    matrices); the SPDA spreads power equally over its N_t elements. A
    sequence of SNRs returns a list of estimates that share the trials.
    """
    if eigs is None:
        eigs, n_in = _gains(spec, spda)
    else:
        n_in = spec.m_tx if spda is None else (spda[0].size if isinstance(spda[0], SpdaLattice)
                                               else np.asarray(spda[0]).shape[0])
    scalar = np.ndim(snr) == 0
    out = []
    for s in np.atleast_1d(np.asarray(snr, dtype=float)):
        if not s > 0:
            raise ValueError("snr must be positive")
        mi = mutual_information(eigs, float(s), n_in)
        out.append(ErgodicEstimate(float(mi.mean()), float(mi.std(ddof=1) / math.sqrt(mi.size))
                                   if mi.size > 1 else float("nan"), int(mi.size)))
    return out[0] if scalar else out


def channel_gains(spec: FadingEnsembleSpec, spda=None) -> tuple[np.ndarray, int]:
    """Per-trial eigenvalues of H H^H and the transmit input count, for reuse across SNRs."""
    return _gains(spec, spda)
