"""Config-driven experiment runner producing versioned CSV and JSON summaries.

A config is a JSON object whose ``experiment`` field selects one of four
studies; each study owns a fixed schema (unknown keys are rejected). Outputs
are written atomically and removed again if the run fails part-way.

Studies and the CSV files they emit:

========================  ==================================================
``beamforming-se``        ``beamform.csv``: SE per method over the sweep
``p2p-capacity``          ``capacity.csv`` and ``spectrum.csv``
``mac-bc-regions``        ``region.csv``: boundary polylines per sweep value
``dmt-ecc``               ``dmt.csv`` (per r) and ``ecc.csv`` (per SNR)
========================  ==================================================
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .beamforming import METHODS, OptimizerConfig, SubspaceBasis, design, optimize_subspace
from .capacity import (
    DEFAULT_POWER_SPLITS,
    bc_region_two_user,
    mac_region,
    p2p_capacity,
)
from .channel import (
    LinkBudget,
    aperture_from_dict,
    bandlimit_basis,
    gram_matrix,
    los_response,
    required_nodes,
)
from .errors import CapaError, ConfigError
from .fading import (
    DEFAULT_R0_RATE,
    FadingEnsembleSpec,
    SpdaLattice,
    channel_gains,
    db_to_linear,
    ergodic_capacity,
    estimate_dmt,
)
from .geometry import (
    Aperture,
    SpdaConfig,
    build_quadrature,
    default_nodes_per_dim,
    spda_grid,
    wavelength_from_frequency,
)
from .operators import (
    DEFAULT_DEGENERATE_FACTOR,
    DEFAULT_EDOF_THRESHOLD,
    build_kernel,
    count_edof,
    operator_svd_degenerate,
    operator_svd_nystrom,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUT_ENV = "CAPA_KIT_OUT"
DEFAULT_OUT = "capa_out"
# Refinement tolerance for emitted BC polylines; keeps CSVs to a few thousand rows.
CLI_REFINE_TOL = 1e-6

EXPERIMENTS = ("beamforming-se", "p2p-capacity", "mac-bc-regions", "dmt-ecc")
TASKS = {
    "beamforming-se": ("beamform",),
    "p2p-capacity": ("capacity", "spectrum"),
    "mac-bc-regions": ("region",),
    "dmt-ecc": ("dmt", "ecc"),
}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_APERTURE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["lx"],
    "properties": {
        "kind": {"enum": ["linear", "planar"]},
        "lx": _POS,
        "ly": _POS,
        "center": _VEC3,
        "normal": _VEC3,
        "axis": _VEC3,
    },
}
_BUDGET = {
    "type": "object",
    "additionalProperties": False,
    "required": ["power_w", "noise_w"],
    "properties": {
        "power_w": _POS,
        "noise_w": _NUM,
        "user_powers_w": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}


def _sweep(variables):
    return {
        "type": "object",
        "additionalProperties": False,
        "required": ["variable", "values"],
        "properties": {"variable": {"enum": list(variables)}, "values": {"type": "array", "items": _NUM}},
    }


def _top(scene, options, sweep_vars, extra=None):
    props = {
        "experiment": {"enum": list(EXPERIMENTS)},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "scene": scene,
        "options": options,
        "sweep": _sweep(sweep_vars),
    }
    props.update(extra or {})
    return {"type": "object", "additionalProperties": False, "required": ["experiment", "scene", "sweep"],
            "properties": props}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "required": list(required), "properties": props}


_NODES = {"type": "integer", "minimum": 1}

SCHEMAS = {
    "beamforming-se": _top(
        _obj({"frequency_hz": _POS, "aperture": _APERTURE,
              "users": {"type": "array", "items": _VEC3, "minItems": 1}},
             ("frequency_hz", "aperture", "users")),
        _obj({"nodes_per_dim": _NODES, "spda_spacing_wavelengths": {"type": ["number", "null"]},
              "discretized_factor": _POS, "discretized_family": {"enum": ["exponential", "cosine"]},
              "tol": _POS, "max_iters": _NODES}),
        ("aperture_side", "power_w"),
        {"budget": _BUDGET, "methods": {"type": "array", "items": {"type": "string"}, "minItems": 1}},
    ),
    "p2p-capacity": _top(
        _obj({"frequency_hz": _POS, "tx": _APERTURE, "rx": _APERTURE, "distance_m": _POS},
             ("frequency_hz", "tx", "rx", "distance_m")),
        _obj({"nodes_per_dim": _NODES, "backend": {"enum": ["nystrom", "degenerate"]},
              "edof_threshold": _POS}),
        ("distance_m", "aperture_length", "power_w"),
        {"budget": _BUDGET},
    ),
    "mac-bc-regions": _top(
        _obj({"frequency_hz": _POS, "aperture": _APERTURE,
              "users": {"type": "array", "items": _VEC3}},
             ("frequency_hz", "aperture", "users")),
        _obj({"nodes_per_dim": _NODES, "n_power_splits": _NODES, "n_timeshare": _NODES,
              "refine_tol": _POS, "spda_spacing_wavelengths": {"type": ["number", "null"]}}),
        ("power_w", "aperture_side"),
        {"budget": _BUDGET},
    ),
    "dmt-ecc": _top(
        _obj({"m_tx": _NODES, "m_rx": _NODES, "frequency_hz": _POS, "tx": _APERTURE, "rx": _APERTURE},
             ("m_tx", "m_rx", "frequency_hz", "tx", "rx")),
        _obj({"r_list": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
              "dmt_snr_db": {"type": "array", "items": _NUM, "minItems": 2},
              "r0_rate": _POS,
              "spda_spacings_wavelengths": {"type": "array", "items": _POS}}),
        ("snr_db",),
        {"trials": {"type": "integer", "minimum": 1}},
    ),
}

DEFAULTS = {
    "beamforming-se": {"spda_spacing_wavelengths": 2.0, "discretized_factor": 2.0,
                       "discretized_family": "cosine", "tol": 1e-8, "max_iters": 500},
    "p2p-capacity": {"backend": "nystrom", "edof_threshold": DEFAULT_EDOF_THRESHOLD},
    "mac-bc-regions": {"n_power_splits": DEFAULT_POWER_SPLITS, "n_timeshare": 16,
                       "refine_tol": CLI_REFINE_TOL, "spda_spacing_wavelengths": 2.0},
    "dmt-ecc": {"r_list": [0.0, 0.5, 1.0, 1.5, 2.0], "dmt_snr_db": list(range(10, 31, 2)),
                "r0_rate": DEFAULT_R0_RATE, "spda_spacings_wavelengths": [0.5, 2.0]},
}


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: dict | None = None

    @property
    def ok(self) -> bool:
        return not self.errors


def load_config(source) -> dict:
    if isinstance(source, dict):
        return copy.deepcopy(source)
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _schema_errors(cfg: dict) -> list:
    exp = cfg.get("experiment")
    if exp not in SCHEMAS:
        return [f"experiment must be one of {', '.join(EXPERIMENTS)}, got {exp!r}"]
    v = jsonschema.Draft202012Validator(SCHEMAS[exp])
    out = []
    for e in sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        out.append(f"{where}: {e.message}")
    return out


def _options(cfg: dict) -> dict:
    opts = dict(DEFAULTS[cfg["experiment"]])
    opts.update(cfg.get("options", {}))
    return opts


def _frequency_aperture(ap_cfg: dict, freq: float) -> Aperture:
    return aperture_from_dict(ap_cfg, wavelength_from_frequency(freq))


def _check_grid_resolution(ap: Aperture, nodes, report: ValidationReport, what: str) -> None:
    if nodes is None:
        return
    for side in ap.sides:
        if side <= 0:
            continue
        need = int(math.ceil(6.0 * side / ap.wavelength - 1e-9))
        if nodes < need:
            report.warnings.append(
                f"{what}: {nodes} nodes per side under-resolve a {side} m side at "
                f"lambda={ap.wavelength:.4g} m (rule: >= ceil(6 L / lambda) = {need})")


def _sweep_values(cfg) -> list:
    return [float(v) for v in cfg["sweep"]["values"]]


def _physics_checks(cfg: dict, report: ValidationReport) -> None:
    exp = cfg["experiment"]
    vals = _sweep_values(cfg)
    if not vals:
        report.errors.append("sweep/values: empty sweep grid")
    elif any(b <= a for a, b in zip(vals, vals[1:])):
        report.errors.append("sweep/values: sweep grid must be strictly increasing")
    var = cfg["sweep"]["variable"]
    if var not in ("snr_db",) and any(v <= 0 for v in vals):
        report.errors.append(f"sweep/values: {var} values must be positive")
    budget = cfg.get("budget")
    if budget is not None and not budget["noise_w"] > 0:
        report.errors.append(f"budget/noise_w: noise variance must be > 0, got {budget['noise_w']}")
    opts = _options(cfg)
    scene = cfg["scene"]

    if exp == "beamforming-se":
        bad = [m for m in cfg.get("methods", ["subspace"]) if m not in METHODS]
        if bad:
            report.errors.append(f"methods: unknown method(s) {bad}; valid methods are {', '.join(METHODS)}")
        if "user_powers_w" in cfg.get("budget", {}) and len(cfg["budget"]["user_powers_w"]) != len(scene["users"]):
            report.errors.append("budget/user_powers_w: need one power per user")

    if exp in ("beamforming-se", "mac-bc-regions"):
        try:
            ap = _frequency_aperture(scene["aperture"], scene["frequency_hz"])
        except CapaError as exc:
            report.errors.append(f"scene/aperture: {exc}")
            return
        if exp == "mac-bc-regions" and len(scene["users"]) != 2:
            report.errors.append(f"scene/users: regions need exactly two users, got {len(scene['users'])}")
        for i, u in enumerate(scene["users"]):
            if float(np.atleast_1d(ap.distance_to(np.asarray(u, float)))[0]) <= 1e-9 * max(ap.sides):
                report.errors.append(f"scene/users/{i}: singular geometry: user {u} lies on the aperture")
        _check_grid_resolution(ap, opts.get("nodes_per_dim"), report, "options/nodes_per_dim")

    if exp == "p2p-capacity":
        try:
            for key in ("tx", "rx"):
                ap = _frequency_aperture(scene[key], scene["frequency_hz"])
                _check_grid_resolution(ap, opts.get("nodes_per_dim"), report, "options/nodes_per_dim")
        except CapaError as exc:
            report.errors.append(f"scene: {exc}")

    if exp == "dmt-ecc":
        r_max = min(scene["m_tx"], scene["m_rx"])
        if any(r > r_max for r in opts["r_list"]):
            report.errors.append(f"options/r_list: multiplexing gains must not exceed min(m_tx, m_rx) = {r_max}")
        snr = opts["dmt_snr_db"]
        if max(snr) - min(snr) < 15:
            report.errors.append("options/dmt_snr_db: the DMT SNR grid must span at least 15 dB")
        try:
            for key in ("tx", "rx"):
                _frequency_aperture(scene[key], scene["frequency_hz"])
        except CapaError as exc:
            report.errors.append(f"scene: {exc}")


def validate_config(source) -> ValidationReport:
    """Schema plus physics checks, without running anything."""
    report = ValidationReport()
    try:
        cfg = load_config(source)
    except ConfigError as exc:
        report.errors.extend(exc.errors)
        return report
    report.config = cfg
    report.errors.extend(_schema_errors(cfg))
    if report.errors:
        return report
    _physics_checks(cfg, report)
    return report


# -- output plumbing --------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version: {SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


@dataclass
class TaskResult:
    name: str
    columns: list
    rows: list
    headline: dict
    extra_files: dict = field(default_factory=dict)


# -- studies ------------------------------------------------------------------------------


def _budget(cfg) -> LinkBudget:
    b = cfg["budget"]
    up = b.get("user_powers_w")
    return LinkBudget(float(b["power_w"]), float(b["noise_w"]), tuple(up) if up is not None else None)


def _sized(ap: Aperture, side: float) -> Aperture:
    return ap.with_sides(side, None if ap.is_linear else side)


def _grid_for(ap: Aperture, nodes, basis=None):
    n = nodes or max(default_nodes_per_dim(s, ap.wavelength) for s in ap.sides if s > 0)
    if basis is not None:
        n = max(n, *required_nodes(basis))
    return build_quadrature(ap, n)


def _spda_for(ap: Aperture, spacing_wl: float):
    d = spacing_wl * ap.wavelength
    return spda_grid(ap, SpdaConfig.for_aperture(ap, d, None if ap.is_linear else d))


def run_beamform(cfg: dict, opts: dict, seed: int, trials) -> TaskResult:
    scene = cfg["scene"]
    methods = list(cfg.get("methods", ["subspace"]))
    base_ap = _frequency_aperture(scene["aperture"], scene["frequency_hz"])
    budget0 = _budget(cfg)
    var = cfg["sweep"]["variable"]
    oc = OptimizerConfig(tol=float(opts["tol"]), max_iters=int(opts["max_iters"]))
    spda_wl = opts.get("spda_spacing_wavelengths")
    cols = [var] + [f"se_{m}" for m in methods]
    if spda_wl is not None:
        cols += ["se_spda_subspace", "spda_elements"]
    rows, gaps = [], []
    for v in _sweep_values(cfg):
        ap = _sized(base_ap, v) if var == "aperture_side" else base_ap
        budget = LinkBudget(v, budget0.noise, budget0.user_powers) if var == "power_w" else budget0
        basis = None
        if "discretized" in methods:
            basis = bandlimit_basis(ap, float(opts["discretized_factor"]), opts["discretized_family"])
        grid = _grid_for(ap, opts.get("nodes_per_dim"), basis)
        responses = [los_response(u, grid) for u in scene["users"]]
        se = {}
        for m in methods:
            conf = oc if m in ("subspace", "discretized") else None
            se[m] = design(m, responses, budget, basis=basis, config=conf).sum_se
        row = [v] + [se[m] for m in methods]
        if spda_wl is not None:
            sg = _spda_for(ap, float(spda_wl))
            sresp = [los_response(u, sg) for u in scene["users"]]
            row += [optimize_subspace(SubspaceBasis.from_responses(sresp), budget, config=oc).sum_se, sg.size]
        if "cov" in se and "subspace" in se:
            gaps.append(abs(se["cov"] - se["subspace"]) / se["subspace"])
        rows.append(row)
    headline = {f"mean_se_{m}": float(np.mean([r[1 + i] for r in rows])) for i, m in enumerate(methods)}
    if gaps:
        headline["max_rel_gap_cov_subspace"] = float(max(gaps))
    return TaskResult("beamform", cols, rows, headline)


def _p2p_pair(scene: dict, length: float | None):
    lam = wavelength_from_frequency(scene["frequency_hz"])
    tx = aperture_from_dict(scene["tx"], lam)
    rx_cfg = dict(scene["rx"])
    rx = aperture_from_dict(rx_cfg, lam)
    if length is not None:
        tx, rx = _sized(tx, length), _sized(rx, length)
    return tx, rx


def _p2p_svd(scene, opts, var, v):
    tx, rx = _p2p_pair(scene, v if var == "aperture_length" else None)
    dist = v if var == "distance_m" else float(scene["distance_m"])
    rx = rx.moved(np.asarray(tx.center) + dist * np.asarray(tx.normal))
    nodes = opts.get("nodes_per_dim")
    if opts["backend"] == "degenerate":
        tb = bandlimit_basis(tx, DEFAULT_DEGENERATE_FACTOR, "cosine")
        rb = bandlimit_basis(rx, DEFAULT_DEGENERATE_FACTOR, "cosine")
        K = build_kernel(_grid_for(tx, nodes, tb), _grid_for(rx, nodes, rb))
        return operator_svd_degenerate(K, tb, rb)
    return operator_svd_nystrom(build_kernel(_grid_for(tx, nodes), _grid_for(rx, nodes)))


def run_capacity(cfg, opts, seed, trials) -> TaskResult:
    var = cfg["sweep"]["variable"]
    b = _budget(cfg)
    rows = []
    for v in _sweep_values(cfg):
        svd = _p2p_svd(cfg["scene"], opts, var, v)
        power = v if var == "power_w" else b.power
        rows.append([v, p2p_capacity(svd, power, b.noise),
                     count_edof(svd.singular_values, float(opts["edof_threshold"])),
                     svd.operator_norm, svd.hs_norm])
    cols = [var, "capacity_bps_hz", "edof", "sigma_1", "hs_norm"]
    headline = {"capacity_bps_hz": [r[1] for r in rows], "edof": [r[2] for r in rows]}
    return TaskResult("capacity", cols, rows, headline)


def run_spectrum(cfg, opts, seed, trials) -> TaskResult:
    var = cfg["sweep"]["variable"]
    thr = float(opts["edof_threshold"])
    rows, edofs = [], []
    for v in _sweep_values(cfg):
        svd = _p2p_svd(cfg["scene"], opts, var, v)
        s = svd.singular_values
        cum = svd.cumulative_energy()
        for i in range(s.size):
            rows.append([v, i + 1, s[i], cum[i], bool(s[i] >= thr * s[0])])
        edofs.append(count_edof(s, thr))
    cols = [var, "index", "sigma", "cumulative_energy", "above_threshold"]
    return TaskResult("spectrum", cols, rows, {"edof": edofs})


def run_region(cfg, opts, seed, trials) -> TaskResult:
    scene = cfg["scene"]
    base_ap = _frequency_aperture(scene["aperture"], scene["frequency_hz"])
    b = _budget(cfg)
    var = cfg["sweep"]["variable"]
    spda_wl = opts.get("spda_spacing_wavelengths")
    rows, meta = [], []
    for v in _sweep_values(cfg):
        ap = _sized(base_ap, v) if var == "aperture_side" else base_ap
        power = v if var == "power_w" else b.power
        user_p = b.user_powers if b.user_powers is not None else (power / 2, power / 2)
        if var == "power_w" and b.user_powers is not None:
            user_p = tuple(np.asarray(b.user_powers) * power / b.power)
        arrays = {"capa": _grid_for(ap, opts.get("nodes_per_dim"))}
        if spda_wl is not None:
            arrays["spda"] = _spda_for(ap, float(spda_wl))
        regions = {}
        for name, grid in arrays.items():
            G = gram_matrix([los_response(u, grid) for u in scene["users"]])
            regions[f"mac_{name}"] = mac_region(G, user_p, b.noise, int(opts["n_timeshare"]))
            regions[f"bc_{name}"] = bc_region_two_user(G, power, b.noise, int(opts["n_power_splits"]),
                                                       int(opts["n_timeshare"]), float(opts["refine_tol"]))
        entry = {var: v, "user_powers_w": list(map(float, user_p))}
        for name, reg in regions.items():
            for i, (r1, r2) in enumerate(reg.boundary):
                rows.append([v, name, i, r1, r2])
            entry[name] = {"max_rates": reg.max_rates.tolist(), "vertices": int(reg.boundary.shape[0]),
                           "sum_rate": float(np.max(reg.boundary.sum(axis=1)))}
        if spda_wl is not None:
            entry["capa_contains_spda"] = {
                k: bool(regions[f"{k}_capa"].contains(regions[f"{k}_spda"])) for k in ("mac", "bc")}
        meta.append(entry)
    cols = [var, "region", "vertex", "r1_bps_hz", "r2_bps_hz"]
    return TaskResult("region", cols, rows, {"regions": meta})


def _trials(cfg, trials) -> int:
    return int(trials if trials is not None else cfg.get("trials", 200000))


def run_dmt(cfg, opts, seed, trials) -> TaskResult:
    scene = cfg["scene"]
    spec = FadingEnsembleSpec(scene["m_tx"], scene["m_rx"], _trials(cfg, trials), seed)
    curve = estimate_dmt(spec, opts["r_list"], opts["dmt_snr_db"], float(opts["r0_rate"]))
    rows = [[p.r, p.d, p.d_raw, p.r2, p.snr_window[0], p.snr_window[1], p.used_points] for p in curve.points]
    cols = ["r", "d_hat", "d_raw", "r_squared", "snr_lo_db", "snr_hi_db", "fit_points"]
    headline = {"d0": curve.points[0].d if curve.points[0].r == 0 else None,
                "nonincreasing": curve.is_nonincreasing(), "trials": spec.trials}
    return TaskResult("dmt", cols, rows, headline)


def run_ecc(cfg, opts, seed, trials) -> TaskResult:
    scene = cfg["scene"]
    lam = wavelength_from_frequency(scene["frequency_hz"])
    tx = aperture_from_dict(scene["tx"], lam)
    rx = aperture_from_dict(scene["rx"], lam)
    tb, rb = bandlimit_basis(tx), bandlimit_basis(rx)
    spec = FadingEnsembleSpec.from_bases(tb, rb, _trials(cfg, trials), seed)
    snr = db_to_linear(_sweep_values(cfg))
    variants = {"capa": None}
    for d in opts["spda_spacings_wavelengths"]:
        lt = SpdaLattice(tx, SpdaConfig.for_aperture(tx, d * lam, None if tx.is_linear else d * lam), tb)
        lr = SpdaLattice(rx, SpdaConfig.for_aperture(rx, d * lam, None if rx.is_linear else d * lam), rb)
        variants[f"spda_{_fmt(float(d))}wl"] = (lt, lr)
    results = {}
    for name, var in variants.items():
        eigs, n_in = channel_gains(spec, var)
        results[name] = ergodic_capacity(spec, snr, spda=var, eigs=eigs)
    cols = ["snr_db"]
    for name in variants:
        cols += [f"ecc_{name}", f"stderr_{name}"]
    rows = []
    for i, s in enumerate(_sweep_values(cfg)):
        row = [s]
        for name in variants:
            row += [results[name][i].mean, results[name][i].stderr]
        rows.append(row)
    headline = {"m_tx": spec.m_tx, "m_rx": spec.m_rx, "trials": spec.trials,
                "ecc_capa": [e.mean for e in results["capa"]]}
    return TaskResult("ecc", cols, rows, headline)


RUNNERS = {
    "beamform": run_beamform,
    "capacity": run_capacity,
    "spectrum": run_spectrum,
    "region": run_region,
    "dmt": run_dmt,
    "ecc": run_ecc,
}


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, DEFAULT_OUT))


def run_experiment(source, out_dir=None, seed: int | None = None, trials: int | None = None,
                   tasks=None) -> dict:
    """Validate, run and write outputs; returns the summary of the last task.

    Each task writes ``<task>.csv`` and a ``<task>.json`` summary into
    ``out_dir``. On any failure every file written by this call is removed.
    """
    report = validate_config(source)
    if not report.ok:
        raise ConfigError(report.errors)
    for w in report.warnings:
        log.warning(w)
    cfg = report.config
    if seed is not None:
        cfg["seed"] = int(seed)
    if trials is not None:
        if cfg["experiment"] != "dmt-ecc":
            raise ConfigError("--trials only applies to the dmt-ecc experiment")
        cfg["trials"] = int(trials)
    seed = int(cfg.get("seed", 0))
    exp = cfg["experiment"]
    tasks = tuple(tasks) if tasks else TASKS[exp]
    for t in tasks:
        if t not in TASKS[exp]:
            raise ConfigError(f"task {t!r} does not apply to experiment {exp!r} (valid: {', '.join(TASKS[exp])})")
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    opts = _options(cfg)
    written = []
    summary = {}
    try:
        for t in tasks:
            res = RUNNERS[t](cfg, opts, seed, cfg.get("trials"))
            if not len(res.rows):
                raise CapaError(f"{t}: no rows produced")
            csv_path = out / f"{t}.csv"
            atomic_write(csv_path, csv_text(res.columns, res.rows))
            written.append(csv_path)
            summary = {
                "schema_version": SCHEMA_VERSION,
                "package_version": __version__,
                "experiment": exp,
                "task": t,
                "config": cfg,
                "config_sha256": config_hash(cfg),
                "seed": seed,
                "rows": len(res.rows),
                "csv": csv_path.name,
                "headline": res.headline,
                "warnings": report.warnings,
            }
            js = out / f"{t}.json"
            atomic_write(js, json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
            written.append(js)
    except BaseException:
        for p in written:
            try:
                p.unlink()
            except FileNotFoundError:
                pass
        raise
    return summary


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
