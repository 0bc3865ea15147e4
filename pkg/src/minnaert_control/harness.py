"""Experiment orchestration: configuration, the end-to-end tracking pipeline,
epsilon sweeps with log-log fits, and report emission."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .bubbles import (
    GeometryViolation,
    IntegrationBlowup,
    StepTooLarge,
    TransducerArray,
    build_ensemble,
    build_system,
    cluster_outputs,
    default_dt,
    incident_traces,
    integrate_delayed,
    source_amplitudes,
    validate_geometry,
)
from .ideal import (
    RankDeficient,
    ReferenceTrajectory,
    UnstableStep,
    coupling_matrix,
    ideal_source,
    integrate_modal,
    modal_energy_norm,
    rank_probe,
    right_inverse,
    tracking_error,
)
from .realization import (
    BandFilter,
    IllConditionedBand,
    control_cost,
    project_to_band_space,
    realization_error,
    reference_trajectory_gen,
    synthesize_controls,
    write_control,
)
from .signals import Signal, write_csv
from .spectral import (
    BoxDomain,
    EmptyBandInterval,
    ModeSet,
    SpectralBand,
    check_localization,
    modes_in_band,
    warn_incomplete_families,
)
from .transfer import (
    ContourTooClose,
    NoConvergence,
    NotSimple,
    SMatrixEvaluator,
    asymptotic_pole,
    cluster_poles,
    gain_sweep,
    principal_pole,
    residue_at,
    transducer_accessibility,
    tune_cluster,
    write_gain_table,
    write_pole_table,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
REPORT_VERSION = "1.0"
# RK4 at 256 steps per shortest period over a few hundred periods
IDEAL_TOL = 1e-4


class AssumptionViolation(ValueError):
    """A modelling assumption of the configuration does not hold."""

    def __init__(self, check: str, message: str):
        super().__init__(f"[{check}] {message}")
        self.check = check


class StageError(RuntimeError):
    """Failure inside one pipeline stage; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause

    @property
    def is_assumption(self) -> bool:
        return isinstance(self.cause, ASSUMPTION_ERRORS)


ASSUMPTION_ERRORS = (AssumptionViolation, GeometryViolation, RankDeficient, EmptyBandInterval,
                     jsonschema.ValidationError)
NUMERICAL_ERRORS = (NoConvergence, ContourTooClose, NotSimple, IllConditionedBand, IntegrationBlowup,
                    StepTooLarge, UnstableStep, np.linalg.LinAlgError, FloatingPointError)


def _num_array(n_min=1, n_max=None, **item):
    s = {"type": "array", "items": {"type": "number", **item}, "minItems": n_min}
    if n_max is not None:
        s["maxItems"] = n_max
    return s


VEC3 = _num_array(3, 3)
SCALAR_OR_LIST = {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                            _num_array(1, exclusiveMinimum=0)]}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "minnaert_control experiment configuration",
    "type": "object",
    "required": ["schema_version", "seed", "domain", "modes", "clusters", "transducers",
                 "trajectory", "T", "epsilons"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "domain": {
            "type": "object", "required": ["lengths", "c0"], "additionalProperties": False,
            "properties": {"lengths": _num_array(3, 3, exclusiveMinimum=0),
                           "c0": {"type": "number", "exclusiveMinimum": 0}},
        },
        "modes": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "indices": {"type": "array", "minItems": 1,
                            "items": {"type": "array", "items": {"type": "integer", "minimum": 1},
                                      "minItems": 3, "maxItems": 3}},
                "band": {"type": "array", "minItems": 1, "items": _num_array(2, 2, minimum=0)},
                "index_cap": {"type": "integer", "minimum": 1},
            },
            "oneOf": [{"required": ["indices"]}, {"required": ["band"]}],
        },
        "clusters": {
            "type": "object", "additionalProperties": False,
            "required": ["bubbles", "geometry", "spacing", "p", "cap_tilde", "omega_m", "assignment"],
            "properties": {
                "centers": {"type": "array", "minItems": 1, "items": VEC3},
                "count": {"type": "integer", "minimum": 1},
                "region": {"type": "array", "items": VEC3, "minItems": 2, "maxItems": 2},
                "max_draws": {"type": "integer", "minimum": 1},
                "bubbles": {"oneOf": [{"type": "integer", "minimum": 1},
                                      {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
                "geometry": {"oneOf": [{"enum": ["equidistant", "chain"]},
                                       {"type": "array", "items": {"enum": ["equidistant", "chain"]}}]},
                "spacing": SCALAR_OR_LIST,
                "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "cap_tilde": SCALAR_OR_LIST,
                "omega_m": {"oneOf": [{"const": "tune"}, SCALAR_OR_LIST["oneOf"][0], SCALAR_OR_LIST["oneOf"][1]]},
                "assignment": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            },
            "oneOf": [{"required": ["centers"]}, {"required": ["count", "region"]}],
        },
        "transducers": {
            "type": "object", "required": ["center", "radius", "directions"], "additionalProperties": False,
            "properties": {
                "center": VEC3,
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "directions": {"type": "array", "items": VEC3, "minItems": 1},
                "rho_c": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "trajectory": {
            "type": "object", "required": ["amplitudes", "ramp"], "additionalProperties": False,
            "properties": {
                "amplitudes": _num_array(1),
                "ramp": {"type": "number", "exclusiveMinimum": 0},
                "delay": {"type": "number", "minimum": 0},
            },
        },
        "T": {"type": "number", "exclusiveMinimum": 0},
        "epsilons": _num_array(1, exclusiveMinimum=0, exclusiveMaximum=1),
        "dt": {
            "type": "object", "additionalProperties": False,
            "properties": {"policy": {"enum": ["default", "fixed"]},
                           "value": {"type": "number", "exclusiveMinimum": 0},
                           "factor": {"type": "number", "exclusiveMinimum": 0}},
        },
        "bands": {
            "type": "object", "additionalProperties": False,
            "properties": {"delta_factor": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                           "taper_factor": {"type": "number", "exclusiveMinimum": 0},
                           "g0": {"type": ["number", "null"], "exclusiveMinimum": 0}},
        },
        "synthesis": {
            "type": "object", "additionalProperties": False,
            "properties": {"lead_extra": {"type": "number", "minimum": 0},
                           "sigma_tol": {"type": "number", "minimum": 0}},
        },
        "tolerances": {
            "type": "object", "additionalProperties": False,
            "properties": {"sigma_c": {"type": "number", "exclusiveMinimum": 0},
                           "accessibility": {"type": "number", "minimum": 0},
                           "n_grid": {"type": "integer", "minimum": 16}},
        },
    },
}

DEFAULTS = {
    "dt": {"policy": "default", "factor": 1.0},
    "bands": {"delta_factor": 0.4, "taper_factor": 0.25, "g0": None},
    "synthesis": {"lead_extra": 0.05, "sigma_tol": 0.0},
    "tolerances": {"sigma_c": 1e-8, "accessibility": 1e-12, "n_grid": 64},
}


def load_config(path) -> dict:
    return json.loads(Path(path).read_text())


def demo_config() -> dict:
    """The shipped demo: unit box, 2 clusters x 2 bubbles, 4 transducers at radius 3, 2 modes."""
    return json.loads(resources.files("minnaert_control").joinpath("configs/demo.json").read_text())


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, normalised configuration."""

    raw: dict
    domain: BoxDomain
    modes: ModeSet
    frequencies: np.ndarray
    centers: np.ndarray
    counts: tuple
    geometry: tuple
    spacing: np.ndarray
    p: float
    cap_tilde: np.ndarray
    omega_m: np.ndarray | None
    assignment: tuple
    transducer_positions: np.ndarray
    rho_c: float
    amplitudes: np.ndarray
    ramp: float
    delay: float
    T: float
    epsilons: tuple
    dt: dict
    bands: dict
    synthesis: dict
    tolerances: dict
    seed: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.centers.shape[0]

    @property
    def c0(self) -> float:
        return self.domain.c0

    def ensemble(self, eps: float):
        om = self.frequencies[list(self.assignment)] if self.omega_m is None else self.omega_m
        return build_ensemble(self.centers, self.counts, list(self.geometry), self.spacing, om,
                              self.cap_tilde, eps, self.p)


def _per_cluster(value, n, name, kind=float):
    arr = np.atleast_1d(np.asarray(value, dtype=kind))
    if arr.size == 1:
        arr = np.repeat(arr, n)
    if arr.size != n:
        raise AssumptionViolation("schema", f"{name} needs one entry per cluster ({n})")
    return arr


def _distinct_frequencies(omegas, rtol=1e-12):
    out = []
    for w in sorted(omegas):
        if not out or abs(w - out[-1]) > rtol * w:
            out.append(float(w))
    return np.array(out)


def _draw_centers(domain, modes, count, region, seed, max_draws, tol):
    lo, hi = (np.asarray(x, dtype=float) for x in region)
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        y = rng.uniform(lo, hi, size=(count, 3))
        s = np.linalg.svd(coupling_matrix(modes, y).entries, compute_uv=False)
        if s[-1] >= tol * s[0]:
            return y
    raise AssumptionViolation("genericity", f"no full-rank centre draw in {max_draws} attempts")


def validate_config(raw: dict, seed: int | None = None, epsilons=None) -> ExperimentConfig:
    """Schema check plus every modelling assumption, with named diagnostics.

    Raises :class:`AssumptionViolation` (or ``jsonschema.ValidationError``)
    naming the failing check.
    """
    raw = json.loads(json.dumps(raw))  # private copy
    if seed is not None:
        raw["seed"] = int(seed)
    if epsilons:
        raw["epsilons"] = [float(e) for e in epsilons]
    jsonschema.validate(raw, CONFIG_SCHEMA)
    for key, d in DEFAULTS.items():
        raw[key] = {**d, **raw.get(key, {})}
    diag = {}
    domain = BoxDomain(tuple(raw["domain"]["lengths"]), raw["domain"]["c0"])
    mcfg = raw["modes"]
    if "indices" in mcfg:
        modes = ModeSet.from_indices(domain, [tuple(k) for k in mcfg["indices"]])
    else:
        modes = modes_in_band(domain, SpectralBand(tuple(map(tuple, mcfg["band"]))),
                              mcfg.get("index_cap", 16))
    missing = warn_incomplete_families(modes, mcfg.get("index_cap", 16))
    diag["incomplete_families"] = len(missing)
    freqs = _distinct_frequencies(modes.omegas)
    tol = raw["tolerances"]
    cc = raw["clusters"]
    if "centers" in cc:
        centers = np.asarray(cc["centers"], dtype=float)
    else:
        centers = _draw_centers(domain, modes, cc["count"], cc["region"], raw["seed"],
                                cc.get("max_draws", 100), tol["sigma_c"])
    n = centers.shape[0]
    n_m = len(modes)
    m_tr = len(raw["transducers"]["directions"])
    if not m_tr >= n:
        raise AssumptionViolation("counts", f"need M_tr >= N, got M_tr={m_tr}, N={n}")
    if not n >= n_m:
        raise AssumptionViolation("counts", f"need N >= N_M, got N={n}, N_M={n_m}")
    assignment = tuple(int(a) for a in cc["assignment"])
    if len(assignment) != n:
        raise AssumptionViolation("assignment", "one target frequency per cluster required")
    if set(assignment) != set(range(len(freqs))):
        raise AssumptionViolation("assignment", f"assignment must map onto all {len(freqs)} distinct frequencies")
    for y in centers:
        if not domain.contains(y, strict=True):
            raise AssumptionViolation("centers", f"cluster centre {y} not strictly inside the box")
    try:
        L = right_inverse(coupling_matrix(modes, centers), tol["sigma_c"])
    except RankDeficient as exc:
        raise AssumptionViolation("rank", str(exc)) from exc
    diag["sigma_min_C"] = L.sigma_min
    diag["sigma_max_C"] = L.sigma_max
    counts = tuple(int(c) for c in _per_cluster(cc["bubbles"], n, "bubbles", int))
    geometry = (cc["geometry"],) * n if isinstance(cc["geometry"], str) else tuple(cc["geometry"])
    if len(geometry) != n:
        raise AssumptionViolation("schema", "geometry needs one entry per cluster")
    omega_m = None if cc["omega_m"] == "tune" else _per_cluster(cc["omega_m"], n, "omega_m")
    tr = raw["transducers"]
    dirs = np.asarray(tr["directions"], dtype=float)
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(norms == 0):
        raise AssumptionViolation("transducers", "zero direction vector")
    positions = np.asarray(tr["center"], float) + tr["radius"] * dirs / norms[:, None]
    amps = np.asarray(raw["trajectory"]["amplitudes"], dtype=float)
    if amps.size == 1:
        amps = np.repeat(amps, n_m)
    if amps.size != n_m:
        raise AssumptionViolation("trajectory", "one amplitude per mode required")
    T = float(raw["T"])
    ramp = float(raw["trajectory"]["ramp"])
    delay = float(raw["trajectory"].get("delay", 0.0))
    if not 0 < ramp < T - delay:
        raise AssumptionViolation("trajectory", "need 0 < ramp < T - delay")
    cfg = ExperimentConfig(
        raw=raw, domain=domain, modes=modes, frequencies=freqs, centers=centers, counts=counts,
        geometry=geometry, spacing=_per_cluster(cc["spacing"], n, "spacing"), p=float(cc["p"]),
        cap_tilde=_per_cluster(cc["cap_tilde"], n, "cap_tilde"), omega_m=omega_m, assignment=assignment,
        transducer_positions=positions, rho_c=float(tr.get("rho_c", 1.0)), amplitudes=amps, ramp=ramp,
        delay=delay, T=T, epsilons=tuple(float(e) for e in raw["epsilons"]), dt=raw["dt"],
        bands=raw["bands"], synthesis=raw["synthesis"], tolerances=tol, seed=int(raw["seed"]),
        diagnostics=diag,
    )
    # geometry is checked at the largest eps (widest clusters)
    ens = cfg.ensemble(max(cfg.epsilons))
    try:
        rep = validate_geometry(ens)
    except GeometryViolation as exc:
        raise AssumptionViolation("geometry", str(exc)) from exc
    diag["geometry"] = {"c1": rep.c1, "c2": rep.c2, "d_min": rep.d_min, "d_max": rep.d_max}
    loc = check_localization(domain, ens.centers.min(axis=0), ens.centers.max(axis=0), T)
    diag["localization_margin"] = loc.margin
    if not loc.ok:
        raise AssumptionViolation("localization", f"dist(D, boundary)={loc.distance:.6g} <= c0 T={domain.c0 * T:.6g}")
    arr = TransducerArray(positions, cfg.rho_c)
    try:
        arr.check_outside(domain)
    except GeometryViolation as exc:
        raise AssumptionViolation("transducers", str(exc)) from exc
    acc = transducer_accessibility(arr, centers, domain.c0, [(w * 0.99, w * 1.01) for w in freqs],
                                   tol["n_grid"])
    diag["accessibility_sigma_min"] = acc
    if not acc > tol["accessibility"]:
        raise AssumptionViolation("accessibility", f"sigma_min(G_tr) = {acc:.3e} on the target bands")
    return cfg


# -- pipeline -----------------------------------------------------------------

STAGES = ("tune", "poles", "bands", "ideal", "project", "synthesize", "traces", "simulate", "track")


def _stage(name):
    def wrap(fn):
        def run(*a, **k):
            try:
                return fn(*a, **k)
            except StageError:
                raise
            except Exception as exc:  # tag and re-raise
                raise StageError(name, exc) from exc
        return run
    return wrap


@dataclass
class EpsilonRun:
    """Everything one eps produces; ``record`` is the JSON-able summary."""

    eps: float
    record: dict
    poles: list = field(default_factory=list)
    gains: list = field(default_factory=list)
    control: object = None
    filter: BandFilter | None = None
    signals: dict = field(default_factory=dict)


@_stage("tune")
def _tuned_ensemble(cfg: ExperimentConfig, eps: float):
    ens = cfg.ensemble(eps)
    validate_geometry(ens)
    if cfg.omega_m is None:
        for a in range(cfg.N):
            target = cfg.frequencies[cfg.assignment[a]]
            ens = ens.with_cluster_omega(a, tune_cluster(ens, a, target, cfg.c0))
    return ens


@_stage("poles")
def _poles(ev: SMatrixEvaluator, cfg: ExperimentConfig):
    out, rows = [], []
    for a in range(cfg.N):
        ap = asymptotic_pole(ev.ens, a, cfg.c0)
        prin = principal_pole(ev, a)
        rest = [r for r in cluster_poles(ev, a) if abs(r.s - prin.s) > 1e-8 * abs(prin.s)]
        gaps = [abs(r.s.imag - prin.s.imag) for r in rest]
        res = _safe_residue(ev, prin, min(gaps) if gaps else None)
        prin = type(prin)(prin.s, a, res, prin.newton_residual)
        out += [prin] + rest
        wm = ev.ens.cluster_omega(a)
        rows.append({
            "cluster": a,
            "omega_m": wm,
            "s_re": prin.s.real,
            "s_im": prin.s.imag,
            "shift": abs(prin.s.imag - wm),
            "eta": prin.eta,
            "predicted_shift": ap.shift,
            "predicted_eta": ap.eta,
            "predicted_gap": ap.gap,
            "measured_gap": min(gaps) if gaps else None,
            "residue_norm": res,
            "subradiant_max_re": max((r.s.real for r in rest), default=None),
        })
    return out, rows


def _safe_residue(ev, pole, gap):
    try:
        return float(np.linalg.norm(residue_at(ev, pole, gap=gap), 2))
    except (ContourTooClose, NotSimple, np.linalg.LinAlgError):
        return float("nan")


def band_filter(cfg: ExperimentConfig, pole_rows, eps: float, g0: float | None = None) -> BandFilter:
    """Bands of half-width delta = f * min(g0 eps^(1-p) / 2, gap_pred / 2) around each target frequency."""
    b = cfg.bands
    scale = eps ** (1 - cfg.p)
    if g0 is None:
        g0 = b["g0"]
    if g0 is None:
        # measured pole gaps at this eps
        gaps = [r["measured_gap"] for r in pole_rows if r["measured_gap"]]
        g0 = min(gaps) / scale if gaps else min(r["predicted_gap"] for r in pole_rows) / scale
    intervals = []
    for j, w in enumerate(cfg.frequencies):
        rows = [r for r in pole_rows if cfg.assignment[r["cluster"]] == j]
        gp = min(r["predicted_gap"] for r in rows)
        delta = b["delta_factor"] * min(g0 * scale / 2, gp / 2)
        intervals.append((w - delta, w + delta))
    width = b["taper_factor"] * min(r["predicted_gap"] for r in pole_rows)
    return BandFilter(tuple(intervals), width)


def _dt(cfg: ExperimentConfig, system, dt_factor: float) -> float:
    if cfg.dt["policy"] == "fixed":
        dt = float(cfg.dt["value"])
    else:
        dt = default_dt(system)
    return dt * cfg.dt.get("factor", 1.0) * dt_factor


def ideal_split_error(cfg: ExperimentConfig, C, L, dt: float | None = None) -> float:
    """Relative sup modal-energy error of q^ideal fed straight into the modal system.

    Default step 2 pi / (256 omega_max); the source is sampled on the half
    step so RK4 stages read exact values.
    """
    w_max = float(cfg.modes.omegas.max())
    h = 2 * np.pi / (256 * w_max) if dt is None else dt
    half = reference_trajectory_gen(cfg.modes, cfg.amplitudes, cfg.ramp, cfg.T, h / 2, delay=cfg.delay)
    q = ideal_source(half, L, cfg.modes, cfg.c0)
    sim = integrate_modal(cfg.modes, C, q, cfg.c0, dt=h)
    sub = lambda s: Signal(s.t0, h, s.values[::2][: sim.p.n_samples])
    ref = ReferenceTrajectory(sub(half.p), sub(half.dp), sub(half.ddp))
    scale = float(np.max(modal_energy_norm(ref.p.values, ref.dp.values, cfg.modes.omegas**2)))
    return tracking_error(sim, ref) / scale if scale > 0 else 0.0


def clock_advance(positions, bubble_centers, c0):
    """a_m = distance from transducer m to its nearest bubble over c0 (all signal delays >= 0)."""
    r = np.linalg.norm(np.asarray(bubble_centers)[:, None, :] - positions[None, :, :], axis=-1)
    return r.min(axis=0) / c0


def run_tracking_experiment(cfg: ExperimentConfig, eps: float, dt_factor: float = 1.0, g0: float | None = None,
                            until: str = "track", with_gain: bool = True) -> EpsilonRun:
    """The end-to-end pipeline at one eps, optionally stopping after stage ``until``.

    Stages: tune, poles, bands, ideal, project, synthesize, traces, simulate, track.
    """
    if until not in STAGES:
        raise ValueError(f"unknown stage {until!r}")
    stop = STAGES.index(until)
    c0 = cfg.c0
    rec = {"eps": eps}
    run = EpsilonRun(eps, rec)
    ens = _tuned_ensemble(cfg, eps)
    rec["omega_m"] = [ens.cluster_omega(a) for a in range(cfg.N)]
    arr = TransducerArray(cfg.transducer_positions, cfg.rho_c,
                          clock_advance(cfg.transducer_positions, ens.centers, c0))
    ev = SMatrixEvaluator(ens, c0, arr)
    if stop < 1:
        return run
    run.poles, rec["poles"] = _poles(ev, cfg)
    if stop < 2:
        return run
    filt = _stage("bands")(band_filter)(cfg, rec["poles"], eps, g0)
    run.filter = filt
    rec["bands"] = [list(iv) for iv in filt.intervals]
    rec["taper_width"] = filt.width
    if with_gain:
        run.gains = _stage("bands")(gain_sweep)(ev, filt.intervals, cfg.tolerances["n_grid"])
        rec["gain"] = {
            "norm_Hb_max": max(g.norm_hb for g in run.gains),
            "norm_Hb_min": min(g.norm_hb for g in run.gains),
            "smin_Hext_min": min(g.smin_hext for g in run.gains),
            "smax_Hext_max": max(g.smax_hext for g in run.gains),
        }
    if stop < 3:
        return run
    system = build_system(ens, c0)
    dt = _dt(cfg, system, dt_factor)
    rec["dt"] = dt
    C = coupling_matrix(cfg.modes, cfg.centers)
    L = right_inverse(C, cfg.tolerances["sigma_c"])
    traj = _stage("ideal")(reference_trajectory_gen)(cfg.modes, cfg.amplitudes, cfg.ramp, cfg.T, dt,
                                                     delay=cfg.delay)
    q = _stage("ideal")(ideal_source)(traj, L, cfg.modes, c0)
    ref_scale = float(np.max(modal_energy_norm(traj.p.values, traj.dp.values, cfg.modes.omegas**2)))
    rec["ideal_tracking_error"] = _stage("ideal")(ideal_split_error)(cfg, C, L)
    run.signals["q_ideal"] = q
    if stop < 4:
        return run
    bl = _stage("project")(project_to_band_space)(q, cfg.assignment, filt)
    rec["discarded_fraction"] = bl.discarded_fraction.tolist()
    rec["band_leakage"] = bl.leakage.tolist()
    for a in range(cfg.N):
        if np.any(q.values[:, a]) and bl.discarded_fraction[a] >= 1.0 - 1e-12:
            raise StageError("project", EmptyBandInterval(
                f"empty band interval for cluster {a}: no frequency bin survives {filt.intervals}"))
    run.signals["q_target"] = bl.q
    if stop < 5:
        return run
    _, delay = arr.effective_delays(ens.centers, c0)
    lead = math.ceil((float(delay.max()) + cfg.synthesis["lead_extra"]) / dt - 1e-9) * dt
    ctrl = _stage("synthesize")(synthesize_controls)(bl, ev, t_start=-lead,
                                                     sigma_tol=cfg.synthesis["sigma_tol"])
    run.control = ctrl
    sm = ctrl.sigma_min
    rec["sigma_min_Hext"] = {"min": float(sm.min()) if sm.size else None,
                             "median": float(np.median(sm)) if sm.size else None,
                             "max": float(sm.max()) if sm.size else None, "bins": int(sm.size)}
    rec["identity_defect"] = ctrl.identity_defect
    rec["imag_residue"] = ctrl.imag_residue
    rec["control_cost"] = control_cost(ctrl)
    if stop < 6:
        return run
    u, udd = _stage("traces")(incident_traces)(arr, ctrl.lam, ens.centers, c0, lam_dd=ctrl.ddlam)
    if stop < 7:
        run.signals["trace_dd"] = udd
        return run
    Y = _stage("simulate")(integrate_delayed)(system, udd, dt=dt)
    Qfull = cluster_outputs(ens, source_amplitudes(ens, Y))
    i0 = int(round(lead / dt))
    nq = bl.q.n_samples
    if Qfull.n_samples < i0 + nq:
        raise StageError("simulate", ValueError("simulation shorter than the target window"))
    Q = Signal(bl.q.t0, dt, Qfull.values[i0:i0 + nq])
    run.signals["Q"] = Q
    if np.any(bl.q.values):
        rec["realization_error"] = _stage("simulate")(realization_error)(Q, bl)
    else:  # zero target: the error is zero iff nothing was emitted
        rec["realization_error"] = 0.0 if not np.any(Q.values) else math.inf
    if stop < 8:
        return run
    sim = _stage("track")(integrate_modal)(cfg.modes, C, Q, c0)
    ref_band = _stage("track")(integrate_modal)(cfg.modes, C, bl.q, c0)
    scale = float(np.max(modal_energy_norm(ref_band.p.values, ref_band.dp.values, ref_band.omega2)))
    err = tracking_error(sim, ref_band)
    rec["tracking_error_abs"] = err
    rec["tracking_error"] = err / scale if scale > 0 else 0.0
    raw = tracking_error(sim, traj)
    rec["tracking_error_raw"] = raw / ref_scale if ref_scale > 0 else 0.0
    run.signals["p_sim"] = sim.p
    return run


# -- sweeps and fits ----------------------------------------------------------

def loglog_fit(x, y) -> dict:
    """Least-squares fit y = c x^k; returns slope k and coefficient c."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return {"slope": None, "coefficient": None}
    k, b = np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)
    return {"slope": float(k), "coefficient": float(np.exp(b))}


@dataclass
class Report:
    summary: dict
    runs: list = field(default_factory=list)

    @classmethod
    def empty(cls) -> "Report":
        return cls({"report_version": REPORT_VERSION, "config": {}, "records": [], "fits": {},
                    "checks": [], "anchors": []})


def _run_one(args):
    cfg, eps, g0 = args
    return run_tracking_experiment(cfg, eps, g0=g0)


def estimate_g0(cfg: ExperimentConfig) -> float:
    """g0 from the measured intra-cluster pole gaps at the largest eps."""
    if cfg.bands["g0"] is not None:
        return float(cfg.bands["g0"])
    e = max(cfg.epsilons)
    run = run_tracking_experiment(cfg, e, until="poles")
    gaps = [r["measured_gap"] for r in run.record["poles"] if r["measured_gap"]]
    if not gaps:
        gaps = [r["predicted_gap"] for r in run.record["poles"]]
    return min(gaps) / e ** (1 - cfg.p)


def epsilon_sweep(cfg: ExperimentConfig, jobs: int = 1, dt_check: bool = False) -> Report:
    """Per-eps records, log-log fits and the sweep-level checks."""
    eps = sorted(cfg.epsilons, reverse=True)
    if len(eps) < 3:
        raise AssumptionViolation("sweep", "an eps sweep needs at least 3 values")
    g0 = estimate_g0(cfg)
    work = [(cfg, e, g0) for e in eps]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_run_one, work))
    else:
        runs = [_run_one(w) for w in work]
    recs = [r.record for r in runs]
    fits = {"g0": g0}
    for a in range(cfg.N):
        fits[f"pole_shift_cluster{a}"] = loglog_fit(eps, [r["poles"][a]["shift"] for r in recs])
        fits[f"damping_cluster{a}"] = loglog_fit(eps, [r["poles"][a]["eta"] for r in recs])
    fits["tracking_gamma_effective_model"] = loglog_fit(eps, [r["tracking_error"] for r in recs])
    fits["realization_beta"] = loglog_fit(eps, [r["realization_error"] for r in recs])
    costs = [r["control_cost"] for r in recs]
    fits["cost_ratio"] = max(costs) / min(costs)
    checks = []

    def check(name, value, ok, criterion):
        checks.append({"name": name, "value": value, "pass": bool(ok), "criterion": criterion})

    r_err = [r["realization_error"] for r in recs]
    t_err = [r["tracking_error"] for r in recs]
    check("identity_defect", max(r["identity_defect"] for r in recs),
          max(r["identity_defect"] for r in recs) < 1e-10, "H_ext H_ext^+ = I to 1e-10 on used bins")
    check("realization_monotone", r_err, all(b < a for a, b in zip(r_err, r_err[1:])),
          "realization error decreases as eps decreases")
    check("cost_bounded", fits["cost_ratio"], fits["cost_ratio"] < 2, "control cost max/min < 2")
    check("tracking_monotone", t_err, all(b < a for a, b in zip(t_err, t_err[1:])),
          "projected tracking error strictly decreases as eps decreases")
    g = fits["tracking_gamma_effective_model"]["slope"]
    check("tracking_gamma_positive", g, g is not None and g > 0, "effective-model gamma > 0")
    for a in range(cfg.N):
        s = fits[f"pole_shift_cluster{a}"]["slope"]
        check(f"pole_shift_slope_cluster{a}", s, s is not None and abs(s - (1 - cfg.p)) < 0.05,
              "pole-shift slope = 1 - p +- 0.05")
    ideal = max(r["ideal_tracking_error"] for r in recs)
    check("ideal_tracking", ideal, ideal < IDEAL_TOL,
          f"q^ideal reproduces the reference to integrator tolerance ({IDEAL_TOL:g})")
    if dt_check:
        e_min = min(eps)
        fine = run_tracking_experiment(cfg, e_min, dt_factor=0.5, g0=g0, with_gain=False).record
        base = recs[-1]["tracking_error"]
        change = abs(fine["tracking_error"] - base) / base if base > 0 else 0.0
        fits["dt_refinement_change"] = change
        check("dt_refinement", change, change < 0.1, "halving dt changes the smallest-eps error by < 10%")
    summary = {
        "report_version": REPORT_VERSION,
        "config": {"name": cfg.raw.get("name", ""), "seed": cfg.seed, "epsilons": eps,
                   "schema_version": cfg.raw["schema_version"]},
        "records": recs,
        "fits": fits,
        "checks": checks,
        "anchors": ANCHORS,
    }
    return Report(summary, runs)


ANCHORS = [
    {"figure": "poles[].s_re, s_im", "anchor": "principal cluster pole near i omega_M (red shift and damping)"},
    {"figure": "fits.pole_shift_cluster*", "anchor": "fine shift law |Im s - omega_M| ~ omega^3 C mu_1 eps^(1-p) / (8 pi)"},
    {"figure": "fits.damping_cluster*", "anchor": "radiative damping law eta ~ omega^3 M_11 eps / 2"},
    {"figure": "records[].gain", "anchor": "resonant gain c eps/eta <= sup ||H_b|| on the Minnaert band"},
    {"figure": "records[].identity_defect", "anchor": "right-inverse identity H_ext H_ext^+ = I_N"},
    {"figure": "records[].realization_error, fits.realization_beta", "anchor": "approximate right inverse ||T R q - q|| <= C eps^beta ||q||"},
    {"figure": "records[].control_cost, fits.cost_ratio", "anchor": "bounded realization operator on resonant bands"},
    {"figure": "records[].ideal_tracking_error", "anchor": "exact finite-band tracking with ideal point sources"},
    {"figure": "records[].tracking_error, fits.tracking_gamma_effective_model", "anchor": "end-to-end tracking <= C_T eps^gamma (effective-model gamma)"},
]


# -- report emission ----------------------------------------------------------

def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))


def _clean(o):
    """NaN/inf -> None so the JSON is standard."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        return float(o) if math.isfinite(o) else None
    return o


def eps_tag(eps: float) -> str:
    return f"eps_{eps:.6g}"


def emit_run_artifacts(run: EpsilonRun, out_dir) -> dict:
    """Write one eps run's CSVs; returns {name: relative path}."""
    out = Path(out_dir)
    sub = eps_tag(run.eps)
    arts = {}
    if run.poles:
        arts["poles"] = f"{sub}/poles.csv"
        write_pole_table(run.poles, out / arts["poles"])
    if run.gains:
        arts["gain"] = f"{sub}/gain.csv"
        write_gain_table(run.gains, out / arts["gain"])
    if run.control is not None:
        arts["control"] = f"{sub}/control.csv"
        write_control(run.control, run.filter, out / arts["control"])
        arts["control_sidecar"] = f"{sub}/control.json"
    for name, sig in sorted(run.signals.items()):
        arts[name] = f"{sub}/{name}.csv"
        write_csv(sig, out / arts[name])
    return arts


def emit_report(report: Report, out_dir) -> dict:
    """summary.json, per-stage CSVs and anchors.txt; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = json.loads(json.dumps(report.summary, default=_json_default))
    for run, rec in zip(report.runs, summary["records"]):
        rec["artifacts"] = emit_run_artifacts(run, out)
    summary = _clean(summary)
    jsonschema.validate(summary, REPORT_SCHEMA)
    paths = {"summary": out / "summary.json", "anchors": out / "anchors.txt"}
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    lines = ["figure of merit | anchor"]
    lines += [f"{a['figure']} | {a['anchor']}" for a in summary["anchors"]]
    paths["anchors"].write_text("\n".join(lines) + "\n")
    return paths


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "minnaert_control sweep report",
    "type": "object",
    "required": ["report_version", "config", "records", "fits", "checks", "anchors"],
    "properties": {
        "report_version": {"const": REPORT_VERSION},
        "config": {"type": "object"},
        "records": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["eps"],
                "properties": {
                    "eps": {"type": "number"},
                    "poles": {"type": "array", "items": {"type": "object", "required": ["cluster", "s_re", "s_im", "eta"]}},
                    "realization_error": {"type": ["number", "null"]},
                    "tracking_error": {"type": ["number", "null"]},
                    "control_cost": {"type": ["number", "null"]},
                    "artifacts": {"type": "object", "additionalProperties": {"type": "string"}},
                },
            },
        },
        "fits": {"type": "object"},
        "checks": {
            "type": "array",
            "items": {"type": "object", "required": ["name", "value", "pass", "criterion"],
                      "properties": {"pass": {"type": "boolean"}}},
        },
        "anchors": {"type": "array", "items": {"type": "object", "required": ["figure", "anchor"]}},
    },
}


def genericity_probe(cfg: ExperimentConfig, n_samples: int = 1000) -> float:
    return rank_probe(cfg.modes, cfg.N, n_samples, cfg.seed, cfg.tolerances["sigma_c"])
