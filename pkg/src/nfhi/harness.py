"""Seeded Monte Carlo trials, metrics and CSV sweeps.

Each trial draws its fault pattern and its probes/noise from streams keyed
by ``(seed, trial, stage)`` only, so every sweep point reuses the same
random draws (common random numbers) and trials never share a stream.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bcd import BcdConfig, BcdState, bcd_run
from .bounds import BoundsReport, compute_bounds
from .calibration import CalibrationResult, calibrate
from .config import ExperimentConfig
from .errors import InvalidArgument, NfhiError
from .fine import FineConfig, fine_localize
from .pipeline import LocalizationResult, Phase1Result, ProposedConfig, run_phase1
from .scene import (ArrayGeometry, HIProfile, SnapshotBlock, Target, noise_variance_for_snr,
                    sample_hi_profile, synthesize)
from .sparse_fault import IstaConfig

__all__ = [
    "SCHEMA_VERSION",
    "STAGE_HI",
    "STAGE_SIGNAL",
    "STAGE_BOUNDS",
    "SchemeOutcome",
    "TrialResult",
    "trial_seed",
    "build_scene",
    "run_trial",
    "associate",
    "nmse",
    "MetricsRow",
    "aggregate",
    "run_point",
    "sweep",
    "format_csv",
]

SCHEMA_VERSION = 1
STAGE_HI, STAGE_SIGNAL, STAGE_BOUNDS = 1, 2, 3
SCHEME_FIELDS = ("trials", "failed", "xi_rmse", "theta_rmse", "r_rmse", "nmse")
BOUND_FIELDS = tuple(f"r_{m}_{a}" for m in ("crb", "mcrb", "lb", "bias") for a in ("angle", "range"))


def trial_seed(master: int, trial: int, stage: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(trial), int(stage)])


@dataclass
class SchemeOutcome:
    thetas: np.ndarray | None = None
    ranges: np.ndarray | None = None
    hi_vector: np.ndarray | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class TrialResult:
    trial: int
    truth: list[Target]
    hi: HIProfile
    block: SnapshotBlock
    outcomes: dict[str, SchemeOutcome] = field(default_factory=dict)
    phase1: Phase1Result | None = None
    proposed: LocalizationResult | None = None
    calibration: CalibrationResult | None = None
    bcd: BcdState | None = None
    bounds: BoundsReport | None = None


def _ista_cfg(cfg: ExperimentConfig) -> IstaConfig:
    return IstaConfig(step=cfg["ista.step"], reg=cfg["ista.reg"], tol=cfg["ista.tol"],
                      max_iters=int(cfg["ista.max_iters"]), threshold=cfg["ista.threshold"],
                      noise_factor=cfg["ista.noise_factor"], outlier_factor=cfg["ista.outlier_factor"])


def _proposed_cfg(cfg: ExperimentConfig) -> ProposedConfig:
    fine = FineConfig(smoothing_M=cfg["fine.smoothing_m"], angle_window=cfg["fine.angle_window"],
                      angle_step=cfg["fine.angle_step"], range_window=cfg["fine.range_window"],
                      range_points=int(cfg["fine.range_points"]))
    return ProposedConfig(ista=_ista_cfg(cfg), fine=fine, coarse_grid_step=cfg["proposed.grid_step"],
                          max_alternations=int(cfg["proposed.max_alternations"]),
                          estimate_K=bool(cfg["proposed.estimate_k"]))


def _bcd_cfg(cfg: ExperimentConfig) -> BcdConfig:
    return BcdConfig(ista=_ista_cfg(cfg), angle_points=int(cfg["bcd.angle_points"]),
                     range_points=int(cfg["bcd.range_points"]), tol=cfg["bcd.tol"],
                     max_sweeps=int(cfg["bcd.max_sweeps"]))


def build_scene(cfg: ExperimentConfig, point: dict) -> tuple[ArrayGeometry, list[Target]]:
    g = ArrayGeometry(int(point["n"]), float(cfg["geometry.wavelength"]), cfg["geometry.spacing"])
    targets = []
    for t in cfg["scene.targets"]:
        gain = complex(t[2], t[3]) if len(t) == 4 else 1 + 0j
        r = float(point["range"]) if point.get("range") is not None else float(t[1])
        targets.append(Target(float(t[0]), r, gain))
    return g, targets


def run_trial(cfg: ExperimentConfig, point: dict, trial: int, schemes=None,
              with_bounds: bool | None = None) -> TrialResult:
    """Synthesize one block and run the requested schemes on it.

    Module errors inside a scheme are recorded on its outcome instead of
    propagating, so one failing scheme does not void the others.
    """
    schemes = cfg.schemes if schemes is None else list(schemes)
    with_bounds = bool(cfg["bounds"]) if with_bounds is None else with_bounds
    seed = int(cfg["seed"])
    g, targets = build_scene(cfg, point)
    hi = sample_hi_profile(g, point["p_fault"], trial_seed(seed, trial, STAGE_HI))
    s2 = noise_variance_for_snr(point["snr_db"], targets)
    block = synthesize(g, targets, hi, int(cfg["scene.t0"]), s2, trial_seed(seed, trial, STAGE_SIGNAL),
                       model=cfg["scene.model"])
    res = TrialResult(trial, targets, hi, block)
    K = len(targets)
    pcfg = _proposed_cfg(cfg)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if "proposed" in schemes or "coarse" in schemes:
            try:
                p1 = run_phase1(block, g, K, pcfg)
                res.phase1 = p1
                c1 = np.ones(g.n_antennas, complex)
                c1[p1.detected] = p1.faults.hi_vector[p1.detected]
                res.outcomes["coarse"] = SchemeOutcome(p1.coarse.thetas, p1.coarse.ranges, c1)
            except (NfhiError, np.linalg.LinAlgError) as exc:
                res.outcomes["coarse"] = SchemeOutcome(error=f"{type(exc).__name__}: {exc}")
            if "proposed" in schemes:
                if res.phase1 is None:
                    res.outcomes["proposed"] = SchemeOutcome(error=res.outcomes["coarse"].error)
                else:
                    try:
                        co = res.phase1.coarse
                        cal = calibrate(block, g, res.phase1.detected, co.thetas, co.ranges, co.gains)
                        spec = fine_localize(block.received, g, cal.hi_vector, co.thetas, co.ranges, pcfg.fine)
                        res.calibration = cal
                        res.proposed = LocalizationResult(co.thetas, co.ranges, co.gains, spec.thetas,
                                                          spec.ranges, res.phase1, cal, spec)
                        res.outcomes["proposed"] = SchemeOutcome(spec.thetas, spec.ranges, cal.hi_vector)
                    except (NfhiError, np.linalg.LinAlgError) as exc:
                        res.outcomes["proposed"] = SchemeOutcome(error=f"{type(exc).__name__}: {exc}")
            if "coarse" not in schemes:
                res.outcomes.pop("coarse", None)
        if "bcd" in schemes:
            try:
                st = bcd_run(block, g, _bcd_cfg(cfg))
                res.bcd = st
                res.outcomes["bcd"] = SchemeOutcome(st.thetas, st.ranges, st.hi_vector)
            except (NfhiError, np.linalg.LinAlgError) as exc:
                res.outcomes["bcd"] = SchemeOutcome(error=f"{type(exc).__name__}: {exc}")
        if with_bounds and s2 > 0:
            try:
                res.bounds = compute_bounds(g, [t.gain for t in targets], [t.theta for t in targets],
                                            [t.range for t in targets], block.probes, hi.coefficients, s2,
                                            restarts=int(cfg["bounds.restarts"]),
                                            seed=trial_seed(seed, trial, STAGE_BOUNDS))
            except (NfhiError, np.linalg.LinAlgError):
                res.bounds = None
    return res


def associate(est_thetas, est_ranges, true_thetas, true_ranges, max_error: float = 0.2):
    """Greedy nearest-angle matching, truth taken in ascending angle.

    Returns ``(d_theta, d_range, d_xi)`` per true target in the input
    order, or ``None`` when a match lies beyond ``max_error`` rad.
    """
    et, er = np.asarray(est_thetas, float), np.asarray(est_ranges, float)
    tt, tr = np.asarray(true_thetas, float), np.asarray(true_ranges, float)
    if et.shape != tt.shape or er.shape != tr.shape or et.shape != er.shape:
        raise InvalidArgument(f"{et.size} estimate(s) for {tt.size} target(s)")
    free = list(range(et.size))
    match = np.empty(tt.size, dtype=int)
    for k in np.argsort(tt, kind="stable"):
        j = min(free, key=lambda i: (abs(et[i] - tt[k]), i))
        if abs(et[j] - tt[k]) > max_error:
            return None
        match[k] = j
        free.remove(j)
    dt = et[match] - tt
    dr = er[match] - tr
    ex = er[match] * np.cos(et[match]) - tr * np.cos(tt)
    ey = er[match] * np.sin(et[match]) - tr * np.sin(tt)
    return dt, dr, np.hypot(ex, ey)


def nmse(c_hat, c) -> float:
    c = np.asarray(c)
    return float(np.sum(np.abs(np.asarray(c_hat) - c) ** 2) / np.sum(np.abs(c) ** 2))


@dataclass
class _TrialSummary:
    """Picklable per-trial digest used for parallel reduction."""
    errors: dict  # scheme -> (d_theta, d_range, d_xi, nmse) or None when failed
    bounds: dict | None


def _summarize(res: TrialResult, max_error: float) -> _TrialSummary:
    tt = [t.theta for t in res.truth]
    tr = [t.range for t in res.truth]
    errors = {}
    for name, out in res.outcomes.items():
        if not out.ok:
            errors[name] = None
            continue
        a = associate(out.thetas, out.ranges, tt, tr, max_error)
        if a is None or not all(np.all(np.isfinite(x)) for x in a):
            errors[name] = None
            continue
        errors[name] = (*a, nmse(out.hi_vector, res.hi.coefficients))
    return _TrialSummary(errors, res.bounds.as_row() if res.bounds is not None else None)


def _trial_task(args):
    cfg, point, trial, schemes, with_bounds = args
    res = run_trial(cfg, point, trial, schemes, with_bounds)
    return _summarize(res, float(cfg["metrics.max_angle_error"]))


@dataclass
class MetricsRow:
    point: dict
    schemes: dict  # scheme -> dict of SCHEME_FIELDS
    bounds: dict | None = None
    bounds_trials: int = 0

    def flat(self, scheme_order, with_bounds: bool) -> dict:
        row = {"snr_db": self.point["snr_db"], "p_fault": self.point["p_fault"],
               "n_antennas": self.point["n"], "range": self.point.get("range")}
        for s in scheme_order:
            for f in SCHEME_FIELDS:
                row[f"{s}_{f}"] = self.schemes[s][f]
        if with_bounds:
            for f in BOUND_FIELDS:
                row[f] = (self.bounds or {}).get(f, math.nan)
            row["bounds_trials"] = self.bounds_trials
        return row


def aggregate(point: dict, summaries: list[_TrialSummary], schemes) -> MetricsRow:
    """Deterministic reduction over an ordered trial list."""
    per = {}
    for s in schemes:
        ok = [x.errors[s] for x in summaries if x.errors.get(s) is not None]
        n_ok = len(ok)
        if n_ok:
            dt = np.concatenate([e[0] for e in ok])
            dr = np.concatenate([e[1] for e in ok])
            dx = np.concatenate([e[2] for e in ok])
            stats = {"xi_rmse": float(np.sqrt(np.mean(dx**2))), "theta_rmse": float(np.sqrt(np.mean(dt**2))),
                     "r_rmse": float(np.sqrt(np.mean(dr**2))), "nmse": float(np.mean([e[3] for e in ok]))}
        else:
            stats = dict.fromkeys(("xi_rmse", "theta_rmse", "r_rmse", "nmse"), math.nan)
        per[s] = {"trials": n_ok, "failed": len(summaries) - n_ok, **stats}
    b = [x.bounds for x in summaries if x.bounds is not None]
    bounds = {f: float(np.mean([r[f] for r in b])) for f in BOUND_FIELDS} if b else None
    return MetricsRow(point, per, bounds, len(b))


def run_point(cfg: ExperimentConfig, point: dict, schemes=None, with_bounds=None, pool=None) -> MetricsRow:
    schemes = cfg.schemes if schemes is None else list(schemes)
    with_bounds = bool(cfg["bounds"]) if with_bounds is None else with_bounds
    tasks = [(cfg, point, t, schemes, with_bounds) for t in range(int(cfg["trials"]))]
    summaries = list(pool.map(_trial_task, tasks)) if pool is not None else [_trial_task(t) for t in tasks]
    return aggregate(point, summaries, schemes)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def format_csv(cfg: ExperimentConfig, rows: list[MetricsRow], schemes, with_bounds: bool) -> str:
    buf = io.StringIO()
    buf.write(f"# nfhi sweep schema=v{SCHEMA_VERSION}\n")
    buf.write(f"# seed = {int(cfg['seed'])}\n")
    for line in cfg.to_lines():
        buf.write(f"# config {line}\n")
    cols = ["snr_db", "p_fault", "n_antennas", "range"]
    cols += [f"{s}_{f}" for s in schemes for f in SCHEME_FIELDS]
    if with_bounds:
        cols += list(BOUND_FIELDS) + ["bounds_trials"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        flat = r.flat(schemes, with_bounds)
        w.writerow([_fmt(flat[c]) for c in cols])
    return buf.getvalue()


def sweep(cfg: ExperimentConfig, path=None, schemes=None, with_bounds=None, progress=None) -> list[MetricsRow]:
    """Run every sweep point and write the CSV to ``path`` (if given).

    The output path is opened before any computation so an unwritable
    location fails fast.
    """
    schemes = cfg.schemes if schemes is None else [s for s in cfg.schemes if s in schemes] or list(schemes)
    with_bounds = bool(cfg["bounds"]) if with_bounds is None else with_bounds
    fh = open(path, "w", newline="") if path is not None else None
    try:
        workers = int(cfg["workers"])
        pool = ProcessPoolExecutor(workers) if workers > 1 else None
        try:
            rows = []
            for point in cfg.sweep_points():
                rows.append(run_point(cfg, point, schemes, with_bounds, pool))
                if progress is not None:
                    progress(point, rows[-1])
        finally:
            if pool is not None:
                pool.shutdown()
        if fh is not None:
            fh.write(format_csv(cfg, rows, schemes, with_bounds))
    finally:
        if fh is not None:
            fh.close()
    return rows
