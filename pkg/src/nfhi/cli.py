"""Command-line entry point: ``nfhi {simulate,sweep,bounds,diagnose}``.

Any config key can be passed as ``--dotted.key value``; values are JSON.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import DEFAULTS, FULL_SCALE, load_config, parse_value
from .errors import InvalidArgument, NfhiError
from .harness import run_trial, sweep


def _overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise InvalidArgument(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise InvalidArgument(f"missing value for --{key}")
            val = extra[i + 1]
            i += 2
        if key not in DEFAULTS:
            raise InvalidArgument(f"unknown option --{key}")
        out[key] = parse_value(val)
    return out


def _jsonable(x):
    if isinstance(x, np.ndarray):
        x = x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    if isinstance(x, list):
        return [_jsonable(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def _dump_spectra(res, directory):
    os.makedirs(directory, exist_ok=True)
    spec = res.proposed.spectra
    for kind, grids, vals in (("angle", spec.angle_grids, spec.angle_spectra),
                              ("range", spec.range_grids, spec.range_spectra)):
        for k, (g, v) in enumerate(zip(grids, vals)):
            np.savetxt(os.path.join(directory, f"{kind}_spectrum_{k}.csv"), np.column_stack([g, v]),
                       delimiter=",", header="grid,value", comments="")


def cmd_simulate(cfg, args):
    point = cfg.sweep_points()[0]
    res = run_trial(cfg, point, args.trial)
    out = {
        "point": point,
        "trial": args.trial,
        "truth": [[t.theta, t.range] for t in res.truth],
        "true_faults": res.hi.faulty_indices,
        "outcomes": {k: {"thetas": v.thetas, "ranges": v.ranges, "error": v.error} for k, v in res.outcomes.items()},
    }
    if res.phase1 is not None:
        out["detected_faults"] = res.phase1.detected
        out["phase1_sweeps"] = res.phase1.sweeps
    if res.calibration is not None:
        out["bias_estimates"] = res.calibration.bias_estimates
    if res.bcd is not None:
        out["bcd_sweeps"] = res.bcd.iterations
    if res.bounds is not None:
        out["bounds"] = res.bounds.as_row()
    print(json.dumps(_jsonable(out), indent=2))
    if args.dump_spectra and res.proposed is not None:
        _dump_spectra(res, args.dump_spectra)
    return 0


def _progress(point, row):
    parts = [f"{k}={v}" for k, v in point.items() if v is not None]
    for s, m in row.schemes.items():
        parts.append(f"{s}: theta={m['theta_rmse']:.3g} r={m['r_rmse']:.3g} failed={m['failed']}")
    print("  ".join(parts), file=sys.stderr)


def cmd_sweep(cfg, args):
    sweep(cfg, cfg["output"], progress=_progress)
    print(cfg["output"])
    return 0


def cmd_bounds(cfg, args):
    sweep(cfg, cfg["output"], schemes=[], with_bounds=True)
    print(cfg["output"])
    return 0


def cmd_diagnose(cfg, args):
    point = cfg.sweep_points()[0]
    res = run_trial(cfg, point, args.trial, schemes=["coarse"], with_bounds=False)
    true = set(res.hi.faulty_indices.tolist())
    out = {"point": point, "trial": args.trial, "true_faults": sorted(true)}
    if res.phase1 is None:
        out["error"] = res.outcomes["coarse"].error
    else:
        det = set(res.phase1.detected.tolist())
        out.update({
            "detected_faults": sorted(det),
            "false_alarms": sorted(det - true),
            "missed": sorted(true - det),
            "sweeps": res.phase1.sweeps,
            "history": [list(h) for h in res.phase1.history],
            "threshold": res.phase1.faults.threshold,
            "coarse_thetas": res.phase1.coarse.thetas,
            "coarse_ranges": res.phase1.coarse.ranges,
        })
    print(json.dumps(_jsonable(out), indent=2))
    return 0


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "bounds": cmd_bounds, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nfhi", description="Near-field localization under antenna phase faults.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "run one trial and dump its estimates"),
                        ("sweep", "Monte Carlo curves to CSV"),
                        ("bounds", "bound curves only, to CSV"),
                        ("diagnose", "fault detection and coarse stage only")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="config file of 'key = value' lines")
        sp.add_argument("--full-scale", action="store_true", help="500 trials on 256 antennas")
        if name in ("simulate", "diagnose"):
            sp.add_argument("--trial", type=int, default=0)
        if name == "simulate":
            sp.add_argument("--dump-spectra", metavar="DIR")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = dict(FULL_SCALE) if args.full_scale else {}
        overrides.update(_overrides(extra))
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, args)
    except (NfhiError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
