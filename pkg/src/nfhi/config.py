"""Experiment configuration: flat dotted keys with JSON values.

A config file holds one ``key = value`` pair per line, for example::

    geometry.n = 128
    sweep.snr_db = [0, 10, 20, 30]
    scene.targets = [[0.2618, 10], [-0.2618, 18]]

Values are parsed as JSON; anything that is not valid JSON is kept as a
bare string. ``#`` starts a comment. Every key can be overridden on the
command line by a flag of the same name (``--geometry.n 256``), and the
``NFHI_SEED`` environment variable overrides ``seed``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import InvalidArgument

__all__ = ["DEFAULTS", "SCHEMES", "parse_value", "parse_config_text", "load_config", "ExperimentConfig"]

SCHEMES = ("proposed", "coarse", "bcd")

# the desk-scale scene: three targets at (pi/12, 10 m), (-pi/12, 18 m), (-pi/6, 8 m)
DEFAULTS: dict[str, Any] = {
    "seed": 2024,
    "trials": 50,
    "workers": 1,
    "output": "sweep.csv",
    "geometry.n": 128,
    "geometry.wavelength": 0.01,
    "geometry.spacing": None,
    "scene.targets": [[float(np.pi / 12), 10.0], [float(-np.pi / 12), 18.0], [float(-np.pi / 6), 8.0]],
    "scene.t0": 100,
    "scene.model": "fresnel",
    "sweep.snr_db": [20.0],
    "sweep.p_fault": [0.02],
    "sweep.n": [],
    "sweep.range": [],
    "schemes": ["proposed", "coarse", "bcd"],
    "bounds": False,
    "bounds.restarts": 5,
    "proposed.estimate_k": False,
    "proposed.max_alternations": 10,
    "proposed.grid_step": 1e-3,
    "ista.step": 1e-4,
    "ista.reg": 0.01,
    "ista.tol": 1e-6,
    "ista.max_iters": 5000,
    "ista.threshold": 0.15,
    "ista.noise_factor": 4.0,
    "ista.outlier_factor": 6.0,
    "fine.smoothing_m": None,
    "fine.angle_window": 0.05,
    "fine.angle_step": 1e-4,
    "fine.range_window": 0.3,
    "fine.range_points": 400,
    "bcd.angle_points": 2000,
    "bcd.range_points": 400,
    "bcd.tol": 1e-6,
    "bcd.max_sweeps": 50,
    "metrics.max_angle_error": 0.2,
}

# large-scale overrides, selected with --full-scale
FULL_SCALE = {"trials": 500, "geometry.n": 256}


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config_text(text: str) -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidArgument(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise InvalidArgument(f"config line {lineno}: empty key")
        out[key] = parse_value(value)
    return out


def load_config(path=None, overrides: dict[str, Any] | None = None, env=None) -> "ExperimentConfig":
    """Defaults, then the file, then CLI overrides, then ``NFHI_SEED``."""
    flat = dict(DEFAULTS)
    if path is not None:
        with open(path) as fh:
            flat.update(parse_config_text(fh.read()))
    flat.update(overrides or {})
    env = os.environ if env is None else env
    if env.get("NFHI_SEED"):
        try:
            flat["seed"] = int(env["NFHI_SEED"])
        except ValueError as exc:
            raise InvalidArgument("NFHI_SEED must be an integer") from exc
    return ExperimentConfig.from_flat(flat)


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict[str, Any] = field(default_factory=lambda: dict(DEFAULTS))

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "ExperimentConfig":
        unknown = sorted(set(flat) - set(DEFAULTS))
        if unknown:
            raise InvalidArgument(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls({k: flat.get(k, DEFAULTS[k]) for k in DEFAULTS})
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def replace(self, **updates) -> "ExperimentConfig":
        """Copy with dotted keys given as ``geometry__n=...``."""
        flat = dict(self.values)
        flat.update({k.replace("__", "."): v for k, v in updates.items()})
        return ExperimentConfig.from_flat(flat)

    def validate(self):
        v = self.values
        if int(v["trials"]) < 1:
            raise InvalidArgument("trials must be >= 1")
        for n in self.n_values:
            if int(n) % 2 or int(n) < 4:
                raise InvalidArgument(f"antenna count {n} must be even and >= 4")
        for key in ("sweep.snr_db", "sweep.p_fault"):
            if not _as_list(v[key]):
                raise InvalidArgument(f"{key} must be non-empty")
        for p in _as_list(v["sweep.p_fault"]):
            if not 0 <= float(p) < 1:
                raise InvalidArgument("p_fault values must lie in [0, 1)")
        targets = v["scene.targets"]
        if not targets or any(len(t) not in (2, 4) for t in targets):
            raise InvalidArgument("scene.targets entries are [theta, r] or [theta, r, re(beta), im(beta)]")
        if _as_list(v["sweep.range"]) and len(targets) != 1:
            raise InvalidArgument("sweep.range needs a single-target scene")
        bad = sorted(set(_as_list(v["schemes"])) - set(SCHEMES))
        if bad:
            raise InvalidArgument(f"unknown scheme(s) {bad}; choose from {SCHEMES}")
        if int(v["scene.t0"]) < 1:
            raise InvalidArgument("scene.t0 must be >= 1")

    @property
    def n_values(self) -> list[int]:
        return [int(n) for n in (_as_list(self.values["sweep.n"]) or [self.values["geometry.n"]])]

    @property
    def schemes(self) -> list[str]:
        chosen = set(_as_list(self.values["schemes"]))
        return [s for s in SCHEMES if s in chosen]

    def sweep_points(self) -> list[dict[str, float]]:
        """Cartesian product of the sweep axes in a fixed nesting order."""
        ranges = [float(r) for r in _as_list(self.values["sweep.range"])] or [None]
        pts = []
        for n in self.n_values:
            for r in ranges:
                for p in _as_list(self.values["sweep.p_fault"]):
                    for s in _as_list(self.values["sweep.snr_db"]):
                        pts.append({"n": n, "range": r, "p_fault": float(p), "snr_db": float(s)})
        return pts

    def to_lines(self) -> list[str]:
        return [f"{k} = {json.dumps(self.values[k])}" for k in sorted(self.values)]
