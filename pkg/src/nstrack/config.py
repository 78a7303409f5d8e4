"""Experiment configuration read from TOML files."""

from dataclasses import dataclass, replace

import numpy as np
import tomli

from .adjoint import TrackingData
from .elements import ElementPair
from .errors import ConfigError, InputError
from .optimize import ControlProblem, Scheme, Strategy

# Benchmark tracking data: bounds become active with both signs in both components.
DEFAULT_POINTS = ((0.25, 0.25), (0.5, 0.75), (0.75, 0.4))
DEFAULT_TARGETS = ((1.0, -1.0), (-1.0, 1.0), (1.0, 1.0))


@dataclass(frozen=True)
class ExperimentConfig:
    rect: tuple = (0.0, 0.0, 1.0, 1.0)
    levels: tuple = None          # None: the subcommand's default levels
    reference_level_offset: int = 2
    pair: ElementPair = ElementPair.TaylorHood
    scheme: Scheme = Scheme.FullyDiscrete
    nu: float = 1.0
    alpha: float = 0.1
    lower: tuple = (-0.75, -0.75)
    upper: tuple = (0.75, 0.75)
    points: tuple = DEFAULT_POINTS
    targets: tuple = DEFAULT_TARGETS
    newton_tol: float = 1e-10
    opt_tol: float = 1e-10
    opt_max_iter: int = 200
    strategy: Strategy = Strategy.ProjectedGradientArmijo
    seed: int = 0
    out: str = None
    format: str = "csv"

    def __post_init__(self):
        x0, y0, x1, y1 = self.rect
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("domain rectangle needs x1 > x0 and y1 > y0")
        if self.levels is not None:
            lv = tuple(tuple(int(n) for n in v) for v in self.levels)
            if not lv or any(len(v) != 2 or v[0] < 1 or v[1] < 1 for v in lv):
                raise ConfigError("mesh levels must be positive (nx, ny) pairs")
            if any(b[0] <= a[0] or b[1] <= a[1] for a, b in zip(lv, lv[1:])):
                raise ConfigError("mesh levels must be strictly increasing")
            object.__setattr__(self, "levels", lv)
        if self.reference_level_offset < 1:
            raise ConfigError("reference level must be finer than all tested levels")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown output format {self.format!r}")
        if len(self.points) != len(self.targets):
            raise ConfigError("tracking points and targets differ in length")

    def with_default_levels(self, levels):
        return self if self.levels is not None else replace(self, levels=tuple(levels))

    @property
    def reference_level(self):
        if self.levels is None:
            raise ConfigError("no mesh levels configured")
        f = 2 ** self.reference_level_offset
        return (self.levels[-1][0] * f, self.levels[-1][1] * f)

    def tracking(self):
        return TrackingData(np.array(self.points, dtype=float).reshape(-1, 2),
                            np.array(self.targets, dtype=float).reshape(-1, 2))

    def problem(self, scheme=None, pair=None):
        try:
            return ControlProblem(self.nu, self.alpha, self.lower, self.upper, self.tracking(),
                                  scheme or self.scheme, pair or self.pair)
        except InputError as exc:
            raise ConfigError(str(exc)) from exc

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        try:
            return replace(self, **kw)
        except (TypeError, InputError) as exc:
            raise ConfigError(str(exc)) from exc


_KEYS = {
    "domain.rect": "rect",
    "mesh.levels": "levels",
    "mesh.reference_level_offset": "reference_level_offset",
    "problem.pair": "pair",
    "problem.scheme": "scheme",
    "problem.nu": "nu",
    "problem.alpha": "alpha",
    "problem.lower": "lower",
    "problem.upper": "upper",
    "tracking.points": "points",
    "tracking.targets": "targets",
    "solver.newton_tol": "newton_tol",
    "solver.opt_tol": "opt_tol",
    "solver.opt_max_iter": "opt_max_iter",
    "solver.strategy": "strategy",
    "seed": "seed",
    "output.path": "out",
    "output.format": "format",
}


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


def parse_levels(value):
    """``"8,16,32"`` or a list of ints / pairs -> tuple of (nx, ny)."""
    if isinstance(value, str):
        value = [v for v in value.split(",") if v.strip()]
    out = []
    for v in value:
        try:
            if isinstance(v, (list, tuple)):
                nx, ny = (int(t) for t in v)
            else:
                nx = ny = int(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid mesh level {v!r}") from exc
        out.append((nx, ny))
    if not out:
        raise ConfigError("no mesh levels given")
    return tuple(out)


def config_from_mapping(data):
    kw = {}
    for key, value in _flatten(data):
        if key not in _KEYS:
            raise ConfigError(f"unknown configuration key {key!r}")
        kw[_KEYS[key]] = value
    try:
        if "levels" in kw:
            kw["levels"] = parse_levels(kw["levels"])
        if "pair" in kw:
            kw["pair"] = ElementPair.parse(kw["pair"])
        if "scheme" in kw:
            kw["scheme"] = Scheme.parse(kw["scheme"])
        if "strategy" in kw:
            kw["strategy"] = Strategy.parse(kw["strategy"])
        for k in ("rect", "lower", "upper"):
            if k in kw:
                kw[k] = tuple(float(v) for v in kw[k])
        for k in ("points", "targets"):
            if k in kw:
                kw[k] = tuple(tuple(float(c) for c in p) for p in kw[k])
        for k in ("nu", "alpha", "newton_tol", "opt_tol"):
            if k in kw:
                kw[k] = float(kw[k])
        for k in ("seed", "opt_max_iter", "reference_level_offset"):
            if k in kw:
                kw[k] = int(kw[k])
        return ExperimentConfig(**kw)
    except (InputError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_mapping(data)
