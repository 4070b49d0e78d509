"""Run configuration: a flat key-value format, strict parsing, and the
resolution of declarative pieces (objective, cutoff, kappa) into live objects.

Config objects stay picklable (objective referenced by name and argument
dict, never by closure) so trials can cross process boundaries.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .core import CutoffSpec, RngStream, Species, SystemParams
from .objectives import ObjectiveSpec, estimate_constants, make_objective

__all__ = ["ConfigError", "RunConfig", "parse_config", "DEFAULT_SWEEP_NS"]


class ConfigError(ValueError):
    pass


DEFAULT_SWEEP_NS = (16, 32, 64, 128, 256)

_EXPERIMENTS = ("simulate", "sweep", "tail", "constants", "validate")
_INITIAL_KINDS = ("uniform_ball", "truncated_gaussian")

_ESTIMATE_STREAM = RngStream(base_seed=0xE577, species=Species.X)
_ESTIMATE_SAMPLES = 20_000

_INT_OBJECTIVE_ARGS = {"d1", "d2", "dim"}


@dataclass(frozen=True)
class RunConfig:
    params: SystemParams = field(default_factory=SystemParams)
    objective_name: str = "quadratic_saddle"
    objective_args: dict | None = None
    plateau_frac: float = 0.9
    initial_kind: str = "uniform_ball"
    initial_scale: float | None = None
    trials: int = 64
    output_dir: str = "out"
    experiment: str = "simulate"
    sweep_ns: tuple = DEFAULT_SWEEP_NS
    tail_threshold_a: float = 0.25
    tail_kappa: float | None = None

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ConfigError("run.trials must be >= 1")
        if self.experiment not in _EXPERIMENTS:
            raise ConfigError(f"run.experiment must be one of {_EXPERIMENTS}")
        if self.initial_kind not in _INITIAL_KINDS:
            raise ConfigError(f"initial.kind must be one of {_INITIAL_KINDS}")
        if self.initial_scale is not None and not self.initial_scale > 0:
            raise ConfigError("initial.scale must be positive")
        if not 0.0 < self.plateau_frac < 1.0:
            raise ConfigError("cutoff.plateau_frac must be in (0, 1)")
        ns = tuple(int(n) for n in self.sweep_ns)
        if len(ns) < 1 or any(n < 2 for n in ns):
            raise ConfigError("sweep.ns must list sizes >= 2")
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ConfigError("sweep.ns must be strictly increasing")
        object.__setattr__(self, "sweep_ns", ns)
        if not self.tail_threshold_a > 0:
            raise ConfigError("tail.threshold_a must be positive")
        if self.tail_kappa is not None and not isinstance(self.tail_kappa, float):
            raise ConfigError("tail.kappa_mode must be 'from_constants' or a number")

    @property
    def cutoff(self) -> CutoffSpec:
        return CutoffSpec.for_radius(self.params.r_cut, self.plateau_frac)

    def resolved_objective(self) -> ObjectiveSpec:
        """Objective with dims matched to params and constants guaranteed."""
        if self.objective_args is None:
            args = dict(_OBJECTIVE_DEFAULTS.get(self.objective_name, {}))
        else:
            args = dict(self.objective_args)
        if self.objective_name == "quadratic_saddle":
            args.setdefault("d1", self.params.d1)
            args.setdefault("d2", self.params.d2)
        elif self.objective_name == "nonconvex_saddle":
            if self.params.d1 != self.params.d2:
                raise ConfigError("objective 'nonconvex_saddle' needs params.d1 == params.d2")
            args.setdefault("dim", self.params.d1)
        key = (self.objective_name, tuple(sorted(args.items())), self.params.r_cut)
        cached = _RESOLVE_CACHE.get(key)
        if cached is not None:
            return cached
        try:
            obj = make_objective(self.objective_name, args)
        except TypeError as exc:
            raise ConfigError(f"objective.{self.objective_name} rejected args {args}: {exc}") from None
        if obj.d1 != self.params.d1 or obj.d2 != self.params.d2:
            raise ConfigError(
                f"objective dims ({obj.d1}, {obj.d2}) do not match params ({self.params.d1}, {self.params.d2})"
            )
        if obj.constants is None:
            # estimation stream is fixed so constants never depend on run seed
            obj = obj.with_constants(
                estimate_constants(obj, self.params.r_cut, _ESTIMATE_SAMPLES, _ESTIMATE_STREAM)
            )
        _RESOLVE_CACHE[key] = obj
        return obj

    def resolved_kappa(self, obj: ObjectiveSpec) -> float:
        if self.tail_kappa is not None:
            return self.tail_kappa
        from .stats import constants_report

        return constants_report(self.params, obj.constants, self.cutoff.grad_sup).kappa

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, params=dataclasses.replace(cfg.params, seed=seed))
        if output_dir is not None:
            cfg = dataclasses.replace(cfg, output_dir=output_dir)
        return cfg


_RESOLVE_CACHE: dict = {}

# used when no objective.* argument keys are given
_OBJECTIVE_DEFAULTS = {
    "quadratic_saddle": {"a": 1.0, "b": 1.0, "coupling": 1.0},
    "nonconvex_saddle": {"wiggle": 0.5},
}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError("expected 'true' or 'false'")


def _parse_ns(raw: str) -> tuple:
    return tuple(int(part.strip()) for part in raw.split(","))


_PARAM_FIELDS = {
    "lambda1": float, "lambda2": float, "sigma1": float, "sigma2": float,
    "alpha": float, "beta": float, "r_cut": float, "dt": float, "t_end": float,
    "d1": int, "d2": int, "n1": int, "n2": int, "n_ref": int,
    "record_stride": int, "seed": int, "project_to_ball": _parse_bool,
}

_SCALAR_KEYS = {
    "cutoff.plateau_frac": ("plateau_frac", float),
    "initial.kind": ("initial_kind", str),
    "initial.scale": ("initial_scale", float),
    "run.trials": ("trials", int),
    "run.output_dir": ("output_dir", str),
    "run.experiment": ("experiment", str),
    "sweep.ns": ("sweep_ns", _parse_ns),
    "tail.threshold_a": ("tail_threshold_a", float),
}


def parse_config(text: str) -> RunConfig:
    """Strict `key = value` lines; `#` starts a comment; unknown keys fail."""
    param_kwargs: dict = {}
    top_kwargs: dict = {}
    objective_args: dict = {}
    seen: set = set()

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line.strip()!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        value = raw_value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)

        try:
            if key.startswith("params."):
                name = key[len("params."):]
                if name not in _PARAM_FIELDS:
                    raise ConfigError(f"line {lineno}: unknown key {key!r}")
                param_kwargs[name] = _PARAM_FIELDS[name](value)
            elif key == "objective.name":
                top_kwargs["objective_name"] = value
            elif key.startswith("objective."):
                name = key[len("objective."):]
                objective_args[name] = int(value) if name in _INT_OBJECTIVE_ARGS else float(value)
            elif key == "tail.kappa_mode":
                top_kwargs["tail_kappa"] = None if value == "from_constants" else float(value)
            elif key in _SCALAR_KEYS:
                attr, conv = _SCALAR_KEYS[key]
                top_kwargs[attr] = conv(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None

    try:
        params = SystemParams(**param_kwargs)
    except ValueError as exc:
        # SystemParams messages already carry the params.<field> key path
        raise ConfigError(str(exc)) from None
    if objective_args:
        top_kwargs["objective_args"] = objective_args
    return RunConfig(params=params, **top_kwargs)
