"""Shared domain types: system parameters, particle ensembles, the smooth
cutoff, and the deterministic keyed random-number contract.

Everything here is an immutable value object; simulations build on these
without any hidden state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "SystemParams",
    "Ensemble",
    "CutoffSpec",
    "Species",
    "RngStream",
    "ConditionEntry",
    "ValidationReport",
    "validate_params",
    "phi",
    "sample_initial",
    "initial_variance",
    "gaussian_increment",
    "gaussian_block",
]


# ---------------------------------------------------------------------------
# System parameters
# ---------------------------------------------------------------------------

_POSITIVE_FIELDS = ("lambda1", "lambda2", "r_cut", "dt")
_NONNEGATIVE_FIELDS = ("sigma1", "sigma2", "alpha", "beta", "t_end")
_POSITIVE_INT_FIELDS = ("d1", "d2", "n1", "n2", "n_ref", "record_stride")


@dataclass(frozen=True)
class SystemParams:
    """All scalars of the two-population descent/ascent dynamics.

    ``lambda*`` are drift rates toward the consensus points, ``sigma*``
    diffusion strengths, ``alpha``/``beta`` the Boltzmann weight exponents of
    the min and max players, ``r_cut`` the radius of the compact search ball.
    ``n1``/``n2`` are the population sizes, ``n_ref`` the size of the large
    reference ensemble standing in for the mean-field law.
    """

    lambda1: float = 3.0
    lambda2: float = 3.0
    sigma1: float = 0.2
    sigma2: float = 0.2
    alpha: float = 5.0
    beta: float = 5.0
    r_cut: float = 2.0
    d1: int = 2
    d2: int = 2
    n1: int = 64
    n2: int = 64
    n_ref: int = 4096
    dt: float = 1e-2
    t_end: float = 10.0
    record_stride: int = 10
    seed: int = 0
    project_to_ball: bool = True

    def __post_init__(self) -> None:
        check_param_fields(self)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


def check_param_fields(p: SystemParams) -> None:
    """Raise ValueError naming the offending field on any sign/finiteness violation."""
    for name in _POSITIVE_FIELDS:
        v = getattr(p, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            raise ValueError(f"params.{name} must be finite and > 0, got {v!r}")
    for name in _NONNEGATIVE_FIELDS:
        v = getattr(p, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
            raise ValueError(f"params.{name} must be finite and >= 0, got {v!r}")
    for name in _POSITIVE_INT_FIELDS:
        v = getattr(p, name)
        if not (isinstance(v, int) and v >= 1):
            raise ValueError(f"params.{name} must be an integer >= 1, got {v!r}")
    if not (isinstance(p.seed, int) and 0 <= p.seed < 2**64):
        raise ValueError(f"params.seed must be a 64-bit unsigned integer, got {p.seed!r}")
    if p.n_ref < max(p.n1, p.n2):
        raise ValueError(
            f"params.n_ref must be >= max(n1, n2) = {max(p.n1, p.n2)}, got {p.n_ref}"
        )


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ensemble:
    """An n-by-dim array of particle positions, read-only after construction."""

    positions: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.positions, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"ensemble positions must be (n, dim) with n, dim >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("ensemble positions must be finite")
        if arr is self.positions and arr.flags.writeable:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "positions", arr)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def max_norm(self) -> float:
        return float(np.sqrt((self.positions**2).sum(axis=1)).max())


# ---------------------------------------------------------------------------
# Smooth cutoff
# ---------------------------------------------------------------------------

# Transition profile on the annulus: h(s) = f(1-s) / (f(1-s) + f(s)) with
# f(u) = exp(-1/u).  h is a C-infinity monotone step from 1 to 0 on [0, 1];
# sup |h'| = 2, attained at s = 1/2 where h = 1/2.
STEP_SLOPE_SUP = 2.0


def _smooth_step(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    out = np.empty_like(s)
    lo = s <= 0.0
    hi = s >= 1.0
    mid = ~(lo | hi)
    out[lo] = 1.0
    out[hi] = 0.0
    if np.any(mid):
        sm = s[mid]
        a = np.exp(-1.0 / (1.0 - sm))
        b = np.exp(-1.0 / sm)
        out[mid] = a / (a + b)
    return out


@dataclass(frozen=True)
class CutoffSpec:
    """Radial bump: 1 on the plateau ball, smooth decay to 0 at ``r_cut``."""

    r_cut: float
    r_plateau: float
    grad_sup: float = field(default=0.0)

    def __post_init__(self) -> None:
        if not (0.0 < self.r_plateau < self.r_cut):
            raise ValueError(
                f"cutoff requires 0 < r_plateau < r_cut, got {self.r_plateau}, {self.r_cut}"
            )
        object.__setattr__(
            self, "grad_sup", STEP_SLOPE_SUP / (self.r_cut - self.r_plateau)
        )

    @classmethod
    def for_radius(cls, r_cut: float, plateau_frac: float = 0.9) -> "CutoffSpec":
        return cls(r_cut=r_cut, r_plateau=plateau_frac * r_cut)


def phi(spec: CutoffSpec, z: np.ndarray) -> np.ndarray | float:
    """Cutoff value at point z (shape (d,)) or per row for shape (n, d)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        r = float(np.sqrt((z * z).sum()))
        if r <= spec.r_plateau:
            return 1.0
        if r >= spec.r_cut:
            return 0.0
        s = (r - spec.r_plateau) / (spec.r_cut - spec.r_plateau)
        return float(_smooth_step(np.asarray([s]))[0])
    r = np.sqrt((z * z).sum(axis=1))
    s = (r - spec.r_plateau) / (spec.r_cut - spec.r_plateau)
    return _smooth_step(s)


# ---------------------------------------------------------------------------
# Keyed random numbers
# ---------------------------------------------------------------------------


class Species(IntEnum):
    """Which population a stream belongs to; system and copies share X/Y."""

    X = 0
    Y = 1
    X_REF = 2
    Y_REF = 3


@dataclass(frozen=True)
class RngStream:
    """Coordinates addressing one particle's Gaussian increments.

    The increment at a given (base_seed, trial, species, particle, step) is a
    pure function of those values: any subset of a simulation can be replayed
    in any order, on any number of workers, and reproduce identical numbers.
    """

    base_seed: int
    trial: int = 0
    species: Species = Species.X
    particle: int = 0
    step: int = 0


_MASK64 = (1 << 64) - 1

# key spaces keep initial-sampling draws disjoint from per-step noise
_SPACE_NOISE = 0
_SPACE_INIT = 1


def _mix64(z: int) -> int:
    # splitmix64 finalizer; bijective on 64-bit words
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _keyed_generator(base_seed: int, space: int, trial: int, species: int, step: int) -> np.random.Generator:
    """Counter-based generator for one (trial, species, step) block."""
    h = _mix64(base_seed & _MASK64)
    for word in (space, trial, species, step):
        h = _mix64(h ^ _mix64(word & _MASK64))
    k2 = _mix64(h ^ 0xA5A5A5A55A5A5A5A)
    key = np.array([h, k2], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=0, key=key))


def gaussian_block(
    base_seed: int, trial: int, species: Species, step: int, n: int, dim: int, dt: float
) -> np.ndarray:
    """All n increments of one species for one step, shape (n, dim), N(0, dt) entries.

    Row p equals gaussian_increment at particle index p: the underlying normal
    sequence is generated row-major, so earlier rows never depend on how many
    rows are requested.
    """
    gen = _keyed_generator(base_seed, _SPACE_NOISE, trial, int(species), step)
    return math.sqrt(dt) * gen.standard_normal((n, dim))


def gaussian_increment(stream: RngStream, dim: int, dt: float) -> np.ndarray:
    """One particle's N(0, dt) increment vector for the given coordinates."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    block = gaussian_block(
        stream.base_seed, stream.trial, stream.species, stream.step, stream.particle + 1, dim, dt
    )
    return block[stream.particle]


# ---------------------------------------------------------------------------
# Initial samplers
# ---------------------------------------------------------------------------

_GAUSS_RETRY_CAP = 1000


def sample_initial(
    kind: str,
    n: int,
    dim: int,
    r_cut: float,
    stream: RngStream,
    scale: float | None = None,
) -> Ensemble:
    """Draw n i.i.d. rows supported on the closed ball of radius r_cut.

    ``uniform_ball`` is uniform on the ball; ``truncated_gaussian`` is
    N(0, scale^2 I) conditioned on the ball (default scale r_cut/3),
    implemented by rejection with a retry cap.
    """
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be >= 1")
    gen = _keyed_generator(
        stream.base_seed, _SPACE_INIT, stream.trial, int(stream.species), stream.step
    )
    if kind == "uniform_ball":
        direction = gen.standard_normal((n, dim))
        norms = np.sqrt((direction**2).sum(axis=1))
        norms = np.maximum(norms, 1e-300)
        radius = r_cut * gen.random(n) ** (1.0 / dim)
        return Ensemble(direction * (radius / norms)[:, None])
    if kind == "truncated_gaussian":
        s = r_cut / 3.0 if scale is None else float(scale)
        if s <= 0:
            raise ValueError("truncated_gaussian scale must be > 0")
        rows = s * gen.standard_normal((n, dim))
        for _ in range(_GAUSS_RETRY_CAP):
            bad = (rows**2).sum(axis=1) > r_cut**2
            if not bad.any():
                return Ensemble(rows)
            rows[bad] = s * gen.standard_normal((int(bad.sum()), dim))
        raise RuntimeError(
            f"truncated_gaussian rejection exceeded {_GAUSS_RETRY_CAP} rounds; scale {s} "
            f"too large for ball radius {r_cut}"
        )
    raise ValueError(f"unknown initial sampler kind {kind!r}")


def initial_variance(kind: str, dim: int, r_cut: float, scale: float | None = None) -> float:
    """Population variance E|Z - EZ|^2 of the initial sampler.

    Closed form for the uniform ball; Monte Carlo (fixed internal seed) for
    the truncated gaussian, where no elementary closed form exists.
    """
    if kind == "uniform_ball":
        return r_cut**2 * dim / (dim + 2.0)
    if kind == "truncated_gaussian":
        ens = sample_initial(kind, 200_000, dim, r_cut, RngStream(base_seed=0x171C), scale=scale)
        centered = ens.positions - ens.positions.mean(axis=0)
        return float((centered**2).sum(axis=1).mean())
    raise ValueError(f"unknown initial sampler kind {kind!r}")


# ---------------------------------------------------------------------------
# Parameter validation report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionEntry:
    name: str
    passed: bool
    lhs: float
    rhs: float
    note: str = ""


@dataclass(frozen=True)
class ValidationReport:
    conditions: tuple[ConditionEntry, ...]
    warnings: tuple[str, ...]

    def entry(self, name: str) -> ConditionEntry:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def all_rate_conditions_pass(self) -> bool:
        return all(c.passed for c in self.conditions if c.name.startswith("rate_"))


def validate_params(
    p: SystemParams,
    obj_constants,
    grad_sup: float | None = None,
) -> ValidationReport:
    """Report the drift-dominance conditions and the scheme-stability bound.

    Two families are reported side by side and never gate anything:

    * ``rate_{x,y}_q{1,2,4}``: lambda_i > (2q-1) sigma_i^2 (1 + e^{2 gamma_i C (1+2R^2)}),
      the condition under which the variance decay rate 2q(lambda_i - ...) is positive.
    * ``main_printed_{x,y}`` / ``main_gapexp_{x,y}``: the headline well-posedness
      condition in its two circulating variants (exponent 2 gamma (1+R^2) without the
      gap constant, versus the gap-constant exponent used by every rate condition);
      both are reported because they disagree and neither is obviously a typo.
    """
    check_param_fields(p)
    gap_c = float(obj_constants.c_e)
    if grad_sup is None:
        grad_sup = CutoffSpec.for_radius(p.r_cut).grad_sup
    r2 = p.r_cut**2
    entries: list[ConditionEntry] = []
    sides = (("x", p.lambda1, p.sigma1, p.alpha), ("y", p.lambda2, p.sigma2, p.beta))
    for tag, lam, sig, gamma in sides:
        blowup = math.exp(min(2.0 * gamma * gap_c * (1.0 + 2.0 * r2), 700.0))
        for q in (1, 2, 4):
            rhs = (2 * q - 1) * sig**2 * (1.0 + blowup)
            entries.append(
                ConditionEntry(
                    name=f"rate_{tag}_q{q}",
                    passed=lam > rhs,
                    lhs=lam,
                    rhs=rhs,
                    note=f"drift dominance at moment order 2q={2*q}",
                )
            )
        printed = max(
            15.0 * sig**2 * (1.0 + math.exp(min(2.0 * gamma * (1.0 + r2), 700.0))),
            3.0 * sig**2 * (1.0 + 4.0 * r2 * grad_sup**2),
        )
        entries.append(
            ConditionEntry(
                name=f"main_printed_{tag}",
                passed=lam > printed,
                lhs=lam,
                rhs=printed,
                note="headline condition, exponent without gap constant",
            )
        )
        gapexp = max(
            15.0 * sig**2 * (1.0 + blowup),
            3.0 * sig**2 * (1.0 + 4.0 * r2 * grad_sup**2),
        )
        entries.append(
            ConditionEntry(
                name=f"main_gapexp_{tag}",
                passed=lam > gapexp,
                lhs=lam,
                rhs=gapexp,
                note="headline condition, gap-constant exponent variant",
            )
        )
    warnings_: list[str] = []
    dt_bound = 1.0 / (2.0 * max(p.lambda1, p.lambda2))
    if not p.dt < dt_bound:
        warnings_.append(
            f"dt = {p.dt} violates the explicit-scheme stability bound dt < {dt_bound:.6g}"
        )
    return ValidationReport(conditions=tuple(entries), warnings=tuple(warnings_))
