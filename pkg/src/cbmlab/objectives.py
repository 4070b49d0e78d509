"""Saddle objectives: the cost surface, certified envelope bounds, and the
regularity constants the decay-rate formulas consume.

Built-ins come with closed-form constants where possible; anything else gets
sampled estimates with a conservative safety margin.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import RngStream, sample_initial

__all__ = [
    "ObjectiveConstants",
    "ObjectiveSpec",
    "ConditionMargin",
    "ConditionReport",
    "quadratic_saddle",
    "nonconvex_saddle",
    "make_objective",
    "estimate_constants",
    "check_conditions",
]

_GAP_S_GRID = (0.0, 0.5, 1.0)

# pair-separation scales for the Lipschitz ratio; contraction toward the
# first point stays in the ball and probes local slopes the far pairs miss
_PAIR_SCALES = (1.0, 0.1, 0.01)


@dataclass(frozen=True)
class ObjectiveConstants:
    """Regularity constants: Lipschitz factor, envelope gap, envelope growth."""

    l_e: float
    c_e: float
    c_upper: float
    c_lower: float

    def __post_init__(self) -> None:
        for name in ("l_e", "c_e", "c_upper", "c_lower"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ValueError(f"constants.{name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class ObjectiveSpec:
    """A min-max cost with upper/lower envelopes bracketing it everywhere.

    ``evaluate(x, y)`` accepts arrays with trailing axes (d1,) and (d2,) and
    broadcasts leading axes; the envelopes take one side each.  Evaluation is
    pure and reentrant.  ``known_saddle`` is metadata for convergence tests
    only; the dynamics never see it.
    """

    d1: int
    d2: int
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    upper_bound: Callable[[np.ndarray], np.ndarray]
    lower_bound: Callable[[np.ndarray], np.ndarray]
    constants: ObjectiveConstants | None = None
    known_saddle: tuple[np.ndarray, np.ndarray] | None = None

    def with_constants(self, constants: ObjectiveConstants) -> "ObjectiveSpec":
        return replace(self, constants=constants)


# ---------------------------------------------------------------------------
# Built-in objectives
# ---------------------------------------------------------------------------


def _as_coupling(coupling, d1: int | None, d2: int | None) -> np.ndarray:
    arr = np.asarray(coupling, dtype=np.float64)
    if arr.ndim == 0:
        n1 = 1 if d1 is None else d1
        n2 = 1 if d2 is None else d2
        return float(arr) * np.eye(n1, n2)
    arr = np.atleast_2d(arr)
    if d1 is not None and arr.shape[0] != d1:
        raise ValueError(f"coupling has {arr.shape[0]} rows, expected d1={d1}")
    if d2 is not None and arr.shape[1] != d2:
        raise ValueError(f"coupling has {arr.shape[1]} columns, expected d2={d2}")
    return arr


def quadratic_saddle(a: float, b: float, coupling=0.0, d1: int | None = None, d2: int | None = None) -> ObjectiveSpec:
    """Bilinear-coupled quadratic: (a/2)|x|^2 - (b/2)|y|^2 + x^T C y.

    The envelopes are the exact partial optima, and all four regularity
    constants have closed forms in (a, b, s) with s the largest singular
    value of the coupling, so this objective doubles as the reference case
    for everything downstream.
    """
    if a <= 0 or b <= 0:
        raise ValueError("quadratic_saddle requires a, b > 0")
    mat = _as_coupling(coupling, d1, d2)
    n1, n2 = mat.shape
    s = float(np.linalg.svd(mat, compute_uv=False)[0]) if mat.any() else 0.0

    def evaluate(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        quad = 0.5 * a * (x * x).sum(axis=-1) - 0.5 * b * (y * y).sum(axis=-1)
        return quad + (x @ mat * y).sum(axis=-1)

    def upper(x: np.ndarray) -> np.ndarray:
        # exact sup over y: (a/2)|x|^2 + |C^T x|^2 / (2b)
        x = np.asarray(x, dtype=np.float64)
        cx = x @ mat
        return 0.5 * a * (x * x).sum(axis=-1) + (cx * cx).sum(axis=-1) / (2.0 * b)

    def lower(y: np.ndarray) -> np.ndarray:
        # exact inf over x: -(b/2)|y|^2 - |C y|^2 / (2a)
        y = np.asarray(y, dtype=np.float64)
        cy = y @ mat.T
        return -0.5 * b * (y * y).sum(axis=-1) - (cy * cy).sum(axis=-1) / (2.0 * a)

    constants = ObjectiveConstants(
        l_e=max(0.5 * a, 0.5 * b, s),
        c_e=max(
            a + s**2 / b,
            b + s**2 / a,
            0.5 * a + 0.5 * s + s**2 / b,
            0.5 * b + 0.5 * s + s**2 / a,
        ),
        c_upper=0.5 * a + s**2 / (2.0 * b),
        c_lower=0.5 * b + s**2 / (2.0 * a),
    )
    return ObjectiveSpec(
        d1=n1,
        d2=n2,
        evaluate=evaluate,
        upper_bound=upper,
        lower_bound=lower,
        constants=constants,
        known_saddle=(np.zeros(n1), np.zeros(n2)),
    )


def nonconvex_saddle(wiggle: float, dim: int = 1) -> ObjectiveSpec:
    """Oscillatory saddle: F(x) - F(y) + x.y with F(z) = sum_j f(z_j),
    f(s) = s^2/2 + wiggle (1 - cos 2 pi s).

    For wiggle = 0 this collapses to quadratic_saddle(1, 1, I).  Since
    f(s) >= s^2/2, the quadratic envelopes F(x) + |x|^2/2 and -F(y) - |y|^2/2
    bracket the cost for every wiggle >= 0.  Constants are left for
    estimate_constants; closed forms would be needlessly loose here.
    """
    if wiggle < 0:
        raise ValueError("nonconvex_saddle requires wiggle >= 0")

    def f_sum(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return 0.5 * (z * z).sum(axis=-1) + wiggle * (1.0 - np.cos(2.0 * np.pi * z)).sum(axis=-1)

    def evaluate(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return f_sum(x) - f_sum(y) + (x * y).sum(axis=-1)

    def upper(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return f_sum(x) + 0.5 * (x * x).sum(axis=-1)

    def lower(y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return -f_sum(y) - 0.5 * (y * y).sum(axis=-1)

    return ObjectiveSpec(
        d1=dim,
        d2=dim,
        evaluate=evaluate,
        upper_bound=upper,
        lower_bound=lower,
        constants=None,
        known_saddle=(np.zeros(dim), np.zeros(dim)),
    )


_REGISTRY = {
    "quadratic_saddle": quadratic_saddle,
    "nonconvex_saddle": nonconvex_saddle,
}


def make_objective(name: str, args: dict) -> ObjectiveSpec:
    """Build a registered objective from a picklable (name, args) pair."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(
            f"unknown objective {name!r}; available: {sorted(_REGISTRY)}"
        ) from None
    return factory(**args)


# ---------------------------------------------------------------------------
# Constant estimation and condition checking
# ---------------------------------------------------------------------------


def _ball_batch(n: int, dim: int, r_cut: float, stream: RngStream, step: int) -> np.ndarray:
    child = replace(stream, step=stream.step + step)
    return sample_initial("uniform_ball", n, dim, r_cut, child).positions


def estimate_constants(
    obj: ObjectiveSpec, r_cut: float, n_samples: int, stream: RngStream
) -> ObjectiveConstants:
    """Sampled suprema of the four defining ratios on the ball, inflated 10%.

    Growth constants use the base-plus-curvature split
    max(g(0)^+, sup (g(z) - g(0)) / |z|^2), which recovers the global
    quadratic coefficient from ball samples instead of the diluted plain
    ratio g(z)/(1 + |z|^2).
    """
    if n_samples < 1000:
        raise ValueError("estimate_constants needs n_samples >= 1000")
    x = _ball_batch(n_samples, obj.d1, r_cut, stream, 0)
    x2 = _ball_batch(n_samples, obj.d1, r_cut, stream, 1)
    y = _ball_batch(n_samples, obj.d2, r_cut, stream, 2)
    y2 = _ball_batch(n_samples, obj.d2, r_cut, stream, 3)
    u = _ball_batch(n_samples, obj.d1, r_cut, stream, 4)
    v = _ball_batch(n_samples, obj.d2, r_cut, stream, 5)

    e_xy = np.asarray(obj.evaluate(x, y))
    if not np.all(np.isfinite(e_xy)):
        raise ValueError("objective evaluated non-finite at a sample point")

    # Lipschitz ratio over pairs at several separation scales
    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)
    l_e = 0.0
    for scale in _PAIR_SCALES:
        xp = x + scale * (x2 - x)
        yp = y + scale * (y2 - y)
        nxp, nyp = np.linalg.norm(xp, axis=1), np.linalg.norm(yp, axis=1)
        dist = np.linalg.norm(x - xp, axis=1) + np.linalg.norm(y - yp, axis=1)
        keep = dist > 1e-9
        if not keep.any():
            continue
        diff = np.abs(e_xy - obj.evaluate(xp, yp))
        ratio = diff[keep] / ((1.0 + nx + nxp + ny + nyp)[keep] * dist[keep])
        l_e = max(l_e, float(ratio.max()))

    # growth of the envelopes: base value plus curvature ratio; samples too
    # close to the origin are masked against cancellation noise
    def growth(bound_vals: np.ndarray, at_zero: float, norms: np.ndarray) -> float:
        good = norms > 1e-3 * r_cut
        ratio = (bound_vals[good] - at_zero) / norms[good] ** 2
        top = float(ratio.max()) if good.any() else 0.0
        return max(at_zero, top, 0.0) + 0.0  # "+ 0.0" folds -0.0 into 0.0

    up_zero = float(obj.upper_bound(np.zeros(obj.d1)))
    lo_zero = float(-obj.lower_bound(np.zeros(obj.d2)))
    c_upper = growth(np.asarray(obj.upper_bound(x)), up_zero, nx)
    c_lower = growth(np.asarray(-obj.lower_bound(y)), lo_zero, ny)

    # envelope gap along shifted arguments, s on a small grid
    c_e = 0.0
    for s in _GAP_S_GRID:
        below = e_xy - obj.lower_bound(y + s * v)
        above = obj.upper_bound(x + s * u) - e_xy
        den_v = 1.0 + nx**2 + ny**2 + (v * v).sum(axis=1)
        den_u = 1.0 + nx**2 + ny**2 + (u * u).sum(axis=1)
        c_e = max(c_e, float((below / den_v).max()), float((above / den_u).max()))
    c_e = max(c_e, 0.0)

    safety = 1.1
    return ObjectiveConstants(
        l_e=safety * l_e, c_e=safety * c_e, c_upper=safety * c_upper, c_lower=safety * c_lower
    )


@dataclass(frozen=True)
class ConditionMargin:
    name: str
    worst_margin: float
    violations: int


@dataclass(frozen=True)
class ConditionReport:
    margins: tuple[ConditionMargin, ...]
    n_samples: int
    tol: float

    def margin(self, name: str) -> ConditionMargin:
        for m in self.margins:
            if m.name == name:
                return m
        raise KeyError(name)

    @property
    def ok(self) -> bool:
        return all(m.violations == 0 for m in self.margins)


def check_conditions(
    obj: ObjectiveSpec,
    r_cut: float,
    tol: float = 1e-9,
    n_samples: int = 10_000,
    stream: RngStream | None = None,
) -> ConditionReport:
    """Re-verify every regularity inequality at fresh ball samples.

    Margin convention: positive means violated by that amount; a margin is a
    violation when it exceeds tol.  Report-only, nothing raises.
    """
    if obj.constants is None:
        raise ValueError("objective has no constants; run estimate_constants first")
    k = obj.constants
    stream = stream if stream is not None else RngStream(base_seed=0xC04D)
    x = _ball_batch(n_samples, obj.d1, r_cut, stream, 10)
    x2 = _ball_batch(n_samples, obj.d1, r_cut, stream, 11)
    y = _ball_batch(n_samples, obj.d2, r_cut, stream, 12)
    y2 = _ball_batch(n_samples, obj.d2, r_cut, stream, 13)
    u = _ball_batch(n_samples, obj.d1, r_cut, stream, 14)
    v = _ball_batch(n_samples, obj.d2, r_cut, stream, 15)

    e_xy = np.asarray(obj.evaluate(x, y))
    up_x = np.asarray(obj.upper_bound(x))
    lo_y = np.asarray(obj.lower_bound(y))
    nx, ny = np.linalg.norm(x, axis=1), np.linalg.norm(y, axis=1)

    lip_terms = []
    for scale in _PAIR_SCALES:
        xp = x + scale * (x2 - x)
        yp = y + scale * (y2 - y)
        nxp, nyp = np.linalg.norm(xp, axis=1), np.linalg.norm(yp, axis=1)
        dist = np.linalg.norm(x - xp, axis=1) + np.linalg.norm(y - yp, axis=1)
        lip_terms.append(
            np.abs(e_xy - obj.evaluate(xp, yp)) - k.l_e * (1.0 + nx + nxp + ny + nyp) * dist
        )
    lip = np.maximum.reduce(lip_terms)

    sandwich = np.maximum(lo_y - e_xy, e_xy - up_x)
    g_upper = up_x - k.c_upper * (1.0 + nx**2)
    g_lower = -lo_y - k.c_lower * (1.0 + ny**2)

    gap_terms = []
    for s in _GAP_S_GRID:
        den_v = 1.0 + nx**2 + ny**2 + (v * v).sum(axis=1)
        den_u = 1.0 + nx**2 + ny**2 + (u * u).sum(axis=1)
        gap_terms.append(e_xy - obj.lower_bound(y + s * v) - k.c_e * den_v)
        gap_terms.append(obj.upper_bound(x + s * u) - e_xy - k.c_e * den_u)
    gap = np.maximum.reduce(gap_terms)

    margins = []
    for name, vals in (
        ("lipschitz", lip),
        ("sandwich", sandwich),
        ("growth_upper", g_upper),
        ("growth_lower", g_lower),
        ("gap", gap),
    ):
        worst = float(vals.max())
        margins.append(
            ConditionMargin(name=name, worst_margin=worst, violations=int((vals > tol).sum()))
        )
    return ConditionReport(margins=tuple(margins), n_samples=n_samples, tol=tol)
