"""Boltzmann-weighted consensus points for the descent and ascent players,
plus deterministic checkers for the mean-vs-consensus inequalities the decay
analysis rests on.

All weight computations run in the log domain, shifted by the max exponent so
the largest weight is exactly 1; the naive unshifted form is kept only as a
test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Ensemble
from .objectives import ObjectiveSpec

__all__ = [
    "ConsensusPoint",
    "GapCheck",
    "StabilityCheck",
    "mean",
    "central_moment",
    "consensus_min",
    "consensus_max",
    "consensus_naive",
    "check_mean_consensus_gap",
    "check_consensus_stability",
    "stability_prefactor",
]


@dataclass(frozen=True)
class ConsensusPoint:
    """Weighted average of an ensemble with its normalizer bookkeeping.

    ``log_normalizer`` is log of the mean Boltzmann weight over particles;
    ``max_exponent_shift`` is the log-domain shift that was subtracted before
    exponentiating.
    """

    point: np.ndarray
    log_normalizer: float
    max_exponent_shift: float


@dataclass(frozen=True)
class GapCheck:
    """One instance of the mean-vs-consensus distance inequality."""

    lhs: float
    rhs: float
    ok: bool


@dataclass(frozen=True)
class StabilityCheck:
    """One instance of the consensus-shift stability inequality."""

    lhs: float
    rhs: float
    ok: bool
    c_m: float


_CHECK_SLACK = 1.0 + 1e-12


def mean(e: Ensemble) -> np.ndarray:
    return e.positions.mean(axis=0)


def central_moment(positions: np.ndarray, p: float) -> float:
    """(1/n) sum |z_i - mean|^p; p = 2 is the scalar ensemble variance."""
    centered = positions - positions.mean(axis=0)
    dist = np.sqrt((centered * centered).sum(axis=1))
    return float((dist**p).mean())


def _weighted_point(ens: Ensemble, exponents: np.ndarray) -> ConsensusPoint:
    shift = float(exponents.max())
    w = np.exp(exponents - shift)
    total = float(w.sum())
    point = (w[:, None] * ens.positions).sum(axis=0) / total
    log_normalizer = shift + math.log(total / ens.n)
    return ConsensusPoint(point=point, log_normalizer=log_normalizer, max_exponent_shift=shift)


def consensus_min(x_ens: Ensemble, y_mean: np.ndarray, obj: ObjectiveSpec, alpha: float) -> ConsensusPoint:
    """Descent-player consensus: weights proportional to exp(-alpha E(x_i, y_mean))."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    with np.errstate(over="ignore", invalid="ignore"):
        values = np.asarray(obj.evaluate(x_ens.positions, np.asarray(y_mean)))
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("objective evaluated non-finite during consensus")
    return _weighted_point(x_ens, -alpha * values)


def consensus_max(y_ens: Ensemble, x_mean: np.ndarray, obj: ObjectiveSpec, beta: float) -> ConsensusPoint:
    """Ascent-player consensus: weights proportional to exp(+beta E(x_mean, y_i))."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    with np.errstate(over="ignore", invalid="ignore"):
        values = np.asarray(obj.evaluate(np.asarray(x_mean), y_ens.positions))
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("objective evaluated non-finite during consensus")
    return _weighted_point(y_ens, beta * values)


def consensus_naive(
    ens: Ensemble, opp_mean: np.ndarray, obj: ObjectiveSpec, gamma: float, maximize: bool = False
) -> ConsensusPoint:
    """Unshifted direct exponentials; test oracle only, fails loudly outside
    the moderate-exponent regime."""
    if maximize:
        values = np.asarray(obj.evaluate(np.asarray(opp_mean), ens.positions))
        exponents = gamma * values
    else:
        values = np.asarray(obj.evaluate(ens.positions, np.asarray(opp_mean)))
        exponents = -gamma * values
    with np.errstate(over="ignore", under="ignore"):
        raw = np.exp(exponents)
    total = float(raw.sum())
    if not np.isfinite(total) or total == 0.0:
        raise OverflowError("naive consensus weights overflowed or vanished; use the shifted form")
    point = (raw[:, None] * ens.positions).sum(axis=0) / total
    return ConsensusPoint(
        point=point, log_normalizer=math.log(total / ens.n), max_exponent_shift=0.0
    )


# ---------------------------------------------------------------------------
# Inequality checkers
# ---------------------------------------------------------------------------


def check_mean_consensus_gap(
    x_ens: Ensemble,
    y_mean: np.ndarray,
    obj: ObjectiveSpec,
    alpha: float,
    p: float,
    c_e: float,
    r_cut: float,
    maximize: bool = False,
) -> GapCheck:
    """|mean - consensus|^p against e^{2 alpha c_e (1 + 2 r_cut^2)} times the
    p-th central moment; deterministic inequality for ball-supported ensembles."""
    if p < 2:
        raise ValueError("gap check needs p >= 2")
    if maximize:
        cp = consensus_max(x_ens, y_mean, obj, alpha)
    else:
        cp = consensus_min(x_ens, y_mean, obj, alpha)
    m = mean(x_ens)
    lhs = float(np.linalg.norm(m - cp.point)) ** p
    rhs = math.exp(2.0 * alpha * c_e * (1.0 + 2.0 * r_cut**2)) * central_moment(x_ens.positions, p)
    return GapCheck(lhs=lhs, rhs=rhs, ok=lhs <= rhs * _CHECK_SLACK)


def stability_prefactor(gamma: float, c_e: float, l_e: float, r_cut: float) -> float:
    """3 gamma e^{4 gamma c_e (1 + r_cut^2)} l_e, the consensus-shift rate factor."""
    return 3.0 * gamma * math.exp(4.0 * gamma * c_e * (1.0 + r_cut**2)) * l_e


def check_consensus_stability(
    mu1: Ensemble,
    mu1_bar: Ensemble,
    mu2_mean: np.ndarray,
    mu2_bar_mean: np.ndarray,
    obj: ObjectiveSpec,
    alpha: float,
    c_e: float,
    l_e: float,
    r_cut: float,
    maximize: bool = False,
) -> StabilityCheck:
    """Shift stability of (consensus - mean) between an index-coupled pair of
    ensembles.

    The transport distance on side 1 is taken along the index coupling, which
    upper-bounds the optimal one, so the inequality stays a valid consequence
    of the targeted bound; side 2 enters only through its means.
    """
    if mu1.n != mu1_bar.n:
        raise ValueError("stability check requires index-coupled ensembles of equal size")
    if maximize:
        cp = consensus_max(mu1, mu2_mean, obj, alpha)
        cp_bar = consensus_max(mu1_bar, mu2_bar_mean, obj, alpha)
    else:
        cp = consensus_min(mu1, mu2_mean, obj, alpha)
        cp_bar = consensus_min(mu1_bar, mu2_bar_mean, obj, alpha)
    shift = cp.point - mean(mu1)
    shift_bar = cp_bar.point - mean(mu1_bar)
    lhs = float(np.linalg.norm(shift - shift_bar))

    var1 = central_moment(mu1.positions, 2.0)
    var1_bar = central_moment(mu1_bar.positions, 2.0)
    w2_idx = math.sqrt(float(((mu1.positions - mu1_bar.positions) ** 2).sum(axis=1).mean()))
    mean_dist = float(np.linalg.norm(np.asarray(mu2_mean) - np.asarray(mu2_bar_mean)))
    c_m = stability_prefactor(alpha, c_e, l_e, r_cut)
    rhs = c_m * (math.sqrt(var1) + math.sqrt(var1_bar)) * (w2_idx + mean_dist)
    return StabilityCheck(lhs=lhs, rhs=rhs, ok=lhs <= rhs * _CHECK_SLACK, c_m=c_m)
