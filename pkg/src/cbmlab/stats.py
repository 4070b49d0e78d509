"""Measured quantities and explicit constant formulas: generalized variances,
coupling distances, an exact small-N transport oracle, sup-process tail
statistics, log-domain fits, and the full decay/error constant set.

Long constant products are accumulated in signed log space: several are
mathematically representable floats whose naive factor-by-factor evaluation
overflows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .consensus import central_moment
from .core import Ensemble, SystemParams

__all__ = [
    "TrajectoryStats",
    "ConstantsReport",
    "TailEstimate",
    "ExpFit",
    "PowerFit",
    "generalized_variance",
    "coupling_distance",
    "exact_w2_squared",
    "w2_squared_sorted_1d",
    "delta_d",
    "sup_weighted_process",
    "empirical_tail",
    "wilson_interval",
    "fit_exponential_rate",
    "fit_scaling_slope",
    "constants_report",
    "rate_constant",
    "tail_constant",
    "tail_constant_copies",
    "Q_GRID",
]

Q_GRID = (1, 2, 4)

_WILSON_Z = 1.959963984540054  # two-sided 95%

_W2_SIZE_CAP = 256


# ---------------------------------------------------------------------------
# Trajectory statistics container
# ---------------------------------------------------------------------------

_ENSEMBLE_TAGS = ("x_sys", "y_sys", "x_bar", "y_bar", "x_ref", "y_ref")


@dataclass(frozen=True)
class TrajectoryStats:
    """Per-record measurements of one simulation run.

    ``variances[tag][q]`` holds the generalized variance of moment order 2q
    for each of the six tracked ensembles (system pair, coupled copies, large
    reference); ``d_x``/``d_y`` are the index-coupled squared distances
    between system particles and their copies; ``sup_wvar_*`` are running
    maxima of e^{kappa t} times the system variance.
    """

    times: np.ndarray
    variances: dict
    d_x: np.ndarray
    d_y: np.ndarray
    consensus_x: np.ndarray
    consensus_y: np.ndarray
    sup_wvar_x: np.ndarray
    sup_wvar_y: np.ndarray
    max_norm_x: np.ndarray
    max_norm_y: np.ndarray
    kappa: float
    gap_checks: int = 0
    gap_violations: int = 0
    stability_checks: int = 0
    stability_violations: int = 0

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("times must be a nonempty 1-d array")
        if not np.all(np.isfinite(t)):
            raise ValueError("times must be finite")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        n = t.size
        if set(self.variances) != set(_ENSEMBLE_TAGS):
            raise ValueError(f"variances must have exactly the tags {_ENSEMBLE_TAGS}")
        for tag in _ENSEMBLE_TAGS:
            per_q = self.variances[tag]
            if set(per_q) != set(Q_GRID):
                raise ValueError(f"variances[{tag!r}] must be keyed by q in {Q_GRID}")
            for q, arr in per_q.items():
                a = np.asarray(arr, dtype=np.float64)
                if a.shape != (n,) or not np.all(np.isfinite(a)) or np.any(a < 0):
                    raise ValueError(f"variances[{tag!r}][{q}] must be finite, >= 0, length {n}")
        for name in ("d_x", "d_y", "sup_wvar_x", "sup_wvar_y", "max_norm_x", "max_norm_y"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != (n,) or not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ValueError(f"{name} must be finite, >= 0, length {n}")
        for name in ("consensus_x", "consensus_y"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.ndim != 2 or a.shape[0] != n or not np.all(np.isfinite(a)):
                raise ValueError(f"{name} must be a finite (n_records, dim) array")

    @property
    def n_records(self) -> int:
        return int(np.asarray(self.times).size)


# ---------------------------------------------------------------------------
# Elementary measurements
# ---------------------------------------------------------------------------


def generalized_variance(e: Ensemble, q: float) -> float:
    """(1/n) sum |x_i - mean|^{2q}; q = 1 is the scalar variance."""
    if q < 1:
        raise ValueError("generalized variance needs q >= 1")
    return central_moment(e.positions, 2.0 * q)


def coupling_distance(a: Ensemble, b: Ensemble) -> float:
    """(1/n) sum |a_i - b_i|^2 along the index pairing."""
    if a.n != b.n or a.dim != b.dim:
        raise ValueError("coupling distance needs equal sizes and dims")
    diff = a.positions - b.positions
    return float((diff * diff).sum(axis=1).mean())


def w2_squared_sorted_1d(a: np.ndarray, b: np.ndarray) -> float:
    """1-d optimal coupling: sort both samples and pair in order."""
    av = np.sort(np.asarray(a, dtype=np.float64).reshape(-1))
    bv = np.sort(np.asarray(b, dtype=np.float64).reshape(-1))
    if av.size != bv.size:
        raise ValueError("sorted coupling needs equal sizes")
    return float(((av - bv) ** 2).mean())


def exact_w2_squared(a: Ensemble, b: Ensemble) -> float:
    """Minimum over permutations of the mean squared pairing cost.

    Solved as a dense linear assignment; capped at n <= 256 so it stays a
    test oracle rather than a production path.
    """
    if a.n != b.n or a.dim != b.dim:
        raise ValueError("exact transport needs equal sizes and dims")
    if a.n > _W2_SIZE_CAP:
        raise ValueError(f"exact transport capped at n <= {_W2_SIZE_CAP}, got {a.n}")
    cost = cdist(a.positions, b.positions, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def delta_d(n: int, d: int) -> float:
    """Empirical-measure convergence rate in W2: n^{-1/2}, n^{-1/2} log n, or n^{-2/d}."""
    if n < 2:
        raise ValueError("delta_d needs n >= 2")
    if d < 4:
        return n**-0.5
    if d == 4:
        return n**-0.5 * math.log(n)
    return float(n ** (-2.0 / d))


def sup_weighted_process(times: np.ndarray, values: np.ndarray, kappa: float) -> float:
    """max over records of e^{kappa t} value."""
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.shape != v.shape:
        raise ValueError("times and values must be aligned")
    return float((np.exp(kappa * t) * v).max())


# ---------------------------------------------------------------------------
# Tail statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TailEstimate:
    p_hat: float
    wilson_lo: float
    wilson_hi: float
    n_trials: int
    n_hits: int


def wilson_interval(hits: int, trials: int) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("wilson interval needs trials >= 1")
    z2 = _WILSON_Z**2
    p = hits / trials
    center = (p + z2 / (2 * trials)) / (1 + z2 / trials)
    half = (
        _WILSON_Z
        * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials**2))
        / (1 + z2 / trials)
    )
    return max(0.0, center - half), min(1.0, center + half)


def empirical_tail(sups: np.ndarray, threshold: float) -> TailEstimate:
    """Fraction of trials whose sup reached the threshold, with 95% Wilson bounds."""
    s = np.asarray(sups, dtype=np.float64)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("empirical tail needs at least one trial")
    hits = int((s >= threshold).sum())
    lo, hi = wilson_interval(hits, s.size)
    return TailEstimate(
        p_hat=hits / s.size, wilson_lo=lo, wilson_hi=hi, n_trials=s.size, n_hits=hits
    )


# ---------------------------------------------------------------------------
# Log-domain fits
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpFit:
    """values ~ intercept * e^{-rate t}; r_squared measured in log domain."""

    rate: float
    intercept: float
    r_squared: float
    n_dropped: int


@dataclass(frozen=True)
class PowerFit:
    """errors ~ intercept * n^{slope}; r_squared measured in log-log domain."""

    slope: float
    intercept: float
    r_squared: float
    n_dropped: int


def _log_least_squares(x: np.ndarray, logy: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(x, logy, 1)
    pred = slope * x + intercept
    ss_res = float(((logy - pred) ** 2).sum())
    ss_tot = float(((logy - logy.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def _positive_mask(values: np.ndarray, label: str) -> np.ndarray:
    mask = values > 0
    dropped = int((~mask).sum())
    if dropped:
        warnings.warn(f"{label}: dropped {dropped} non-positive values before log fit")
    if mask.sum() < 3:
        raise ValueError(f"{label}: fewer than 3 positive values to fit")
    return mask


def fit_exponential_rate(times: np.ndarray, values: np.ndarray) -> ExpFit:
    """Least squares of log(values) on times; rate is the negated slope."""
    t = np.asarray(times, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if t.shape != v.shape or t.size < 3:
        raise ValueError("rate fit needs >= 3 aligned points")
    mask = _positive_mask(v, "rate fit")
    slope, intercept, r2 = _log_least_squares(t[mask], np.log(v[mask]))
    return ExpFit(rate=-slope, intercept=math.exp(intercept), r_squared=r2, n_dropped=int((~mask).sum()))


def fit_scaling_slope(ns: np.ndarray, errors: np.ndarray) -> PowerFit:
    """Least squares of log(errors) on log(ns)."""
    n = np.asarray(ns, dtype=np.float64)
    e = np.asarray(errors, dtype=np.float64)
    if n.shape != e.shape or n.size < 3:
        raise ValueError("scaling fit needs >= 3 aligned points")
    if np.any(n <= 0):
        raise ValueError("sizes must be positive")
    mask = _positive_mask(e, "scaling fit")
    slope, intercept, r2 = _log_least_squares(np.log(n[mask]), np.log(e[mask]))
    return PowerFit(slope=slope, intercept=math.exp(intercept), r_squared=r2, n_dropped=int((~mask).sum()))


# ---------------------------------------------------------------------------
# Explicit constants
# ---------------------------------------------------------------------------

_EXP_CLIP = 709.0  # log of the largest float64


def _exp(x: float) -> float:
    return math.exp(x) if x < _EXP_CLIP else math.inf


def _log1p_exp(x: float) -> float:
    # log(1 + e^x), stable for large x
    if x > 36.0:
        return x
    return math.log1p(math.exp(x))


def _signed_exp(sign: float, log_mag: float) -> float:
    if sign == 0.0:
        return 0.0
    if log_mag >= _EXP_CLIP:
        return math.copysign(math.inf, sign)
    if log_mag < -_EXP_CLIP:
        return math.copysign(0.0, sign)
    return sign * math.exp(log_mag)


def _log_one_plus_signed(sign: float, log_mag: float) -> tuple[float, float]:
    # signed log of 1 + sign * e^{log_mag}
    if sign == 0.0 or log_mag < -_EXP_CLIP:
        return 1.0, 0.0
    if log_mag > 36.0:
        return sign, log_mag
    v = 1.0 + sign * math.exp(log_mag)
    if v == 0.0:
        return 0.0, -math.inf
    return math.copysign(1.0, v), math.log(abs(v))


def rate_constant(lam: float, sigma: float, gamma: float, c_e: float, r_cut: float, q: float) -> float:
    """2q (lambda - (2q-1) sigma^2 (1 + e^{2 gamma c_e (1 + 2 r_cut^2)}))."""
    blowup = _exp(2.0 * gamma * c_e * (1.0 + 2.0 * r_cut**2))
    return 2.0 * q * (lam - (2.0 * q - 1.0) * sigma**2 * (1.0 + blowup))


def _side(params: SystemParams, side: int) -> tuple[float, float, float]:
    if side == 1:
        return params.lambda1, params.sigma1, params.alpha
    return params.lambda2, params.sigma2, params.beta


def tail_constant(
    params: SystemParams, c_e: float, side: int, q: float, kappa: float, c_mz: dict, c_bdg: dict
) -> float:
    """Sup-process tail prefactor for the finite-N system at moment order q >= 2.

    Convention 0^0 = 1 covers the (q-2) factor at q = 2.  Accumulated in
    signed log space; a negative rate margin with fractional q/2 has no real
    value and comes back as nan.
    """
    if q < 2:
        raise ValueError("tail constant needs q >= 2")
    lam, sigma, gamma = _side(params, side)
    r2 = params.r_cut**2
    c_rate_q = rate_constant(lam, sigma, gamma, c_e, params.r_cut, q)
    margin = c_rate_q - q * kappa
    lead = 8.0**q * c_mz[2 * q]
    if sigma == 0.0:
        return lead
    if margin == 0.0:
        return math.inf
    log_mag = (
        3.0 * q * math.log(2.0)
        + q * math.log(sigma)
        + math.log(c_bdg[q])
        - 0.5 * q * math.log(abs(margin))
        - 0.5 * (q - 2.0) * (0.0 if q == 2.0 else math.log(q - 2.0))
        + 0.5 * _log1p_exp(2.0 * gamma * c_e * (1.0 + 2.0 * r2))
    )
    if margin > 0.0:
        sign = 1.0
    else:
        # (negative)^{-q/2}: real only when q/2 is an integer
        if (q / 2.0) != int(q / 2.0):
            return math.nan
        sign = (-1.0) ** int(q / 2.0)
    return lead + _signed_exp(sign, log_mag)


def tail_constant_copies(
    params: SystemParams,
    c_e: float,
    c_upper: float,
    c_lower: float,
    side: int,
    q: float,
    kappa: float,
    c_mz: dict,
    c_bdg: dict,
) -> float:
    """Sup-process tail prefactor for the mean-field copies at order q >= 2."""
    if q < 2:
        raise ValueError("tail constant needs q >= 2")
    lam, sigma, gamma = _side(params, side)
    r2 = params.r_cut**2
    base = (1.5**q) * tail_constant(params, c_e, side, q, kappa, c_mz, c_bdg)
    if sigma == 0.0:
        return base
    c_rate_1 = rate_constant(lam, sigma, gamma, c_e, params.r_cut, 1.0)
    c_rate_q = rate_constant(lam, sigma, gamma, c_e, params.r_cut, q)
    margin_1 = c_rate_1 - kappa
    margin_q = c_rate_q - q * kappa
    if margin_1 == 0.0 or margin_q == 0.0:
        return math.inf

    # (1 + sigma^2 (1 + e^{gamma c_e (1+2R^2)})^2 / (C_rate(1) - kappa))^q
    frac_log = (
        2.0 * math.log(sigma)
        + 2.0 * _log1p_exp(gamma * c_e * (1.0 + 2.0 * r2))
        - math.log(abs(margin_1))
    )
    frac_sign = 1.0 if margin_1 > 0.0 else -1.0
    paren_sign, paren_log = _log_one_plus_signed(frac_sign, frac_log)
    if paren_sign == 0.0:
        return base
    sign = paren_sign**q if (paren_sign > 0 or q == int(q)) else math.nan
    if isinstance(sign, float) and math.isnan(sign):
        return math.nan

    log_mag = q * paren_log
    log_mag += (3.0 * q - 1.0) * math.log(2.0) + 2.0 * q * math.log(sigma) + q * math.log(q - 1.0)
    log_mag -= q * math.log(abs(margin_q))
    if margin_q < 0.0:
        if q != int(q):
            return math.nan
        sign *= (-1.0) ** int(q)
    log_mag += math.log(c_mz[2 * q])
    log_mag += 2.0 * q * gamma * (c_upper + c_lower) * (1.0 + r2)
    log_mag += q * _log1p_exp(2.0 * gamma * c_e * (1.0 + 2.0 * r2))
    return base + _signed_exp(sign, log_mag)


@dataclass(frozen=True)
class ConstantsReport:
    """Every explicit constant of the decay/error analysis, as printed.

    ``flags[name]`` records whether the precondition backing that constant
    holds (positive rate margins etc.); values are evaluated regardless and
    flagged rather than raised.
    """

    c_rate_1: dict
    c_rate_2: dict
    kappa: float
    zeta: float
    c_tail_1: float
    c_tail_2: float
    c_bar_tail_1: float
    c_bar_tail_2: float
    c_decay: float
    c_error: float
    c_m: float
    flags: dict
    c_mz: dict
    c_bdg: dict
    grad_sup: float
    params: SystemParams = field(repr=False)

    def rows(self) -> list[tuple[str, float, bool]]:
        out = []
        for q in Q_GRID:
            out.append((f"c_rate_1_q{q}", self.c_rate_1[q], self.flags[f"c_rate_1_q{q}"]))
        for q in Q_GRID:
            out.append((f"c_rate_2_q{q}", self.c_rate_2[q], self.flags[f"c_rate_2_q{q}"]))
        out.append(("kappa", self.kappa, self.flags["kappa"]))
        out.append(("zeta", self.zeta, self.flags["zeta"]))
        out.append(("c_tail_1_q4", self.c_tail_1, self.flags["c_tail_1_q4"]))
        out.append(("c_tail_2_q4", self.c_tail_2, self.flags["c_tail_2_q4"]))
        out.append(("c_bar_tail_1_q4", self.c_bar_tail_1, self.flags["c_bar_tail_1_q4"]))
        out.append(("c_bar_tail_2_q4", self.c_bar_tail_2, self.flags["c_bar_tail_2_q4"]))
        out.append(("c_decay", self.c_decay, self.flags["c_decay"]))
        out.append(("c_error", self.c_error, self.flags["c_error"]))
        out.append(("c_m", self.c_m, self.flags["c_m"]))
        return out


def constants_report(
    params: SystemParams,
    obj_constants,
    grad_sup: float,
    c_mz: dict | None = None,
    c_bdg: dict | None = None,
) -> ConstantsReport:
    """Evaluate the printed constant formulas at the given parameters.

    The moment-inequality prefactors default to 1 and are echoed in the
    report; reported tail/error constants are placeholders unless the caller
    supplies literature values for them.
    """
    c_mz = dict(c_mz) if c_mz else {}
    c_bdg = dict(c_bdg) if c_bdg else {}
    for p in (2, 4, 8):
        c_mz.setdefault(p, 1.0)
    for p in (2, 4):
        c_bdg.setdefault(p, 1.0)

    c_e = float(obj_constants.c_e)
    c_upper = float(obj_constants.c_upper)
    c_lower = float(obj_constants.c_lower)
    l_e = float(obj_constants.l_e)
    r = params.r_cut
    r2 = r**2

    c_rate_1 = {q: rate_constant(params.lambda1, params.sigma1, params.alpha, c_e, r, q) for q in Q_GRID}
    c_rate_2 = {q: rate_constant(params.lambda2, params.sigma2, params.beta, c_e, r, q) for q in Q_GRID}
    kappa = min(c_rate_1[4], c_rate_2[4]) / 8.0
    zeta = kappa / 2.0

    c_tail_1 = tail_constant(params, c_e, 1, 4.0, kappa, c_mz, c_bdg)
    c_tail_2 = tail_constant(params, c_e, 2, 4.0, kappa, c_mz, c_bdg)
    c_bar_tail_1 = tail_constant_copies(params, c_e, c_upper, c_lower, 1, 4.0, kappa, c_mz, c_bdg)
    c_bar_tail_2 = tail_constant_copies(params, c_e, c_upper, c_lower, 2, 4.0, kappa, c_mz, c_bdg)

    lam_bar = max(params.lambda1, params.lambda2)
    sig_bar2 = max(params.sigma1, params.sigma2) ** 2
    gamma = max(params.alpha, params.beta)
    big_exp = _exp(8.0 * gamma * c_e * (1.0 + r2))
    mid_exp = 1.0 + _exp(2.0 * gamma * c_e * (1.0 + 2.0 * r2))

    c_decay = (
        2.0 * lam_bar
        + 72.0 * (lam_bar + 6.0 * sig_bar2) * gamma**2 * big_exp * (1.0 + r2)
        + 6.0 * sig_bar2 * (1.0 + r2) * mid_exp * grad_sup**2
    )
    c_error = (
        (2.0 * lam_bar + 6.0 * sig_bar2)
        * c_mz[2]
        * _exp(2.0 * gamma * (c_upper + c_lower) * (1.0 + r2))
        * mid_exp
        * r2
        + 6.0 * sig_bar2 * math.sqrt(max(c_tail_1, c_tail_2)) * (2.0 * r) ** 8 * mid_exp * grad_sup**2
        + (2.0 * lam_bar + 6.0 * sig_bar2)
        * c_mz[4]
        * _exp(4.0 * gamma * c_upper * (1.0 + r2))
        * l_e**2
        * (2.0 * r) ** 4
        * (1.0 + 4.0 * r) ** 2
        + 18432.0
        * (lam_bar + 6.0 * sig_bar2)
        * gamma**2
        * big_exp
        * r**8
        * max(
            math.sqrt(c_tail_1 + c_bar_tail_1) if c_tail_1 + c_bar_tail_1 >= 0 else math.nan,
            math.sqrt(c_tail_2 + c_bar_tail_2) if c_tail_2 + c_bar_tail_2 >= 0 else math.nan,
        )
    )
    c_m = 3.0 * gamma * _exp(4.0 * gamma * c_e * (1.0 + r2)) * l_e

    flags: dict[str, bool] = {}
    for side, rates in ((1, c_rate_1), (2, c_rate_2)):
        for q in Q_GRID:
            flags[f"c_rate_{side}_q{q}"] = rates[q] > 0.0
    rates_ok = flags["c_rate_1_q4"] and flags["c_rate_2_q4"]
    flags["kappa"] = rates_ok
    flags["zeta"] = rates_ok
    margins_ok_1 = c_rate_1[4] - 4.0 * kappa > 0.0 and c_rate_1[1] - kappa > 0.0
    margins_ok_2 = c_rate_2[4] - 4.0 * kappa > 0.0 and c_rate_2[1] - kappa > 0.0
    flags["c_tail_1_q4"] = rates_ok and margins_ok_1
    flags["c_tail_2_q4"] = rates_ok and margins_ok_2
    flags["c_bar_tail_1_q4"] = rates_ok and margins_ok_1
    flags["c_bar_tail_2_q4"] = rates_ok and margins_ok_2
    flags["c_decay"] = True
    flags["c_error"] = rates_ok and margins_ok_1 and margins_ok_2
    flags["c_m"] = True

    return ConstantsReport(
        c_rate_1=c_rate_1,
        c_rate_2=c_rate_2,
        kappa=kappa,
        zeta=zeta,
        c_tail_1=c_tail_1,
        c_tail_2=c_tail_2,
        c_bar_tail_1=c_bar_tail_1,
        c_bar_tail_2=c_bar_tail_2,
        c_decay=c_decay,
        c_error=c_error,
        c_m=c_m,
        flags=flags,
        c_mz=c_mz,
        c_bdg=c_bdg,
        grad_sup=grad_sup,
        params=params,
    )
