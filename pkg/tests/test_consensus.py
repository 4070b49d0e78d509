from __future__ import annotations

import numpy as np
import pytest

from cbmlab.consensus import (
    central_moment,
    check_consensus_stability,
    check_mean_consensus_gap,
    consensus_max,
    consensus_min,
    consensus_naive,
    mean,
)
from cbmlab.core import Ensemble, RngStream, sample_initial
from cbmlab.objectives import quadratic_saddle

OBJ_1D = quadratic_saddle(1.0, 1.0, 0.0)
OBJ_2D = quadratic_saddle(1.0, 1.0, np.eye(2))

# two particles {0, 1}, opponent mean 0, unit weight exponent:
# (0 + 1 * e^{-1/2}) / (1 + e^{-1/2})
TWO_POINT_VALUE = 0.37754066879814546


# ---- mean ----


def test_mean_examples() -> None:
    assert np.array_equal(mean(Ensemble(np.array([[2.5, -1.0]]))), np.array([2.5, -1.0]))
    assert mean(Ensemble(np.array([[-1.0], [1.0]])))[0] == 0.0
    assert mean(Ensemble(np.array([[1.0], [2.0], [3.0]])))[0] == 2.0


def test_central_moment_is_variance_at_p2() -> None:
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert central_moment(pts, 2.0) == pytest.approx(1.0)
    assert central_moment(pts, 4.0) == pytest.approx(1.0)


# ---- weighted consensus ----


def test_consensus_min_two_point_frozen_value() -> None:
    ens = Ensemble(np.array([[0.0], [1.0]]))
    cp = consensus_min(ens, np.array([0.0]), OBJ_1D, 1.0)
    assert float(cp.point[0]) == pytest.approx(TWO_POINT_VALUE, abs=1e-15)
    assert np.isfinite(cp.log_normalizer)


def test_consensus_max_two_point_frozen_value() -> None:
    ens = Ensemble(np.array([[0.0], [1.0]]))
    cp = consensus_max(ens, np.array([0.0]), OBJ_1D, 1.0)
    assert float(cp.point[0]) == pytest.approx(TWO_POINT_VALUE, abs=1e-15)


def test_consensus_zero_weight_exponent_is_mean() -> None:
    ens = Ensemble(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]]))
    assert np.array_equal(consensus_min(ens, np.zeros(2), OBJ_2D, 0.0).point, mean(ens))
    assert np.array_equal(consensus_max(ens, np.zeros(2), OBJ_2D, 0.0).point, mean(ens))


def test_consensus_single_particle_identity() -> None:
    ens = Ensemble(np.array([[0.4, -0.3]]))
    for alpha in (0.0, 1.0, 50.0):
        cp = consensus_min(ens, np.zeros(2), OBJ_2D, alpha)
        assert np.allclose(cp.point, ens.positions[0], atol=0)


def test_consensus_max_is_min_of_negated_objective() -> None:
    gen = np.random.default_rng(3)
    pts = gen.uniform(-1, 1, size=(16, 2))
    ens = Ensemble(pts)
    x_mean = gen.uniform(-0.5, 0.5, size=2)
    flipped = quadratic_saddle(1.0, 1.0, np.eye(2))
    # -E with roles swapped: evaluate(y, x) of the mirror objective b<->a, -C^T
    mirror = quadratic_saddle(1.0, 1.0, -np.eye(2))
    via_max = consensus_max(ens, x_mean, flipped, 2.0)
    via_min = consensus_min(ens, x_mean, mirror, 2.0)
    assert np.allclose(via_max.point, via_min.point, atol=1e-12)


def test_consensus_in_componentwise_hull_and_ball() -> None:
    for i in range(25):
        ens = sample_initial("uniform_ball", 40, 3, 1.0, RngStream(base_seed=60 + i))
        cp = consensus_min(ens, np.zeros(3), quadratic_saddle(1.0, 1.0, 0.0, d1=3, d2=3), 4.0)
        lo = ens.positions.min(axis=0) - 1e-12
        hi = ens.positions.max(axis=0) + 1e-12
        assert np.all(cp.point >= lo) and np.all(cp.point <= hi)
        assert np.linalg.norm(cp.point) <= 1.0 + 1e-12


def test_consensus_shift_invariance_of_objective() -> None:
    base = quadratic_saddle(1.0, 1.0, np.eye(2))
    shifted_eval = lambda x, y: base.evaluate(x, y) + 5.0
    shifted = base.__class__(
        d1=2, d2=2, evaluate=shifted_eval,
        upper_bound=lambda x: base.upper_bound(x) + 5.0,
        lower_bound=lambda y: base.lower_bound(y) + 5.0,
    )
    ens = sample_initial("uniform_ball", 32, 2, 1.0, RngStream(base_seed=8))
    a = consensus_min(ens, np.array([0.2, -0.1]), base, 3.0).point
    b = consensus_min(ens, np.array([0.2, -0.1]), shifted, 3.0).point
    assert np.allclose(a, b, atol=1e-12)


def test_consensus_concentrates_on_argmin_at_large_alpha() -> None:
    # well-separated objective values so the runner-up weight is ~e^{-80}
    pts = np.array([[0.3], [0.7], [-0.9], [0.5]])
    ens = Ensemble(pts)
    vals = OBJ_1D.evaluate(pts, np.zeros(1))
    best = pts[np.argmin(vals), 0]
    cp = consensus_min(ens, np.zeros(1), OBJ_1D, 1e3)
    assert float(cp.point[0]) == pytest.approx(best, abs=1e-12)


def test_consensus_largest_weight_is_exactly_one() -> None:
    ens = Ensemble(np.array([[0.0], [0.9]]))
    cp = consensus_min(ens, np.zeros(1), OBJ_1D, 100.0)
    # shift equals the max exponent, so exp(shift - shift) = 1 exactly:
    # with E(0,0)=0 the shift is 0 and the normalizer is the mean weight
    assert cp.max_exponent_shift == 0.0
    assert np.isfinite(cp.log_normalizer)


def test_consensus_rejects_negative_weight_exponent() -> None:
    ens = Ensemble(np.array([[0.0], [1.0]]))
    with pytest.raises(ValueError):
        consensus_min(ens, np.zeros(1), OBJ_1D, -1.0)


# ---- naive oracle ----


def test_naive_agrees_with_shifted_form() -> None:
    gen = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        n = int(gen.integers(2, 65))
        pts = gen.uniform(-1, 1, size=(n, 2))
        pts /= np.maximum(1.0, np.linalg.norm(pts, axis=1, keepdims=True))
        ens = Ensemble(pts)
        ym = gen.uniform(-0.5, 0.5, size=2)
        alpha = float(gen.uniform(0, 20))
        a = consensus_min(ens, ym, OBJ_2D, alpha).point
        b = consensus_naive(ens, ym, OBJ_2D, alpha).point
        worst = max(worst, float(np.linalg.norm(a - b)) / max(1.0, float(np.linalg.norm(b))))
    assert worst < 1e-12


def test_naive_overflows_where_shifted_survives() -> None:
    # opponent mean sqrt(2) makes the exponent positive-huge: naive infs out
    ens = Ensemble(np.array([[0.0], [1.0]]))
    ym = np.array([np.sqrt(2.0)])
    with pytest.raises(OverflowError):
        consensus_naive(ens, ym, OBJ_1D, 1e6)
    assert np.isfinite(consensus_min(ens, ym, OBJ_1D, 1e6).point).all()


def test_naive_underflows_to_zero_where_shifted_survives() -> None:
    # strictly positive objective values: every naive weight rounds to 0
    ens = Ensemble(np.array([[0.5], [1.0]]))
    with pytest.raises(OverflowError):
        consensus_naive(ens, np.zeros(1), OBJ_1D, 1e6)
    cp = consensus_min(ens, np.zeros(1), OBJ_1D, 1e6)
    assert float(cp.point[0]) == pytest.approx(0.5, abs=1e-12)


def test_naive_zero_exponent_is_mean() -> None:
    ens = Ensemble(np.array([[1.0], [3.0]]))
    assert float(consensus_naive(ens, np.zeros(1), OBJ_1D, 0.0).point[0]) == 2.0


# ---- inequality checks ----


def test_gap_check_zero_weight_exponent() -> None:
    ens = sample_initial("uniform_ball", 16, 2, 1.0, RngStream(base_seed=1))
    chk = check_mean_consensus_gap(ens, np.zeros(2), OBJ_2D, 0.0, 2.0, OBJ_2D.constants.c_e, 1.0)
    assert chk.lhs == 0.0 and chk.ok


def test_gap_check_single_particle_degenerate() -> None:
    ens = Ensemble(np.array([[0.3, 0.1]]))
    chk = check_mean_consensus_gap(ens, np.zeros(2), OBJ_2D, 2.0, 2.0, OBJ_2D.constants.c_e, 1.0)
    assert chk.lhs == 0.0 and chk.rhs == 0.0 and chk.ok


def test_gap_check_random_sweep() -> None:
    gen = np.random.default_rng(4)
    for i in range(1000):
        n = int(gen.integers(2, 65))
        ens = sample_initial("uniform_ball", n, 2, 1.0, RngStream(base_seed=100 + i))
        ym = gen.uniform(-0.5, 0.5, size=2)
        alpha = float(gen.uniform(0, 5))
        p = float(gen.choice([2.0, 4.0, 8.0]))
        chk = check_mean_consensus_gap(ens, ym, OBJ_2D, alpha, p, OBJ_2D.constants.c_e, 1.0)
        assert chk.ok


def test_stability_check_identical_inputs() -> None:
    ens = sample_initial("uniform_ball", 24, 2, 1.0, RngStream(base_seed=2))
    m2 = np.array([0.1, -0.2])
    chk = check_consensus_stability(
        ens, ens, m2, m2, OBJ_2D, 3.0, OBJ_2D.constants.c_e, OBJ_2D.constants.l_e, 1.0
    )
    assert chk.lhs == 0.0 and chk.ok


def test_stability_check_zero_weight_exponent() -> None:
    a = sample_initial("uniform_ball", 24, 2, 1.0, RngStream(base_seed=3))
    b = sample_initial("uniform_ball", 24, 2, 1.0, RngStream(base_seed=4))
    chk = check_consensus_stability(
        a, b, np.zeros(2), np.array([0.5, 0.0]), OBJ_2D, 0.0,
        OBJ_2D.constants.c_e, OBJ_2D.constants.l_e, 1.0,
    )
    assert chk.lhs == 0.0 and chk.c_m == 0.0 and chk.ok


def test_stability_check_random_sweep() -> None:
    gen = np.random.default_rng(9)
    for i in range(1000):
        n = int(gen.integers(2, 65))
        base = sample_initial("uniform_ball", n, 2, 1.0, RngStream(base_seed=5000 + i))
        moved = base.positions + gen.normal(0.0, 0.2, size=base.positions.shape)
        moved /= np.maximum(1.0, np.linalg.norm(moved, axis=1, keepdims=True))
        m2 = gen.uniform(-0.5, 0.5, size=2)
        m2b = m2 + gen.normal(0.0, 0.1, size=2)
        m2b /= max(1.0, float(np.linalg.norm(m2b)))
        alpha = float(np.exp(gen.uniform(np.log(0.3), np.log(5.0))))
        chk = check_consensus_stability(
            base, Ensemble(moved), m2, m2b, OBJ_2D, alpha,
            OBJ_2D.constants.c_e, OBJ_2D.constants.l_e, 1.0,
        )
        assert chk.ok


def test_stability_check_requires_equal_sizes() -> None:
    a = sample_initial("uniform_ball", 8, 2, 1.0, RngStream(base_seed=5))
    b = sample_initial("uniform_ball", 9, 2, 1.0, RngStream(base_seed=6))
    with pytest.raises(ValueError):
        check_consensus_stability(
            a, b, np.zeros(2), np.zeros(2), OBJ_2D, 1.0,
            OBJ_2D.constants.c_e, OBJ_2D.constants.l_e, 1.0,
        )
