from __future__ import annotations

import numpy as np
import pytest

from cbmlab.core import (
    CutoffSpec,
    Ensemble,
    RngStream,
    Species,
    SystemParams,
    gaussian_block,
    gaussian_increment,
    initial_variance,
    phi,
    sample_initial,
    validate_params,
)


class FakeConstants:
    def __init__(self, gap: float) -> None:
        self.c_e = gap


def make_params(**kw) -> SystemParams:
    base = dict(
        lambda1=1.0, lambda2=1.0, sigma1=0.5, sigma2=0.5, alpha=1.0, beta=1.0,
        r_cut=1.0, d1=2, d2=2, n1=8, n2=8, n_ref=16, dt=0.01, t_end=1.0,
    )
    base.update(kw)
    return SystemParams(**base)


# ---- parameter validation ----


def test_params_reject_sign_violations() -> None:
    with pytest.raises(ValueError, match="lambda1"):
        make_params(lambda1=-1.0)
    with pytest.raises(ValueError, match="dt"):
        make_params(dt=0.0)
    with pytest.raises(ValueError, match="sigma2"):
        make_params(sigma2=-0.1)
    with pytest.raises(ValueError, match="r_cut"):
        make_params(r_cut=float("nan"))
    with pytest.raises(ValueError, match="n1"):
        make_params(n1=0)
    with pytest.raises(ValueError, match="n_ref"):
        make_params(n1=32, n2=8, n_ref=16)


def test_validate_sigma_zero_collapses_rate_conditions() -> None:
    p = make_params(sigma1=0.0, sigma2=0.0, alpha=50.0, beta=50.0, r_cut=5.0)
    report = validate_params(p, FakeConstants(gap=3.0))
    assert report.all_rate_conditions_pass()


def test_validate_rate_condition_fails_at_unit_parameters() -> None:
    # lambda=1, sigma=1, alpha=1, gap constant 1, R=1: threshold is 1 + e^6
    p = make_params(lambda1=1.0, sigma1=1.0, alpha=1.0, r_cut=1.0)
    report = validate_params(p, FakeConstants(gap=1.0))
    entry = report.entry("rate_x_q1")
    assert not entry.passed
    assert entry.rhs == pytest.approx(1.0 + np.exp(6.0), rel=1e-14)


def test_validate_reports_both_headline_variants() -> None:
    p = make_params(lambda1=1.0, sigma1=1.0, alpha=1.0, r_cut=1.0)
    report = validate_params(p, FakeConstants(gap=1.0))
    printed = report.entry("main_printed_x")
    gapexp = report.entry("main_gapexp_x")
    grad = CutoffSpec.for_radius(1.0).grad_sup
    assert printed.rhs == pytest.approx(
        max(15.0 * (1.0 + np.exp(4.0)), 3.0 * (1.0 + 4.0 * grad**2)), rel=1e-12
    )
    assert gapexp.rhs == pytest.approx(
        max(15.0 * (1.0 + np.exp(6.0)), 3.0 * (1.0 + 4.0 * grad**2)), rel=1e-12
    )


def test_validate_dt_stability_warning() -> None:
    p = make_params(lambda1=2.0, lambda2=2.0, dt=1.0)
    report = validate_params(p, FakeConstants(gap=1.0))
    assert any("dt" in w for w in report.warnings)
    quiet = validate_params(make_params(lambda1=2.0, lambda2=2.0, dt=0.01), FakeConstants(gap=1.0))
    assert quiet.warnings == ()


# ---- cutoff ----


def test_cutoff_rejects_bad_radii() -> None:
    with pytest.raises(ValueError):
        CutoffSpec(r_cut=1.0, r_plateau=1.0)
    with pytest.raises(ValueError):
        CutoffSpec(r_cut=1.0, r_plateau=0.0)


def test_phi_plateau_boundary_and_support() -> None:
    spec = CutoffSpec.for_radius(2.0)
    assert phi(spec, np.zeros(3)) == 1.0
    assert phi(spec, np.array([spec.r_plateau, 0.0])) == 1.0
    assert phi(spec, np.array([0.0, 2.0])) == 0.0
    assert phi(spec, np.array([5.0, 0.0])) == 0.0


def test_phi_midpoint_frozen_value() -> None:
    # exponential transition evaluated at the middle of the annulus
    spec = CutoffSpec.for_radius(2.0)
    mid = 0.5 * (spec.r_plateau + spec.r_cut)
    assert phi(spec, np.array([mid, 0.0])) == pytest.approx(0.5, abs=1e-12)


def test_phi_sandwich_at_random_points() -> None:
    gen = np.random.default_rng(11)
    spec = CutoffSpec.for_radius(1.5)
    z = gen.uniform(-2.5, 2.5, size=(10_000, 3))
    vals = phi(spec, z)
    r = np.sqrt((z**2).sum(axis=1))
    assert np.all((vals >= 0.0) & (vals <= 1.0))
    assert np.all(vals[r <= spec.r_plateau] == 1.0)
    assert np.all(vals[r >= spec.r_cut] == 0.0)


def test_phi_monotone_in_radius() -> None:
    spec = CutoffSpec.for_radius(1.0)
    radii = np.linspace(0.0, 1.2, 500)
    vals = phi(spec, radii[:, None] * np.array([[1.0, 0.0]]))
    assert np.all(np.diff(vals) <= 1e-15)


def test_phi_finite_difference_gradient_bounded() -> None:
    gen = np.random.default_rng(5)
    spec = CutoffSpec.for_radius(2.0)
    pts = gen.uniform(-2.2, 2.2, size=(1000, 2))
    h = 1e-6
    grads = np.empty_like(pts)
    for j in range(2):
        step = np.zeros(2)
        step[j] = h
        grads[:, j] = (phi(spec, pts + step) - phi(spec, pts - step)) / (2 * h)
    norms = np.sqrt((grads**2).sum(axis=1))
    assert norms.max() <= spec.grad_sup + 1e-3


# ---- keyed increments ----


def test_increment_sqrt_dt_scaling() -> None:
    s = RngStream(base_seed=7, trial=3, species=Species.Y, particle=4, step=20)
    one = gaussian_increment(s, 3, 1.0)
    four = gaussian_increment(s, 3, 4.0)
    assert np.allclose(four, 2.0 * one, rtol=0, atol=0)


def test_increment_replay_out_of_order() -> None:
    late = gaussian_increment(RngStream(base_seed=1, trial=0, particle=2, step=9), 2, 0.5)
    _ = gaussian_increment(RngStream(base_seed=1, trial=0, particle=0, step=1), 2, 0.5)
    again = gaussian_increment(RngStream(base_seed=1, trial=0, particle=2, step=9), 2, 0.5)
    assert np.array_equal(late, again)


def test_block_rows_match_single_increments() -> None:
    block = gaussian_block(42, 1, Species.X, 7, n=9, dim=3, dt=0.25)
    for particle in (0, 4, 8):
        s = RngStream(base_seed=42, trial=1, species=Species.X, particle=particle, step=7)
        assert np.array_equal(block[particle], gaussian_increment(s, 3, 0.25))


def test_block_prefix_stable_under_larger_n() -> None:
    small = gaussian_block(3, 0, Species.X_REF, 2, n=5, dim=2, dt=1.0)
    large = gaussian_block(3, 0, Species.X_REF, 2, n=50, dim=2, dt=1.0)
    assert np.array_equal(large[:5], small)


def test_blocks_differ_across_species_and_steps() -> None:
    a = gaussian_block(0, 0, Species.X, 0, n=4, dim=2, dt=1.0)
    b = gaussian_block(0, 0, Species.X_REF, 0, n=4, dim=2, dt=1.0)
    c = gaussian_block(0, 0, Species.X, 1, n=4, dim=2, dt=1.0)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_cross_particle_independence() -> None:
    # 10^5 paired draws across steps; sample correlation obeys the CLT bound
    xs = []
    ys = []
    for step in range(100):
        block = gaussian_block(13, 0, Species.X, step, n=2, dim=500, dt=1.0)
        xs.append(block[0])
        ys.append(block[1])
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    corr = float(np.corrcoef(x, y)[0, 1])
    assert abs(corr) < 0.02
    assert abs(x.mean()) < 0.02 and abs(x.var() - 1.0) < 0.02


# ---- initial samplers ----


def test_sampler_support_inside_ball() -> None:
    for kind in ("uniform_ball", "truncated_gaussian"):
        ens = sample_initial(kind, 1, 4, 0.7, RngStream(base_seed=2))
        assert ens.max_norm() <= 0.7
        big = sample_initial(kind, 2000, 3, 1.3, RngStream(base_seed=3))
        assert big.max_norm() <= 1.3


def test_sampler_deterministic_per_coordinates() -> None:
    a = sample_initial("uniform_ball", 64, 2, 1.0, RngStream(base_seed=9, trial=4))
    b = sample_initial("uniform_ball", 64, 2, 1.0, RngStream(base_seed=9, trial=4))
    c = sample_initial("uniform_ball", 64, 2, 1.0, RngStream(base_seed=9, trial=5))
    assert np.array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, c.positions)


def test_sampler_uniform_ball_mean_near_zero() -> None:
    ens = sample_initial("uniform_ball", 100_000, 1, 1.0, RngStream(base_seed=17))
    assert abs(float(ens.positions.mean())) < 0.02


def test_sampler_rejects_unknown_kind() -> None:
    with pytest.raises(ValueError):
        sample_initial("cauchy", 4, 2, 1.0, RngStream(base_seed=0))


def test_sampler_truncated_gaussian_degenerate_scale_raises() -> None:
    with pytest.raises(RuntimeError):
        sample_initial("truncated_gaussian", 10, 2, 1.0, RngStream(base_seed=0), scale=100.0)


def test_initial_variance_uniform_ball_closed_form() -> None:
    assert initial_variance("uniform_ball", 2, 2.0) == pytest.approx(2.0, rel=1e-15)
    assert initial_variance("uniform_ball", 1, 1.0) == pytest.approx(1.0 / 3.0, rel=1e-15)


def test_initial_variance_truncated_gaussian_matches_sample() -> None:
    var = initial_variance("truncated_gaussian", 2, 1.0)
    ens = sample_initial("truncated_gaussian", 50_000, 2, 1.0, RngStream(base_seed=23))
    centered = ens.positions - ens.positions.mean(axis=0)
    sample_var = float((centered**2).sum(axis=1).mean())
    assert var == pytest.approx(sample_var, rel=0.05)
    assert var < 2.0 / 9.0  # truncation shrinks below the untruncated scale^2 * dim


# ---- ensembles ----


def test_ensemble_is_read_only() -> None:
    ens = Ensemble(np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ens.positions[0, 0] = 1.0


def test_ensemble_shape_and_finiteness_checks() -> None:
    with pytest.raises(ValueError):
        Ensemble(np.zeros(6))
    with pytest.raises(ValueError):
        Ensemble(np.array([[np.inf, 0.0]]))


def test_ensemble_max_norm() -> None:
    ens = Ensemble(np.array([[3.0, 4.0], [0.0, 1.0]]))
    assert ens.max_norm() == pytest.approx(5.0)
