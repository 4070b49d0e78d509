"""Euler-Maruyama integration of the coupled particle systems.

Three pairs of ensembles advance together: the finite system, its mean-field
copies (driven by the SAME Brownian increments, consensus taken from the
reference pair), and an independent reference pair standing in for the
mean-field law.  The index-coupled squared distance between system and copies
is the quantity whose N-scaling the harness measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .consensus import (
    central_moment,
    check_consensus_stability,
    check_mean_consensus_gap,
    consensus_max,
    consensus_min,
    mean,
)
from .core import (
    CutoffSpec,
    Ensemble,
    RngStream,
    Species,
    SystemParams,
    gaussian_block,
    phi,
    sample_initial,
)
from .objectives import ObjectiveSpec
from .stats import Q_GRID, TrajectoryStats

__all__ = [
    "CoupledState",
    "StepNoise",
    "SimulationDiverged",
    "drift_diffusion_step",
    "initial_state",
    "advance",
    "simulate",
]


class SimulationDiverged(RuntimeError):
    """Non-finite update mid-run; carries the statistics recorded so far."""

    def __init__(self, message: str, partial_stats: TrajectoryStats | None = None):
        super().__init__(message)
        self.partial_stats = partial_stats


@dataclass(frozen=True)
class StepNoise:
    """One step of Gaussian increments.  ``x`` and ``y`` are shared verbatim
    between system and copies (the coupling); reference increments are
    independent draws."""

    x: np.ndarray
    y: np.ndarray
    x_ref: np.ndarray
    y_ref: np.ndarray

    @classmethod
    def draw(cls, params: SystemParams, trial: int, step: int) -> "StepNoise":
        p = params
        return cls(
            x=gaussian_block(p.seed, trial, Species.X, step, p.n1, p.d1, p.dt),
            y=gaussian_block(p.seed, trial, Species.Y, step, p.n2, p.d2, p.dt),
            x_ref=gaussian_block(p.seed, trial, Species.X_REF, step, p.n_ref, p.d1, p.dt),
            y_ref=gaussian_block(p.seed, trial, Species.Y_REF, step, p.n_ref, p.d2, p.dt),
        )


@dataclass(frozen=True)
class CoupledState:
    x_sys: Ensemble
    y_sys: Ensemble
    x_bar: Ensemble
    y_bar: Ensemble
    x_ref: Ensemble
    y_ref: Ensemble
    t: float
    step_index: int

    def __post_init__(self) -> None:
        if self.x_bar.n != self.x_sys.n or self.y_bar.n != self.y_sys.n:
            raise ValueError("copies must pair 1:1 with system particles")
        if self.x_ref.n != self.y_ref.n:
            raise ValueError("reference ensembles must share a size")


def drift_diffusion_step(
    ens: Ensemble,
    consensus: np.ndarray,
    lam: float,
    sigma: float,
    cutoff: CutoffSpec,
    noise: np.ndarray,
    dt: float,
    project: bool,
) -> Ensemble:
    """z <- z - lam (z - m) dt + sigma phi(z) (z - m) * dW, then optional
    radial projection onto the closed r_cut ball."""
    m = np.asarray(consensus, dtype=np.float64)
    if m.shape != (ens.dim,) or not np.all(np.isfinite(m)):
        raise ValueError("consensus point must be finite with shape (dim,)")
    z = ens.positions
    if np.shape(noise) != z.shape:
        raise ValueError(f"noise must have shape {z.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        pull = z - m
        out = z - lam * dt * pull
        if sigma != 0.0:
            out = out + sigma * np.asarray(phi(cutoff, z)).reshape(-1, 1) * pull * noise
    if not np.all(np.isfinite(out)):
        raise RuntimeError("non-finite drift-diffusion update")
    if project:
        norms = np.sqrt((out * out).sum(axis=1))
        over = norms > cutoff.r_cut
        if np.any(over):
            out = out.copy()
            out[over] *= (cutoff.r_cut / norms[over])[:, None]
    return Ensemble(out)


def initial_state(cfg: RunConfig, trial: int) -> CoupledState:
    """System from the initial sampler, copies equal to the system rows,
    reference drawn independently from the same law."""
    p = cfg.params

    def draw(species: Species, n: int, dim: int) -> Ensemble:
        stream = RngStream(base_seed=p.seed, trial=trial, species=species)
        return sample_initial(cfg.initial_kind, n, dim, p.r_cut, stream, cfg.initial_scale)

    x_sys = draw(Species.X, p.n1, p.d1)
    y_sys = draw(Species.Y, p.n2, p.d2)
    return CoupledState(
        x_sys=x_sys,
        y_sys=y_sys,
        x_bar=x_sys,
        y_bar=y_sys,
        x_ref=draw(Species.X_REF, p.n_ref, p.d1),
        y_ref=draw(Species.Y_REF, p.n_ref, p.d2),
        t=0.0,
        step_index=0,
    )


def advance(
    state: CoupledState,
    params: SystemParams,
    obj: ObjectiveSpec,
    cutoff: CutoffSpec,
    trial: int,
    copies_track_system: bool = False,
    noise: StepNoise | None = None,
) -> CoupledState:
    """One synchronized explicit step of all six ensembles.

    ``copies_track_system`` feeds the copies the system consensus points
    instead of the reference ones, forcing identical recursions; test-only.
    """
    p = params
    x_sys_mean = mean(state.x_sys)
    y_sys_mean = mean(state.y_sys)
    x_ref_mean = mean(state.x_ref)
    y_ref_mean = mean(state.y_ref)

    try:
        sys_mx = consensus_min(state.x_sys, y_sys_mean, obj, p.alpha).point
        sys_my = consensus_max(state.y_sys, x_sys_mean, obj, p.beta).point
        ref_mx = consensus_min(state.x_ref, y_ref_mean, obj, p.alpha).point
        ref_my = consensus_max(state.y_ref, x_ref_mean, obj, p.beta).point
    except ArithmeticError as exc:
        # overflow in the objective is a divergence symptom, not a usage error
        raise RuntimeError(f"{exc} at step {state.step_index}") from None
    bar_mx, bar_my = (sys_mx, sys_my) if copies_track_system else (ref_mx, ref_my)

    if noise is None:
        noise = StepNoise.draw(p, trial, state.step_index)

    try:
        x_sys = drift_diffusion_step(state.x_sys, sys_mx, p.lambda1, p.sigma1, cutoff, noise.x, p.dt, p.project_to_ball)
        x_bar = drift_diffusion_step(state.x_bar, bar_mx, p.lambda1, p.sigma1, cutoff, noise.x, p.dt, p.project_to_ball)
        y_sys = drift_diffusion_step(state.y_sys, sys_my, p.lambda2, p.sigma2, cutoff, noise.y, p.dt, p.project_to_ball)
        y_bar = drift_diffusion_step(state.y_bar, bar_my, p.lambda2, p.sigma2, cutoff, noise.y, p.dt, p.project_to_ball)
        x_ref = drift_diffusion_step(state.x_ref, ref_mx, p.lambda1, p.sigma1, cutoff, noise.x_ref, p.dt, p.project_to_ball)
        y_ref = drift_diffusion_step(state.y_ref, ref_my, p.lambda2, p.sigma2, cutoff, noise.y_ref, p.dt, p.project_to_ball)
    except RuntimeError as exc:
        raise RuntimeError(f"{exc} at step {state.step_index}") from None

    return CoupledState(
        x_sys=x_sys, y_sys=y_sys, x_bar=x_bar, y_bar=y_bar,
        x_ref=x_ref, y_ref=y_ref,
        t=state.t + p.dt, step_index=state.step_index + 1,
    )


class _Recorder:
    """Accumulates per-record measurements and the always-on inequality
    spot checks (consensus-to-mean gap, consensus shift stability)."""

    _TAGS = ("x_sys", "y_sys", "x_bar", "y_bar", "x_ref", "y_ref")

    def __init__(self, params: SystemParams, obj: ObjectiveSpec, cutoff: CutoffSpec, kappa: float):
        self.params = params
        self.obj = obj
        self.cutoff = cutoff
        self.kappa = kappa
        self.times: list = []
        self.var: dict = {tag: {q: [] for q in Q_GRID} for tag in self._TAGS}
        self.d_x: list = []
        self.d_y: list = []
        self.consensus_x: list = []
        self.consensus_y: list = []
        self.max_norm_x: list = []
        self.max_norm_y: list = []
        self.running_x = -np.inf
        self.running_y = -np.inf
        self.sup_wvar_x: list = []
        self.sup_wvar_y: list = []
        self.gap_checks = 0
        self.gap_violations = 0
        self.stability_checks = 0
        self.stability_violations = 0

    def record(self, state: CoupledState) -> None:
        # compute everything before committing so a mid-record overflow
        # leaves the already-recorded rows intact
        p = self.params
        with np.errstate(over="ignore"):
            moments = {}
            for tag in self._TAGS:
                pos = getattr(state, tag).positions
                moments[tag] = {q: central_moment(pos, 2.0 * q) for q in Q_GRID}
            dx = state.x_sys.positions - state.x_bar.positions
            dy = state.y_sys.positions - state.y_bar.positions
            d_x = float((dx * dx).sum(axis=1).mean())
            d_y = float((dy * dy).sum(axis=1).mean())
            weight = float(np.exp(self.kappa * state.t))
            wx = weight * moments["x_sys"][1]
            wy = weight * moments["y_sys"][1]
        x_mean = mean(state.x_sys)
        y_mean = mean(state.y_sys)
        try:
            cons_x = consensus_min(state.x_sys, y_mean, self.obj, p.alpha).point
            cons_y = consensus_max(state.y_sys, x_mean, self.obj, p.beta).point
        except ArithmeticError as exc:
            raise RuntimeError(f"{exc} recording step {state.step_index}") from None
        scalars = [d_x, d_y, wx, wy] + [v for per in moments.values() for v in per.values()]
        if not all(np.isfinite(v) for v in scalars):
            raise RuntimeError(f"non-finite statistic recording step {state.step_index}")

        self.times.append(state.t)
        for tag in self._TAGS:
            for q in Q_GRID:
                self.var[tag][q].append(moments[tag][q])
        self.d_x.append(d_x)
        self.d_y.append(d_y)
        self.consensus_x.append(cons_x)
        self.consensus_y.append(cons_y)
        self.max_norm_x.append(state.x_sys.max_norm())
        self.max_norm_y.append(state.y_sys.max_norm())

        self.running_x = max(self.running_x, wx)
        self.running_y = max(self.running_y, wy)
        self.sup_wvar_x.append(self.running_x)
        self.sup_wvar_y.append(self.running_y)

        c = self.obj.constants
        if c is not None:
            gx = check_mean_consensus_gap(state.x_sys, y_mean, self.obj, p.alpha, 2.0, c.c_e, p.r_cut)
            gy = check_mean_consensus_gap(state.y_sys, x_mean, self.obj, p.beta, 2.0, c.c_e, p.r_cut, maximize=True)
            self.gap_checks += 2
            self.gap_violations += (not gx.ok) + (not gy.ok)
            sx = check_consensus_stability(
                state.x_sys, state.x_bar, y_mean, mean(state.y_bar), self.obj, p.alpha, c.c_e, c.l_e, p.r_cut
            )
            sy = check_consensus_stability(
                state.y_sys, state.y_bar, x_mean, mean(state.x_bar), self.obj, p.beta, c.c_e, c.l_e, p.r_cut, maximize=True
            )
            self.stability_checks += 2
            self.stability_violations += (not sx.ok) + (not sy.ok)

    def build(self) -> TrajectoryStats:
        return TrajectoryStats(
            times=np.asarray(self.times),
            variances={tag: {q: np.asarray(v) for q, v in per.items()} for tag, per in self.var.items()},
            d_x=np.asarray(self.d_x),
            d_y=np.asarray(self.d_y),
            consensus_x=np.asarray(self.consensus_x),
            consensus_y=np.asarray(self.consensus_y),
            sup_wvar_x=np.asarray(self.sup_wvar_x),
            sup_wvar_y=np.asarray(self.sup_wvar_y),
            max_norm_x=np.asarray(self.max_norm_x),
            max_norm_y=np.asarray(self.max_norm_y),
            kappa=self.kappa,
            gap_checks=self.gap_checks,
            gap_violations=self.gap_violations,
            stability_checks=self.stability_checks,
            stability_violations=self.stability_violations,
        )


def simulate(cfg: RunConfig, trial: int, copies_track_system: bool = False) -> TrajectoryStats:
    """Run one trial to t_end, recording every record_stride steps (plus the
    initial and final states).  On divergence the partial record is attached
    to the raised SimulationDiverged."""
    p = cfg.params
    obj = cfg.resolved_objective()
    cutoff = cfg.cutoff
    kappa = cfg.resolved_kappa(obj)

    state = initial_state(cfg, trial)
    rec = _Recorder(p, obj, cutoff, kappa)
    rec.record(state)
    try:
        for k in range(p.n_steps):
            state = advance(state, p, obj, cutoff, trial, copies_track_system)
            done = k + 1
            if done % p.record_stride == 0 or done == p.n_steps:
                rec.record(state)
    except (RuntimeError, ArithmeticError) as exc:
        raise SimulationDiverged(f"trial {trial}: {exc}", partial_stats=rec.build()) from None
    return rec.build()
