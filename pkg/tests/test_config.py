import pytest

from cbmlab.config import ConfigError, RunConfig, parse_config
from cbmlab.core import SystemParams
from cbmlab.stats import constants_report


def test_empty_config_echoes_defaults():
    cfg = parse_config("")
    assert cfg.params == SystemParams()
    assert cfg.objective_name == "quadratic_saddle"
    assert cfg.trials == 64
    assert cfg.sweep_ns == (16, 32, 64, 128, 256)
    assert cfg.experiment == "simulate"
    assert cfg.output_dir == "out"
    assert cfg.tail_kappa is None
    assert cfg.initial_kind == "uniform_ball"


def test_parse_sets_fields_and_ignores_comments():
    text = """
    # full-line comment
    params.lambda1 = 2.5
    params.n1 = 16   # trailing comment
    params.project_to_ball = false
    run.trials = 5
    run.output_dir = results
    sweep.ns = 8, 16, 32
    tail.threshold_a = 0.75
    tail.kappa_mode = 0.5
    initial.kind = truncated_gaussian
    initial.scale = 0.4
    cutoff.plateau_frac = 0.8
    """
    cfg = parse_config(text)
    assert cfg.params.lambda1 == 2.5
    assert cfg.params.n1 == 16
    assert cfg.params.project_to_ball is False
    assert cfg.trials == 5
    assert cfg.output_dir == "results"
    assert cfg.sweep_ns == (8, 16, 32)
    assert cfg.tail_threshold_a == 0.75
    assert cfg.tail_kappa == 0.5
    assert cfg.initial_kind == "truncated_gaussian"
    assert cfg.initial_scale == 0.4
    assert cfg.cutoff.r_plateau == pytest.approx(0.8 * cfg.params.r_cut)


def test_kappa_mode_from_constants_keyword():
    cfg = parse_config("tail.kappa_mode = from_constants")
    assert cfg.tail_kappa is None


def test_unknown_key_cites_line():
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'params\.lamda1'"):
        parse_config("params.lambda1 = 1.0\nparams.lamda1 = 2.0\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("runs.trials = 3")


def test_negative_param_names_key_path():
    with pytest.raises(ConfigError, match=r"params\.lambda1"):
        parse_config("params.lambda1 = -1")


def test_malformed_lines_error_with_number():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("params.lambda1 2.0")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("params.lambda1 =")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("params.lambda1 = abc")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("run.trials = 2\nrun.trials = 3\n")


def test_sweep_ns_validation():
    with pytest.raises(ConfigError, match=r"sweep\.ns"):
        parse_config("sweep.ns = 32, 16")
    with pytest.raises(ConfigError, match=r"sweep\.ns"):
        parse_config("sweep.ns = 1, 2")
    with pytest.raises(ConfigError, match="bad value"):
        parse_config("sweep.ns = 8, x")


def test_run_config_field_validation():
    with pytest.raises(ConfigError, match=r"run\.trials"):
        RunConfig(trials=0)
    with pytest.raises(ConfigError, match=r"run\.experiment"):
        RunConfig(experiment="nope")
    with pytest.raises(ConfigError, match=r"initial\.kind"):
        RunConfig(initial_kind="gaussian")
    with pytest.raises(ConfigError, match=r"tail\.threshold_a"):
        RunConfig(tail_threshold_a=0.0)
    with pytest.raises(ConfigError, match=r"cutoff\.plateau_frac"):
        RunConfig(plateau_frac=1.0)


def test_resolved_objective_defaults_and_cache():
    cfg = parse_config("")
    obj = cfg.resolved_objective()
    assert obj.d1 == cfg.params.d1 and obj.d2 == cfg.params.d2
    assert obj.constants is not None
    assert cfg.resolved_objective() is obj


def test_resolved_objective_args_and_dims():
    cfg = parse_config("objective.name = quadratic_saddle\nobjective.a = 2.0\nobjective.b = 1.0\nobjective.coupling = 0.0\n")
    obj = cfg.resolved_objective()
    assert obj.constants.c_upper == pytest.approx(1.0)  # a/2 with no coupling
    bad = parse_config("objective.name = quadratic_saddle\nobjective.a = 1.0\nobjective.b = 1.0\nobjective.d1 = 3\n")
    with pytest.raises(ConfigError, match="dims"):
        bad.resolved_objective()
    with pytest.raises(ConfigError, match="rejected args"):
        parse_config("objective.name = quadratic_saddle\nobjective.zz = 1.0\n").resolved_objective()
    with pytest.raises(ValueError, match="unknown objective"):
        parse_config("objective.name = mystery\n").resolved_objective()


def test_resolved_objective_estimates_missing_constants():
    cfg = parse_config("objective.name = nonconvex_saddle\nobjective.wiggle = 0.5\nparams.d1 = 1\nparams.d2 = 1\n")
    obj = cfg.resolved_objective()
    assert obj.constants is not None
    assert obj.constants.l_e > 0


def test_resolved_kappa_modes():
    cfg = parse_config("tail.kappa_mode = 0.125")
    obj = cfg.resolved_objective()
    assert cfg.resolved_kappa(obj) == 0.125
    auto = parse_config("")
    obj2 = auto.resolved_objective()
    want = constants_report(auto.params, obj2.constants, auto.cutoff.grad_sup).kappa
    assert auto.resolved_kappa(obj2) == pytest.approx(want)


def test_with_overrides():
    cfg = parse_config("params.seed = 7")
    out = cfg.with_overrides(seed=99, output_dir="elsewhere")
    assert out.params.seed == 99
    assert out.output_dir == "elsewhere"
    assert out.params.lambda1 == cfg.params.lambda1
    same = cfg.with_overrides()
    assert same == cfg
