import math

import numpy as np
import pytest

from carlemanlab.config import ExperimentConfig, apply_override, DEFAULTS
from carlemanlab.exceptions import CFLViolation, ConditionViolation, ConfigViolation
from carlemanlab.expr import Expression, ExpressionError, compile_expr


def test_expression_grammar():
    e = compile_expr("1 + t*x^2 - sin(pi*x)/2 + exp(-t)*cos(x2)")
    assert e.variables == {"t", "x", "x2"}
    p = np.array([[0.5, 0.0]])
    assert float(e(p, 1.0)[0]) == pytest.approx(1 + 0.25 - 0.5 + math.exp(-1))


def test_expression_number():
    assert float(compile_expr(2)(np.zeros((3, 1)))[1]) == 2.0


@pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "abs(x)", "y + 1", "sin(x, t)", "x if t else 1", "[x]"])
def test_expression_rejects(bad):
    with pytest.raises(ExpressionError):
        Expression(bad)


def test_expression_x2_needs_2d():
    with pytest.raises(ExpressionError):
        compile_expr("x2")(np.zeros((3, 1)))


def test_time_derivative():
    d = compile_expr("1 + t^2*sin(pi*x)").derivative_t()
    p = np.array([[0.5]])
    assert float(d(p, 3.0)[0]) == pytest.approx(6.0)


def test_defaults_and_overrides():
    cfg = ExperimentConfig.from_dict({"domain": {"x0": [-1.0]}}, ["run.seed=9", "nx=51", "source.R=2 + t"])
    assert cfg.run["seed"] == 9 and cfg["domain"]["nx"] == 51 and cfg["source"]["R"] == "2 + t"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigViolation):
        ExperimentConfig.from_dict({"run": {"bogus": 1}})
    with pytest.raises(ConfigViolation):
        apply_override(DEFAULTS, "noequals")


def test_default_T_is_above_critical():
    cfg = ExperimentConfig.from_dict({"domain": {"x0": [-1.0]}})
    assert cfg.T() == pytest.approx(1.15 * math.sqrt(3))
    assert cfg.T("observe") == pytest.approx(1.15 * 2 * math.sqrt(3))


def test_validate_time_condition():
    cfg = ExperimentConfig.from_dict({"domain": {"x0": [-1.0]}, "run": {"T": 1.0}})
    with pytest.raises(ConditionViolation) as info:
        cfg.validate("stability")
    assert "sqrt(d1^2 - d0^2)" in str(info.value)
    ok = ExperimentConfig.from_dict({"domain": {"x0": [-1.0]}, "run": {"T": 1.0, "exploratory": True}})
    assert ok.validate("stability")


def test_validate_source_floor():
    cfg = ExperimentConfig.from_dict({"domain": {"x0": [-1.0]}, "source": {"R": "t"}})
    with pytest.raises(ConditionViolation):
        cfg.validate("stability")


def test_validate_cfl_over_ladder():
    cfg = ExperimentConfig.from_dict({"domain": {"x0": [-1.0]}, "run": {"dt": 0.005}})
    with pytest.raises(CFLViolation):
        cfg.validate("stability")


def test_load_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('equation = "parabolic"\n[domain]\nnx = 41\n[coefficients]\nb = ["0.5"]\nc = "-1"\n')
    cfg = ExperimentConfig.load(p)
    d = cfg.domain()
    co = cfg.coefficients(d)
    assert np.allclose(co.c, -1.0)
    with pytest.raises(ConfigViolation):
        ExperimentConfig.load(tmp_path / "missing.toml")


def test_digest_stable():
    a = ExperimentConfig.from_dict({"run": {"seed": 1}})
    b = ExperimentConfig.from_dict({"run": {"seed": 1}})
    c = ExperimentConfig.from_dict({"run": {"seed": 2}})
    assert a.digest() == b.digest() != c.digest()
