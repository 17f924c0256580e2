import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nhtorus.jerk import JerkSpec, emit_jerk_config, jerk_standard_form
from nhtorus.sysdef import (
    ConfigError,
    PeriodicityError,
    build_system,
    check_periodicity,
    emit_config,
    expr_planar_field,
    load_config,
    normalise_expression,
)


def test_simple_system():
    system = build_system({"period": "2*pi", "order": 1, "F1": ["cos(t)", "sin(t)"]})
    assert system.period == pytest.approx(2 * math.pi)
    np.testing.assert_allclose(system.F(1)(0.0, np.array([0.3, -0.2])), [1.0, 0.0])


def test_zero_field_is_none():
    system = build_system({"period": 1, "order": 2, "F1": ["0", "0"], "F2": ["x1", "0"]})
    assert system.F(1) is None
    np.testing.assert_array_equal(system.evaluate(1, 0.0, [1.0, 2.0]), [0.0, 0.0])


def test_periodicity_rejection():
    with pytest.raises(PeriodicityError) as info:
        build_system({"period": "2*pi", "order": 2, "F1": ["0", "cos(t)"], "F2": ["t", "0"]})
    assert info.value.index == 2


@pytest.mark.parametrize(
    "config, message",
    [
        ({"order": 1, "F1": ["0", "0"]}, "period"),
        ({"period": 1, "order": 2, "F1": ["0", "0"]}, "F2"),
        ({"period": 1, "order": 1, "F1": ["0", "0"], "F3": ["0", "0"]}, "F3"),
        ({"period": 1, "order": 1, "F1": ["0", "0"], "colour": "red"}, "colour"),
        ({"period": 1, "order": 1, "F1": ["0"]}, "F1"),
        ({"period": -1, "order": 1, "F1": ["0", "0"]}, "period"),
        ({"period": 1, "order": 0}, "order"),
        ({"period": 1, "order": 1, "F1": ["y", "0"]}, "y"),
    ],
)
def test_config_errors(config, message):
    with pytest.raises(ConfigError, match=message):
        build_system(config)


def test_full_field_with_remainder():
    system = build_system(
        {"period": 1, "order": 1, "F1": ["1", "0"], "remainder": ["0", "eps*x2"]}
    )
    out = system.full_field(0.5)(0.0, np.array([0.0, 2.0]))
    np.testing.assert_allclose(out, [0.5, 0.5**2 * 0.5 * 2.0])


def test_load_and_emit(tmp_path):
    text = emit_config("2*pi", 3, {1: ("cos(t)", "x1")}, remainder=("0", "eps"), label="demo")
    path = tmp_path / "sys.toml"
    path.write_text(text)
    doc = load_config(path)
    system = build_system(doc)
    assert system.order == 3 and system.F(2) is None and system.F(3) is None
    assert system.label == "demo"
    bad = tmp_path / "bad.toml"
    bad.write_text("period = = 1")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_planar_field():
    f = expr_planar_field(["x2", "-x1"])
    np.testing.assert_allclose(f(np.array([[1.0, 2.0], [3.0, 4.0]])), [[2.0, -1.0], [4.0, -3.0]])


def test_normalise_expression():
    assert normalise_expression(" x1*( x2 +t ) ") == "x1*(x2 + t)"


def test_jerk_config_round_trip(tmp_path):
    spec = JerkSpec(order=5)
    path = tmp_path / "jerk.toml"
    path.write_text(emit_jerk_config(spec))
    emitted = build_system(load_config(path))
    direct = jerk_standard_form(spec)
    rng = np.random.default_rng(11)
    t = rng.uniform(0, 2 * np.pi, 100)
    x = np.column_stack([rng.uniform(0.5, 4, 100), rng.uniform(-2, 2, 100)])
    worst = 0.0
    for i in (4, 5):
        for tk, xk in zip(t, x):
            worst = max(worst, np.max(np.abs(emitted.F(i)(tk, xk) - direct.F(i)(tk, xk))))
    assert worst < 1e-12
    assert emitted.F(1) is None and emitted.F(3) is None


_coef = st.floats(-3, 3, allow_nan=False)


@given(st.lists(_coef, min_size=4, max_size=4), st.integers(1, 3))
def test_accepted_systems_are_periodic(c, k):
    F1 = [f"{c[0]}*cos({k}*t)*x1 + {c[1]}", f"{c[2]}*sin({k}*t)*x2^2 + {c[3]}*x1"]
    system = build_system({"period": "2*pi", "order": 1, "F1": F1})
    assert check_periodicity(system.F(1), system.period) < 1e-9
