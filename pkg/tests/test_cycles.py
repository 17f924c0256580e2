import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nhtorus.cycles import (
    NonHyperbolicError,
    OutsideTubeError,
    cartesian_to_frame,
    divergence,
    find_limit_cycle,
    floquet_liouville,
    frame_to_cartesian,
    moving_frame,
)
from nhtorus.jerk import guiding_closed_form, translated_guiding
from nhtorus.ode import SectionSpec
from nhtorus.sysdef import PlanarField

HARMONIC = PlanarField(lambda z: np.stack([z[..., 1], -z[..., 0]], axis=-1), label="harmonic")


@pytest.fixture(scope="module")
def circle_cycle():
    # anchored at (0, 1) so that phi(sigma) = (sin sigma, cos sigma)
    sec = SectionSpec(normal=(1, 0), anchor=(0, 0), direction=1, branch=(0, 1))
    return find_limit_cycle(translated_guiding(), [0.0, 0.5], sec)


@pytest.fixture(scope="module")
def circle_frame(circle_cycle):
    return moving_frame(circle_cycle)


@pytest.fixture(scope="module")
def guiding_cycle():
    sec = SectionSpec(normal=(0, 1), anchor=(2, 0), direction=-1, branch=(1, 0))
    return find_limit_cycle(guiding_closed_form(), [2.5, 0.0], sec)


def test_exemplofinal_cycle():
    sec = SectionSpec(normal=(0, 1), anchor=(0, 0), direction=-1, branch=(1, 0))
    cyc = find_limit_cycle(translated_guiding(), [0.5, 0.0], sec)
    assert abs(cyc.anchor[0] - 1.0) < 1e-8 and abs(cyc.anchor[1]) < 1e-12
    assert abs(cyc.period - 2 * np.pi) < 1e-8
    assert cyc.stable and cyc.hyperbolic_attracting
    assert len(cyc.samples) >= 512


def test_cycle_closes(circle_cycle):
    assert np.max(np.abs(circle_cycle(circle_cycle.period) - circle_cycle.anchor)) < 1e-8
    np.testing.assert_allclose(np.hypot(*circle_cycle.samples.T), 1.0, atol=1e-8)


def test_exemplofinal_multiplier(circle_cycle):
    target = math.exp(-2 * math.pi)
    assert abs(circle_cycle.multiplier / target - 1) < 1e-6
    assert abs(circle_cycle.multiplier_liouville / target - 1) < 1e-6
    assert abs(circle_cycle.multiplier_liouville / circle_cycle.multiplier - 1) < 1e-6


def test_return_map_derivative(circle_cycle, guiding_cycle):
    for cyc in (circle_cycle, guiding_cycle):
        assert abs(cyc.return_map_derivative - cyc.multiplier) < 1e-5


def test_guiding_cycle_is_shifted_unit_circle(guiding_cycle):
    r, z = guiding_cycle.samples.T
    assert np.max(np.abs(np.hypot(r - 2, z) - 1)) < 1e-6
    np.testing.assert_allclose(guiding_cycle.anchor, [3.0, 0.0], atol=1e-8)


def circle_quadrature(field, integrand):
    """Integral of integrand(point, f) / |f| over arclength on the circle (2 + cos a, sin a)."""

    def g(a):
        p = np.array([2 + math.cos(a), math.sin(a)])
        f = field(p)
        return integrand(p, f) / np.linalg.norm(f)

    return quad(g, 0, 2 * np.pi, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def test_guiding_period_and_multiplier_by_quadrature(guiding_cycle):
    field = guiding_closed_form()
    period = circle_quadrature(field, lambda p, f: 1.0)
    log_mult = circle_quadrature(field, lambda p, f: np.trace(field.jacobian(p)))
    assert abs(guiding_cycle.period - period) < 1e-8
    assert abs(guiding_cycle.multiplier / math.exp(log_mult) - 1) < 1e-6
    assert abs(guiding_cycle.multiplier_liouville / math.exp(log_mult) - 1) < 1e-6


def test_certificate(guiding_cycle):
    cert = guiding_cycle.certificate()
    assert set(cert) >= {"period", "multiplier_monodromy", "multiplier_liouville", "stable"}
    assert cert["stable"] is True


def test_harmonic_field_is_not_hyperbolic():
    sec = SectionSpec(normal=(0, 1), anchor=(0, 0), direction=-1, branch=(1, 0))
    with pytest.raises(NonHyperbolicError):
        find_limit_cycle(HARMONIC, [1.0, 0.0], sec)


def test_divergence_free_liouville(circle_cycle):
    # the unit circle is also a closed orbit of the rotation field
    assert divergence(HARMONIC, [0.3, 0.2]) == pytest.approx(0.0, abs=1e-8)
    assert floquet_liouville(HARMONIC, circle_cycle) == pytest.approx(1.0, abs=1e-8)


def test_divergence_analytic():
    assert divergence(translated_guiding(), [0.5, 0.2]) == pytest.approx(1 - 3 * 0.25 - 0.04)


def test_circle_frame(circle_frame):
    s = np.linspace(0, 2 * np.pi, 7, endpoint=False)
    np.testing.assert_allclose(circle_frame.phi(s), np.stack([np.sin(s), np.cos(s)], -1), atol=1e-8)
    np.testing.assert_allclose(circle_frame.v(s), np.stack([np.cos(s), -np.sin(s)], -1), atol=1e-8)
    np.testing.assert_allclose(circle_frame.Z(s), np.stack([np.sin(s), np.cos(s)], -1), atol=1e-8)
    np.testing.assert_array_equal(frame_to_cartesian(circle_frame, 0.0, s), circle_frame.phi(s))


def test_frame_orthonormal(circle_frame, guiding_cycle):
    s = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    for frame in (circle_frame, moving_frame(guiding_cycle)):
        v, Z = frame.v(s), frame.Z(s)
        assert np.max(np.abs(np.linalg.norm(v, axis=-1) - 1)) < 1e-12
        assert np.max(np.abs(np.sum(v * Z, axis=-1))) < 1e-12


def test_frame_transversality(circle_frame, guiding_cycle):
    s = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    for frame in (circle_frame, moving_frame(guiding_cycle)):
        f = frame.cycle.field(frame.phi(s))
        assert np.max(np.abs(np.sum(f * frame.Z(s), axis=-1))) < 1e-8


def test_tube_radius(circle_frame):
    assert 0 < circle_frame.r0 <= 0.5 + 1e-9


def test_round_trip(circle_frame, guiding_cycle):
    rng = np.random.default_rng(3)
    for frame in (circle_frame, moving_frame(guiding_cycle)):
        rho = rng.uniform(-frame.r0 / 2, frame.r0 / 2, 100)
        sigma = rng.uniform(0, 2 * np.pi, 100)
        for r, s in zip(rho, sigma):
            r2, s2 = cartesian_to_frame(frame, frame_to_cartesian(frame, r, s))
            assert abs(r2 - r) < 1e-10
            assert abs((s2 - s + np.pi) % (2 * np.pi) - np.pi) < 1e-10


@settings(max_examples=30)
@given(st.floats(-0.24, 0.24), st.floats(0, 2 * np.pi, exclude_max=True))
def test_round_trip_property(circle_frame, rho, sigma):
    r2, s2 = cartesian_to_frame(circle_frame, frame_to_cartesian(circle_frame, rho, sigma))
    assert abs(r2 - rho) < 1e-10
    assert abs((s2 - sigma + np.pi) % (2 * np.pi) - np.pi) < 1e-10
    assert 0 <= s2 < 2 * np.pi


def test_radial_point(circle_frame):
    s0 = 1.1
    rho, sigma = cartesian_to_frame(circle_frame, 1.1 * np.array([np.sin(s0), np.cos(s0)]))
    assert rho == pytest.approx(0.1, abs=1e-10)
    assert sigma == pytest.approx(s0, abs=1e-10)
    rho, sigma = cartesian_to_frame(circle_frame, circle_frame.phi(s0))
    assert rho == pytest.approx(0.0, abs=1e-12)


def test_outside_tube(circle_frame):
    with pytest.raises(OutsideTubeError):
        cartesian_to_frame(circle_frame, [2.0, 0.0])
