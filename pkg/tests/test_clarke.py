import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsg import clarke
from nsg.clarke import (GeneralizedDifferential, LipschitzFunction, ball_offsets, cone_certificate,
                        increasing_check, is_critical, nonsingularity_margin,
                        sample_generalized_differential, sample_generalized_gradient)
from nsg.geometry import DomainError
from oracles import abs_mixing_singular_grid

FINE = (1e-3, 1e-4, 1e-5)
ABS_MIXING_SIGMA_MIN = (3 - math.sqrt(5)) / 2  # from the brute-force grid oracle


def test_oracle_rejects_bad_lipschitz_bound():
    with pytest.raises(DomainError):
        LipschitzFunction(abs, lambda x: None, 0.0)


def test_max_function_hull_at_kink():
    gg = sample_generalized_gradient(clarke.max_of_square_and_affine(), [-1.0], radii=(0.1, 0.01))
    assert gg.samples.min() == pytest.approx(-2.0, abs=0.2)
    assert gg.samples.max() == pytest.approx(1.0)


@pytest.mark.parametrize("x,critical", [(-1.5, False), (-1.0, True), (0.0, False),
                                        (2.0, False), (2.5, False)])
def test_max_function_classification(x, critical):
    gg = sample_generalized_gradient(clarke.max_of_square_and_affine(), [x], radii=FINE)
    assert is_critical(gg).critical is critical


def test_max_function_smooth_point_is_singleton():
    gg = sample_generalized_gradient(clarke.max_of_square_and_affine(), [0.0])
    assert np.allclose(gg.samples, 1.0)


def test_norm_at_origin_is_critical():
    gg = sample_generalized_gradient(clarke.euclidean_norm(), [0.0, 0.0])
    assert is_critical(gg).critical


def test_undefined_gradient_is_redrawn():
    calls = []

    def grad(x):
        calls.append(1)
        return None if len(calls) % 2 else np.array([1.0])

    gg = sample_generalized_gradient(LipschitzFunction(lambda x: 0.0, grad, 1.0), [0.0],
                                     radii=(0.1,), per_radius=4)
    assert len(gg.samples) == 4


def test_always_undefined_gradient_raises():
    with pytest.raises(DomainError):
        sample_generalized_gradient(LipschitzFunction(lambda x: 0.0, lambda x: None, 1.0), [0.0],
                                    radii=(0.1,), per_radius=1)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 100))
def test_scaling_equivariance(c, seed):
    f = clarke.max_of_square_and_affine()
    scaled = LipschitzFunction(lambda x: c * f.eval(x),
                               lambda x: None if f.gradient(x) is None else c * f.gradient(x), c * f.lip)
    a = sample_generalized_gradient(f, [-1.0], FINE, 16, seed)
    b = sample_generalized_gradient(scaled, [-1.0], FINE, 16, seed)
    assert np.allclose(b.samples, c * a.samples, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 2 * math.pi), st.integers(0, 100))
def test_rotation_equivariance(theta, seed):
    """Gradients of f o R at x + d equal R^T grad f at Rx + R d."""
    R = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])

    def f_grad(y):
        return np.array([2 * y[0] + np.sign(y[1]), 3 * y[1] ** 2])

    x = np.array([0.3, 0.0])
    offsets = ball_offsets(2, (0.1, 0.01), 8, seed).reshape(-1, 2)
    lhs = [R.T @ f_grad(R @ (x + d)) for d in offsets]
    rhs = [R.T @ f_grad(R @ x + R @ d) for d in offsets]
    assert np.allclose(lhs, rhs, atol=1e-9)
    g = clarke.LipschitzFunction(lambda y: 0.0, lambda y: R.T @ f_grad(R @ y), 10.0)
    gg = sample_generalized_gradient(g, x, (0.1, 0.01), 8, seed)
    assert np.allclose(gg.samples, lhs, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_more_samples_never_increase_margin(seed):
    f = clarke.euclidean_norm()
    few = sample_generalized_gradient(f, [0.05, 0.0], (0.1,), 8, seed)
    more = clarke.GeneralizedGradient(few.point, np.concatenate([few.samples,
                                      sample_generalized_gradient(f, [0.05, 0.0], (0.1,), 8, seed + 1).samples]),
                                      few.radii, seed)
    assert is_critical(more, 1e-3).margin <= is_critical(few, 1e-3).margin + 1e-12


def test_abs_mixing_nonsingular_margin_matches_oracle():
    gd = sample_generalized_differential(clarke.abs_mixing_map(), [0.0, 0.0])
    assert len(gd.distinct()) == 4
    margin = nonsingularity_margin(gd, 10_000, seed=0)
    assert abs_mixing_singular_grid() == pytest.approx(ABS_MIXING_SIGMA_MIN, abs=1e-12)
    assert margin == pytest.approx(ABS_MIXING_SIGMA_MIN, abs=1e-9)


def test_plus_minus_identity_is_singular():
    gd = GeneralizedDifferential(np.zeros(2), np.array([np.eye(2), -np.eye(2)]), (0.1,), 0)
    assert nonsingularity_margin(gd, 2000, seed=0) < 0.05


def test_cone_certificate_example():
    gd = sample_generalized_differential(clarke.abs_mixing_map(), [0.0, 0.0])
    cert = cone_certificate(gd, [1.0, 0.0])
    assert np.allclose(cert.direction, [0, 1]) and cert.delta == pytest.approx(2.0)


def test_cone_certificate_missing_for_fold():
    gd = sample_generalized_differential(clarke.absolute_value_map(), [0.0])
    assert cone_certificate(gd, [1.0]).delta <= 0


def test_increasing_check_example():
    F = clarke.abs_mixing_map()
    rep = increasing_check(F, [0.0, 0.0], 0.5, 0.5, pairs=5000)
    assert rep.holds
    # pair grid oracle: F is piecewise linear, so the ratio bottoms out at sigma_min
    g = np.linspace(-0.35, 0.35, 100)
    pts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    pts = pts[np.linalg.norm(pts, axis=1) <= 0.5]
    vals = np.array([F.eval(p) for p in pts])
    i, j = np.triu_indices(len(pts), 1)
    ratio = np.linalg.norm(vals[i] - vals[j], axis=1) / np.linalg.norm(pts[i] - pts[j], axis=1)
    assert ratio.min() == pytest.approx(ABS_MIXING_SIGMA_MIN, abs=1e-3)
    assert rep.worst_ratio >= ratio.min() - 1e-3
