import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from leslab.covers import build_cover, expand_layers
from leslab.fields import (STEP_MAX_SLOPE, GridError, GriddedField, alpha_beta_of_fields,
                           cutoff_phi, from_function, morrey_norm, morrey_profile, smooth_step,
                           smooth_step_slope, spectral_divergence, spectral_gradient, uloc_norm,
                           zeros)


def test_grid_validation():
    with pytest.raises(GridError):
        GriddedField(4.0, 0.5, np.zeros((15, 15, 15)))
    with pytest.raises(GridError):
        GriddedField(4.0, 1.0, np.zeros((8, 8, 8)))
    with pytest.raises(GridError):
        GriddedField(4.0, 0.5, np.zeros((2, 16, 16, 16)))


def test_spectral_derivatives_exact_on_modes():
    R, h = 4.0, 0.25
    k = 2 * math.pi / (2 * R)
    f = from_function(R, h, lambda X, Y, Z: np.sin(3 * k * X) * np.cos(2 * k * Y))
    g = spectral_gradient(f).values
    X, Y, Z = f.mesh()
    assert np.allclose(g[0], 3 * k * np.cos(3 * k * X) * np.cos(2 * k * Y), atol=1e-12)
    assert np.allclose(g[1], -2 * k * np.sin(3 * k * X) * np.sin(2 * k * Y), atol=1e-12)
    u = f.with_values(np.stack([f.values, 0 * f.values, 0 * f.values]))
    assert np.allclose(spectral_divergence(u).values, g[0], atol=1e-12)


@pytest.mark.parametrize("h", [0.25, 0.125])
def test_morrey_norm_of_constant(h):
    c = build_cover("uloc", 8)
    f = from_function(8, h, lambda X, Y, Z: 1.0 + 0 * X)
    exact = math.sqrt(c.volumes[0] ** (1 / 3))
    assert abs(morrey_norm(f, c) / exact - 1) <= h * h


def test_morrey_profile_box_mismatch():
    with pytest.raises(GridError):
        morrey_profile(zeros(4, 0.5), build_cover("uloc", 8))


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3))
def test_uloc_norm_of_constant(a):
    f = from_function(4, 0.25, lambda X, Y, Z: a + 0 * X)
    assert uloc_norm(f) == pytest.approx(abs(a), rel=1e-12, abs=1e-12)


def test_alpha_beta_of_steady_field():
    c = build_cover("uloc", 6)
    f = from_function(6, 0.5, lambda X, Y, Z: np.exp(-(X**2 + Y**2 + Z**2) / 4))
    series = [f.with_values(f.values, t) for t in (0.0, 0.5, 1.0)]
    fe = alpha_beta_of_fields(series, c, 1.0)
    assert fe.alpha == pytest.approx(morrey_norm(f, c) ** 2, rel=1e-12)
    grad = spectral_gradient(f)
    beta_direct = (morrey_profile(grad, c) * 1.0).max()
    assert fe.beta == pytest.approx(beta_direct, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5))
def test_smooth_step_monotone_and_bounded(a, b):
    lo, hi = min(a, b), max(a, b)
    assert 0.0 <= smooth_step(lo) <= smooth_step(hi) <= 1.0


def test_smooth_step_ends_and_slope():
    assert smooth_step(0.0) == 0.0 and smooth_step(1.0) == 1.0
    s = np.linspace(0, 1, 20001)
    assert smooth_step_slope(s).max() == pytest.approx(STEP_MAX_SLOPE, rel=1e-8)
    fd = np.gradient(smooth_step(s), s)
    assert np.abs(fd - smooth_step_slope(s)).max() < 1e-3


def test_phi_cutoff_one_on_ball_zero_outside_region():
    c = build_cover("uloc", 16)
    base = c.nearest_ball(np.zeros(3))
    phi = cutoff_phi(c, base, k_max=1, points_per_radius=6)
    rng = np.random.default_rng(0)
    d = rng.normal(size=(500, 3))
    inside = c.centers[base] + d / np.linalg.norm(d, axis=1)[:, None] * c.radii[base] * rng.random((500, 1))
    assert np.allclose(phi(inside), 1.0)
    pts = rng.uniform(-15, 15, size=(4000, 3))
    lv = expand_layers(c, base, 3)
    out = ~c.contains(pts, np.nonzero(lv[3])[0])
    assert np.all(phi(pts[out]) == 0.0)
    assert phi.gap > 0 and math.isfinite(phi.C[1])
