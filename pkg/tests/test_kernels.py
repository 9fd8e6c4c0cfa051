import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import bump
from leslab.fields import GridError, from_function, grid_axis, zeros
from leslab.kernels import (LATTICE_CONSTANTS, KernelKind, SingularPointError,
                            compute_lattice_constants, far_field_diff, kernel_bound_constants,
                            kernel_eval, kernel_values, layer_masks, near_field_pv,
                            pressure_decompose, spectral_riesz_oracle)

vectors = st.lists(st.floats(-5, 5), min_size=3, max_size=3).filter(
    lambda y: np.linalg.norm(y) > 1e-2)


@settings(max_examples=60, deadline=None)
@given(vectors)
def test_second_kernel_symmetric_even_and_trace_free(y):
    y = np.array(y)
    K = np.array([[kernel_eval(KernelKind.K(i, j), y) for j in range(3)] for i in range(3)])
    assert np.allclose(K, K.T, rtol=1e-12, atol=0)
    assert abs(np.trace(K)) <= 1e-12 * np.abs(K).max()
    Km = np.array([[kernel_eval(KernelKind.K(i, j), -y) for j in range(3)] for i in range(3)])
    assert np.allclose(K, Km, rtol=1e-12, atol=0)


@settings(max_examples=60, deadline=None)
@given(vectors, st.floats(0.1, 10))
def test_kernel_homogeneity(y, lam):
    y = np.array(y)
    for j in range(3):
        assert kernel_eval(KernelKind.L(j), lam * y) == pytest.approx(
            kernel_eval(KernelKind.L(j), y) / lam**2, rel=1e-10)
        assert kernel_eval(KernelKind.L(j), -y) == pytest.approx(-kernel_eval(KernelKind.L(j), y))
    assert kernel_eval(KernelKind.K(0, 1), lam * y) == pytest.approx(
        kernel_eval(KernelKind.K(0, 1), y) / lam**3, rel=1e-10, abs=1e-300)


def test_kernel_singular_point_and_bad_kinds():
    with pytest.raises(SingularPointError):
        kernel_eval(KernelKind.K(0, 0), np.zeros(3))
    with pytest.raises(ValueError):
        KernelKind("M", 0)
    with pytest.raises(ValueError):
        KernelKind.K(0, 3)


def test_vector_kernel_is_gradient_of_newton_potential():
    # oracle: central difference of -1/(4 pi |y|) in direction j
    y = np.array([0.7, -1.1, 0.4])
    e = 1e-5
    for j in range(3):
        d = np.zeros(3)
        d[j] = e
        G = lambda p: -1 / (4 * math.pi * np.linalg.norm(p))
        fd = (G(y + d) - G(y - d)) / (2 * e)
        assert kernel_values(KernelKind.L(j), y) == pytest.approx(fd, rel=1e-7)


def test_lattice_constants_reproducible():
    fresh = compute_lattice_constants(widths=(8, 16))
    for a, b in zip(fresh, LATTICE_CONSTANTS):
        assert a == pytest.approx(b, rel=1e-3)


@pytest.fixture(scope="module")
def smooth_setup(cover_cache):
    c = cover_cache("uloc", 18)
    base = c.nearest_ball(np.zeros(3))
    f = from_function(18, 0.25, lambda X, Y, Z: bump(X, Y, Z, 5.0) * bump(X, Y, Z, 4.5, (0.5, 0, 0)))
    return c, base, f, layer_masks(c, base, 18, 0.25)


@pytest.mark.parametrize("ij", [(0, 0), (1, 2)])
def test_near_field_matches_spectral_oracle(smooth_setup, ij):
    c, base, f, masks = smooth_setup
    kind = KernelKind.K(*ij)
    tgt = masks[0]
    ref = spectral_riesz_oracle(f, kind).values[tgt]
    err = np.linalg.norm(near_field_pv(f, kind, c, base, masks).values[tgt] - ref) / np.linalg.norm(ref)
    raw = near_field_pv(f, kind, c, base, masks, corrected=False).values[tgt]
    assert err <= 1e-3
    assert err < np.linalg.norm(raw - ref) / np.linalg.norm(ref)


def test_near_field_rejects_box_mismatch(cover_cache):
    with pytest.raises(GridError):
        near_field_pv(zeros(8, 0.5), KernelKind.K(0, 0), cover_cache("uloc", 16), 0)


def test_far_field_matches_direct_sum(cover_cache):
    R, h = 32, 0.5
    c = cover_cache("uloc", R)
    base = c.nearest_ball(np.zeros(3))
    f = from_function(R, h, lambda X, Y, Z: bump(X, Y, Z, 3.0, (25.0, 2.0, -1.0)))
    masks = layer_masks(c, base, R, h)
    assert not np.any(masks[1] & (f.values != 0))
    kind = KernelKind.K(0, 1)
    _, const = far_field_diff(f, kind, c, base, masks)
    a = grid_axis(R, h)
    src = np.nonzero(f.values)
    ys = np.stack([a[i] for i in src], 1)
    w = f.values[src] * h**3
    xq = c.centers[base]
    assert const == pytest.approx(float(kernel_values(kind, xq - ys) @ w), rel=1e-12)
    tgt = np.argwhere(masks[0])
    idx = tgt[np.random.default_rng(1).choice(len(tgt), 40, replace=False)]
    X = np.stack([[a[i] for i in ii] for ii in idx])
    direct = kernel_values(kind, X[:, None] - ys[None]) @ w - const
    errs = []
    for coarse in (9, 17):
        fd, _ = far_field_diff(f, kind, c, base, masks, coarse=coarse)
        got = np.array([fd.values[tuple(i)] for i in idx])
        errs.append(np.abs(got - direct).max() / np.abs(direct).max())
    assert errs[0] <= 1e-3 and errs[1] < errs[0] / 4


def test_kernel_bound_constants_finite_and_stable(cover_cache):
    c = cover_cache("uloc", 24)
    base = c.nearest_ball(np.zeros(3))
    a = kernel_bound_constants(c, base, samples=4000, seed=0)
    b = kernel_bound_constants(c, base, samples=16000, seed=1)
    for k in ("K", "L"):
        assert math.isfinite(a[k]) and a[k] > 0
        assert b[k] <= 2 * a[k]


@pytest.fixture(scope="module")
def flow(cover_cache):
    R, h = 18, 0.5
    c = cover_cache("uloc", R)
    base = c.nearest_ball(np.zeros(3))
    u = from_function(R, h, lambda X, Y, Z: [bump(X, Y, Z, 6.0) * (1 + 0.3 * Y),
                                             bump(X, Y, Z, 5.5, (1, 0, 0)) * np.cos(0.3 * X),
                                             bump(X, Y, Z, 6.0, (0, 0, 1))])
    v = from_function(R, h, lambda X, Y, Z: [bump(X, Y, Z, 6.5) * np.sin(0.2 * Z),
                                             bump(X, Y, Z, 6.0, (0, -1, 0)),
                                             bump(X, Y, Z, 6.0) * X / 5])
    return c, base, u, v


def test_pressure_decomposition_weak_form(flow):
    from leslab.fields import spectral_divergence
    c, base, u, v = flow
    dec = pressure_decompose(u, c, base)
    assert dec.weak_residual <= 1e-3 and dec.q_B == 0.0
    aux = pressure_decompose(u, c, base, v, spectral_divergence(v))
    assert aux.weak_residual <= 1e-3
    assert math.isfinite(aux.p_B) and math.isfinite(aux.q_B)


def test_pressure_decomposition_requires_div(flow):
    c, base, u, v = flow
    with pytest.raises(ValueError):
        pressure_decompose(u, c, base, v)
