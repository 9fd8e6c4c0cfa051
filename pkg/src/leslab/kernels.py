"""Singular kernels of the pressure and their per-ball near/far decompositions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve

from .covers import expand_layers
from .fields import (GriddedField, GridError, grid_axis, irfft3, region_mask, rfft3,
                     smooth_step, wavenumbers)

OMEGA3 = 4 * math.pi  # |S^2|
NEAR_DEPTH = 7
TARGET_DEPTH = 3


class SingularPointError(ValueError):
    pass


@dataclass(frozen=True)
class KernelKind:
    """("K", i, j) for the second-derivative kernel, ("L", j) for the vector kernel (0-based)."""
    tag: str
    i: int
    j: int = -1

    def __post_init__(self):
        if self.tag not in ("K", "L"):
            raise ValueError(f"unknown kernel tag {self.tag!r}")
        if self.tag == "K" and not (0 <= self.i < 3 and 0 <= self.j < 3):
            raise ValueError("K needs two indices in 0..2")
        if self.tag == "L" and not 0 <= self.i < 3:
            raise ValueError("L needs one index in 0..2")

    @classmethod
    def K(cls, i, j):
        return cls("K", i, j)

    @classmethod
    def L(cls, j):
        return cls("L", j)


def kernel_values(kind, y):
    """Vectorised kernel on an array of offsets (..., 3); no check at 0."""
    y = np.asarray(y, float)
    r2 = (y**2).sum(axis=-1)
    r = np.sqrt(r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind.tag == "K":
            d = 1.0 if kind.i == kind.j else 0.0
            return (3 * y[..., kind.i] * y[..., kind.j] - d * r2) / (4 * math.pi * r**5)
        return y[..., kind.i] / (OMEGA3 * r**3)


def kernel_eval(kind, y):
    y = np.asarray(y, float)
    if not np.all(np.linalg.norm(np.atleast_2d(y), axis=-1) > 0):
        raise SingularPointError("kernel evaluated at its singular point y = 0")
    return kernel_values(kind, y)


# --------------------------------------------------------------------------
# lattice corrections for the excluded singular cell
#
# For F homogeneous of degree -1 the gap between the integral and the
# midpoint lattice sum (centre cell dropped) is a universal constant times
# h^2; it multiplies the second-order Taylor term of the density (first
# order for L). The constants below come from compute_lattice_constants()
# with Gaussian damping at widths 16 and 32.

LATTICE_CONSTANTS = (-0.0524724, 0.0262362, 0.1014978, 0.0752617)

# sphere averages of the angular parts: int_{S^2} G for F = G(w)/r
_SPHERE_MOMENTS = (4 / 15, -2 / 15, 1 / 5, 1 / 3)


def _moment_integrands():
    K00, K01, L0 = KernelKind.K(0, 0), KernelKind.K(0, 1), KernelKind.L(0)
    return (
        lambda y: kernel_values(K00, y) * y[..., 0] ** 2,
        lambda y: kernel_values(K00, y) * y[..., 1] ** 2,
        lambda y: kernel_values(K01, y) * y[..., 0] * y[..., 1],
        lambda y: kernel_values(L0, y) * y[..., 0],
    )


def _damped_gap(F, moment, s):
    """(s^2/2) * sphere moment - sum over Z^3 minus 0 of F(n) exp(-|n|^2/s^2)."""
    W = int(math.ceil(6.5 * s))
    a = np.arange(-W, W + 1, dtype=float)
    Y, Z = np.meshgrid(a, a, indexing="ij")
    tot = 0.0
    for x in a:
        n = np.stack([np.full_like(Y, x), Y, Z], -1)
        r2 = (n**2).sum(-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = F(n) * np.exp(-r2 / s**2)
        k[r2 == 0] = 0.0
        tot += float(np.sort(k.ravel()).sum())
    return s * s / 2 * moment - tot


def compute_lattice_constants(widths=(16, 32)):
    """Richardson-extrapolated gaps (error ~ s^-2) for the four Taylor moments."""
    s1, s2 = widths
    out = []
    for F, m in zip(_moment_integrands(), _SPHERE_MOMENTS):
        g1, g2 = _damped_gap(F, m, s1), _damped_gap(F, m, s2)
        out.append(g2 + (g2 - g1) * s1**2 / (s2**2 - s1**2))
    return tuple(out)


def lattice_constants():
    return LATTICE_CONSTANTS


def _fd_second(a, h, i, j):
    if i == j:
        return (np.roll(a, -1, i) - 2 * a + np.roll(a, 1, i)) / h**2
    return (np.roll(np.roll(a, -1, i), -1, j) - np.roll(np.roll(a, -1, i), 1, j)
            - np.roll(np.roll(a, 1, i), -1, j) + np.roll(np.roll(a, 1, i), 1, j)) / (4 * h * h)


def _fd_first(a, h, i):
    return (np.roll(a, -1, i) - np.roll(a, 1, i)) / (2 * h)


def singular_cell_correction(f, kind):
    """h^2 times the Taylor-moment correction of the lattice p.v. sum."""
    c1111, c1122, c1212, dL = lattice_constants()
    a, h = f.values, f.h
    if kind.tag == "K":
        i, j = kind.i, kind.j
        if i == j:
            corr = c1111 * _fd_second(a, h, i, i)
            corr += sum(c1122 * _fd_second(a, h, k, k) for k in range(3) if k != i)
            corr *= 0.5
        else:
            corr = c1212 * _fd_second(a, h, i, j)
        return h * h * corr
    # the Taylor offset is y - x = -(x - y): odd moment flips sign
    return -h * h * dL * _fd_first(a, h, kind.i)


# --------------------------------------------------------------------------
# near and far fields

def _bbox(mask):
    idx = np.nonzero(mask)
    if len(idx[0]) == 0:
        return None
    return tuple((int(i.min()), int(i.max()) + 1) for i in idx)


def _offset_kernel(kind, h, lo, hi):
    """Kernel on integer offsets lo..hi (inclusive) per axis, zero at the origin."""
    axes = [np.arange(lo[k], hi[k] + 1) * h for k in range(3)]
    Y = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    k = kernel_values(kind, Y)
    k[~np.isfinite(k)] = 0.0
    return k


def layer_masks(c, base, R, h, near_depth=NEAR_DEPTH, target_depth=TARGET_DEPTH):
    levels = expand_layers(c, base, near_depth)
    tgt = region_mask(c, np.nonzero(levels[target_depth])[0], R, h)
    near = region_mask(c, np.nonzero(levels[near_depth])[0], R, h)
    return tgt, near


def _check_cover(f, c):
    if abs(f.R_max - c.R_max) > 1e-9 * max(1.0, c.R_max):
        raise GridError(f"field box {f.R_max} and cover box {c.R_max} differ")


def near_field_pv(f, kind, c, base, masks=None, corrected=True):
    """p.v. integral over Q^(7) of kernel(x - y) f(y), returned on Q^(3) (zero elsewhere).

    The singular cell is dropped; the lattice sum over the remaining cells is
    evaluated exactly by zero-padded FFT convolution over bounding boxes.
    """
    _check_cover(f, c)
    if f.components != 1:
        raise GridError("near field acts on scalar densities")
    tgt, near = masks or layer_masks(c, base, f.R_max, f.h)
    src = np.where(near, f.values, 0.0)
    out = np.zeros_like(f.values)
    sb, tb = _bbox(src != 0), _bbox(tgt)
    if sb is None or tb is None:
        return f.with_values(out)
    s = src[sb[0][0]:sb[0][1], sb[1][0]:sb[1][1], sb[2][0]:sb[2][1]]
    omin = [tb[k][0] - (sb[k][1] - 1) for k in range(3)]
    omax = [tb[k][1] - 1 - sb[k][0] for k in range(3)]
    ker = _offset_kernel(kind, f.h, omin, omax)
    conv = fftconvolve(s, ker, mode="full") * f.h**3
    # out[a] = conv[a - sb.lo - omin]
    sl = tuple(slice(tb[k][0] - sb[k][0] - omin[k], tb[k][1] - sb[k][0] - omin[k]) for k in range(3))
    block = conv[sl]
    if corrected:
        corr = singular_cell_correction(f.with_values(src), kind)
        block = block + corr[tb[0][0]:tb[0][1], tb[1][0]:tb[1][1], tb[2][0]:tb[2][1]]
    region = out[tb[0][0]:tb[0][1], tb[1][0]:tb[1][1], tb[2][0]:tb[2][1]]
    region[...] = block
    out[~tgt] = 0.0
    return f.with_values(out)


def far_field_diff(f, kind, c, base, masks=None, coarse=9, chunk=4096):
    """int over y outside Q^(7) of (kernel(x - y) - kernel(x_Q - y)) f(y), on Q^(3).

    Direct quadrature at a coarse tensor grid spanning Q^(3), then cubic
    interpolation (the integrand is smooth in x there).
    Returns (field, constant) where constant = int_out kernel(x_Q - y) f(y) dy.
    """
    _check_cover(f, c)
    tgt, near = masks or layer_masks(c, base, f.R_max, f.h)
    out = np.zeros_like(f.values)
    far = (~near) & (f.values != 0)
    tb = _bbox(tgt)
    if not far.any() or tb is None:
        return f.with_values(out), 0.0
    a = grid_axis(f.R_max, f.h)
    ys = np.stack([a[i] for i in np.nonzero(far)], 1)
    fy = f.values[far] * f.h**3
    xq = c.centers[base]
    lo = np.array([a[tb[k][0]] for k in range(3)])
    hi = np.array([a[tb[k][1] - 1] for k in range(3)])
    axes = [np.linspace(lo[k], hi[k], coarse) if hi[k] > lo[k] else np.array([lo[k]]) for k in range(3)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    pts = np.vstack([X, xq[None]])
    vals = np.zeros(len(pts))
    for s in range(0, len(ys), chunk):
        y = ys[s:s + chunk]
        vals += kernel_values(kind, pts[:, None, :] - y[None]) @ fy[s:s + chunk]
    const = float(vals[-1])
    grid_vals = (vals[:-1] - const).reshape([len(ax) for ax in axes])
    idx = np.nonzero(tgt)
    q = np.stack([a[i] for i in idx], 1)
    if min(len(ax) for ax in axes) >= 4:
        interp = RegularGridInterpolator(axes, grid_vals, method="cubic")
        out[idx] = interp(q)
    else:
        out[idx] = grid_vals.ravel()[0]
    return f.with_values(out), const


def spectral_riesz_oracle(f, kind, pad=2):
    """Full-space p.v. K_ij * f via the multiplier -xi_i xi_j/|xi|^2 + delta_ij/3 on a zero-padded box."""
    if kind.tag != "K":
        raise ValueError("oracle implemented for K_ij")
    N = f.N
    M = pad * N
    big = np.zeros((M, M, M))
    big[:N, :N, :N] = f.values
    kx, ky, kz = wavenumbers(M, f.h)
    ks = (kx, ky, kz)
    k2 = kx**2 + ky**2 + kz**2
    with np.errstate(divide="ignore", invalid="ignore"):
        mult = -ks[kind.i] * ks[kind.j] / k2
    mult[0, 0, 0] = -1.0 / 3.0 if kind.i == kind.j else 0.0
    if kind.i == kind.j:
        mult = mult + 1.0 / 3.0
    res = irfft3(rfft3(big) * mult, M)
    return f.with_values(res[:N, :N, :N])


def kernel_bound_constants(c, base, samples=10_000, seed=0):
    """Sampled max of |K(x-y) - K(x_Q-y)| |x-y|^4 / |Q|^{1/3} and the L analogue with power 3.

    x ranges over Q^(3); y over balls outside Q^(7) inside the box.
    """
    rng = np.random.default_rng(seed)
    levels = expand_layers(c, base, NEAR_DEPTH)
    inner = np.nonzero(levels[TARGET_DEPTH])[0]
    outer = np.nonzero(~levels[NEAR_DEPTH])[0]
    if len(outer) == 0:
        raise ValueError("no balls outside Q^(7) in this cover")

    def sample(ids, n):
        b = rng.choice(ids, n)
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1)[:, None]
        rad = c.radii[b] * rng.random(n) ** (1 / 3)
        return c.centers[b] + d * rad[:, None]

    x = sample(inner, samples)
    y = sample(outer, samples)
    in_q7 = c.contains(y, np.nonzero(levels[NEAR_DEPTH])[0])
    x, y = x[~in_q7], y[~in_q7]
    xq = c.centers[base]
    q13 = c.volumes[base] ** (1 / 3)
    dist = np.linalg.norm(x - y, axis=1)
    cK = 0.0
    for i in range(3):
        for j in range(i, 3):
            k = KernelKind.K(i, j)
            diff = np.abs(kernel_values(k, x - y) - kernel_values(k, xq - y))
            cK = max(cK, float((diff * dist**4 / q13).max()))
    cL = 0.0
    for j in range(3):
        k = KernelKind.L(j)
        diff = np.abs(kernel_values(k, xq - y) - kernel_values(k, x - y))
        cL = max(cL, float((diff * dist**3 / q13).max()))
    return {"K": cK, "L": cL, "pairs": int(len(x))}


# --------------------------------------------------------------------------
# decompositions

@dataclass
class PressureDecomposition:
    base: int
    mask: np.ndarray  # Q^(3) cells
    local: GriddedField
    near: GriddedField
    far: GriddedField
    div_near: GriddedField  # I3
    div_far: GriddedField  # I4
    p_B: float
    q_B: float
    weak_residual: float
    time: float = 0.0

    def total(self):
        """local + near + far + I3 + I4 - q_B on Q^(3), zero outside."""
        v = (self.local.values + self.near.values + self.far.values
             + self.div_near.values + self.div_far.values - self.q_B)
        return self.local.with_values(np.where(self.mask, v, 0.0))


def _pairs(a, b):
    """Symmetrised products a_i b_j, returned for i <= j with multiplicities."""
    out = []
    for i in range(3):
        for j in range(i, 3):
            w = 1.0 if i == j else 2.0
            out.append((i, j, w, 0.5 * (a[i] * b[j] + a[j] * b[i])))
    return out


def _test_function(f, c, base):
    X, Y, Z = f.mesh()
    xq = c.centers[base]
    r = np.sqrt((X - xq[0])**2 + (Y - xq[1])**2 + (Z - xq[2])**2)
    return smooth_step(1 - r / c.radii[base])


def _spectral_derivs(phi, h):
    N = phi.shape[0]
    kx, ky, kz = wavenumbers(N, h)
    ks = (kx, ky, kz)
    F = rfft3(phi)
    d1 = [irfft3(1j * k * F, N) for k in ks]
    d2 = {(i, j): irfft3(-ks[i] * ks[j] * F, N) for i in range(3) for j in range(i, 3)}
    return d1, d2


def pressure_decompose(u, c, base, v=None, divv=None):
    """Per-ball pressure decomposition; classical when v is None, auxiliary otherwise."""
    _check_cover(u, c)
    if u.components != 3:
        raise GridError("u must be a vector field")
    for g in (v, divv):
        if g is not None and not g.same_grid(u):
            raise GridError("inconsistent grids")
    aux = v is not None
    if aux and divv is None:
        raise ValueError("auxiliary decomposition needs div v")
    a = u.values
    b = v.values if aux else a
    masks = layer_masks(c, base, u.R_max, u.h)
    tgt = masks[0]
    zero = u.with_values(np.zeros(a.shape[1:]))
    local = -(a * b).sum(axis=0) / 3.0
    near = np.zeros_like(local)
    far = np.zeros_like(local)
    p_B = 0.0
    for i, j, w, fij in _pairs(b, a):
        fld = zero.with_values(fij)
        k = KernelKind.K(i, j)
        near += w * near_field_pv(fld, k, c, base, masks).values
        fd, const = far_field_diff(fld, k, c, base, masks)
        far += w * fd.values
        p_B += w * const
    I3 = np.zeros_like(local)
    I4 = np.zeros_like(local)
    q_B = 0.0
    if aux:
        for j in range(3):
            g = zero.with_values(divv.values * a[j])
            k = KernelKind.L(j)
            I3 += near_field_pv(g, k, c, base, masks).values
            fd, const = far_field_diff(g, k, c, base, masks)
            I4 += fd.values
            p_B += const
        q_B = float((I3 + I4)[tgt].mean())
    local = np.where(tgt, local, 0.0)
    dec = PressureDecomposition(base, tgt, zero.with_values(local), zero.with_values(near),
                                zero.with_values(far), zero.with_values(I3), zero.with_values(I4),
                                p_B, q_B, 0.0, u.time)
    dec.weak_residual = weak_form_residual(dec, u, c, v, divv)
    return dec


def weak_form_residual(dec, u, c, v=None, divv=None):
    """Relative weak residual of -Lap p = div((v.grad) u) against a bump supported in the base ball."""
    phi = _test_function(u, c, dec.base)
    d1, d2 = _spectral_derivs(phi, u.h)
    lap = d2[(0, 0)] + d2[(1, 1)] + d2[(2, 2)]
    p = dec.total().values
    a = u.values
    b = v.values if v is not None else a
    lhs = p * (-lap)
    rhs_terms = [w * fij * d2[(i, j)] for i, j, w, fij in _pairs(b, a)]
    if divv is not None:
        rhs_terms += [divv.values * a[i] * d1[i] for i in range(3)]
    rhs = sum(rhs_terms)
    vol = u.h**3
    num = abs(float(lhs.sum() - rhs.sum()) * vol)
    scale = float(np.abs(lhs).sum() + np.abs(rhs).sum()) * vol
    return num / scale if scale > 0 else 0.0


def lp_norm(values, mask, h, p):
    return float((np.abs(values[mask]) ** p).sum() * h**3) ** (1 / p)


def cz_ratio(f, kind, c, base, masks=None):
    """||near field||_{L^{3/2}(Q3)} / ||f||_{L^{3/2}(Q7)}."""
    masks = masks or layer_masks(c, base, f.R_max, f.h)
    out = near_field_pv(f, kind, c, base, masks)
    num = lp_norm(out.values, masks[0], f.h, 1.5)
    den = lp_norm(f.values, masks[1], f.h, 1.5)
    return num / den if den > 0 else 0.0
