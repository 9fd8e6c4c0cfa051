"""Gridded fields on a periodic box, Morrey-type norms, energy functionals and smooth cutoffs."""
from __future__ import annotations

import math
import os
import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.spatial import cKDTree

from .covers import expand_layers

# unit-ball sampling needs h <= 1/8; PDE runs at 64-96 points per axis use
# up to h = 1/2 (see README), so the hard limit is the coarser value
MAX_SPACING = 0.5


def fft_workers():
    try:
        return max(1, int(os.environ.get("LAB_THREADS", "1")))
    except ValueError:
        return 1


class GridError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GriddedField:
    """Samples on the cell-centred periodic grid x_i = -R + (i + 1/2) h of [-R, R)^3.

    ``values`` has shape (N, N, N) for scalars and (3, N, N, N) for vectors.
    """
    R_max: float
    h: float
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim not in (3, 4) or (v.ndim == 4 and v.shape[0] != 3):
            raise GridError(f"values must be (N,N,N) or (3,N,N,N), got {v.shape}")
        N = v.shape[-1]
        if v.shape[-3:] != (N, N, N):
            raise GridError("grid must be cubic")
        if abs(N * self.h - 2 * self.R_max) > 1e-9 * self.R_max:
            raise GridError(f"N*h = {N * self.h} does not span 2*R_max = {2 * self.R_max}")
        if self.h > MAX_SPACING + 1e-12:
            raise GridError(f"spacing h={self.h} exceeds {MAX_SPACING}")

    @property
    def N(self):
        return self.values.shape[-1]

    @property
    def components(self):
        return 1 if self.values.ndim == 3 else 3

    @property
    def cell_volume(self):
        return self.h**3

    def axis(self):
        return grid_axis(self.R_max, self.h)

    def mesh(self):
        a = self.axis()
        return np.meshgrid(a, a, a, indexing="ij")

    def with_values(self, values, time=None):
        return GriddedField(self.R_max, self.h, values, self.time if time is None else time)

    def same_grid(self, other):
        return self.N == other.N and abs(self.h - other.h) < 1e-12

    def magnitude_sq(self):
        return self.values**2 if self.components == 1 else (self.values**2).sum(axis=0)

    def l2(self):
        return math.sqrt(self.magnitude_sq().sum() * self.cell_volume)


def grid_axis(R, h):
    N = int(round(2 * R / h))
    return -R + (np.arange(N) + 0.5) * h


def zeros(R, h, components=1, time=0.0):
    N = int(round(2 * R / h))
    shape = (N, N, N) if components == 1 else (3, N, N, N)
    return GriddedField(R, h, np.zeros(shape), time)


def from_function(R, h, fn, time=0.0):
    """Sample fn(x, y, z) (returning scalar or 3-list) on the grid."""
    a = grid_axis(R, h)
    X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
    v = fn(X, Y, Z)
    if isinstance(v, (list, tuple)):
        v = np.stack([np.broadcast_to(c, X.shape) for c in v])
    return GriddedField(R, h, np.broadcast_to(v, np.shape(v)).copy(), time)


# --------------------------------------------------------------------------
# spectral calculus on the periodic box

def wavenumbers(N, h):
    k = 2 * np.pi * sfft.fftfreq(N, d=h)
    kr = 2 * np.pi * sfft.rfftfreq(N, d=h)
    return k[:, None, None], k[None, :, None], kr[None, None, :]


def rfft3(a):
    return sfft.rfftn(a, axes=(-3, -2, -1), workers=fft_workers())


def irfft3(a, N):
    return sfft.irfftn(a, s=(N, N, N), axes=(-3, -2, -1), workers=fft_workers())


def _nyquist_free(k, N):
    # derivatives at the Nyquist mode are ambiguous for real fields; drop them
    k = k.copy()
    if N % 2 == 0 and k.shape[-1] != N // 2 + 1:
        k.flat[N // 2] = 0.0
    return k


def spectral_gradient(f):
    """Gradient of a scalar field as a 3-component field."""
    if f.components != 1:
        raise GridError("gradient of a vector field: apply per component")
    kx, ky, kz = wavenumbers(f.N, f.h)
    kx, ky = _nyquist_free(kx, f.N), _nyquist_free(ky, f.N)
    kz = kz.copy()
    if f.N % 2 == 0:
        kz[..., -1] = 0.0
    F = rfft3(f.values)
    g = np.stack([irfft3(1j * k * F, f.N) for k in (kx, ky, kz)])
    return f.with_values(g)


def spectral_divergence(f):
    if f.components != 3:
        raise GridError("divergence needs a vector field")
    kx, ky, kz = wavenumbers(f.N, f.h)
    kx, ky = _nyquist_free(kx, f.N), _nyquist_free(ky, f.N)
    kz = kz.copy()
    if f.N % 2 == 0:
        kz[..., -1] = 0.0
    F = rfft3(f.values)
    d = irfft3(1j * (kx * F[0] + ky * F[1] + kz * F[2]), f.N)
    return f.with_values(d)


def gradient_components(f):
    """List of gradients, one per component."""
    if f.components == 1:
        return [spectral_gradient(f)]
    return [spectral_gradient(f.with_values(f.values[i])) for i in range(3)]


def gradient_energy_density(f):
    """|grad f|^2 summed over components, as a scalar field."""
    return f.with_values(sum(g.magnitude_sq() for g in gradient_components(f)))


# --------------------------------------------------------------------------
# Morrey-type norms

_INCIDENCE = weakref.WeakKeyDictionary()


def ball_cell_incidence(c, R, h):
    """Sparse (balls x cells) matrix, 1 where the cell centre lies in the closed ball."""
    N = int(round(2 * R / h))
    per_cover = _INCIDENCE.setdefault(c, {})
    key = (N, round(h, 12))
    if key in per_cover:
        return per_cover[key]
    a = grid_axis(R, h)
    rows, cols = [], []
    for i, (x, r) in enumerate(zip(c.centers, c.radii)):
        lo = np.clip(np.ceil((x - r + R) / h - 0.5 - 1e-9).astype(int), 0, N)
        hi = np.clip(np.floor((x + r + R) / h - 0.5 + 1e-9).astype(int) + 1, 0, N)
        if np.any(hi <= lo):
            continue
        ax = [a[lo[k]:hi[k]] - x[k] for k in range(3)]
        d2 = ax[0][:, None, None]**2 + ax[1][None, :, None]**2 + ax[2][None, None, :]**2
        ii, jj, kk = np.nonzero(d2 <= r * r * (1 + 1e-12))
        flat = ((ii + lo[0]) * N + (jj + lo[1])) * N + (kk + lo[2])
        rows.append(np.full(len(flat), i, dtype=np.int32))
        cols.append(flat.astype(np.int64))
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int32)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    m = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(c), N**3))
    per_cover[key] = m
    return m


def ball_integrals(density, c):
    """Midpoint-rule integral of a scalar density over each ball."""
    A = ball_cell_incidence(c, density.R_max, density.h)
    return A @ density.values.ravel() * density.cell_volume


def morrey_profile(f, c, p=2.0, q=2.0):
    """Per-ball values |Q|^{-q/3} int_Q |f|^p."""
    if abs(f.R_max - c.R_max) > 1e-9 * max(1.0, c.R_max):
        raise GridError(f"field box {f.R_max} and cover box {c.R_max} differ")
    if p < 1:
        raise ValueError("p must be >= 1")
    mag = np.sqrt(f.magnitude_sq())
    dens = f.with_values(mag**p)
    return ball_integrals(dens, c) * c.volumes ** (-q / 3)


def morrey_norm(f, c, p=2.0, q=2.0):
    prof = morrey_profile(f, c, p, q)
    return float(prof.max() ** (1 / p)) if len(prof) else 0.0


def uloc_norm(f):
    """sup over integer-aligned unit cubes inside the box of the L^2 norm."""
    m = int(round(1 / f.h))
    if abs(m * f.h - 1) > 1e-9:
        raise GridError("uloc norm needs 1/h integral")
    off = f.R_max - math.floor(f.R_max)
    s = int(round(off / f.h))
    e = f.magnitude_sq()[s:, s:, s:]
    n = e.shape[0] // m
    e = e[:n * m, :n * m, :n * m].reshape(n, m, n, m, n, m).sum(axis=(1, 3, 5))
    return float(math.sqrt(e.max() * f.cell_volume))


# --------------------------------------------------------------------------
# energy functionals

@dataclass
class EnergyFunctionals:
    alpha: float
    beta: float
    alpha_per_ball: np.ndarray
    beta_per_ball: np.ndarray
    horizon: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("functionals must be non-negative")

    @property
    def per_ball(self):
        return {i: (float(a), float(b)) for i, (a, b) in
                enumerate(zip(self.alpha_per_ball, self.beta_per_ball))}


def alpha_beta(series, c, t):
    """alpha_t and beta_t from snapshots [(u, grad_u), ...] with times <= t.

    grad_u is a 3-component field for scalar u, or a sequence of three such
    fields for vector u.
    """
    if not series:
        raise ValueError("empty series")
    snaps = [(u, g) for u, g in series if u.time <= t + 1e-12]
    if not snaps:
        raise ValueError(f"no snapshot at or before t={t}")
    times = np.array([u.time for u, _ in snaps])
    if np.any(np.diff(times) <= 0):
        raise ValueError("snapshot times must increase")
    vol23 = c.volumes ** (-2 / 3)
    a_rows, g_rows = [], []
    for u, g in snaps:
        a_rows.append(morrey_profile(u, c, 2, 2))
        grads = [g] if isinstance(g, GriddedField) else list(g)
        dens = u.with_values(sum(x.magnitude_sq() for x in grads))
        g_rows.append(ball_integrals(dens, c))
    a_rows, g_rows = np.array(a_rows), np.array(g_rows)
    alpha_b = a_rows.max(axis=0)
    if len(times) > 1:
        beta_b = np.trapezoid(g_rows, times, axis=0) * vol23
    else:
        beta_b = np.zeros(len(c))
    return EnergyFunctionals(float(alpha_b.max()), float(beta_b.max()), alpha_b, beta_b, float(t))


def alpha_beta_of_fields(fields, c, t):
    """alpha_beta with gradients taken spectrally."""
    return alpha_beta([(u, gradient_components(u)) for u in fields], c, t)


# --------------------------------------------------------------------------
# smooth profiles

BUMP_C = 0.5


def _bump(x, c=BUMP_C):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    inside = np.abs(x) < 1
    out[inside] = np.exp(-c / (1 - x[inside] ** 2))
    return out


def _step_table(n=20001):
    # cumulative Simpson integral of the bump on [-1, 1]
    x = np.linspace(-1, 1, n)
    b = _bump(x)
    dx = x[1] - x[0]
    cum = np.zeros(n)
    # trapezoid with endpoint correction is enough: the bump is flat at both ends
    cum[1:] = np.cumsum((b[1:] + b[:-1]) / 2) * dx
    return x, cum / cum[-1], cum[-1]


_SX, _SY, _SMASS = _step_table()
_SPLINE = CubicSpline((_SX + 1) / 2, _SY)
STEP_MAX_SLOPE = float(2 * math.exp(-BUMP_C) / _SMASS)


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, integrated bump in between."""
    s = np.asarray(s, float)
    out = np.clip(_SPLINE(np.clip(s, 0, 1)), 0.0, 1.0)
    out = np.where(s <= 0, 0.0, np.where(s >= 1, 1.0, out))
    return out if out.ndim else float(out)


def smooth_step_slope(s):
    s = np.asarray(s, float)
    return 2 * _bump(2 * s - 1) / _SMASS


# --------------------------------------------------------------------------
# cutoffs

@dataclass
class CutoffFunction:
    ball: int
    kind: str  # "phi" or "psi"
    inner_depth: int
    outer_depth: int
    gap: float
    members: np.ndarray  # balls of the inner region
    centers: np.ndarray
    radii: np.ndarray
    origin: np.ndarray = field(repr=False, default=None)
    h: float = 0.0
    values: np.ndarray = field(repr=False, default=None)
    C: dict = field(default_factory=dict)
    base_volume: float = 1.0

    def __call__(self, points):
        pts = np.asarray(points, float)
        shp = pts.shape[:-1]
        pts = pts.reshape(-1, 3)
        keep = np.ones(len(pts))
        for s in range(0, len(pts), 65536):
            chunk = pts[s:s + 65536]
            f = np.ones(len(chunk))
            for x, r in zip(self.centers, self.radii):
                d = np.maximum(np.linalg.norm(chunk - x, axis=1) - r, 0.0)
                f *= 1 - smooth_step(1 - d / self.gap)
            keep[s:s + 65536] = f
        return (1 - keep).reshape(shp)

    def on_grid(self, f):
        """Sample on the grid of a GriddedField (scalar)."""
        X, Y, Z = f.mesh()
        return f.with_values(self(np.stack([X, Y, Z], -1)))


def _region_gap(c, inner_mask, outer_mask):
    """min distance between balls of the inner region and balls outside the outer one."""
    inner = np.nonzero(inner_mask)[0]
    outside = np.nonzero(~outer_mask)[0]
    if len(outside) == 0:
        return math.inf
    xi, ri = c.centers[inner], c.radii[inner]
    dmin, _ = cKDTree(xi).query(c.centers[outside])
    lower = dmin - ri.max() - c.radii[outside]
    order = np.argsort(lower)
    best = math.inf
    for s in range(0, len(order), 256):
        chunk = order[s:s + 256]
        if lower[chunk[0]] > best:
            break
        o = outside[chunk]
        d = np.linalg.norm(c.centers[o][:, None] - xi[None], axis=2) - ri[None] - c.radii[o][:, None]
        best = min(best, float(np.maximum(d, 0).min()))
    return best


def _derivative_constants(values, h, k_max, vol):
    """C(k) = max |partial^alpha phi| * |Q|^{k/3} over |alpha| = k via FFT on a padded patch."""
    N = values.shape
    F = sfft.fftn(values, workers=fft_workers())
    ks = [2 * np.pi * sfft.fftfreq(n, d=h) for n in N]
    K = np.meshgrid(*ks, indexing="ij")
    out = {}
    for k in range(1, k_max + 1):
        best = 0.0
        for a in range(k + 1):
            for b in range(k + 1 - a):
                e = k - a - b
                mult = (1j * K[0]) ** a * (1j * K[1]) ** b * (1j * K[2]) ** e
                d = sfft.ifftn(mult * F, workers=fft_workers()).real
                best = max(best, float(np.abs(d).max()))
        out[k] = best * vol ** (k / 3)
    return out


def _build_cutoff(c, base, kind, inner, outer, k_max, points_per_radius):
    levels = expand_layers(c, base, outer)
    inner_mask, outer_mask = levels[inner], levels[outer]
    gap = _region_gap(c, inner_mask, outer_mask)
    members = np.nonzero(inner_mask)[0]
    cf = CutoffFunction(int(base), kind, inner, outer, gap, members,
                        c.centers[members], c.radii[members], base_volume=float(c.volumes[base]))
    if k_max > 0:
        h = float(c.radii[base]) / points_per_radius
        lo = (c.centers[members] - c.radii[members, None]).min(axis=0) - gap - 4 * h
        hi = (c.centers[members] + c.radii[members, None]).max(axis=0) + gap + 4 * h
        n = np.ceil((hi - lo) / h).astype(int)
        n += n % 2
        axes = [lo[i] + (np.arange(n[i]) + 0.5) * h for i in range(3)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
        vals = cf(X)
        cf.origin, cf.h, cf.values = lo, h, vals
        cf.C = _derivative_constants(vals, h, k_max, cf.base_volume)
    return cf


def cutoff_phi(c, base, k_max=2, points_per_radius=12):
    """Equals 1 on the base ball and vanishes outside Q^(3)."""
    return _build_cutoff(c, base, "phi", 0, 3, k_max, points_per_radius)


def cutoff_psi(c, base, k_max=2, points_per_radius=6):
    """Equals 1 on Q^(6) and vanishes outside Q^(9)."""
    return _build_cutoff(c, base, "psi", 6, 9, k_max, points_per_radius)



def region_mask(c, ids, R, h):
    """Cells of the grid on [-R, R)^3 whose centres lie in the union of the given balls."""
    N = int(round(2 * R / h))
    a = grid_axis(R, h)
    mask = np.zeros((N, N, N), bool)
    for i in np.asarray(ids, int):
        x, r = c.centers[i], c.radii[i]
        lo = np.clip(np.ceil((x - r + R) / h - 0.5 - 1e-9).astype(int), 0, N)
        hi = np.clip(np.floor((x + r + R) / h - 0.5 + 1e-9).astype(int) + 1, 0, N)
        if np.any(hi <= lo):
            continue
        ax = [a[lo[k]:hi[k]] - x[k] for k in range(3)]
        d2 = ax[0][:, None, None]**2 + ax[1][None, :, None]**2 + ax[2][None, None, :]**2
        mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] |= d2 <= r * r * (1 + 1e-12)
    return mask


def layer_region_mask(c, base, k, R, h):
    """Grid mask of Q^(k) for the given base ball."""
    levels = expand_layers(c, base, k)
    return region_mask(c, np.nonzero(levels[k])[0], R, h)
