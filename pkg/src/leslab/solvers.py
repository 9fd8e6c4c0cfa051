"""Heat propagation and the advective linear system, solved pseudo-spectrally by Picard iteration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (GriddedField, GridError, alpha_beta, gradient_components, irfft3, rfft3,
                     morrey_norm, wavenumbers)

# X-norm bound for the zero-data Duhamel map: from the energy estimate
# |phi|^2 + 2 int |grad phi|^2 <= 2 L sqrt(T0) X(phi) X(a)
CONTRACTION_PREFACTOR = (1 + math.sqrt(2)) ** 2
CFL_MAX = 0.5


class PicardDivergenceError(RuntimeError):
    pass


class EnergyLedgerError(RuntimeError):
    pass


class SpectralOps:
    """Fourier-side operators on an N^3 periodic grid; first derivatives drop Nyquist modes."""

    def __init__(self, N, h):
        self.N, self.h = N, h
        kx, ky, kz = wavenumbers(N, h)
        self.k2 = kx**2 + ky**2 + kz**2
        if N % 2 == 0:
            kx, ky, kz = kx.copy(), ky.copy(), kz.copy()
            kx[N // 2] = 0.0
            ky[0, N // 2] = 0.0
            kz[..., -1] = 0.0
        self.k = (kx, ky, kz)
        kk = kx**2 + ky**2 + kz**2
        kk[kk == 0] = 1.0  # zero mode and pure-Nyquist modes carry no derivative
        self.kk = kk

    def fwd(self, a):
        return rfft3(a)

    def inv(self, A):
        return irfft3(A, self.N)

    def grad(self, A):
        return [1j * k * A for k in self.k]

    def div(self, A):
        return 1j * (self.k[0] * A[0] + self.k[1] * A[1] + self.k[2] * A[2])

    def leray(self, A):
        """Remove the gradient part: A - k (k.A)/|k|^2."""
        kdotA = self.k[0] * A[0] + self.k[1] * A[1] + self.k[2] * A[2]
        return np.stack([A[i] - self.k[i] * kdotA / self.kk for i in range(3)])

    def heat(self, t):
        return np.exp(-self.k2 * t)

    def inverse_laplacian_div(self, A):
        """(-Lap)^{-1} div of a vector field (Fourier side)."""
        return self.div(A) / self.kk

    def h_minus1(self, A):
        """H^{-1} norm of a (vector) Fourier field, normalised like L^2 on the grid."""
        w = 1.0 / (1.0 + self.k2)
        return math.sqrt(_parseval(A, self.N, self.h, weight=w))

    def l2_sq(self, A):
        return _parseval(A, self.N, self.h)

    def grad_l2_sq(self, A):
        kk = self.k[0]**2 + self.k[1]**2 + self.k[2]**2
        return _parseval(A, self.N, self.h, weight=kk)


def _parseval(A, N, h, weight=None):
    """sum |a|^2 h^3 computed from rfft coefficients."""
    mag = np.abs(A) ** 2
    if weight is not None:
        mag = mag * weight
    # the half-spectrum stores kz in [0, N/2]; interior planes count twice
    w = np.full(A.shape[-1], 2.0)
    w[0] = 1.0
    if N % 2 == 0:
        w[-1] = 1.0
    return float((mag * w).sum()) * h**3 / N**3


# --------------------------------------------------------------------------
# heat equation

def heat_evolve(w0, t):
    """Exact spectral heat propagation on the periodic box."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return w0.with_values(w0.values.copy(), w0.time)
    ops = SpectralOps(w0.N, w0.h)
    return w0.with_values(ops.inv(ops.fwd(w0.values) * ops.heat(t)), w0.time + t)


def gaussian_tail_check(w0, t, n, samples=2000, seed=0, tol=1e-12):
    """Compare |w(x,t)| with t^{-3/2} exp(-d^2/4t) int|w0| outside B(0, 2n).

    w0 must vanish outside B(0, n); d is the distance from x to B(0, n).
    """
    if w0.components != 1:
        raise GridError("scalar data expected")
    X, Y, Z = w0.mesh()
    r = np.sqrt(X**2 + Y**2 + Z**2)
    if np.any(np.abs(w0.values[r > n]) > 0):
        raise ValueError(f"data not supported in B(0, {n})")
    w = heat_evolve(w0, t).values
    mass = float(np.abs(w0.values).sum() * w0.cell_volume)
    outside = np.nonzero(r.ravel() >= 2 * n)[0]
    if len(outside) == 0:
        raise ValueError("no grid points outside B(0, 2n)")
    rng = np.random.default_rng(seed)
    pick = rng.choice(outside, min(samples, len(outside)), replace=False)
    d = r.ravel()[pick] - n
    bound = t**-1.5 * np.exp(-d**2 / (4 * t)) * mass
    val = np.abs(w.ravel()[pick])
    floor = tol * np.abs(w0.values).max()
    ok = val <= bound + floor
    return {"points": int(len(pick)), "violations": int((~ok).sum()),
            "max_ratio": float(np.max(val / (bound + floor))), "mass": mass}


# --------------------------------------------------------------------------
# advective linear system

@dataclass
class SolverConfig:
    h: float
    dt: float
    T: float
    picard_tol: float = 1e-10
    T0: float | None = None  # None: largest value meeting the contraction condition
    max_picard: int = 60
    snapshot_every: int = 1
    contraction_prefactor: float = CONTRACTION_PREFACTOR

    def __post_init__(self):
        if self.dt <= 0 or self.T < 0 or self.h <= 0:
            raise ValueError("h, dt must be positive and T non-negative")

    def admissible_T0(self, L):
        if L <= 0:
            return self.T
        return min(self.T, 1.0 / (2 * self.contraction_prefactor * L) ** 2)

    def contraction_number(self, L, T0):
        return self.contraction_prefactor * L * math.sqrt(T0)


class VelocityHistory:
    """v(t) from a constant field, a callable, or snapshots (piecewise linear in time)."""

    def __init__(self, v):
        self.kind = "zero"
        if v is None:
            return
        if isinstance(v, GriddedField):
            self.kind, self.field = "const", v.values
        elif callable(v):
            self.kind, self.fn = "call", v
        else:
            snaps = list(v)
            if not snaps:
                return
            self.kind = "snap"
            self.times = np.array([s.time for s in snaps])
            self.vals = [s.values for s in snaps]
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("velocity snapshot times must increase")

    def __call__(self, t):
        if self.kind == "zero":
            return None
        if self.kind == "const":
            return self.field
        if self.kind == "call":
            out = self.fn(t)
            return None if out is None else (out.values if isinstance(out, GriddedField) else out)
        ts = self.times
        if t <= ts[0]:
            return self.vals[0]
        if t >= ts[-1]:
            return self.vals[-1]
        j = int(np.searchsorted(ts, t)) - 1
        a = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1 - a) * self.vals[j] + a * self.vals[j + 1]


def lipschitz_size(vh, times, ops):
    """max over times of ||v||_inf + ||grad v||_inf."""
    best = 0.0
    for t in times:
        v = vh(t)
        if v is None:
            continue
        g = max(float(np.abs(ops.inv(d)).max()) for i in range(3) for d in ops.grad(ops.fwd(v[i])))
        best = max(best, float(np.abs(v).max()) + g)
    return best


@dataclass
class LinearSolveResult:
    u_tilde: list
    p_tilde: list
    w: list
    times: np.ndarray
    energy: np.ndarray  # ||u(t)||^2 at every step
    dissipation: np.ndarray  # int_0^t ||grad u||^2 at every step
    picard_residuals: list  # per sub-interval list of X-norm distances
    T0: float
    L: float
    contraction_number: float
    dt: float
    config: SolverConfig = field(repr=False, default=None)

    def picard_ratios(self):
        out = []
        for r in self.picard_residuals:
            r = np.asarray(r)
            ok = r[:-1] > 0
            out.extend((r[1:][ok] / r[:-1][ok]).tolist())
        return out


def _advect(ops, v, A):
    """Leray projection of (v.grad) a, Fourier in and out."""
    if v is None:
        return np.zeros_like(A)
    out = np.empty_like(A)
    for i in range(3):
        g = ops.grad(A[i])
        adv = sum(v[j] * ops.inv(g[j]) for j in range(3))
        out[i] = ops.fwd(adv)
    return ops.leray(out)


def _x_norm(ops, D, dt):
    """max-in-time L^2 plus root of time-integrated gradient energy (trapezoid)."""
    l2 = [math.sqrt(ops.l2_sq(d)) for d in D]
    g = np.array([ops.grad_l2_sq(d) for d in D])
    gi = float(np.sum((g[1:] + g[:-1]) / 2) * dt) if len(g) > 1 else 0.0
    return max(l2) + math.sqrt(max(gi, 0.0))


def linear_solve(u0, v, cfg, forcing=None, initial_iterate=None):
    """Solve u_t - Lap u + P((v.grad) u) = forcing on [0, T] with data u0.

    Integrating factor for the Laplacian, trapezoid for the source, Picard
    sweeps on sub-intervals of length T0.
    """
    if u0.components != 3:
        raise GridError("u0 must be a vector field")
    if abs(u0.h - cfg.h) > 1e-12:
        raise GridError(f"grid spacing {u0.h} differs from config h={cfg.h}")
    ops = SpectralOps(u0.N, u0.h)
    vh = VelocityHistory(v)
    probe = np.linspace(0, cfg.T, 5)
    L = lipschitz_size(vh, probe, ops)
    vmax = max((float(np.abs(vh(t)).max()) for t in probe if vh(t) is not None), default=0.0)
    dt = cfg.dt
    if vmax > 0:
        dt = min(dt, CFL_MAX * u0.h / vmax)
    T0 = cfg.T0 if cfg.T0 is not None else cfg.admissible_T0(L)
    T0 = min(T0, cfg.T) if cfg.T > 0 else 0.0
    n_sub = max(1, math.ceil(cfg.T / T0 - 1e-9)) if cfg.T > 0 else 0
    T0 = cfg.T / n_sub if n_sub else 0.0
    steps = max(1, math.ceil(T0 / dt - 1e-9)) if n_sub else 0
    dt = T0 / steps if steps else dt
    E = ops.heat(dt)

    def forcing_hat(t):
        if forcing is None:
            return None
        f = forcing(t)
        return np.stack([ops.fwd(f.values[i]) for i in range(3)])

    A0 = np.stack([ops.fwd(u0.values[i]) for i in range(3)])
    u_series, p_series, w_series, times = [], [], [], []
    energy, diss = [ops.l2_sq(A0)], [0.0]
    residuals = []
    grad_prev = ops.grad_l2_sq(A0)

    def record(A, t, vcur):
        u = np.stack([ops.inv(A[i]) for i in range(3)])
        u_series.append(u0.with_values(u, t))
        w_series.append(GriddedField(u0.R_max, u0.h, ops.inv(ops.div(A)), t))
        if vcur is None:
            p = np.zeros(u.shape[1:])
        else:
            adv = np.empty_like(A)
            for i in range(3):
                g = ops.grad(A[i])
                adv[i] = ops.fwd(sum(vcur[j] * ops.inv(g[j]) for j in range(3)))
            p = ops.inv(ops.inverse_laplacian_div(adv))
        p_series.append(GriddedField(u0.R_max, u0.h, p, t))
        times.append(t)

    record(A0, 0.0, vh(0.0))
    A_start = A0
    step_global = 0
    for s in range(n_sub):
        t0 = s * T0
        tk = t0 + dt * np.arange(steps + 1)
        vs = [vh(t) for t in tk]
        fs = [forcing_hat(t) for t in tk]
        if initial_iterate is not None:
            it = [np.stack([ops.fwd(initial_iterate(t).values[i]) for i in range(3)]) for t in tk]
        else:
            it = [A_start] * (steps + 1)
        res = []
        for m in range(cfg.max_picard):
            Fk = [_advect(ops, vs[k], it[k]) for k in range(steps + 1)]
            G = [(-Fk[k] if fs[k] is None else fs[k] - Fk[k]) for k in range(steps + 1)]
            new = [A_start]
            for k in range(steps):
                new.append(E * new[-1] + dt / 2 * (E * G[k] + G[k + 1]))
            diff = [a - b for a, b in zip(new, it)]
            r = _x_norm(ops, diff, dt)
            scale = _x_norm(ops, new, dt)
            res.append(r)
            it = new
            if not np.isfinite(r):
                raise PicardDivergenceError(f"non-finite Picard iterate on sub-interval {s}")
            if r <= cfg.picard_tol * max(scale, 1e-300):
                break
            if len(res) >= 4 and all(res[-i] > res[-i - 1] for i in range(1, 4)):
                raise PicardDivergenceError(
                    f"Picard residual grew three times in a row on sub-interval {s} "
                    f"(contraction number {cfg.contraction_number(L, T0):.3g})")
        else:
            raise PicardDivergenceError(
                f"Picard loop did not converge in {cfg.max_picard} sweeps on sub-interval {s} "
                f"(contraction number {cfg.contraction_number(L, T0):.3g})")
        residuals.append(res)
        for k in range(1, steps + 1):
            step_global += 1
            g = ops.grad_l2_sq(it[k])
            energy.append(ops.l2_sq(it[k]))
            diss.append(diss[-1] + dt / 2 * (grad_prev + g))
            grad_prev = g
            if step_global % cfg.snapshot_every == 0 or (s == n_sub - 1 and k == steps):
                record(it[k], float(tk[k]), vs[k])
        A_start = it[-1]
    return LinearSolveResult(u_series, p_series, w_series, np.array(times), np.array(energy),
                             np.array(diss), residuals, T0, L, cfg.contraction_number(L, T0) if n_sub else 0.0,
                             dt, cfg)


def energy_ledger_check(res, L, factor=2.0, tol=1e-9):
    """Smallest C with |u(t)|^2 + int |grad u|^2 <= e^{Ct} |u0|^2 at every step."""
    E0 = res.energy[0]
    n = len(res.energy)
    t = res.dt * np.arange(n)
    lhs = res.energy + res.dissipation
    if E0 <= 0:
        C = 0.0
    else:
        with np.errstate(divide="ignore"):
            rates = np.log(np.maximum(lhs[1:], 1e-300) / E0) / t[1:]
        C = max(0.0, float(rates.max())) if len(rates) else 0.0
    report = {"C": C, "L": L, "bound": factor * L, "steps": n,
              "holds": bool(C <= factor * L + tol)}
    if not report["holds"]:
        raise EnergyLedgerError(f"energy growth rate {C:.4g} exceeds {factor} * L = {factor * L:.4g}")
    return report


def w_morrey_bound(res, c, n, u0_norm):
    """alpha + beta of w = div u against n^-2 ||u0||_M^2."""
    fe = alpha_beta([(w, gradient_components(w)) for w in res.w], c, float(res.times[-1]))
    total = fe.alpha + fe.beta
    w0_norm = morrey_norm(res.w[0], c)
    return {"alpha": fe.alpha, "beta": fe.beta, "sum": total, "n": n, "u0_norm": u0_norm,
            "C": total * n**2 / u0_norm**2 if u0_norm > 0 else 0.0,
            "w0_norm": w0_norm, "w0_ratio": w0_norm * n / u0_norm if u0_norm > 0 else 0.0}


def advection_operator_constant(v, samples=8, seed=0):
    """Sampled max of ||P((v.grad) a)||_{H^-1} / ((||v||_inf + ||grad v||_inf) ||a||_2)."""
    ops = SpectralOps(v.N, v.h)
    vh = VelocityHistory(v)
    L = lipschitz_size(vh, [0.0], ops)
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(samples):
        a = rng.normal(size=(3,) + v.values.shape[1:])
        A = np.stack([ops.fwd(a[i]) for i in range(3)])
        F = _advect(ops, v.values, A)
        ratio = ops.h_minus1(F) / (L * math.sqrt(ops.l2_sq(A)))
        best = max(best, ratio)
    return best, L


def periodic_image_bound(support_radius, R, T):
    """Gaussian-tail weight of the nearest periodic image of data supported in B(0, support_radius)."""
    d = 2 * R - 2 * support_radius
    if d <= 0:
        return 1.0
    return math.exp(-d * d / (4 * T)) if T > 0 else 0.0
