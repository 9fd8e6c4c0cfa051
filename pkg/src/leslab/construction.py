"""Cut-off initial data, the retarded-mollification scheme, divergence-free truncation and energy monitors."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.signal import fftconvolve

from .fields import (STEP_MAX_SLOPE, GriddedField, GridError, _bump, ball_integrals,
                     gradient_components, grid_axis, irfft3, morrey_norm, morrey_profile, rfft3,
                     smooth_step, smooth_step_slope, spectral_divergence, spectral_gradient,
                     wavenumbers)
from .solvers import SolverConfig, linear_solve

# horizon T = min(1, |u0|^-4) / C_HORIZON, frozen after the seed-corpus calibration
C_HORIZON = 10.0
# a priori constant C' in alpha + beta <= C' |u0|_M^2, frozen after calibration
APRIORI_C_PRIME = 2.0
# regularization constant, frozen after calibration
REGULARIZE_C2 = 32.0
MIN_CUTOFF_N = 7
COMPAT_TOL = 1e-3


class ConstructionError(RuntimeError):
    def __init__(self, msg, k=None):
        super().__init__(msg)
        self.k = k


class CompatibilityError(ValueError):
    pass


# --------------------------------------------------------------------------
# cutoffs

def _transition(n):
    return n / 2, min(0.9 * n, n - 1)


@dataclass(frozen=True)
class CutoffZ:
    """Radial cutoff: 1 on B(n/2), 0 outside B(min(0.9n, n-1)), slope <= 4/n."""
    n: float

    def __post_init__(self):
        if self.n < MIN_CUTOFF_N:
            raise ValueError(f"n must be >= {MIN_CUTOFF_N} for the slope bound 4/n")

    @property
    def support_radius(self):
        return _transition(self.n)[1]

    @property
    def max_slope(self):
        a, b = _transition(self.n)
        return STEP_MAX_SLOPE / (b - a)

    def profile(self, r):
        a, b = _transition(self.n)
        return 1.0 - smooth_step((np.asarray(r, float) - a) / (b - a))

    def slope(self, r):
        a, b = _transition(self.n)
        return -smooth_step_slope((np.asarray(r, float) - a) / (b - a)) / (b - a)

    def on_grid(self, R, h):
        a = grid_axis(R, h)
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        return GriddedField(R, h, self.profile(np.sqrt(X**2 + Y**2 + Z**2)))

    def gradient_on_grid(self, R, h):
        a = grid_axis(R, h)
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        r = np.sqrt(X**2 + Y**2 + Z**2)
        s = self.slope(r) / np.where(r > 0, r, 1.0)
        return GriddedField(R, h, np.stack([s * X, s * Y, s * Z]))


@dataclass(frozen=True)
class AnnulusCutoff:
    """1 on B(n), 0 outside B(2n), slope STEP_MAX_SLOPE / n."""
    n: float

    def profile(self, r):
        return 1.0 - smooth_step((np.asarray(r, float) - self.n) / self.n)

    def gradient_on_grid(self, R, h):
        a = grid_axis(R, h)
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        r = np.sqrt(X**2 + Y**2 + Z**2)
        s = -smooth_step_slope((r - self.n) / self.n) / self.n / np.where(r > 0, r, 1.0)
        return np.stack([s * X, s * Y, s * Z])


# --------------------------------------------------------------------------
# mollifier

@dataclass
class Mollifier:
    gamma: float
    h: float
    kernel: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        m = int(math.floor(self.gamma / self.h + 0.5))
        ax = np.arange(-m, m + 1) * self.h
        X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
        r = np.sqrt(X**2 + Y**2 + Z**2) / self.gamma
        k = _bump(np.minimum(r, 1.0), c=1.0)
        if k.sum() == 0:  # gamma below the grid scale: identity
            k = np.zeros_like(k)
            k[m, m, m] = 1.0
        k = k / (k.sum() * self.h**3)
        self.kernel = k

    @property
    def mass(self):
        return float(self.kernel.sum() * self.h**3)

    def apply(self, values):
        v = np.asarray(values)
        kh = self.kernel * self.h**3
        if v.ndim == 4:
            return np.stack([fftconvolve(v[i], kh, mode="same") for i in range(3)])
        return fftconvolve(v, kh, mode="same")


# --------------------------------------------------------------------------
# regularization

@dataclass
class RegularizeResult:
    series: list
    support_radius: float
    support_exact: bool
    v_over_u: float  # (alpha + beta)[v] / (alpha + beta)[u]
    div_functional: float  # (alpha + beta)[div v]
    div_scaled: float  # n^2 (alpha + beta)[div v] / |u0|_M^2 (nan without u0_norm)


def _functional_sum(series, c, grad_fn):
    if not series:
        return 0.0
    vol23 = c.volumes ** (-2 / 3)
    a = np.zeros(len(c))
    rows, ts = [], []
    for f in series:
        a = np.maximum(a, morrey_profile(f, c))
        g = grad_fn(f)
        rows.append(ball_integrals(f.with_values(sum(x.magnitude_sq() for x in g)), c))
        ts.append(f.time)
    b = np.trapezoid(np.array(rows), np.array(ts), axis=0) * vol23 if len(ts) > 1 else np.zeros(len(c))
    return float(a.max() + b.max())


def functional_sum(series, c):
    """alpha_t + beta_t of a snapshot series at its last time."""
    return _functional_sum(series, c, gradient_components)


def divergence_series(series):
    return [spectral_divergence(f) for f in series]


def regularize(u_series, n, gamma, c, u0_norm=None, monitor=True):
    """(u Z_n) * rho_gamma, zeroed on the grid beyond the analytic support radius."""
    if gamma > 1:
        raise ValueError(f"gamma={gamma} exceeds 1")
    if not u_series:
        return RegularizeResult([], 0.0, True, 0.0, 0.0, 0.0)
    f0 = u_series[0]
    Z = CutoffZ(n)
    zg = Z.on_grid(f0.R_max, f0.h).values
    moll = Mollifier(gamma, f0.h)
    radius = Z.support_radius + gamma
    X, Y, W = f0.mesh()
    outside = np.sqrt(X**2 + Y**2 + W**2) >= radius
    out = []
    for u in u_series:
        v = moll.apply(u.values * zg)
        v[..., outside] = 0.0
        out.append(u.with_values(v, u.time))
    exact = all(not np.any(f.values[..., np.sqrt(X**2 + Y**2 + W**2) >= n]) for f in out)
    if not monitor:
        return RegularizeResult(out, radius, exact, math.nan, math.nan, math.nan)
    su = functional_sum(u_series, c)
    sv = functional_sum(out, c)
    sd = functional_sum(divergence_series(out), c)
    scaled = n**2 * sd / u0_norm**2 if u0_norm else math.nan
    return RegularizeResult(out, radius, exact, sv / su if su > 0 else 0.0, sd, scaled)


# --------------------------------------------------------------------------
# constants ledger

@dataclass
class ConstantsLedger:
    C1: float = APRIORI_C_PRIME
    C2: float = REGULARIZE_C2
    ratios: list = field(default_factory=list)  # per piece: measured v, div v and u ratios

    def __post_init__(self):
        if self.C1 < 1 or self.C2 < 1:
            raise ValueError("C1 and C2 must be >= 1")
        if not math.isclose(self.C2 * self.C1 * math.sqrt(self.C0), self.C0, rel_tol=1e-14):
            raise AssertionError("closing identity C2 C1 sqrt(C0) = C0 failed")
        if not self.C2 <= self.C0:
            raise AssertionError("C2 <= C0 failed")

    @property
    def C0(self):
        return self.C1**2 * self.C2**2

    def record(self, k, v_ratio, div_v_ratio, u_ratio):
        self.ratios.append({"k": k, "v": v_ratio, "div_v": div_v_ratio, "u": u_ratio})


# --------------------------------------------------------------------------
# retarded construction

def admissible_horizon(u0_norm, C=C_HORIZON):
    if u0_norm <= 0:
        return 1.0 / C
    return min(1.0, u0_norm**-4) / C


@dataclass
class ConstructionState:
    n: int
    K: int
    gamma: float
    T: float
    k: int
    u_k: list
    v_k: list  # v^(k) = regularized u^(k) on [0, kT/K]
    ledger: ConstantsLedger
    monitors: list
    u0_norm: float
    u_n: list = field(default_factory=list)
    v_n: list = field(default_factory=list)
    w_n: list = field(default_factory=list)
    p_n: list = field(default_factory=list)
    solve: object = field(repr=False, default=None)
    v_fun: object = field(repr=False, default=None)  # the advecting field of the last piece


def _shifted(series, shift):
    """v(t) = series(t - shift) for t >= shift, None (zero) before; linear between snapshots."""
    if not series:
        return None
    times = np.array([f.time for f in series])
    vals = [f.values for f in series]

    def v(t):
        s = t - shift
        if s < -1e-12:
            return None
        if s <= times[0]:
            return vals[0]
        if s >= times[-1]:
            return vals[-1]
        j = int(np.searchsorted(times, s)) - 1
        a = (s - times[j]) / (times[j + 1] - times[j])
        return (1 - a) * vals[j] + a * vals[j + 1]
    return v


def retarded_construct(u0, c, n, K, gamma, T=None, dt=0.01, snapshots_per_piece=4,
                       ledger=None, C_horizon=C_HORIZON):
    """Build u_n, v_n piece by piece; each piece restarts the linear solve from t = 0."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if u0.components != 3:
        raise GridError("u0 must be a vector field")
    if n > u0.R_max:
        raise ValueError(f"n={n} exceeds the box half-width {u0.R_max}")
    ledger = ledger or ConstantsLedger()
    u0_norm = morrey_norm(u0, c)
    if T is None:
        T = admissible_horizon(u0_norm, C_horizon)
    Z = CutoffZ(n)
    ut0 = u0.with_values(u0.values * Z.on_grid(u0.R_max, u0.h).values, 0.0)
    piece = T / K
    v_prev = []  # v^(0) = 0
    monitors = []
    res = None
    sq = u0_norm**2
    for k in range(1, K + 1):
        steps = max(1, math.ceil(piece / dt - 1e-9))
        cfg = SolverConfig(h=u0.h, dt=piece / steps, T=k * piece,
                           snapshot_every=max(1, steps // snapshots_per_piece))
        vfun = _shifted(v_prev, piece) if v_prev else None
        res = linear_solve(ut0, vfun, cfg)
        reg = regularize(res.u_tilde, n, gamma, c, u0_norm, monitor=True)
        if not reg.support_exact:
            raise ConstructionError(f"regularized field leaks outside B(0, {n})", k)
        s_u = functional_sum(res.u_tilde, c)
        mon = {"k": k, "u_sum": s_u, "v_sum": functional_sum(reg.series, c),
               "div_v_sum": reg.div_functional, "u0_norm_sq": sq}
        mon["v_ratio"] = mon["v_sum"] / sq if sq > 0 else 0.0
        mon["div_v_ratio"] = n**2 * mon["div_v_sum"] / sq if sq > 0 else 0.0
        mon["u_ratio"] = s_u / sq if sq > 0 else 0.0
        monitors.append(mon)
        ledger.record(k, mon["v_ratio"], mon["div_v_ratio"], mon["u_ratio"])
        if mon["v_ratio"] > ledger.C0 * (1 + 1e-9):
            raise ConstructionError(f"piece {k}: v bound ratio {mon['v_ratio']:.4g} > C0 = {ledger.C0}", k)
        if mon["div_v_ratio"] > ledger.C0 * (1 + 1e-9):
            raise ConstructionError(f"piece {k}: div v bound ratio {mon['div_v_ratio']:.4g} > C0 = {ledger.C0}", k)
        if k < K:
            v_prev = reg.series
    v_n = []
    if v_prev:
        for f in v_prev:
            if f.time + piece <= T + 1e-12:
                v_n.append(f.with_values(f.values, f.time + piece))
    state = ConstructionState(n, K, gamma, T, K, res.u_tilde, v_prev, ledger, monitors, u0_norm,
                              u_n=res.u_tilde, v_n=v_n, w_n=res.w, p_n=res.p_tilde, solve=res,
                              v_fun=vfun)
    return state


def un_vn_report(state, c):
    """Measured constants for the three bounds on u_n, v_n, div v_n."""
    sq = state.u0_norm**2
    su = functional_sum(state.u_n, c)
    sv = functional_sum(state.v_n, c) if len(state.v_n) else 0.0
    sd = functional_sum(divergence_series(state.v_n), c) if len(state.v_n) else 0.0
    L = state.ledger
    rows = [
        {"id": "un", "measured": su / sq, "bound": L.C1 * math.sqrt(L.C0)},
        {"id": "vn", "measured": sv / sq, "bound": L.C0},
        {"id": "div_vn", "measured": state.n**2 * sd / sq, "bound": L.C0},
    ]
    for r in rows:
        r["pass"] = bool(r["measured"] <= r["bound"])
    return rows, {"u_sum": su, "v_sum": sv, "div_v_sum": sd}


# --------------------------------------------------------------------------
# divergence-free truncation

@dataclass
class AnnulusDivergence:
    """Staggered divergence on the grid cells inside the annulus n < |x| < 2n.

    Unknowns live on faces shared by two annulus cells; faces on the annulus
    boundary carry zero flux, so the normal trace of the result vanishes.
    """
    n: float
    R: float
    h: float
    cells: np.ndarray  # flat indices of annulus cells
    faces: list  # per axis: (lower cell rank, upper cell rank)
    D: sp.csr_matrix
    A: sp.csr_matrix  # D D^T

    @classmethod
    def build(cls, n, R, h):
        if 2 * n >= R:
            raise ValueError(f"annulus B(2n) with n={n} does not fit in the box of half-width {R}")
        N = int(round(2 * R / h))
        a = grid_axis(R, h)
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
        r = np.sqrt(X**2 + Y**2 + Z**2)
        inside = (r > n) & (r < 2 * n)
        rank = -np.ones(inside.shape, int)
        cells = np.flatnonzero(inside)
        rank.ravel()[cells] = np.arange(len(cells))
        rows, cols, vals, faces = [], [], [], []
        nf = 0
        for ax in range(3):
            lo = np.take(rank, np.arange(N - 1), axis=ax)
            hi = np.take(rank, np.arange(1, N), axis=ax)
            both = (lo >= 0) & (hi >= 0)
            l, u = lo[both], hi[both]
            ids = nf + np.arange(len(l))
            rows += [u, l]
            cols += [ids, ids]
            vals += [np.full(len(l), -1.0 / h), np.full(len(l), 1.0 / h)]
            faces.append((l, u))
            nf += len(l)
        D = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(len(cells), nf))
        return cls(n, R, h, cells, faces, D, (D @ D.T).tocsr())

    def solve(self, f, rtol=1e-10):
        """Minimal-norm face field with D psi = f (f must have zero mean)."""
        x, info = spla.cg(self.A, f, rtol=rtol, maxiter=20000)
        if info != 0:
            raise RuntimeError(f"CG did not converge (info={info})")
        return self.D.T @ x

    def face_to_cells(self, psi):
        """Average face values onto cell centres; returns (3, ncells)."""
        out = np.zeros((3, len(self.cells)))
        off = 0
        for ax, (l, u) in enumerate(self.faces):
            p = psi[off:off + len(l)]
            np.add.at(out[ax], l, 0.5 * p)
            np.add.at(out[ax], u, 0.5 * p)
            off += len(l)
        return out

    def face_gradient_norm_sq(self, psi):
        """Discrete H^1 seminorm squared of a face field, differences between annulus faces only."""
        total = 0.0
        off = 0
        N = int(round(2 * self.R / self.h))
        for ax, (l, u) in enumerate(self.faces):
            p = psi[off:off + len(l)]
            off += len(l)
            grid = np.zeros(N**3)
            grid[self.cells[l]] = p  # face value stored at its lower cell
            g = grid.reshape(N, N, N)
            mask = np.zeros(N**3, bool)
            mask[self.cells[l]] = True
            m = mask.reshape(N, N, N)
            for d in range(3):
                a = np.take(g, np.arange(N - 1), axis=d)
                b = np.take(g, np.arange(1, N), axis=d)
                ma = np.take(m, np.arange(N - 1), axis=d)
                mb = np.take(m, np.arange(1, N), axis=d)
                sel = ma & mb
                total += float((((b - a)[sel] / self.h) ** 2).sum())
        return total * self.h**3

    def h1_norm(self, psi):
        return math.sqrt((psi**2).sum() * self.h**3 + self.face_gradient_norm_sq(psi))

    def l2(self, f):
        return math.sqrt((f**2).sum() * self.h**3)


def bogovskii_operator_norm(n, R, h, samples=4, seed=0, op=None):
    """H^1 / L^2 ratio of the right inverse: the worst (lowest Neumann mode) f plus random f."""
    op = op or AnnulusDivergence.build(n, R, h)
    rng = np.random.default_rng(seed)
    ones = np.ones((len(op.cells), 1)) / math.sqrt(len(op.cells))
    X = rng.normal(size=(len(op.cells), 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # lobpcg reports its final accuracy as a warning
        vals, vecs = spla.lobpcg(op.A, X, Y=ones, largest=False, tol=1e-4, maxiter=300)
    ratios = []
    worst = vecs[:, np.argmin(vals)]
    for f in [worst] + [rng.normal(size=len(op.cells)) for _ in range(samples)]:
        f = f - f.mean()
        psi = op.solve(f)
        ratios.append(op.h1_norm(psi) / op.l2(f))
    return {"n": n, "lambda_min": float(vals.min()), "worst": ratios[0], "random_max": max(ratios[1:]),
            "C": ratios[0] / n, "ratios": ratios}


@dataclass
class TruncationReport:
    g: GriddedField
    compat: float
    div_ratio: float  # staggered divergence of g relative to |u0 . grad Z|
    morrey_ratio: float
    psi_h1_ratio: float
    exact_inside: bool


def bogovskii_truncate(u0, n, c, compat_tol=COMPAT_TOL, op=None):
    """g = u0 Z - Psi(u0 . grad Z) with Z = 1 on B(n), 0 outside B(2n)."""
    if u0.components != 3:
        raise GridError("u0 must be a vector field")
    R, h = u0.R_max, u0.h
    op = op or AnnulusDivergence.build(n, R, h)
    Zc = AnnulusCutoff(n)
    X, Y, W = u0.mesh()
    r = np.sqrt(X**2 + Y**2 + W**2)
    zg = Zc.profile(r)
    gz = Zc.gradient_on_grid(R, h)
    f_full = (u0.values * gz).sum(axis=0)
    f = f_full.ravel()[op.cells]
    l1 = float(np.abs(f).sum())
    compat = abs(float(f.sum())) / l1 if l1 > 0 else 0.0
    if compat > compat_tol:
        raise CompatibilityError(f"annulus integral of u0.grad Z is {compat:.3g} of its L1 size")
    g = u0.values * zg
    if l1 > 0:
        f0 = f - f.mean()
        psi = op.solve(f0)
        cellpsi = op.face_to_cells(psi)
        flat = g.reshape(3, -1)
        flat[:, op.cells] -= cellpsi
        psi_ratio = op.h1_norm(psi) / op.l2(f0)
    else:
        psi_ratio = 0.0
    gf = u0.with_values(g)
    # staggered divergence of g: central differences of u0 Z minus the exact D psi
    uz = u0.values * zg
    div = sum((np.roll(uz[i], -1, axis=i) - np.roll(uz[i], 1, axis=i)) / (2 * h) for i in range(3))
    if l1 > 0:
        div.reshape(-1)[op.cells] -= f0
    ref = np.sqrt((f_full**2).sum())
    div_ratio = float(np.sqrt((div**2).sum()) / ref) if ref > 0 else 0.0
    inner = r < n
    exact = bool(np.array_equal(g[:, inner], u0.values[:, inner]))
    un = morrey_norm(u0, c)
    return TruncationReport(gf, compat, div_ratio, morrey_norm(gf, c) / un if un > 0 else 0.0,
                            psi_ratio, exact)


# --------------------------------------------------------------------------
# local energy inequality

@dataclass
class SpacetimeTest:
    """phi(x, t) = space(x) * theta(t) on a grid, with theta' supplied."""
    space: GriddedField
    theta: callable = lambda t: 1.0
    dtheta: callable = lambda t: 0.0

    def __post_init__(self):
        if np.any(self.space.values < 0):
            raise ValueError("test function must be non-negative")
        self.grad = list(spectral_gradient(self.space).values)
        N, h = self.space.N, self.space.h
        k2 = sum(k**2 for k in wavenumbers(N, h))
        self.lap = irfft3(-k2 * rfft3(self.space.values), N)


def ball_test_function(c, ball, R, h, theta=None, dtheta=None):
    """1 on the ball, 0 outside twice its radius."""
    a = grid_axis(R, h)
    X, Y, Z = np.meshgrid(a, a, a, indexing="ij")
    x, r = c.centers[ball], float(c.radii[ball])
    d = np.sqrt((X - x[0])**2 + (Y - x[1])**2 + (Z - x[2])**2)
    space = GriddedField(R, h, 1.0 - smooth_step((d - r) / r))
    return SpacetimeTest(space, theta or (lambda t: 1.0), dtheta or (lambda t: 0.0))


def _trap(vals, times):
    vals, times = np.asarray(vals), np.asarray(times)
    if len(vals) < 2:
        return 0.0
    return float(np.sum((vals[1:] + vals[:-1]) / 2 * np.diff(times)))


def local_energy_check(u, p, phi, t, v=None, w=None):
    """LHS - RHS of the local energy inequality with all terms by quadrature.

    Without v: classical form with u transporting itself. With v (snapshots or a
    callable of t, zero before its first snapshot) and w = div u: the auxiliary
    form including the div v and p w phi terms.
    """
    snaps = [(a, b) for a, b in zip(u, p) if a.time <= t + 1e-12]
    if len(snaps) < 2:
        raise ValueError("need at least two snapshots up to t")
    if not snaps[0][0].same_grid(phi.space):
        raise GridError("fields and test function grids differ")
    times = np.array([a.time for a, _ in snaps])
    dV = phi.space.cell_volume
    sp_ = phi.space.values
    gphi, lphi = phi.grad, phi.lap
    vfun = v if (v is None or callable(v)) else _shifted(list(v), 0.0)
    wmap = {round(f.time, 12): f.values for f in w} if w is not None else None
    grad_term, rhs_terms = [], []
    for ui, pi in snaps:
        tt = ui.time
        th, dth = phi.theta(tt), phi.dtheta(tt)
        uv = ui.values
        m2 = (uv**2).sum(axis=0)
        g = gradient_components(ui)
        g2 = sum(x.magnitude_sq() for x in g)
        grad_term.append(2 * float((g2 * sp_).sum()) * th * dV)
        rhs = float((m2 * (sp_ * dth + lphi * th)).sum()) * dV
        if vfun is None:
            udphi = sum(uv[i] * gphi[i] for i in range(3)) * th
            rhs += float(((m2 + 2 * pi.values) * udphi).sum()) * dV
        else:
            vv = vfun(tt)
            ww = wmap.get(round(tt, 12)) if wmap else None
            if ww is None:
                ww = spectral_divergence(ui).values
            if vv is not None:
                vdphi = sum(vv[i] * gphi[i] for i in range(3)) * th
                divv = spectral_divergence(GriddedField(ui.R_max, ui.h, vv)).values
                rhs += float((m2 * (divv * sp_ * th + vdphi)).sum()) * dV
            udphi = sum(uv[i] * gphi[i] for i in range(3)) * th
            rhs += 2 * float((pi.values * (ww * sp_ * th + udphi)).sum()) * dV
        rhs_terms.append(rhs)
    u_last, u_first = snaps[-1][0].values, snaps[0][0].values
    lhs = float(((u_last**2).sum(axis=0) * sp_).sum()) * phi.theta(times[-1]) * dV
    lhs += _trap(grad_term, times)
    rhs = float(((u_first**2).sum(axis=0) * sp_).sum()) * phi.theta(times[0]) * dV
    rhs += _trap(rhs_terms, times)
    return lhs - rhs, lhs


# --------------------------------------------------------------------------
# a priori barrier monitor

def apriori_monitor(u, c, u0_norm, C_prime=APRIORI_C_PRIME, C_horizon=C_HORIZON):
    """Trace alpha_t + beta_t over the snapshots and compare with C' |u0|_M^2."""
    horizon = admissible_horizon(u0_norm, C_horizon)
    times = np.array([f.time for f in u])
    vol23 = c.volumes ** (-2 / 3)
    a = np.zeros(len(c))
    b = np.zeros(len(c))
    prev = None
    trace = []
    for f in u:
        a = np.maximum(a, morrey_profile(f, c))
        g = gradient_components(f)
        row = ball_integrals(f.with_values(sum(x.magnitude_sq() for x in g)), c)
        if prev is not None:
            b = b + (row + prev[0]) / 2 * (f.time - prev[1]) * vol23
        prev = (row, f.time)
        trace.append((f.time, float(a.max()), float(b.max())))
    sq = u0_norm**2
    sums = np.array([x[1] + x[2] for x in trace])
    bound = C_prime * sq
    bad = np.nonzero(sums > bound)[0]
    return {
        "horizon": horizon,
        "within_horizon": bool(times[-1] <= horizon + 1e-12),
        "trace": trace,
        "C_prime_measured": float(sums.max() / sq) if sq > 0 else 0.0,
        "C_prime": C_prime,
        "holds": len(bad) == 0,
        "first_violation": float(times[bad[0]]) if len(bad) else None,
        "alpha_nonincreasing": bool(np.all(np.diff([x[1] for x in trace]) <= 1e-12)),
    }


# --------------------------------------------------------------------------
# seed data

def shear_wave_field(R, h, seed):
    """Sum of three randomly phased shear waves; pointwise divergence-free."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.3, 0.6, 3)
    ph = rng.uniform(0, 2 * np.pi, 3)
    k = rng.uniform(0.5, 1.0, 3)
    ax = grid_axis(R, h)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    sz, cz = np.sin(k[0] * Z + ph[0]), np.cos(k[0] * Z + ph[0])
    sx, cx = np.sin(k[1] * X + ph[1]), np.cos(k[1] * X + ph[1])
    sy, cy = np.sin(k[2] * Y + ph[2]), np.cos(k[2] * Y + ph[2])
    vals = np.stack([a[0] * cz + a[2] * sy, a[0] * sz + a[1] * cx, a[1] * sx + a[2] * cy])
    return GriddedField(R, h, vals)
