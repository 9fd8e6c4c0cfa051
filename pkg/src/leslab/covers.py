"""Ball covers of a truncated box: construction, validation, layers and growth."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

TOUCH_RTOL = 1e-9
ULOC_SIDE = 2.0
# neighbour counts of the untruncated tilings, measured once with
# measure_tiling_sigma() on boxes large enough to contain interior balls
DYADIC_SIGMA = 32
AXIAL_SIGMA = 32
KIND_ETA = {"uloc": 1.0, "dyadic": 2.0, "axial": 2.0}
KIND_SIGMA = {"uloc": 26, "dyadic": DYADIC_SIGMA, "axial": AXIAL_SIGMA}
MIN_RMAX = 2.0


class CoverError(ValueError):
    pass


class LayerEscapeError(CoverError):
    """A layer reached balls whose neighbourhood was cut off by the truncation."""


class GrowthClassError(CoverError):
    pass


@dataclass(frozen=True)
class Ball:
    id: int
    center: tuple
    radius: float

    @property
    def volume(self):
        return 4.0 * math.pi / 3.0 * self.radius**3


def separation_constants(eta):
    """(kappa, beta_sep) for a size-ratio bound eta."""
    s = 1.0 + 2.0 / eta**2
    return math.sqrt(s) - 1.0, 1.0 / math.sqrt(s)


@dataclass(frozen=True, eq=False)
class Cover:
    kind: str
    balls: tuple
    sigma: int
    eta: float
    R_max: float

    def __post_init__(self):
        ids = [b.id for b in self.balls]
        if ids != list(range(len(ids))):
            raise CoverError("ball ids must be 0..N-1 in order")

    def __len__(self):
        return len(self.balls)

    @property
    def kappa(self):
        return separation_constants(self.eta)[0]

    @property
    def beta_sep(self):
        return separation_constants(self.eta)[1]

    @cached_property
    def centers(self):
        return np.array([b.center for b in self.balls], dtype=float).reshape(-1, 3)

    @cached_property
    def radii(self):
        return np.array([b.radius for b in self.balls], dtype=float)

    @cached_property
    def volumes(self):
        return 4.0 * math.pi / 3.0 * self.radii**3

    @cached_property
    def index(self):
        return BucketIndex(self.centers, self.radii)

    @cached_property
    def adjacency(self):
        """Symmetric CSR matrix of intersecting pairs (no diagonal)."""
        i, j = self.index.intersecting_pairs()
        n = len(self)
        data = np.ones(2 * len(i), dtype=np.int8)
        a = sp.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(n, n))
        a.sum_duplicates()
        return a

    @cached_property
    def complete(self):
        # every ball able to touch this one is guaranteed to be in the list
        reach = np.abs(self.centers).max(axis=1) + (1.0 + 2.0 * self.eta) * self.radii
        return reach <= self.R_max * (1 + 1e-12)

    def neighbors(self, i):
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def nearest_ball(self, point):
        d = np.linalg.norm(self.centers - np.asarray(point, float), axis=1)
        return int(np.argmin(d))

    def contains(self, points, ids=None):
        """Boolean mask: which points lie in the union of the given balls."""
        pts = np.atleast_2d(np.asarray(points, float))
        ids = np.arange(len(self)) if ids is None else np.asarray(sorted(ids), int)
        out = np.zeros(len(pts), bool)
        if len(ids) == 0:
            return out
        c, r = self.centers[ids], self.radii[ids]
        for s in range(0, len(pts), 4096):
            d = np.linalg.norm(pts[s:s + 4096, None, :] - c[None], axis=2)
            out[s:s + 4096] = (d <= r[None] * (1 + TOUCH_RTOL)).any(axis=1)
        return out


class BucketIndex:
    """Uniform bucket grids, one per radius level (radii within a factor 2).

    Buckets at the finest level have the size of the smallest radius.
    """

    def __init__(self, centers, radii):
        self.centers = np.asarray(centers, float)
        self.radii = np.asarray(radii, float)
        if len(self.radii) == 0:
            self.levels = {}
            return
        self.rmin = float(self.radii.min())
        lev = np.floor(np.log2(self.radii / self.rmin) + 1e-9).astype(int)
        self.levels = {}
        for L in np.unique(lev):
            ids = np.nonzero(lev == L)[0]
            size = self.rmin * 2.0**L
            coords = np.floor(self.centers[ids] / size).astype(np.int64)
            keys = _encode(coords)
            order = np.argsort(keys, kind="stable")
            self.levels[int(L)] = dict(ids=ids[order], keys=keys[order], size=size,
                                       rmax=float(self.radii[ids].max()))

    def candidates(self, centers, reach, min_level=None):
        """Yield (query index, ball id) arrays for balls whose bucket lies within reach."""
        centers = np.atleast_2d(centers)
        for L, lv in self.levels.items():
            if min_level is not None and L < min_level:
                continue
            m = int(math.ceil((reach + lv["rmax"]) / lv["size"]))
            base = np.floor(centers / lv["size"]).astype(np.int64)
            rng = np.arange(-m, m + 1)
            for off in np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), -1).reshape(-1, 3):
                q = _encode(base + off)
                lo = np.searchsorted(lv["keys"], q, "left")
                hi = np.searchsorted(lv["keys"], q, "right")
                cnt = hi - lo
                if cnt.sum() == 0:
                    continue
                qi = np.repeat(np.arange(len(q)), cnt)
                start = np.repeat(lo - (np.cumsum(cnt) - cnt), cnt)
                yield qi, lv["ids"][np.arange(cnt.sum()) + start]

    def intersecting_pairs(self):
        """All pairs i < j of closed balls that intersect."""
        if not self.levels:
            return np.zeros(0, int), np.zeros(0, int)
        I, J = [], []
        lev_of = np.empty(len(self.radii), int)
        for L, lv in self.levels.items():
            lev_of[lv["ids"]] = L
        for L, lv in self.levels.items():
            q = lv["ids"]
            # larger balls are found from the smaller side only
            for qi, b in self.candidates(self.centers[q], lv["rmax"], min_level=L):
                a = q[qi]
                keep = (lev_of[b] > L) | (a < b)
                a, b = a[keep], b[keep]
                d = np.linalg.norm(self.centers[a] - self.centers[b], axis=1)
                hit = d <= (self.radii[a] + self.radii[b]) * (1 + TOUCH_RTOL)
                I.append(a[hit])
                J.append(b[hit])
        I, J = np.concatenate(I), np.concatenate(J)
        pairs = np.unique(np.sort(np.stack([I, J], 1), axis=1), axis=0)
        return pairs[:, 0], pairs[:, 1]


def _encode(coords):
    off = np.int64(1 << 20)
    c = coords.astype(np.int64) + off
    return (c[:, 0] << 42) | (c[:, 1] << 21) | c[:, 2]


# --------------------------------------------------------------------------
# construction

def _cube_meets_box(lo, side, R):
    return np.all((lo <= R) & (lo + side >= -R), axis=1)


def _uloc_cubes(R):
    s = ULOC_SIDE
    k = np.arange(-math.floor((R + s / 2) / s), math.floor((R + s / 2) / s) + 1)
    c = np.stack(np.meshgrid(k, k, k, indexing="ij"), -1).reshape(-1, 3) * s
    lo = c - s / 2
    keep = _cube_meets_box(lo, s, R)
    return lo[keep], np.full(keep.sum(), s)


def _dyadic_cubes(R):
    los, sides = [], []
    core = np.array([[a, b, c] for a in (-2, 0) for b in (-2, 0) for c in (-2, 0)], float)
    los.append(core)
    sides.append(np.full(8, 2.0))
    k = 1
    while 2.0**k <= R:
        s = 2.0**k
        idx = np.arange(-2, 2)
        g = np.stack(np.meshgrid(idx, idx, idx, indexing="ij"), -1).reshape(-1, 3)
        inner = np.all((g >= -1) & (g <= 0), axis=1)
        los.append(g[~inner] * s)
        sides.append(np.full((~inner).sum(), s))
        k += 1
    lo, side = np.concatenate(los), np.concatenate(sides)
    keep = _cube_meets_box(lo, side[:, None], R)
    return lo[keep], side[keep]


def _axial_slabs(R):
    """(z_lo, side) pairs for the slabs of the axial cover."""
    slabs = [(-2.0, 2.0), (0.0, 2.0)]
    k = 1
    while 2.0**k <= R:
        s = 2.0**k
        slabs += [(s, s), (-2 * s, s)]
        k += 1
    return slabs


def _axial_cubes(R):
    los, sides = [], []
    for zlo, s in _axial_slabs(R):
        i = np.arange(math.floor(-R / s), math.ceil(R / s))
        gx, gy = np.meshgrid(i * s, i * s, indexing="ij")
        lo = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, zlo)], 1)
        los.append(lo)
        sides.append(np.full(len(lo), s))
    lo, side = np.concatenate(los), np.concatenate(sides)
    keep = _cube_meets_box(lo, side[:, None], R)
    return lo[keep], side[keep]


_GENERATORS = {"uloc": _uloc_cubes, "dyadic": _dyadic_cubes, "axial": _axial_cubes}


def dyadic_shell(point):
    """Shell index of a point in the dyadic tiling; boundary points go inward."""
    m = float(np.max(np.abs(point)))
    if m <= 2.0:
        return 0
    return int(math.ceil(math.log2(m))) - 1


def cover_from_arrays(kind, centers, radii, sigma, eta, R_max):
    centers = np.asarray(centers, float)
    radii = np.asarray(radii, float)
    # deterministic ids: by radius, then z, y, x
    order = np.lexsort((centers[:, 0], centers[:, 1], centers[:, 2], radii))
    balls = tuple(Ball(i, tuple(float(v) for v in centers[o]), float(radii[o]))
                  for i, o in enumerate(order))
    return Cover(kind, balls, int(sigma), float(eta), float(R_max))


def build_cover(kind, R_max):
    """Circumscribed-ball cover of [-R_max, R_max]^3 for one of the tilings."""
    if kind not in _GENERATORS:
        raise CoverError(f"unsupported cover kind {kind!r}")
    if R_max < MIN_RMAX:
        raise CoverError(f"R_max={R_max} cannot hold the first layer (need >= {MIN_RMAX})")
    lo, side = _GENERATORS[kind](float(R_max))
    centers = lo + side[:, None] / 2
    radii = side * math.sqrt(3.0) / 2
    return cover_from_arrays(kind, centers, radii, KIND_SIGMA[kind], KIND_ETA[kind], R_max)


def measure_tiling_sigma(kind, R_max):
    """Max neighbour count over balls whose neighbourhood is untruncated."""
    c = build_cover(kind, R_max)
    deg = np.diff(c.adjacency.indptr)
    return int(deg[c.complete].max()) if c.complete.any() else None


# --------------------------------------------------------------------------
# validation

@dataclass
class ValidationReport:
    max_intersections: int
    worst_ratio: float
    min_radius: float
    covered: bool
    uncovered_samples: int
    sample_spacing: float
    sigma: int
    eta: float
    sigma_counts_self: bool = False

    @property
    def valid(self):
        return (self.max_intersections <= self.sigma
                and self.worst_ratio <= self.eta * (1 + 1e-12)
                and self.min_radius >= 1.0 - 1e-12
                and self.covered)


def coverage_mask(c, spacing=0.25):
    """Sample [-R, R]^3 at spacing <= `spacing`; True where some ball covers."""
    R = c.R_max
    m = int(math.ceil(2 * R / spacing))
    g = np.linspace(-R, R, m + 1)
    h = g[1] - g[0]
    hit = np.zeros((m + 1,) * 3, bool)
    for x, r in zip(c.centers, c.radii):
        lo = np.maximum(np.ceil((x - r + R) / h - 1e-9).astype(int), 0)
        hi = np.minimum(np.floor((x + r + R) / h + 1e-9).astype(int), m)
        if np.any(hi < lo):
            continue
        ax = [g[lo[k]:hi[k] + 1] - x[k] for k in range(3)]
        d2 = ax[0][:, None, None]**2 + ax[1][None, :, None]**2 + ax[2][None, None, :]**2
        hit[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1] |= d2 <= (r * (1 + TOUCH_RTOL))**2
    return hit, h


def validate_cover(c, spacing=0.25):
    if len(c) == 0:
        return ValidationReport(0, 1.0, float("inf"), False, -1, spacing, c.sigma, c.eta)
    a = c.adjacency.tocoo()
    deg = np.diff(c.adjacency.indptr)
    ratio = c.radii[a.row] / c.radii[a.col] if a.nnz else np.ones(1)
    hit, h = coverage_mask(c, spacing)
    return ValidationReport(
        max_intersections=int(deg.max()),
        worst_ratio=float(ratio.max()),
        min_radius=float(c.radii.min()),
        covered=bool(hit.all()),
        uncovered_samples=int((~hit).sum()),
        sample_spacing=float(h),
        sigma=c.sigma,
        eta=c.eta,
    )


def remove_ball(c, ball_id):
    """Copy of the cover without one ball (ids renumbered)."""
    keep = [b for b in c.balls if b.id != ball_id]
    balls = tuple(Ball(i, b.center, b.radius) for i, b in enumerate(keep))
    return Cover(c.kind, balls, c.sigma, c.eta, c.R_max)


# --------------------------------------------------------------------------
# layers

def _fibonacci_sphere(m):
    k = np.arange(m) + 0.5
    phi = np.arccos(1 - 2 * k / m)
    theta = math.pi * (1 + 5**0.5) * k
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)


_BALL_SAMPLES = np.concatenate(
    [np.zeros((1, 3))] + [s * _fibonacci_sphere(n) for s, n in ((1.0, 400), (0.8, 200), (0.5, 80), (0.25, 20))]
)


def ball_inside_union(c, b, members):
    """Sampled test of B_b ⊂ union of the balls flagged in `members` (bool mask)."""
    if members[b]:
        return True
    nb = c.neighbors(b)
    nb = nb[members[nb]]
    if len(nb) == 0:
        return False
    pts = c.centers[b] + c.radii[b] * _BALL_SAMPLES
    d = np.linalg.norm(pts[:, None, :] - c.centers[nb][None], axis=2)
    return bool((d <= c.radii[nb][None] * (1 + TOUCH_RTOL)).any(axis=1).all())


@dataclass(frozen=True, eq=False)
class LayerSet:
    cover: Cover
    base: int
    n: int
    P_levels: tuple  # boolean masks of P^(0..n+1)
    S_n: frozenset

    @property
    def P_n(self):
        return frozenset(np.nonzero(self.P_levels[self.n])[0].tolist())

    def P(self, k):
        return frozenset(np.nonzero(self.P_levels[k])[0].tolist())

    def in_Q(self, points, k=None):
        """Membership of points in Q^(k) (default k = n)."""
        k = self.n if k is None else k
        return self.cover.contains(points, np.nonzero(self.P_levels[k])[0])

    def in_S(self, points):
        return self.cover.contains(points, sorted(self.S_n))


def expand_layers(c, base, n, strict=True):
    """Masks of P^(0), ..., P^(n); strict mode refuses truncated neighbourhoods."""
    if not 0 <= base < len(c):
        raise CoverError(f"ball {base} is not in the cover")
    a = c.adjacency
    cur = np.zeros(len(c), bool)
    cur[base] = True
    levels = [cur]
    for k in range(1, n + 1):
        if strict and not c.complete[cur].all():
            raise LayerEscapeError(
                f"layer {k} of ball {base} leaves the truncation box R_max={c.R_max}")
        nxt = cur | (a @ cur.astype(np.int8) > 0)
        levels.append(nxt)
        cur = nxt
    return levels


def layers(c, base, n):
    """P^(n) and the n-th layer S^(n) of a base ball."""
    levels = expand_layers(c, base, n + 1)
    Pn, Pn1 = levels[n], levels[n + 1]
    inside_n = {b for b in np.nonzero(Pn1)[0] if ball_inside_union(c, b, Pn)}
    if n == 0:
        inside_prev = set()
    else:
        Pp = levels[n - 1]
        inside_prev = {b for b in np.nonzero(Pn)[0] if ball_inside_union(c, b, Pp)}
    S = frozenset(int(b) for b in inside_n - inside_prev)
    return LayerSet(c, int(base), int(n), tuple(levels), S)


def ball_distance(c, i, j):
    """Distance between closed balls (0 if they intersect)."""
    d = np.linalg.norm(c.centers[i] - c.centers[j], axis=-1)
    return np.maximum(d - c.radii[i] - c.radii[j], 0.0)


def separation_violations(c, base, n, tol=1e-12):
    """Pairs (Q1 in P^(n), Q2 in S^(n+4)) closer than max{kappa(r1+r2), 1}."""
    ls = layers(c, base, n + 4)
    P = np.nonzero(ls.P_levels[n])[0]
    S = np.array(sorted(ls.S_n), int)
    if len(S) == 0:
        return np.zeros((0, 2), int), np.inf
    ii, jj = np.meshgrid(P, S, indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    dist = ball_distance(c, ii, jj)
    need = np.maximum(c.kappa * (c.radii[ii] + c.radii[jj]), 1.0)
    slack = dist - need
    bad = slack < -tol
    return np.stack([ii[bad], jj[bad]], 1), float(slack.min())


# --------------------------------------------------------------------------
# growth

@dataclass
class GrowthClass:
    kind: str
    epsilon: float | None
    upper_exponent: float
    lower_exponent: float
    fit_exponent: float
    fit_residual: float
    C_upper: float
    c_lower: float
    diagnostic: str = ""


def _envelope_exponent(d, r, which):
    edges = np.geomspace(d.min(), d.max() * (1 + 1e-9), 9)
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        m = (d >= a) & (d < b)
        if m.any():
            xs.append(np.log(d[m].mean()))
            ys.append(np.log(r[m].max() if which == "max" else r[m].min()))
    if len(xs) < 2:
        return 0.0
    return float(np.polyfit(xs, ys, 1)[0])


def classify_growth(c, tol=0.2):
    """Classify radius growth against distance from the origin."""
    x = np.linalg.norm(c.centers, axis=1)
    r = c.radii
    ratio = r / (1 + x)
    C_up, c_lo = float(ratio.max()), float(ratio.min())
    scales = np.unique(np.floor(np.log2(1 + x)))
    if len(scales) < 3:
        return GrowthClass("neither", None, 0.0, 0.0, 0.0, 0.0, C_up, c_lo,
                           "fewer than three distance scales; exact_linear vacuously false, "
                           "sublinear epsilon = 1 - 0")
    lx, lr = np.log(1 + x), np.log(r)
    coef, res, *_ = np.polyfit(lx, lr, 1, full=True)
    resid = float(np.sqrt(res[0] / len(x))) if len(res) else 0.0
    far = x >= 4 * r.min()
    up = _envelope_exponent(x[far], r[far], "max")
    lo = _envelope_exponent(x[far], r[far], "min")
    if lo >= 1 - tol:
        kind, eps = "exact_linear", None
    elif up <= 1 - tol:
        kind, eps = "sublinear", float(min(1 - max(up, 0.0), 1 - 1e-6))
    else:
        kind, eps = "neither", None
    return GrowthClass(kind, eps, up, lo, float(coef[0]), resid, C_up, c_lo)


def annulus_ball_count(c, n, growth=None):
    """Balls meeting B(2n) minus B(n) and the pigeonhole bound (4pi/3) sigma L^6 kappa^-3."""
    g = growth or classify_growth(c)
    if g.kind != "exact_linear":
        raise GrowthClassError(f"annulus count needs exact_linear growth, got {g.kind}")
    x = np.linalg.norm(c.centers, axis=1)
    r = c.radii
    meets = (x - r <= 2 * n) & (x + r >= n)
    L = float(max(2.0, np.max((x[meets] + r[meets]) / n), np.max(n / np.maximum(x[meets], 1e-300))))
    if 2 * L * n > c.R_max:
        raise CoverError(f"2Ln = {2 * L * n:.3g} exceeds R_max = {c.R_max}")
    count = int(meets.sum())
    bound = 4 * math.pi / 3 * c.sigma * L**6 * c.kappa**-3
    if count > bound:
        raise AssertionError(f"annulus count {count} exceeds bound {bound}")
    return count, bound, L


def radius_growth_constant(c, R):
    """max over balls meeting B(0,R) of max(|x_B|, r_B)/R."""
    x = np.linalg.norm(c.centers, axis=1)
    meets = x - c.radii <= R
    return float(np.max(np.maximum(x[meets], c.radii[meets])) / R)


# --------------------------------------------------------------------------
# serialization

def cover_to_json(c):
    doc = {
        "kind": c.kind, "sigma": c.sigma, "eta": c.eta, "R_max": c.R_max,
        "balls": [{"id": b.id, "center": list(b.center), "radius": b.radius} for b in c.balls],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def cover_from_json(text):
    doc = json.loads(text)
    try:
        balls = sorted(doc["balls"], key=lambda b: b["id"])
        balls = tuple(Ball(int(b["id"]), tuple(float(v) for v in b["center"]), float(b["radius"]))
                      for b in balls)
        return Cover(doc["kind"], balls, int(doc["sigma"]), float(doc["eta"]), float(doc["R_max"]))
    except (KeyError, TypeError) as e:
        raise CoverError(f"malformed cover document: {e}") from None
