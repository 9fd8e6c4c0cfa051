"""Cube meshes around a base ball and the far-field summation bounds built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .covers import CoverError, LayerEscapeError, ball_inside_union, expand_layers

TARGET_SIDE = 0.2
VOLUME_WINDOW = (1 / 200, 1 / 100)
FAR_DEPTH = 7


@dataclass(frozen=True)
class CubeMesh:
    """Inscribed cube A0 of a ball plus concentric single-cube layers A1, A2, ...

    Small cubes are addressed by integer lattice indices (i, j, k); cube
    (i, j, k) is ``corner + side * ([i, i+1] x [j, j+1] x [k, k+1])`` and
    A0 itself is the index block [0, m)^3.
    """
    base: int
    center: tuple
    radius: float
    A0_side: float
    cube_side: float
    m: int

    @property
    def corner(self):
        return np.asarray(self.center) - self.A0_side / 2

    @property
    def cube_volume(self):
        return self.cube_side**3

    def T_side(self, n):
        return self.A0_side + 2 * n * self.cube_side

    def layer_count(self, n):
        if n == 0:
            return 1
        return (self.m + 2 * n)**3 - (self.m + 2 * n - 2)**3

    def layer(self, n):
        """Integer indices of the cubes of A_n, n >= 1."""
        if n < 1:
            raise ValueError("A_0 is the inscribed cube itself; small-cube layers start at n=1")
        lo, hi = -n, self.m - 1 + n
        ax = np.arange(lo, hi + 1)
        I, J = np.meshgrid(ax, ax, indexing="ij")
        I, J = I.ravel(), J.ravel()
        edge = (I == lo) | (I == hi) | (J == lo) | (J == hi)
        full = np.stack([np.repeat(I[edge], len(ax)), np.repeat(J[edge], len(ax)),
                         np.tile(ax, edge.sum())], 1)
        caps = [np.stack([I[~edge], J[~edge], np.full((~edge).sum(), k)], 1) for k in (lo, hi)]
        return np.concatenate([full] + caps)

    def cube_centers(self, idx):
        return self.corner + (np.asarray(idx) + 0.5) * self.cube_side

    def layer_of(self, idx):
        """Layer number of each index (0 for cubes inside A0)."""
        idx = np.atleast_2d(idx)
        over = np.maximum(-idx, idx - (self.m - 1))
        return np.maximum(over.max(axis=1), 0)

    def cubes_meeting_ball(self, z, rho):
        """Indices of mesh cubes (outside A0) meeting the closed ball B(z, rho)."""
        z = np.asarray(z, float)
        d = self.cube_side
        lo = np.floor((z - rho - self.corner) / d).astype(int)
        hi = np.floor((z + rho - self.corner) / d).astype(int)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        idx = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
        cmin = self.corner + idx * d
        gap = np.maximum(np.maximum(cmin - z, z - (cmin + d)), 0.0)
        meets = (gap**2).sum(axis=1) <= rho**2
        idx = idx[meets]
        return idx[self.layer_of(idx) >= 1]


def cube_mesh(c, base, target_side=TARGET_SIDE):
    """Mesh of equal cubes around the inscribed cube of ball `base`.

    The side is the largest value <= target_side that divides the inscribed
    cube edge, so every T^(n) is exactly a cube.
    """
    if not 0 <= base < len(c):
        raise CoverError(f"ball {base} is not in the cover")
    r = float(c.radii[base])
    a0 = 2 * r / math.sqrt(3)
    m = int(math.ceil(a0 / target_side - 1e-12))
    side = a0 / m
    vol = side**3
    if not VOLUME_WINDOW[0] < vol <= VOLUME_WINDOW[1] + 1e-15:
        raise ValueError(f"cube volume {vol:.4g} outside {VOLUME_WINDOW}")
    return CubeMesh(int(base), tuple(c.centers[base]), r, a0, side, m)


def shell_distance_margins(mesh, n_max):
    """min over R in A_n of |x_Q - x_R| minus |Q|^{1/3}/2 + (n/2 - 1/4)|R|^{1/3}."""
    vol_Q = 4 * math.pi / 3 * mesh.radius**3
    d = mesh.cube_side
    out = np.empty(n_max)
    for n in range(1, n_max + 1):
        x = mesh.cube_centers(mesh.layer(n))
        dist = np.linalg.norm(x - np.asarray(mesh.center), axis=1).min()
        out[n - 1] = dist - (vol_Q ** (1 / 3) / 2 + (n / 2 - 0.25) * d)
    return out


@dataclass(frozen=True)
class EFamily:
    target: int
    y: tuple
    z: tuple
    r_target: float
    cubes: np.ndarray  # integer mesh indices
    max_offset: float  # max |b - z| over family cube points, compare with r'/2

    @property
    def size(self):
        return len(self.cubes)


def _outside_Q3(c, base, target, levels=None):
    levels = levels or expand_layers(c, base, 3)
    return not ball_inside_union(c, target, levels[3])


def e_family(mesh, c, target, levels=None):
    """Cubes of the mesh meeting B(z, r'/4) for a ball Q' not inside Q^(3)."""
    if not _outside_Q3(c, mesh.base, target, levels):
        raise CoverError(f"ball {target} lies inside Q^(3) of ball {mesh.base}")
    xq = np.asarray(mesh.center)
    xt = c.centers[target]
    rt = float(c.radii[target])
    L = np.linalg.norm(xt - xq)
    if L <= rt:
        raise CoverError(f"base centre lies inside ball {target}")
    u = (xt - xq) / L
    y = xt - rt * u
    z = xt - rt / 2 * u
    idx = mesh.cubes_meeting_ball(z, rt / 4)
    if len(idx):
        corners = mesh.corner + idx * mesh.cube_side
        far = np.maximum(np.abs(corners - z), np.abs(corners + mesh.cube_side - z))
        reach = float(np.sqrt((far**2).sum(axis=1)).max())
    else:
        reach = 0.0
    if reach > rt / 2 * (1 + 1e-12):
        raise AssertionError(f"family of ball {target} reaches {reach:.4g} > r'/2 = {rt / 2:.4g}")
    return EFamily(int(target), tuple(y), tuple(z), rt, idx, reach)


def family_multiplicity(mesh, c, targets, levels=None):
    """Largest number of families sharing one mesh cube, over the given targets."""
    levels = levels or expand_layers(c, mesh.base, 3)
    keys = []
    for t in targets:
        fam = e_family(mesh, c, int(t), levels)
        keys.append(fam.cubes)
    if not keys:
        return 0
    allk = np.concatenate(keys)
    _, counts = np.unique(allk, axis=0, return_counts=True)
    return int(counts.max())


def far_mask(c, base, depth=FAR_DEPTH):
    """Balls outside P^(depth) of `base`; needs P^(depth-1) untruncated."""
    levels = expand_layers(c, base, depth)
    return ~levels[depth]


def far_sum(c, base, power, q=2.0, depth=FAR_DEPTH):
    """Sum over balls outside P^(depth) of |Q'|^{q/3} / |x_Q - x_Q'|^power."""
    if power not in (3, 4):
        raise ValueError("power must be 3 or 4")
    far = far_mask(c, base, depth)
    d = np.linalg.norm(c.centers[far] - c.centers[base], axis=1)
    terms = c.volumes[far] ** (q / 3) / d**power
    return float(np.sort(terms).sum())


def far_sum_certificate(c, base, q=2.0):
    """|Q|^{1/3} times the power-4 far sum."""
    return float(c.volumes[base] ** (1 / 3) * far_sum(c, base, 4, q))


def sample_bases(c, count, seed=0, depth=FAR_DEPTH):
    """Up to `count` ball ids whose first depth-1 layers stay inside the box."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(c))
    picked = []
    for b in order:
        try:
            expand_layers(c, int(b), depth)
        except LayerEscapeError:
            continue
        picked.append(int(b))
        if len(picked) == count:
            break
    return sorted(picked)


def tail_sum_fact(a, N):
    """Partial sum of (a + n)^-2 for n = 1..N, checked against 2/a."""
    if a < 1:
        raise ValueError("a must be >= 1")
    if N <= 0:
        return 0.0
    n = np.arange(N, 0, -1, dtype=float)  # smallest terms first
    val = float(np.sum((a + n) ** -2.0))
    if val > 2.0 / a:
        raise AssertionError(f"tail sum {val} exceeds 2/a = {2 / a}")
    return val


def far_sum_rows(c, bases, q=2.0):
    """One CSV-ready row per base ball."""
    rows = []
    for b in bases:
        s4 = far_sum(c, b, 4, q)
        rows.append({
            "base": int(b),
            "R_max": c.R_max,
            "radius": float(c.radii[b]),
            "far_sum_4": s4,
            "certificate": float(c.volumes[b] ** (1 / 3) * s4),
            "far_sum_3": far_sum(c, b, 3, q),
        })
    return rows
