"""Acceptance criteria 1-10, one PASS/FAIL line each in the terminal summary."""
import filecmp
import math

import numpy as np
import pytest

from conftest import ACCEPTANCE, bump
from leslab.construction import (APRIORI_C_PRIME, ConstantsLedger, SpacetimeTest,
                                 apriori_monitor, ball_test_function, bogovskii_operator_norm,
                                 bogovskii_truncate, local_energy_check, retarded_construct,
                                 shear_wave_field, un_vn_report)
from leslab.covers import LayerEscapeError, build_cover, separation_violations, validate_cover
from leslab.estimates import far_sum_certificate, far_sum, sample_bases
from leslab.fields import GriddedField, from_function, smooth_step, spectral_divergence
from leslab.harness.run import COMMANDS, LEI_RTOL, ExperimentConfig, run
from leslab.kernels import KernelKind, kernel_bound_constants, layer_masks, near_field_pv, spectral_riesz_oracle
from leslab.solvers import (SolverConfig, energy_ledger_check, gaussian_tail_check, heat_evolve,
                            linear_solve, w_morrey_bound)


def record(k, ok, detail):
    prev = ACCEPTANCE.get(k)
    if prev is not None:
        ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")


# 1 ------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["uloc", "dyadic", "axial"])
def test_c01_covers_validate(cover_cache, kind):
    reps = {R: validate_cover(cover_cache(kind, R)) for R in (8, 16, 32)}
    ok = all(r.valid for r in reps.values())
    if kind == "uloc":
        ok = ok and all(r.max_intersections == 26 and r.worst_ratio == 1.0 for r in reps.values())
        ok = ok and all(cover_cache(kind, R).sigma == 26 and cover_cache(kind, R).eta == 1.0
                        for R in reps)
    record(1, ok, f"{kind} valid at R=8,16,32")
    assert ok


# 2 ------------------------------------------------------------------------

def _separation_sweep(c, bases):
    bad, worst, pairs = 0, math.inf, 0
    for b in bases:
        n = 0
        while True:
            try:
                v, slack = separation_violations(c, int(b), n, tol=1e-12)
            except LayerEscapeError:
                break
            bad += len(v)
            worst = min(worst, slack)
            pairs += 1
            n += 1
    return bad, worst, pairs


def test_c02_separation(cover_cache):
    # every base and layer whose P^(n+4) fits in the box; uloc is translation invariant, so a
    # seeded sample of uloc32 bases stands for the rest
    runs = [("uloc16", cover_cache("uloc", 16), None)]
    u32 = cover_cache("uloc", 32)
    runs.append(("uloc32", u32, np.random.default_rng(0).choice(len(u32), 60, replace=False)))
    for kind in ("dyadic", "axial"):
        for R in (8, 16, 32):
            runs.append((f"{kind}{R}", cover_cache(kind, R), None))
    # neither family has complete layers at R <= 32; probe larger boxes
    runs.append(("dyadic1024", build_cover("dyadic", 1024), None))
    ax = build_cover("axial", 256)
    runs.append(("axial256", ax, np.random.default_rng(0).choice(len(ax), 200, replace=False)))
    total, counts = 0, {}
    for name, c, bases in runs:
        bad, worst, pairs = _separation_sweep(c, range(len(c)) if bases is None else bases)
        total += bad
        counts[name] = pairs
    fams = ("uloc", "dyadic", "axial")
    ok = total == 0 and all(sum(v for k, v in counts.items() if k.startswith(f)) > 0 for f in fams)
    record(2, ok, f"{sum(counts.values())} (base, n) layer sets checked, {total} violations")
    assert ok


# 3 ------------------------------------------------------------------------

def _matched_certificates(kind, radii_max, count=20):
    covers = [build_cover(kind, R) for R in radii_max]
    bases = sample_bases(covers[0], count, seed=0)
    out = []
    for c in covers:
        ids = [c.nearest_ball(covers[0].centers[b]) for b in bases]
        assert all(np.allclose(c.centers[i], covers[0].centers[b]) for i, b in zip(ids, bases))
        out.append(np.array([far_sum_certificate(c, i) for i in ids]))
    return out


def test_c03_far_sum_plateau_dyadic():
    certs = _matched_certificates("dyadic", (1024, 2048, 4096))
    changes = [float(np.abs(b / a - 1).max()) for a, b in zip(certs[:-1], certs[1:])]
    ok = all(ch < 0.05 for ch in changes)
    record(3, ok, "dyadic per-base change " + ", ".join(f"{ch:.3%}" for ch in changes))
    assert ok


def test_c03_power3_logarithmic_on_uloc():
    sums, logs = [], []
    for R in (20, 28, 40, 56):
        c = build_cover("uloc", R)
        sums.append(far_sum(c, c.nearest_ball(np.zeros(3)), 3))
        logs.append(math.log(R))
    slopes = np.diff(sums) / np.diff(logs)
    C = float(slopes.max())
    # constant slope in log R: the sum is a + b log R, and a < 0 gives sum <= C log R
    ok = slopes.max() / slopes.min() <= 1.1 and all(s <= C * lg for s, lg in zip(sums, logs))
    record(3, ok, f"uloc power-3 slope in log R {slopes.min():.3g}..{slopes.max():.3g}")
    assert ok


@pytest.mark.xfail(strict=True, reason="uloc tail decays like 1/R_max; 5% needs R_max far above desk scale")
def test_c03_far_sum_plateau_uloc():
    certs = _matched_certificates("uloc", (20, 40), count=20)
    assert float(np.abs(certs[1] / certs[0] - 1).max()) < 0.05


# 4 ------------------------------------------------------------------------

def test_c04_kernels(cover_cache):
    R, h = 18, 0.25
    c = cover_cache("uloc", R)
    base = c.nearest_ball(np.zeros(3))
    f = from_function(R, h, lambda X, Y, Z: bump(X, Y, Z, 5.0) * bump(X, Y, Z, 4.5, (0.5, 0, 0)))
    masks = layer_masks(c, base, R, h)
    tgt = masks[0]
    errs = {}
    for i in range(3):
        for j in range(i, 3):
            kind = KernelKind.K(i, j)
            ref = spectral_riesz_oracle(f, kind).values[tgt]
            got = near_field_pv(f, kind, c, base, masks).values[tgt]
            errs[(i, j)] = float(np.linalg.norm(got - ref) / np.linalg.norm(ref))
    big = cover_cache("uloc", 32)
    kb = kernel_bound_constants(big, big.nearest_ball(np.zeros(3)), samples=20000, seed=0)
    ok = max(errs.values()) <= 1e-3 and all(math.isfinite(kb[k]) for k in ("K", "L"))
    record(4, ok, f"near-field max rel L2 {max(errs.values()):.2e}; far constants K={kb['K']:.3g} "
                  f"L={kb['L']:.3g}")
    assert ok


# 5 ------------------------------------------------------------------------

def test_c05_heat_and_decay():
    g = lambda X, Y, Z, s: np.exp(-(X**2 + Y**2 + Z**2) / (2 * s)) / (2 * math.pi * s) ** 1.5
    w0 = from_function(8, 0.25, lambda X, Y, Z: g(X, Y, Z, 1.0))
    exact = from_function(8, 0.25, lambda X, Y, Z: g(X, Y, Z, 2.0))
    heat_err = float(np.abs(heat_evolve(w0, 0.5).values - exact.values).max())
    tail = gaussian_tail_check(from_function(8, 0.25, lambda X, Y, Z: bump(X, Y, Z, 3) * (1 + X)),
                               0.3, 3, samples=4000)
    u0 = from_function(8, 0.5, lambda X, Y, Z: [bump(X, Y, Z, 4) * Y, bump(X, Y, Z, 4, (1, 0, 0)),
                                                bump(X, Y, Z, 3, (0, 1, 0)) * X])
    v = from_function(8, 0.5, lambda X, Y, Z: [bump(X, Y, Z, 5) * np.sin(Y), 0.5 * bump(X, Y, Z, 5),
                                               0 * X])
    res = linear_solve(u0, v, SolverConfig(h=0.5, dt=0.01, T=0.2))
    ref = heat_evolve(spectral_divergence(u0), res.times[-1]).values
    div_err = float(np.linalg.norm(res.w[-1].values - ref) / np.linalg.norm(ref))
    ok = w0.N == 64 and heat_err <= 1e-6 and tail["violations"] == 0 and div_err <= 1e-5
    record(5, ok, f"heat Linf {heat_err:.1e}, tail violations {tail['violations']}/{tail['points']}, "
                  f"div transport {div_err:.1e}")
    assert ok


# 6 ------------------------------------------------------------------------

def test_c06_contraction_and_energy():
    R = 6
    g = lambda X, Y, Z: 2.5 * np.exp(-(X * X + Y * Y + Z * Z) / 6.25)
    Cs, ratios, ok = [], [], True
    for h in (0.5, 0.25):
        # expansive drift so the energy actually grows; u0 is the curl of (0, 0, g)
        v = from_function(R, h, lambda X, Y, Z: np.stack([8 * bump(X, Y, Z, 4) * q for q in (X, Y, Z)]))
        u0 = from_function(R, h, lambda X, Y, Z: [-2 * Y / 6.25 * g(X, Y, Z), 2 * X / 6.25 * g(X, Y, Z),
                                                  0 * X])
        res = linear_solve(u0, v, SolverConfig(h=h, dt=0.01, T=0.02))
        led = energy_ledger_check(res, res.L)
        ok = ok and res.contraction_number <= 0.5 + 1e-12 and led["C"] <= 2 * res.L
        Cs.append(led["C"])
        ratios.append(max(res.picard_ratios()))
    ok = ok and max(ratios) <= 0.55 and Cs[0] > 0 and abs(Cs[1] / Cs[0] - 1) < 0.1
    record(6, ok, f"max Picard ratio {max(ratios):.2e}, fitted C {Cs[0]:.4f} -> {Cs[1]:.4f}")
    assert ok


# 7 ------------------------------------------------------------------------

def test_c07_scaling_construction():
    div_sums, w_sums = [], []
    for n in (16, 32):
        R, h = n + 2, 0.5
        c = build_cover("uloc", R)
        u0 = from_function(R, h, lambda X, Y, Z: [1 + 0 * X, 0 * X, 0 * X])
        st = retarded_construct(u0, c, n, 2, 0.5)
        _, raw = un_vn_report(st, c)
        div_sums.append(raw["div_v_sum"])
        w_sums.append(w_morrey_bound(st.solve, c, n, st.u0_norm)["sum"])
    r_div, r_w = div_sums[0] / div_sums[1], w_sums[0] / w_sums[1]
    ok = 3.0 <= r_div <= 5.0 and 3.0 <= r_w <= 5.0
    record(7, ok, f"n-doubling ratios div v_n {r_div:.3f}, w-bound {r_w:.3f} (target 4)")
    assert ok


def test_c07_scaling_truncation():
    norms, morrey = [], []
    for n in (6, 12):
        R, h = 2 * n + 2, 0.5
        norms.append(bogovskii_operator_norm(n, R, h, samples=2)["worst"])
        u0 = from_function(R, h, lambda X, Y, Z: [np.cos(Z), np.sin(Z), 0 * X])
        morrey.append(bogovskii_truncate(u0, n, build_cover("uloc", R)).morrey_ratio)
    r = norms[1] / norms[0]
    ok = 1.5 <= r <= 2.5 and abs(morrey[1] / morrey[0] - 1) <= 0.25
    record(7, ok, f"right-inverse norm ratio {r:.3f} (target 2), Morrey ratios {morrey[0]:.4f}, "
                  f"{morrey[1]:.4f}")
    assert ok


# 8 ------------------------------------------------------------------------

def test_c08_suitability():
    R, T, t0 = 6, 0.2, 0.25
    res = []
    for h, dt in ((0.5, 0.04), (0.25, 0.02), (0.125, 0.01)):
        nt = int(round(T / dt))
        u = [from_function(R, h, lambda X, Y, Z, t=k * dt:
                           [np.exp(-Y**2 / (4 * (t + t0))) / np.sqrt(t + t0), 0 * X, 0 * X], time=k * dt)
             for k in range(nt + 1)]
        p = [GriddedField(R, h, np.zeros(u[0].values.shape[1:]), k * dt) for k in range(nt + 1)]
        space = from_function(R, h, lambda X, Y, Z:
                              1 - smooth_step((np.sqrt((X - 0.5)**2 + Y**2 + Z**2) - 1.5) / 1.5))
        phi = SpacetimeTest(space, lambda t: 1 + t * t, lambda t: 2 * t)
        res.append(abs(local_energy_check(u, p, phi, T)[0]))
    orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    n, R, h = 10, 12, 0.5
    c = build_cover("uloc", R)
    st = retarded_construct(shear_wave_field(R, h, 0), c, n, 2, 0.5)
    worst = -math.inf
    for x in ((0, 0, 0), (4, 0, 0), (3, 3, 0), (6, 2, 1)):
        phi = ball_test_function(c, c.nearest_ball(np.array(x, float)), R, h)
        for t in (st.T / 2, st.T):
            r, lhs = local_energy_check(st.u_n, st.p_n, phi, t, v=st.v_fun, w=st.w_n)
            worst = max(worst, r / abs(lhs))
    ok = all(o >= 1.8 for o in orders) and worst <= LEI_RTOL
    record(8, ok, f"shear orders {orders[0]:.2f}, {orders[1]:.2f}; construct residual/LHS max {worst:.1e}")
    assert ok


# 9 ------------------------------------------------------------------------

def test_c09_apriori_uniform():
    measured = []
    for n in (10, 20):
        R, h = n + 2, 0.5
        c = build_cover("uloc", R)
        for seed in (0, 1, 2):
            st = retarded_construct(shear_wave_field(R, h, seed), c, n, 2, 0.5,
                                    ledger=ConstantsLedger())
            mon = apriori_monitor(st.u_n, c, st.u0_norm, C_prime=APRIORI_C_PRIME)
            measured.append((n, seed, mon["C_prime_measured"], mon["holds"]))
    ok = all(m[3] for m in measured)
    worst = max(m[2] for m in measured)
    record(9, ok, f"C' frozen at {APRIORI_C_PRIME}, measured max {worst:.3f} over n=10,20 x 3 seeds")
    assert ok


# 10 -----------------------------------------------------------------------

def test_c10_determinism(tmp_path):
    same = []
    for cmd in COMMANDS:
        dirs = []
        for rep in ("a", "b"):
            status, d = run(ExperimentConfig(cmd, seed=7, out=str(tmp_path / cmd / rep)))
            dirs.append(d)
        names = sorted(p.name for p in dirs[0].iterdir() if p.name != "manifest.json")
        same.append(names == sorted(p.name for p in dirs[1].iterdir() if p.name != "manifest.json")
                    and all(filecmp.cmp(dirs[0] / f, dirs[1] / f, shallow=False) for f in names))
    ok = all(same)
    record(10, ok, f"{sum(same)}/{len(same)} commands byte-identical on re-run")
    assert ok
