"""Experiment configuration, orchestration and report emission."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..covers import (MIN_RMAX, CoverError, LayerEscapeError, build_cover, classify_growth,
                      separation_violations, validate_cover)
from ..fields import GriddedField, from_function, spectral_divergence
from .io import read_cover, write_cover, write_field

COMMANDS = ("cover-validate", "estimate-verify", "kernels-verify", "solve-linear", "construct",
            "suitability-check")
COVER_KINDS = ("uloc", "dyadic", "axial")
VELOCITIES = ("zero", "bump")

# per-command defaults for parameters left unset
DEFAULTS = {
    "cover-validate": {"rmax": 10.0},
    "estimate-verify": {"rmax": 24.0},
    "kernels-verify": {"rmax": 18.0, "h": 0.25},
    "solve-linear": {"rmax": 12.0, "h": 0.5, "dt": 0.01, "n": 10},
    "construct": {"rmax": 12.0, "h": 0.5, "dt": 0.01, "n": 10, "bigk": 2, "gamma": 0.5},
    "suitability-check": {"rmax": 6.0, "h": 0.5, "dt": 0.04},
}
BASE_SAMPLES = 20
LEI_RTOL = 1e-4


class ConfigError(ValueError):
    def __init__(self, field_name, msg):
        super().__init__(f"invalid config field '{field_name}': {msg}")
        self.field = field_name


class RunError(RuntimeError):
    pass


@dataclass
class ExperimentConfig:
    command: str
    cover: str = "uloc"
    rmax: float | None = None
    h: float | None = None
    dt: float | None = None
    n: int | None = None
    bigk: int | None = None
    gamma: float | None = None
    seed: int = 0
    out: str = "runs/latest"
    balls: list | None = None
    velocity: str = "zero"

    def resolved(self):
        """Copy with command defaults filled in, validated."""
        if self.command not in COMMANDS:
            raise ConfigError("command", f"{self.command!r} not in {COMMANDS}")
        d = asdict(self)
        for k, v in DEFAULTS[self.command].items():
            if d[k] is None:
                d[k] = v
        cfg = ExperimentConfig(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.cover not in COVER_KINDS and not Path(self.cover).is_file():
            raise ConfigError("cover", f"{self.cover!r} is neither a cover kind nor a file")
        if self.rmax is not None and not MIN_RMAX <= self.rmax <= 8192:
            raise ConfigError("rmax", f"{self.rmax} outside [{MIN_RMAX}, 8192]")
        if self.h is not None:
            if not 1 / 16 <= self.h <= 0.5:
                raise ConfigError("h", f"{self.h} outside [1/16, 1/2]")
            if self.rmax is not None and abs(2 * self.rmax / self.h - round(2 * self.rmax / self.h)) > 1e-9:
                raise ConfigError("h", f"{self.h} does not divide the box width {2 * self.rmax}")
        if self.dt is not None and not 0 < self.dt <= 0.1:
            raise ConfigError("dt", f"{self.dt} outside (0, 0.1]")
        if self.n is not None and not (7 <= self.n and (self.rmax is None or self.n <= self.rmax - 1)):
            raise ConfigError("n", f"{self.n} must satisfy 7 <= n <= rmax - 1")
        if self.bigk is not None and not 1 <= self.bigk <= 8:
            raise ConfigError("bigk", f"{self.bigk} outside [1, 8]")
        if self.gamma is not None and not 0 < self.gamma <= 1:
            raise ConfigError("gamma", f"{self.gamma} outside (0, 1]")
        if not 0 <= self.seed < 2**32:
            raise ConfigError("seed", f"{self.seed} outside [0, 2^32)")
        if self.balls is not None and len(self.balls) == 0:
            raise ConfigError("balls", "empty ball list")
        if self.velocity not in VELOCITIES:
            raise ConfigError("velocity", f"{self.velocity!r} not in {VELOCITIES}")


def _row(rid, anchor, measured, bound=None, ok=None):
    m = float(measured)
    if ok is None:
        ok = math.isfinite(m) if bound is None else m <= bound
    return {"id": rid, "anchor": anchor, "measured": m,
            "bound": "" if bound is None else float(bound), "pass": bool(ok)}


def _load_cover(cfg):
    if cfg.cover in COVER_KINDS:
        return build_cover(cfg.cover, cfg.rmax)
    return read_cover(cfg.cover)


# --------------------------------------------------------------------------
# commands

def _cover_validate(cfg, run_dir):
    c = _load_cover(cfg)
    rep = validate_cover(c)
    rows = [
        _row("sigma", "overlap-bound", rep.max_intersections, c.sigma),
        _row("eta", "size-comparability", rep.worst_ratio, c.eta),
        _row("radius", "unit-radius-floor", rep.min_radius, ok=rep.min_radius >= 1 - 1e-12),
        _row("coverage", "covers-box", rep.uncovered_samples, 0),
    ]
    if c.kind == "uloc":
        rows.append(_row("sigma_exact", "uloc-overlap-26", rep.max_intersections,
                         ok=rep.max_intersections == 26))
        rows.append(_row("eta_exact", "uloc-eta-1", rep.worst_ratio, ok=rep.worst_ratio == 1.0))
    base = c.nearest_ball(np.zeros(3))
    for n in range(0, 4):
        try:
            bad, slack = separation_violations(c, base, n)
        except LayerEscapeError:
            break
        rows.append(_row(f"separation_n{n}", "layer-separation", len(bad), 0))
    g = classify_growth(c)
    rows.append(_row("growth_upper_exponent", "growth-class", g.upper_exponent))
    write_cover(c, run_dir / "cover.json")
    return rows, {}


def _estimate_verify(cfg, run_dir):
    from ..estimates import (cube_mesh, e_family, family_multiplicity, far_sum_rows, sample_bases,
                             shell_distance_margins, tail_sum_fact)
    from ..covers import ball_inside_union, expand_layers
    c = _load_cover(cfg)
    if cfg.balls is not None:
        bad = [b for b in cfg.balls if not 0 <= int(b) < len(c)]
        if bad:
            raise ConfigError("balls", f"ids {bad} not in the cover")
        bases = sorted(int(b) for b in cfg.balls)
    else:
        bases = sample_bases(c, BASE_SAMPLES, cfg.seed)
    if not bases:
        raise ConfigError("rmax", "no base ball has its far layers inside the box")
    rows = []
    table = far_sum_rows(c, bases)
    for r in table:
        rows.append(_row(f"certificate_b{r['base']}", "far-sum-power4", r["certificate"]))
        rows.append(_row(f"far3_b{r['base']}", "far-sum-power3", r["far_sum_3"]))
    mesh = cube_mesh(c, bases[0])
    margins = shell_distance_margins(mesh, 8)
    for n, m in enumerate(margins, 1):
        rows.append(_row(f"shell_margin_n{n}", "shell-distance", -m, 0.0))
    levels = expand_layers(c, bases[0], 3)
    d = np.linalg.norm(c.centers - c.centers[bases[0]], axis=1)
    targets = [int(t) for t in np.argsort(d, kind="stable")
               if not ball_inside_union(c, int(t), levels[3]) and d[t] > c.radii[t]][:100]
    if targets:
        rows.append(_row("family_multiplicity", "family-overlap",
                         family_multiplicity(mesh, c, targets, levels), c.sigma))
        fam = e_family(mesh, c, targets[0], levels)
        rows.append(_row("family_reach", "family-radius", fam.max_offset, fam.r_target / 2))
    for a in (1.0, 4.0, 32.0):
        rows.append(_row(f"tail_sum_a{a:g}", "tail-sum", tail_sum_fact(a, 10_000), 2 / a))
    return rows, {"far_sums": table}


def _kernels_verify(cfg, run_dir):
    from ..kernels import (KernelKind, cz_ratio, kernel_bound_constants, layer_masks, near_field_pv,
                           spectral_riesz_oracle)
    c = build_cover("uloc", cfg.rmax)
    base = c.nearest_ball(np.zeros(3))
    R, h = cfg.rmax, cfg.h

    def bump(X, Y, Z, r):
        s = (X**2 + Y**2 + Z**2) / r**2
        return np.where(s < 1, np.exp(-1 / np.maximum(1 - s, 1e-12)), 0.0)
    f = from_function(R, h, lambda X, Y, Z: bump(X, Y, Z, 5.0) * bump(X - 0.5, Y, Z, 4.5))
    masks = layer_masks(c, base, R, h)
    rows = []
    for kind in (KernelKind.K(0, 0), KernelKind.K(0, 1), KernelKind.K(2, 2)):
        near = near_field_pv(f, kind, c, base, masks)
        ref = spectral_riesz_oracle(f, kind)
        tgt = masks[0]
        err = np.linalg.norm((near.values - ref.values)[tgt]) / np.linalg.norm(ref.values[tgt])
        rows.append(_row(f"near_{kind.tag}{kind.i}{kind.j}", "near-field-oracle", err, 1e-3))
    kb = kernel_bound_constants(c, base, samples=4000, seed=cfg.seed)
    rows.append(_row("far_kernel_K", "kernel-difference-power4", kb["K"]))
    rows.append(_row("far_kernel_L", "kernel-difference-power3", kb["L"]))
    rows.append(_row("cz_ratio", "cz-bound", cz_ratio(f, KernelKind.K(0, 0), c, base, masks)))
    return rows, {}


def _seed_data(cfg):
    from ..construction import CutoffZ, shear_wave_field
    u = shear_wave_field(cfg.rmax, cfg.h, cfg.seed)
    return u, u.with_values(u.values * CutoffZ(cfg.n).on_grid(cfg.rmax, cfg.h).values)


def _solve_linear(cfg, run_dir):
    from ..solvers import (SolverConfig, energy_ledger_check, heat_evolve, linear_solve,
                           periodic_image_bound)
    from ..construction import CutoffZ
    u0, ut0 = _seed_data(cfg)
    T = 0.05
    v = None
    if cfg.velocity == "bump":
        Z = CutoffZ(cfg.n).on_grid(cfg.rmax, cfg.h).values
        v = u0.with_values(0.5 * u0.values * Z)
    res = linear_solve(ut0, v, SolverConfig(h=cfg.h, dt=cfg.dt, T=T))
    rows = []
    if v is None:
        base = np.stack([heat_evolve(GriddedField(cfg.rmax, cfg.h, ut0.values[i]), T).values
                         for i in range(3)])
        diff = np.abs(res.u_tilde[-1].values - base).max() / np.abs(base).max()
        rows.append(_row("heat_baseline", "zero-velocity-heat", diff, 1e-6))
        rows.append(_row("pressure_zero", "zero-velocity-pressure",
                         np.abs(res.p_tilde[-1].values).max(), 1e-12))
    w_ref = heat_evolve(spectral_divergence(ut0), res.times[-1]).values
    werr = np.linalg.norm(res.w[-1].values - w_ref) / max(np.linalg.norm(w_ref), 1e-300)
    rows.append(_row("div_transport", "divergence-heat", werr, 1e-5))
    ratios = res.picard_ratios()
    rows.append(_row("picard_ratio", "picard-contraction", max(ratios) if ratios else 0.0, 0.55))
    led = energy_ledger_check(res, res.L)
    rows.append(_row("energy_C", "energy-growth", led["C"], 2 * res.L))
    rows.append(_row("image_bound", "periodic-images",
                     periodic_image_bound(CutoffZ(cfg.n).support_radius, cfg.rmax, T)))
    series = {"energy": [{"step": i, "energy": float(e), "dissipation": float(d)}
                         for i, (e, d) in enumerate(zip(res.energy, res.dissipation))]}
    write_field(res.u_tilde[-1], run_dir / "u_final.field")
    return rows, series


def _construct(cfg, run_dir):
    from ..construction import (apriori_monitor, ball_test_function, local_energy_check,
                                retarded_construct, un_vn_report, shear_wave_field)
    c = build_cover("uloc", cfg.rmax)
    u0 = shear_wave_field(cfg.rmax, cfg.h, cfg.seed)
    st = retarded_construct(u0, c, cfg.n, cfg.bigk, cfg.gamma, dt=cfg.dt)
    rows = []
    X, Y, Z = u0.mesh()
    outside = np.sqrt(X**2 + Y**2 + Z**2) >= cfg.n
    leak = max((float(np.abs(f.values[..., outside]).max()) for f in st.v_n), default=0.0)
    rows.append(_row("v1_support", "retarded-support", leak, 0.0))
    un_rows, _ = un_vn_report(st, c)
    tags = {"un": "un-bound", "vn": "vn-bound", "div_vn": "div-vn-bound"}
    for r in un_rows:
        rows.append(_row(r["id"], tags[r["id"]], r["measured"], r["bound"]))
    mon = apriori_monitor(st.u_n, c, st.u0_norm)
    rows.append(_row("apriori", "apriori-barrier", mon["C_prime_measured"], mon["C_prime"]))
    for x in ((0, 0, 0), (cfg.n / 2, 0, 0)):
        b = c.nearest_ball(np.array(x, float))
        phi = ball_test_function(c, b, cfg.rmax, cfg.h)
        for t in (st.T / 2, st.T):
            r, lhs = local_energy_check(st.u_n, st.p_n, phi, t, v=st.v_fun, w=st.w_n)
            rows.append(_row(f"lei_b{b}_t{t:.4g}", "local-energy", r, LEI_RTOL * abs(lhs)))
    series = {"monitors": st.monitors,
              "apriori": [{"time": t, "alpha": a, "beta": b} for t, a, b in mon["trace"]]}
    return rows, series


def _suitability(cfg, run_dir):
    from ..construction import SpacetimeTest, local_energy_check
    from ..fields import smooth_step
    R, T, t0 = cfg.rmax, 0.2, 0.25
    res = []
    for lvl in range(3):
        h, dt = cfg.h / 2**lvl, cfg.dt / 2**lvl
        nt = int(round(T / dt))
        u = [from_function(R, h, lambda X, Y, Z, t=k * dt:
                           [np.exp(-Y**2 / (4 * (t + t0))) / np.sqrt(t + t0), 0 * X, 0 * X], time=k * dt)
             for k in range(nt + 1)]
        p = [GriddedField(R, h, np.zeros(u[0].values.shape[1:]), k * dt) for k in range(nt + 1)]
        space = from_function(R, h, lambda X, Y, Z:
                              1 - smooth_step((np.sqrt((X - 0.5)**2 + Y**2 + Z**2) - 1.5) / 1.5))
        r, _ = local_energy_check(u, p, SpacetimeTest(space, lambda t: 1 + t * t, lambda t: 2 * t), T)
        res.append(abs(r))
    rows = [_row(f"shear_residual_l{i}", "shear-local-energy", r,
                 ok=True) for i, r in enumerate(res)]
    orders = [math.log2(res[i] / res[i + 1]) for i in range(2)]
    for i, o in enumerate(orders):
        rows.append(_row(f"shear_order_{i}", "shear-convergence-order", -o, -1.8))
    return rows, {}


RUNNERS = {
    "cover-validate": _cover_validate,
    "estimate-verify": _estimate_verify,
    "kernels-verify": _kernels_verify,
    "solve-linear": _solve_linear,
    "construct": _construct,
    "suitability-check": _suitability,
}


# --------------------------------------------------------------------------
# run directory

def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def run(config):
    """Execute one experiment; returns (exit status, run directory)."""
    cfg = config.resolved()
    run_dir = Path(cfg.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"config": asdict(cfg), "version": __version__,
                "threads": os.environ.get("LAB_THREADS", "1")}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    try:
        rows, series = RUNNERS[cfg.command](cfg, run_dir)
    except ConfigError:
        raise
    except (CoverError, ValueError, RuntimeError, AssertionError) as e:
        raise RunError(f"{cfg.command} failed: {type(e).__name__}: {e}") from e
    doc = {"rows": rows, "series": series}
    (run_dir / "results.json").write_text(json.dumps(doc, sort_keys=True, default=_json_default) + "\n")
    summary = emit_report(run_dir)
    return (0 if summary["failed"] == 0 else 1), run_dir


REPORT_FIELDS = ("id", "anchor", "measured", "bound", "pass")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(run_dir):
    """report.csv (one row per assertion), per-series CSVs and summary.json."""
    run_dir = Path(run_dir)
    src = run_dir / "results.json"
    if not src.is_file():
        raise FileNotFoundError(f"{src} missing: run the experiment first")
    doc = json.loads(src.read_text())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_FIELDS)
    for r in doc["rows"]:
        w.writerow([_fmt(r[k]) for k in REPORT_FIELDS])
    (run_dir / "report.csv").write_text(buf.getvalue())
    for name, table in sorted(doc["series"].items()):
        if not table:
            continue
        keys = sorted(table[0])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for rec in table:
            w.writerow([_fmt(rec.get(k, "")) for k in keys])
        (run_dir / f"series_{name}.csv").write_text(buf.getvalue())
    failed = [r["id"] for r in doc["rows"] if not r["pass"]]
    summary = {"assertions": len(doc["rows"]), "failed": len(failed), "failed_ids": failed,
               "passed": len(doc["rows"]) - len(failed)}
    (run_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return summary
