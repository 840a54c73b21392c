"""Experiment runner.

    seqlimits run <config> [--threads K] [--out DIR]
    seqlimits describe <config>
    seqlimits compare <report_a> <report_b>
    seqlimits query-cylinder <config> --time j --word w

<config> is a YAML path or the name of a bundled config.  Exit codes:
0 success, 1 acceptance failure, 2 configuration error, 3 numeric failure.
Reports go to --out, else $SEQLIMITS_OUT, else ./runs, in a timestamped
subdirectory holding CSV artifacts and summary.json.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
import zlib
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build_sequence, build_system, config_hash, load_config, parse_complex

log = logging.getLogger("seqlimits")

EXIT_OK, EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "SEQLIMITS_OUT"
SCHEMA_VERSION = 1

# stages whose results later stages read
DEPENDS = {"limits": ("martingale",), "asip": ("martingale",)}


class SkipStage(Exception):
    """Stage not applicable to this system; carries the marker text."""


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    _atomic_write(path, buf.getvalue())


class Report:
    def __init__(self, out: Path):
        self.out = out
        self.verdicts = []
        self.timings = []

    def csv(self, name, header, rows) -> str:
        write_csv(self.out / name, header, rows)
        return name

    def verdict(self, stage, name, passed, value, threshold, artifact, error_bar=None, note=None):
        self.verdicts.append({
            "stage": stage, "name": name, "pass": None if passed is None else bool(passed),
            "value": value if isinstance(value, (str, type(None))) else float(value),
            "threshold": threshold, "artifact": artifact,
            "error_bar": None if error_bar is None else float(error_bar), "note": note,
        })


def _stream(seed: int, stage: str) -> tuple:
    """Named substream: (root seed, crc32 of the stage name)."""
    return int(seed), zlib.crc32(stage.encode())


def _rng(seed, stage, shard=0):
    return np.random.default_rng(np.random.SeedSequence([*_stream(seed, stage), shard]))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def stage_rpf(cfg, st, ctx, rep: Report):
    from . import cumulant, rpf
    from .transfer import random_bv_samples
    if cfg.system.kind == "sft":
        g = ctx["system"].gibbs
        op = cumulant.projection_check(g, 0, 30)
        ex = cumulant.error_decay_check(g, 0, st.n_max, st.samples, _rng(cfg.seed, "rpf", 1))
        sr = cumulant.perturbation_check(g, 0, 200, 20, _rng(cfg.seed, "rpf", 2))
        art = rep.csv("operator_algebra.csv", ["quantity", "value"],
                      [*op.items(), ("error_decay_rate", ex["fit"].rate), ("error_decay_r2", ex["fit"].r2),
                       *[(k, v) for k, v in sr.items() if k != "pass"]])
        res = max(op.values())
        rep.verdict("rpf", "projection_identities", res < 1e-12, res, 1e-12, art)
        rep.verdict("rpf", "error_decay_rate", ex["fit"].rate < 1 and ex["fit"].r2 > st.r2_min, ex["fit"].rate, 1.0, art)
        rep.verdict("rpf", "perturbation_stability", sr["pass"], sr["sup_ratio"], sr["C1"], art)
        return
    raw = ctx["system"].raw
    trip = rpf.forward_density(raw, (0, st.n_max + 1), burn_in=1)
    samples = random_bv_samples(raw.nodes(0), st.samples, _rng(cfg.seed, "rpf"))
    dec = rpf.uniform_decay(raw, samples, st.n_max, trip)
    eq = max(rpf.equivariance_residual(raw, trip, j, 20, _rng(cfg.seed, "rpf", 1 + j)) for j in range(4))
    art = rep.csv("rpf_decay.csv", ["n", "envelope"], [(n + 1, v) for n, v in enumerate(dec["envelope"])])
    fit = dec["fit"]
    rep.verdict("rpf", "decay_rate", fit.rate < st.rate_max and fit.r2 > st.r2_min, fit.rate, st.rate_max, art,
                note=f"R2={fit.r2:.5f}")
    rep.verdict("rpf", "equivariance", eq < st.equivariance_tol, eq, st.equivariance_tol, art)


def stage_gibbs(cfg, st, ctx, rep: Report):
    from . import gibbs
    g = ctx["system"].gibbs
    js = range(g.window[0], g.window[0] + max(2 * len(cfg.system.family), 6))
    rc = gibbs.gibbs_ratio_check(g, st.depth_max, window=js)
    total = 0.0
    for r in (1, 4, 8):
        words, logm, _ = gibbs._words_with(g, 0, r)
        total = max(total, abs(float(np.exp(logm).sum()) - 1.0))
    ts = gibbs.two_sided_extend(g, 100, 8, _rng(cfg.seed, "gibbs"))
    art = rep.csv("gibbs_ratio.csv", ["depth", "min_ratio", "max_ratio", "C_hat"],
                  [(r, lo, hi, c) for (r, lo, hi), c in zip(rc["per_depth"], rc["C_by_depth"])])
    rep.verdict("gibbs", "C_hat_drift", rc["drift"] < st.drift_tol, rc["drift"], st.drift_tol, art,
                note=f"C_hat={rc['C_hat']:.6g}")
    rep.verdict("gibbs", "mass_normalisation", total < st.tol, total, st.tol, art)
    rep.verdict("gibbs", "two_sided_consistency", ts["max_gap"] < st.tol, ts["max_gap"], st.tol, art)


def stage_martingale(cfg, st, ctx, rep: Report):
    from . import martingale
    system = ctx["system"]
    dec = martingale.decompose(system, st.window)
    art = rep.csv("martingale.csv", ["j", "u_bv", "M_bv", "LM_sup"], dec.table(system))
    rep.verdict("martingale", "LM_residual", dec.martingale_residual < st.residual_tol,
                dec.martingale_residual, st.residual_tol, art)
    rep.verdict("martingale", "reconstruction", dec.reconstruction_residual < st.reconstruction_tol,
                dec.reconstruction_residual, st.reconstruction_tol, art)
    dic = martingale.variance_dichotomy(system, st.n_max, st.dichotomy_tol)
    ctx["dichotomy"] = dic
    n = np.arange(1, st.n_max + 1)
    art2 = rep.csv("variance.csv", ["n", "var_s", "var_m"], zip(n, dic["var_s"], dic["var_m"]))
    rep.verdict("martingale", "dichotomy", None, dic["verdict"], None, art2,
                note=f"growth_last_quarter={dic['growth_last_quarter']:.3g}")
    if dic["verdict"] == "bounded":
        vmax = float(dic["var_s"].max())
        bound = 4 * dic["sup_u"] ** 2
        rep.verdict("martingale", "bounded_variance", vmax <= bound + 1e-12, vmax, bound, art2)
    rep.verdict("martingale", "l2_gap", dic["l2_gap_ok"], dic["l2_gap"], 2 * dic["sup_u"], art2)


def stage_cumulant(cfg, st, ctx, rep: Report):
    from . import cumulant
    system = ctx["system"]
    rows, growth_rows = [], []
    for pair in st.z_list:
        z = parse_complex(pair)
        r = cumulant.lll_gap(system, z, st.j_list, st.n_max)
        rows += [(z.real, z.imag, int(n), g) for n, g in zip(r["n"], r["gap"])]
        ctx.setdefault("lll", {})[z] = r
    art = rep.csv("lll_gap.csv", ["re_z", "im_z", "n", "gap"], rows)
    for z, r in ctx.get("lll", {}).items():
        rep.verdict("cumulant", f"lll_flat[{z}]", abs(r["slope"]) < st.slope_tol, r["slope"], st.slope_tol, art,
                    note=f"max_gap={r['max']:.3g}")
    if st.growth_n:
        for k in st.growth_k:
            g = cumulant.growth_check(system, st.growth_n, k, st.delta)
            growth_rows += [(k, n, s, v) for n, s, v in zip(g["n"], g["sigma"], g["value"])]
            ctx.setdefault("growth", {})[k] = g
        art2 = rep.csv("growth.csv", ["k", "n", "sigma", "value"], growth_rows)
        for k, g in ctx["growth"].items():
            rep.verdict("cumulant", f"growth_plateau[k={k}]", abs(g["slope"]) <= st.growth_slope_tol, g["slope"],
                        st.growth_slope_tol, art2)
    tab = cumulant.cgf_table(system, st.j_list[:2], [1, 10, 100], [parse_complex(p) for p in st.z_list])
    rep.csv("cgf.csv", ["j", "n", "re_z", "im_z", "re_cgf", "im_cgf"], tab)


def stage_limits(cfg, st, ctx, rep: Report):
    from . import limits, martingale
    system = ctx["system"]
    dic = ctx.get("dichotomy") or martingale.variance_dichotomy(system, st.n_list[-1])
    if dic["verdict"] == "bounded":
        raise SkipStage("sigma bounded")
    workers = st.workers if ctx["threads"] is None else min(st.workers, ctx["threads"])
    sets = limits.simulate(system, st.n_list, st.N, *_stream(cfg.seed, "limits"), workers=workers,
                           strict=st.N >= 10_000)
    reports = [limits.distance_report(sets[n]) for n in st.n_list]
    art = rep.csv("distances.csv", limits.DistanceReport.FIELDS, [r.row() for r in reports])
    lo, hi = st.slope_window
    fits = []
    for key in ("kolm", "d_p3", "l1", "l2", "w1", "w2"):
        fit = limits.rate_fit([(r.sigma_n, getattr(r, key)) for r in reports], rng=_rng(cfg.seed, "limits", 7))
        fits.append((key, fit["slope"], fit["ci95"][0], fit["ci95"][1], fit["r2"]))
        ok = lo <= fit["slope"] <= hi
        if key == "kolm":
            ok = ok and not (fit["ci95"][0] <= 0 <= fit["ci95"][1]) and not (fit["ci95"][0] <= -2 <= fit["ci95"][1])
        rep.verdict("limits", f"rate[{key}]", ok, fit["slope"], [lo, hi], "rates.csv",
                    error_bar=(fit["ci95"][1] - fit["ci95"][0]) / 2)
    rep.csv("rates.csv", ["metric", "slope", "ci_lo", "ci_hi", "r2"], fits)
    mom = martingale.moment_ratio({n: sets[n].values * sets[n].sigma for n in st.n_list})
    art2 = rep.csv("moments.csv", ["n", "ratio"], zip(mom["n"], mom["ratio"]))
    rep.verdict("limits", "moment_ratio_trend", abs(mom["slope"]) <= st.moment_slope_tol, mom["slope"],
                st.moment_slope_tol, art2)
    rep.verdict("limits", "mc_error", None, reports[-1].mc_err, None, art)


def stage_asip(cfg, st, ctx, rep: Report):
    from . import asip
    system = ctx["system"]
    dic = ctx.get("dichotomy")
    if dic is not None and dic["verdict"] == "bounded":
        raise SkipStage("sigma bounded")
    plans = {n: asip.plan_blocks(system, n, st.B) for n in st.n_list}
    big = plans[st.n_list[-1]]
    art = rep.csv("blocks.csv", ["index", "start", "end", "length", "variance", "partial"], big.rows())
    closed = big.variances[:big.k_n]
    ok = all(st.B <= v <= 2 * st.B for v in closed)
    rep.verdict("asip", "blocks_in_[B,2B]", ok, max(closed), [st.B, 2 * st.B], art)
    band = asip.kn_band(plans, system=system)
    art2 = rep.csv("kn_band.csv", ["n", "k_n_over_sigma2"], zip(band["n"], band["ratio"]))
    rep.verdict("asip", "kn_band_width", band["width"] < st.band_max, band["width"], st.band_max, art2)
    cov = asip.block_cov_decay(system, plans[st.n_list[0]], st.k_max)
    art3 = rep.csv("block_cov.csv", ["k", "envelope"], [(k + 1, v) for k, v in enumerate(cov["envelope"])])
    fit = cov["fit"]
    if fit.used < 3:
        rep.verdict("asip", "block_cov_fit", None, float(cov["envelope"].max()), None, art3,
                    note="covariances at roundoff: no decay to fit")
    else:
        rep.verdict("asip", "block_cov_fit", fit.r2 > st.r2_min and fit.rate < 1, fit.r2, st.r2_min, art3,
                    note=f"rate={fit.rate:.3g}")
    if st.gouzel:
        if cfg.system.kind != "sft":
            raise ValueError("the factorisation gap needs an SFT system")
        b = big.blocks
        left = [b[0], b[1]]
        right = [b[2][1] - b[2][0], b[3][1] - b[3][0]]
        ks = list(range(1, st.gouzel_k + 1))
        prof = asip.gouzel_profile(system, left, right, ks, [0.3, -0.2], [0.25, 0.1])
        far = 30 * cfg.system.mixing_horizon
        gfar = asip.gouzel_gap(system, left, right, far, [0.3, -0.2], [0.25, 0.1])["gap"]
        art4 = rep.csv("gouzel.csv", ["k", "gap"], [*zip(ks, prof["gap"]), (far, gfar)])
        rep.verdict("asip", "gouzel_rate", prof["fit"].rate < 1, prof["fit"].rate, 1.0, art4)
        rep.verdict("asip", "gouzel_far", gfar < 1e-12, gfar, 1e-12, art4)


STAGES = {"rpf": stage_rpf, "gibbs": stage_gibbs, "martingale": stage_martingale,
          "cumulant": stage_cumulant, "limits": stage_limits, "asip": stage_asip}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _out_root(arg, cfg):
    return Path(arg or cfg.output or os.environ.get(OUT_ENV) or "runs")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    h = config_hash(cfg)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    out = _out_root(args.out, cfg) / f"{cfg.name}-{stamp}-{h[:8]}"
    out.mkdir(parents=True, exist_ok=False)
    rep = Report(out)
    ctx = {"threads": args.threads}
    status = {}
    t0 = time.perf_counter()
    try:
        ctx["system"] = build_system(cfg)
    except (ValueError, ArithmeticError) as err:
        log.error("system construction failed: %s", err)
        rep.timings.append({"stage": "system", "seconds": time.perf_counter() - t0, "status": f"failed: {err}"})
        _write_summary(rep, cfg, h, {"system": "failed"})
        return EXIT_NUMERIC
    rep.timings.append({"stage": "system", "seconds": time.perf_counter() - t0, "status": "ok"})
    for st in cfg.pipeline:
        name = st.stage
        t0 = time.perf_counter()
        blocked = [d for d in DEPENDS.get(name, ()) if status.get(d) == "failed"]
        if blocked:
            status[name] = "skipped"
            note = f"skipped: depends on failed stage {blocked[0]}"
        else:
            try:
                STAGES[name](cfg, st, ctx, rep)
                status[name], note = "ok", "ok"
            except SkipStage as s:
                status[name], note = "skipped", f"skipped: {s}"
            except (ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
                status[name], note = "failed", f"failed: {type(err).__name__}: {err}"
        log.info("stage %s: %s", name, note)
        rep.timings.append({"stage": name, "seconds": time.perf_counter() - t0, "status": note})
    _write_summary(rep, cfg, h, status)
    print(out)
    for v in rep.verdicts:
        flag = {True: "PASS", False: "FAIL", None: "INFO"}[v["pass"]]
        print(f"{flag:4s} {v['stage']}.{v['name']}: {v['value']} (threshold {v['threshold']})")
    for t in rep.timings:
        if t["status"].startswith("skipped"):
            print(f"SKIP {t['stage']}: {t['status']}")
    if any(s == "failed" for s in status.values()):
        return EXIT_NUMERIC
    if any(v["pass"] is False for v in rep.verdicts):
        return EXIT_ACCEPTANCE
    return EXIT_OK


def _write_summary(rep, cfg, h, status):
    summary = {"version": SCHEMA_VERSION, "package_version": __version__, "config_hash": h, "name": cfg.name,
               "seed": cfg.seed, "stages": status, "verdicts": rep.verdicts, "timings": rep.timings}
    _atomic_write(rep.out / "summary.json", json.dumps(summary, indent=2))


def cmd_describe(args) -> int:
    cfg = load_config(args.config)
    s = cfg.system
    seq = build_sequence(cfg)
    print(f"config {cfg.name} ({config_hash(cfg)[:12]}), seed {cfg.seed}")
    print(f"system: {s.kind}, {len(s.family)} stage(s), schedule {s.schedule.kind}")
    if s.kind == "interval":
        G = s.grid
        print(f"  operators: {G}x{G} per step ({G * G} dense entries, {8 * G * G / 2 ** 20:.0f} MiB dense; "
              f"stored sparse, <= {G * seq.family[0].branch_count * (s.order + 1)} nonzeros)")
    else:
        for k, f in enumerate(seq.family):
            print(f"  stage {k}: {f.alphabet_in}x{f.alphabet_out} matrices, word depth {s.depth}")
    for i, st in enumerate(cfg.pipeline, 1):
        extra = ""
        if st.stage == "limits":
            extra = f" Monte Carlo {st.N} paths x n <= {st.n_list[-1]} ({st.N * st.n_list[-1]:.3g} path steps)"
        elif st.stage == "martingale":
            extra = f" window {tuple(st.window)}, dichotomy n <= {st.n_max}"
        elif st.stage == "cumulant":
            extra = f" {len(st.z_list)} twist values, n <= {st.n_max}"
        elif st.stage == "asip":
            extra = f" B={st.B}, n_list={st.n_list}"
        print(f"{i}. {st.stage}{extra}")
    return EXIT_OK


class SchemaError(ValueError):
    pass


def _load_summary(p) -> dict:
    p = Path(p)
    f = p / "summary.json" if p.is_dir() else p
    if not f.exists():
        raise SchemaError(f"no report at {p}")
    return json.loads(f.read_text())


def compare_reports(a: dict, b: dict) -> list:
    if a.get("version") != b.get("version"):
        raise SchemaError("report schema versions differ")
    key = lambda v: (v["stage"], v["name"])  # noqa: E731
    va, vb = {key(v): v for v in a["verdicts"]}, {key(v): v for v in b["verdicts"]}
    if set(va) != set(vb):
        raise SchemaError(f"metric sets differ: {sorted(set(va) ^ set(vb))}")
    rows = []
    for k in sorted(va):
        x, y = va[k]["value"], vb[k]["value"]
        if not isinstance(x, (int, float)) or not isinstance(y, (int, float)):
            rows.append((k, x, y, None, x != y))
            continue
        diff = abs(x - y)
        rel = diff / max(abs(x), abs(y), 1e-300) if diff else 0.0
        bars = [e for e in (va[k]["error_bar"], vb[k]["error_bar"]) if e is not None]
        bar = max(bars) if bars else 1e-9 * max(abs(x), abs(y), 1.0)
        rows.append((k, x, y, rel, diff > bar))
    return rows


def cmd_compare(args) -> int:
    try:
        rows = compare_reports(_load_summary(args.report_a), _load_summary(args.report_b))
    except SchemaError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    flagged = 0
    for (stage, name), x, y, rel, flag in rows:
        flagged += bool(flag)
        r = "n/a" if rel is None else f"{rel:.3g}"
        print(f"{'DIFF' if flag else 'same'} {stage}.{name}: {x} vs {y} (rel {r})")
    return EXIT_ACCEPTANCE if flagged else EXIT_OK


def cmd_query(args) -> int:
    from . import gibbs
    from .config import build_gibbs
    cfg = load_config(args.config)
    if cfg.system.kind != "sft":
        raise ConfigError("query-cylinder needs an SFT config")
    word = [int(c) for c in args.word.replace(",", " ").split()] if ("," in args.word or " " in args.word) \
        else [int(c) for c in args.word]
    g = build_gibbs(cfg)
    mass, ok = gibbs.cylinder_mass(g, args.time, word, with_flag=True)
    print(json.dumps({"time": args.time, "word": word, "admissible": bool(ok), "mass": float(mass)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="seqlimits", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a config's pipeline and write a report")
    r.add_argument("config")
    r.add_argument("--threads", type=int, default=None, help="cap on Monte Carlo worker processes")
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_run)
    d = sub.add_parser("describe", help="print the plan without computing")
    d.add_argument("config")
    d.set_defaults(fn=cmd_describe)
    c = sub.add_parser("compare", help="compare two reports")
    c.add_argument("report_a")
    c.add_argument("report_b")
    c.set_defaults(fn=cmd_compare)
    q = sub.add_parser("query-cylinder", help="Gibbs mass of a cylinder")
    q.add_argument("config")
    q.add_argument("--time", type=int, required=True)
    q.add_argument("--word", required=True)
    q.set_defaults(fn=cmd_query)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
