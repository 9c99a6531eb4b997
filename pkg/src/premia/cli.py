"""Command-line front end.

Results go to standard output as JSON (one document per run, keys sorted, no
timestamps); diagnostics go to standard error. Exit codes: 0 success, 2 bad
input, 3 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

import premia
from premia import sim_lab, zoo_scan
from premia.cross_section import fm_tstats, fm_two_pass
from premia.cue_rank import cue_estimate, diagnostics
from premia.drlm import confidence_set, default_axes, make_axis
from premia.errors import DegeneracyError, InputError, PremiaError
from premia.first_pass import beta_significance_table, estimate_first_pass
from premia.panel_io import (AlignedDataset, ZeroBetaMode, align, load_csv,
                             reference_difference)

log = logging.getLogger("premia")

UNITS_HELP = ("Returns and factors are read as given; the toolkit assumes percent per "
              "period (1.5 means 1.5%), so premia and pricing errors come out in the "
              "same percent units. Date labels in column one must match across files.")

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 2, 3


# ---------------------------------------------------------------- helpers


def _clean(obj):
    """JSON-safe copy: numpy to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, ZeroBetaMode):
        return obj.value
    return obj


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _config(args: argparse.Namespace, inputs: Sequence[str] = ()) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose", "command")}
    return {
        "subcommand": args.command,
        "parameters": params,
        "inputs": {p: _sha256(p) for p in inputs if p and Path(p).is_file()},
        "toolkit_version": premia.__version__,
        "schema_version": premia.SCHEMA_VERSION,
    }


def _emit(payload: dict) -> None:
    sys.stdout.write(json.dumps(_clean(payload), indent=2, sort_keys=True, allow_nan=False))
    sys.stdout.write("\n")


def _write_rows(path: str, rows: list[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _csv_cell(v) for k, v in r.items()})


def _csv_cell(v):
    if isinstance(v, (list, tuple)):
        return ";".join(_csv_cell(x) for x in v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    if v is None:
        return ""
    return v


def _load_dataset(args) -> AlignedDataset:
    mode = ZeroBetaMode.parse(args.zero_beta)
    returns = load_csv(args.returns, "returns")
    factors = load_csv(args.factors, "factors")
    ds = align(returns, factors, mode)
    if args.reference:
        if mode is not ZeroBetaMode.INTERCEPT_ESTIMATED:
            log.info("--reference given: returns are differenced against %s", args.reference)
        ds = reference_difference(ds, args.reference)
    log.info("aligned %d dates, %d assets, %d factors (%s)", ds.T, ds.N, ds.K, ds.zero_beta_mode.value)
    return ds


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"cannot parse {what} list {text!r}") from None


def _parse_grid(text: str, K: int) -> list[np.ndarray]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != K:
        raise InputError(f"--grid needs {K} comma-separated lo:hi:step axes, got {len(parts)}")
    axes = []
    for i, p in enumerate(parts):
        try:
            lo, hi, step = (float(x) for x in p.split(":"))
        except ValueError:
            raise InputError(f"--grid axis {i + 1}: expected lo:hi:step, got {p!r}") from None
        axes.append(make_axis(lo, hi, step))
    return axes


# ---------------------------------------------------------------- subcommands


def cmd_firstpass(args) -> dict:
    ds = _load_dataset(args)
    fp = estimate_first_pass(ds)
    return {
        "T": fp.T, "N": fp.N, "K": fp.K, "zero_beta_mode": fp.zero_beta_mode,
        "return_names": list(fp.return_names), "factor_names": list(fp.factor_names),
        "mean_returns": fp.mu_hat, "factor_means": fp.fbar,
        "beta": fp.beta_hat, "beta_tstats": fp.beta_tstats,
        "omega": fp.omega_hat, "qff": fp.qff_hat,
        "significance": [
            {"asset": r["asset"], "loadings": {f: {"beta": r[f][0], "t": r[f][1]}
                                               for f in fp.factor_names}}
            for r in beta_significance_table(fp)],
    }


def cmd_estimate(args) -> dict:
    ds = _load_dataset(args)
    fp = estimate_first_pass(ds)
    fm = fm_two_pass(fp)
    out = {
        "T": fp.T, "N": fp.N, "K": fp.K, "zero_beta_mode": fp.zero_beta_mode,
        "fm": fm_tstats(fp, fm, "plain", args.alpha).to_dict(),
        "fm_shanken": fm_tstats(fp, fm, "shanken", args.alpha).to_dict(),
    }
    try:
        out["cue"] = cue_estimate(fp).to_dict()
        out["cue_warning"] = None
    except DegeneracyError as exc:
        log.warning("%s", exc)
        out["cue"] = None
        out["cue_warning"] = str(exc)
    return out


def cmd_jis(args) -> dict:
    ds = _load_dataset(args)
    fp = estimate_first_pass(ds)
    d = diagnostics(fp)
    return {"T": fp.T, "N": fp.N, "K": fp.K, "zero_beta_mode": fp.zero_beta_mode, **d.to_dict()}


def cmd_drlm_cs(args) -> dict:
    ds = _load_dataset(args)
    fp = estimate_first_pass(ds)
    axes = _parse_grid(args.grid, fp.K) if args.grid else default_axes(fp)
    grid = confidence_set(fp, axes, alpha=args.alpha, power_rule=not args.no_power_rule,
                          power_samples=args.power_samples)
    if grid.warning:
        log.warning("%s", grid.warning)
    if args.csv:
        pts = grid.points()
        names = list(fp.factor_names)
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*names, "drlm", "reject_raw", "reject_final"])
            for p, v, r0, r1 in zip(pts, grid.drlm_values.ravel(), grid.reject_raw.ravel(),
                                    grid.reject_final.ravel()):
                w.writerow([*(repr(float(x)) for x in p), repr(float(v)), int(r0), int(r1)])
    summary = grid.summary()
    summary["axes"] = [{"factor": n, "lo": float(a[0]), "hi": float(a[-1]), "n": len(a)}
                       for n, a in zip(fp.factor_names, grid.axes)]
    summary["zero_beta_mode"] = grid.zero_beta_mode
    summary["factor_names"] = list(fp.factor_names)
    return summary


def _sim_model(args) -> tuple[premia.PopulationModel, np.ndarray]:
    if args.returns and args.factors:
        ds = _load_dataset(args)
        ds = AlignedDataset(ds.dates, ds.returns, ds.factors, ds.return_names, ds.factor_names,
                            zero_beta_mode=ZeroBetaMode.IMPOSED_ZERO)
        fp = estimate_first_pass(ds)
        lam = _parse_floats(args.lambda_f, "lambda") if args.lambda_f else [2.0] * fp.K
        pm = sim_lab.calibrate(fp, lam, "residual")
        if args.angle:
            pm = sim_lab.blend_direction(pm, args.angle)
        return pm, fp.fbar
    if args.returns or args.factors:
        raise InputError("calibration needs both --returns and --factors")
    pm = sim_lab.synthetic_model(angle=args.angle)
    if args.lambda_f:
        pm = sim_lab.replace_lambda(pm, _parse_floats(args.lambda_f, "lambda"))
    return pm, np.zeros(pm.K)


def cmd_simulate(args) -> dict:
    pm, mu_f = _sim_model(args)
    spec = sim_lab.DgpSpec(pm, mu_f, T=args.T, seed=args.seed)
    bss = _parse_floats(args.beta_scales, "beta-scale")
    ess = _parse_floats(args.e_scales, "e-scale")
    tests = tuple(t for t in args.tests.split(",") if t)
    out = {"experiment": args.experiment, "N": pm.N, "K": pm.K}
    if args.experiment == "size-surface":
        grid = [(b, e) for b in bss for e in ess]
        surf = sim_lab.rejection_surface(spec, grid, tests, args.h0_rule, args.reps, args.alpha,
                                         power_rule=args.power_rule)
        rows = surf.rows()
        out["n_flagged"] = int(surf.flagged.sum())
    elif args.experiment == "power-curve":
        cell = spec.with_scales(bss[0], ess[0])
        dist = _parse_floats(args.distances, "distance")
        rows = sim_lab.power_curve(cell, dist, tests, args.reps, args.alpha,
                                   power_rule=args.power_rule).rows()
    elif args.experiment == "contours":
        c = sim_lab.pseudo_true_contours(pm, bss, ess)
        rows = c.rows()
    else:
        t2 = sim_lab.theorem2_decomposition(spec.with_scales(bss[0], ess[0]), reps=args.reps)
        out["theorem2"] = t2.to_dict()
        rows = [{"component": i, "mean": float(m), "mc_se": float(s)}
                for i, (m, s) in enumerate(zip(t2.component_means, t2.component_se))]
    out["rows"] = rows
    if args.csv:
        _write_rows(args.csv, rows)
    return out


def _parse_shard(text: str) -> tuple[int, int]:
    try:
        i, n = (int(x) for x in text.split("/"))
    except ValueError:
        raise InputError(f"--shard expects i/n, got {text!r}") from None
    if n < 1 or not 0 <= i < n:
        raise InputError(f"--shard {text}: need 0 <= i < n")
    return i, n


def cmd_zoo_scan(args) -> dict:
    ds_r = load_csv(args.returns, "returns")
    ds_f = load_csv(args.factors, "factors")
    mode = ZeroBetaMode.parse(args.zero_beta)
    # align on dates without the K < N + 1 limit of a single model
    fpos = {d: i for i, d in enumerate(ds_f.dates)}
    rows = [(i, fpos[d]) for i, d in enumerate(ds_r.dates) if d in fpos]
    if not rows:
        raise InputError("returns and factors share no dates")
    R = ds_r.values[[i for i, _ in rows]]
    F = ds_f.values[[j for _, j in rows]]
    store = zoo_scan.precompute_moments(R, F, mode, factor_names=ds_f.names)
    total = zoo_scan.n_subsets(store.M, args.k)
    i, n = _parse_shard(args.shard)
    lo, hi = zoo_scan.shard_range(total, i, n)
    log.info("scanning ranks %d..%d of %d (k=%d, M=%d)", lo, hi, total, args.k, store.M)
    n_deg = 0
    with zoo_scan.ShardWriter(args.out, args.k) as w:
        for rec in zoo_scan.scan(store, args.k, lo, hi, batch=args.batch):
            n_deg += int(((rec["flags"] & zoo_scan.FLAG_DEGENERATE) > 0).sum())
            w.write(rec)
    rep = zoo_scan.audit(store, args.k, args.audit, seed=args.seed, start=lo, stop=hi) \
        if args.audit else None
    return {"k": args.k, "M": store.M, "N_statistics": store.N, "T": store.T,
            "zero_beta_mode": mode, "total_models": total, "shard": [i, n],
            "rank_range": [lo, hi], "records_written": w.count, "n_degenerate": n_deg,
            "audit": None if rep is None else rep.to_dict(), "out": args.out}


def cmd_zoo_summarize(args) -> dict:
    parts = [zoo_scan.read_shard(p) for p in args.shards]
    ks = {p["subset"].shape[1] for p in parts if len(p)} or {None}
    if len(ks) > 1:
        raise InputError("shards were written for different k")
    summary = zoo_scan.summarize(parts, bins=args.bins)
    if args.csv:
        _write_rows(args.csv, summary.histogram_rows())
    return {"n_shards": len(parts), **summary.to_dict()}


# ---------------------------------------------------------------- parser


def _data_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--returns", required=required, help="test-asset returns CSV (date column first)")
    p.add_argument("--factors", required=required, help="factor CSV (date column first)")
    p.add_argument("--reference", default=None,
                   help="difference all returns against this asset column")
    p.add_argument("--zero-beta", default="intercept", choices=["zero", "intercept", "diff"],
                   help="zero: no zero-beta rate; intercept: estimate it; diff: returns are "
                        "already differenced against a reference asset (default: intercept)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="premia", description="Risk-premia estimation and robust inference. " + UNITS_HELP)
    parser.add_argument("--version", action="version",
                        version=f"premia {premia.__version__} (schema {premia.SCHEMA_VERSION})")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("firstpass", help="time-series betas and residual covariance",
                       description=UNITS_HELP)
    _data_flags(p)
    p.set_defaults(func=cmd_firstpass)

    p = sub.add_parser("estimate", help="FM two-pass and CUE premia", description=UNITS_HELP)
    _data_flags(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("jis", help="J misspecification and IS identification statistics",
                       description=UNITS_HELP)
    _data_flags(p)
    p.set_defaults(func=cmd_jis)

    p = sub.add_parser("drlm-cs", help="DRLM joint confidence set on a grid", description=UNITS_HELP)
    _data_flags(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--grid", default=None,
                   help='one lo:hi:step per factor, comma separated, e.g. --grid=-2:2:0.05,-1:1:0.05 '
                        "(use the = form when the value starts with a minus sign; "
                        "default: FM estimate +/- max(5, 10 se) with step 0.05)")
    p.add_argument("--no-power-rule", action="store_true")
    p.add_argument("--power-samples", type=int, default=100)
    p.add_argument("--csv", default=None, help="write one row per grid point here")
    p.set_defaults(func=cmd_drlm_cs)

    p = sub.add_parser("simulate", help="Monte Carlo experiments", description=UNITS_HELP)
    _data_flags(p, required=False)
    p.add_argument("--experiment", required=True,
                   choices=["size-surface", "power-curve", "contours", "theorem2"])
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=500)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta-scales", default="0.5,1,2.5,5,10",
                   help="identification strengths (local-to-zero units); power-curve and "
                        "theorem2 use the first value")
    p.add_argument("--e-scales", default="0,1,2,3.5,5", help="misspecification strengths")
    p.add_argument("--tests", default="fm_t,shanken_t,drlm")
    p.add_argument("--h0-rule", default="pseudo_true_fm",
                   choices=["zero", "pseudo_true_fm", "pseudo_true_cue"])
    p.add_argument("--power-rule", action="store_true", help="apply the DRLM segment rule")
    p.add_argument("--distances", default="-2,-1,-0.5,0,0.5,1,2")
    p.add_argument("--lambda", dest="lambda_f", default=None, help="baseline premia (default 2)")
    p.add_argument("--angle", type=float, default=0.0,
                   help="rotate the pricing-error direction towards beta by this angle (radians)")
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("zoo-scan", help="J and IS for every k-subset of a factor zoo",
                       description=UNITS_HELP)
    _data_flags(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--shard", default="0/1", help="i/n: process the i-th of n rank ranges")
    p.add_argument("--out", required=True, help="binary shard file to write")
    p.add_argument("--audit", type=int, default=1000,
                   help="re-check this many random subsets through the one-model path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=4096)
    p.set_defaults(func=cmd_zoo_scan)

    p = sub.add_parser("zoo-summarize", help="merge shard files into a summary")
    p.add_argument("shards", nargs="+")
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--csv", default=None, help="write the (J, IS) histogram here")
    p.set_defaults(func=cmd_zoo_summarize)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="premia: %(levelname)s: %(message)s",
                        level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING)
    inputs = [getattr(args, a, None) for a in ("returns", "factors")]
    inputs += list(getattr(args, "shards", []) or [])
    try:
        result = args.func(args)
        payload = {"config": _config(args, [p for p in inputs if p]), "result": result}
        _emit(payload)
        return EXIT_OK
    except InputError as exc:
        print(f"premia: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"premia: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DegeneracyError as exc:
        print(f"premia: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except PremiaError as exc:
        print(f"premia: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
