"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import BandwidthPlan, select_bandwidths
from .conditioner import ConditionalEstimator
from .data import Dataset, check_seed, load_config, load_csv, make_partition, write_csv
from .diagnostics import partial_local_cov
from .errors import LgcdeError, NumericalError, ValidationError
from .marginals import pseudo_normalize
from .risk import DEFAULT_LEVELS, var_backtest
from .simlab import FAMILIES, MARGINS, SimSpec, compare_ise, sample

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _float_list(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _name_list(text):
    return [s.strip() for s in text.split(",") if s.strip()]


def _int_list(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _param(text):
    key, sep, val = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter {key!r} needs a number") from None


def _global_flags():
    g = _Parser(add_help=False)
    S = argparse.SUPPRESS
    g.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
    g.add_argument("--threads", type=int, default=S, help="worker threads (default: all cores)")
    g.add_argument("--grid-size", type=int, default=S, help="response grid points per axis")
    g.add_argument("--config", default=S, help="JSON config; explicit flags take precedence")
    g.add_argument("--out", default=S, help="output directory (data goes to stdout when omitted)")
    return g


def build_parser():
    common = _global_flags()
    p = _Parser(prog="lgcde", parents=[common],
                description="Conditional density estimation with local Gaussian correlation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("transform", parents=[common], help="rank-Gaussianize every column")
    s.add_argument("--data", required=True)

    s = sub.add_parser("bandwidth", parents=[common], help="select pairwise bandwidths")
    s.add_argument("--data", required=True)
    s.add_argument("--columns", type=_name_list, help="restrict to these columns")
    s.add_argument("--bandwidth", help="'cv' (default) or a fixed positive number")

    s = sub.add_parser("predict", parents=[common], help="estimate a conditional density")
    s.add_argument("--data", required=True)
    s.add_argument("--response", type=_name_list)
    s.add_argument("--conditioning", type=_name_list)
    s.add_argument("--at", type=_float_list, required=True, help="conditioning values")
    s.add_argument("--bandwidth", help="'cv' (default) or a fixed positive number")
    s.add_argument("--plan", help="bandwidth plan JSON written by the bandwidth command")

    s = sub.add_parser("simulate", parents=[common], help="draw a benchmark dataset")
    s.add_argument("--family", required=True, choices=FAMILIES)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--margins", default="std_normal", choices=MARGINS)
    s.add_argument("--param", type=_param, action="append", default=[], help="family parameter key=value")

    s = sub.add_parser("ise-bench", parents=[common], help="replicated ISE against the true conditional")
    s.add_argument("--family", required=True, choices=FAMILIES)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--p", type=int, default=2)
    s.add_argument("--margins", default="std_normal", choices=MARGINS)
    s.add_argument("--param", type=_param, action="append", default=[])
    s.add_argument("--at", type=_float_list, required=True)
    s.add_argument("--replicates", type=int, default=20)
    s.add_argument("--method", default="lgde", help="lgde, naive or both as 'lgde,naive'")
    s.add_argument("--bandwidth", help="'cv' (default) or a fixed positive number")

    s = sub.add_parser("partial-cov", parents=[common], help="local covariance of lagged pairs")
    s.add_argument("--data", required=True)
    s.add_argument("--column", help="series column (default: first)")
    s.add_argument("--lag", type=int, default=2)
    s.add_argument("--given", type=_int_list, default=[1])
    s.add_argument("--at", type=_float_list, required=True)
    s.add_argument("--points", type=_float_list, help="diagonal z points")
    s.add_argument("--bandwidth", help="'cv' (default) or a fixed positive number")

    s = sub.add_parser("var-backtest", parents=[common], help="backtest conditional Value-at-Risk")
    s.add_argument("--data", required=True, help="portfolio column first, then components")
    s.add_argument("--levels", type=_float_list, default=list(DEFAULT_LEVELS))
    s.add_argument("--warmup", type=int, default=500)
    s.add_argument("--plan-policy", default="frozen", help="'frozen' or 'periodic(r)'")
    s.add_argument("--window", default="expanding", choices=("expanding", "rolling"))
    s.add_argument("--window-length", type=int)
    s.add_argument("--bandwidth", help="'cv' (default) or a fixed positive number")
    return p


def _bandwidth_choice(value):
    if value is None or value == "cv":
        return "cv", None
    try:
        h = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"bandwidth must be 'cv' or a number, got {value!r}") from None
    if not h > 0 or not np.isfinite(h):
        raise ValidationError("bandwidth must be positive")
    return "fixed", h


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _resolve(args):
    """Merge config file values under explicit flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    out = {
        "seed": check_seed(getattr(args, "seed", cfg.get("seed", 0))),
        "threads": getattr(args, "threads", None),
        "grid_size": getattr(args, "grid_size", cfg.get("grid_size")),
        "out": getattr(args, "out", None),
    }
    for key in ("response", "conditioning", "bandwidth"):
        val = getattr(args, key, None)
        if val is None:
            val = cfg.get(key)
            if key in ("response", "conditioning") and isinstance(val, str):
                val = _name_list(val)
        out[key] = val
    if out["threads"] is not None and out["threads"] < 1:
        raise ValidationError("--threads must be positive")
    if out["grid_size"] is not None and int(out["grid_size"]) < 2:
        raise ValidationError("--grid-size must be at least 2")
    return out


class _Outputs:
    """Collects named outputs; writes them with a manifest into --out, or data to stdout."""

    def __init__(self, outdir):
        self.outdir = Path(outdir) if outdir else None
        self.files = {}

    def add(self, name, text):
        self.files[name] = text

    def flush(self, manifest, stdout_name):
        if self.outdir is None:
            sys.stdout.write(self.files[stdout_name])
            return
        self.outdir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            with open(self.outdir / name, "w", newline="") as fh:
                fh.write(text)
        with open(self.outdir / "manifest.json", "w") as fh:
            fh.write(_dumps(manifest))


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_text(values, names):
    buf = io.StringIO()
    write_csv(buf, values, names)
    return buf.getvalue()


def _plan_json(plan: BandwidthPlan, names):
    obj = plan.to_json()
    for e in obj["pairs"]:
        e["names"] = [names[e["i"]], names[e["j"]]]
    obj["strategy"] = plan.strategy
    return obj


def _require_out(res, command):
    if not res["out"]:
        raise ValidationError(f"{command} writes several files and needs --out DIR")


def _cmd_transform(args, res, outs):
    ds = load_csv(args.data)
    ps = pseudo_normalize(ds)
    outs.add("pseudo.csv", _csv_text(ps.z_values, ds.names))
    return {}, "pseudo.csv"


def _cmd_bandwidth(args, res, outs):
    ds = load_csv(args.data)
    cols = [ds.index(c) for c in args.columns] if args.columns else list(range(ds.p))
    if len(cols) < 2:
        raise ValidationError("need at least two columns")
    ds.require_estimable()
    strategy, h = _bandwidth_choice(res["bandwidth"])
    pairs = [(a, b) for i, a in enumerate(sorted(cols)) for b in sorted(cols)[i + 1:]]
    plan = select_bandwidths(pseudo_normalize(ds), pairs, strategy, h, res["threads"])
    outs.add("bandwidths.json", _dumps(_plan_json(plan, ds.names)))
    return {"columns": [ds.names[c] for c in cols], "bandwidth": res["bandwidth"] or "cv"}, \
        "bandwidths.json"


def _cmd_predict(args, res, outs):
    _require_out(res, "predict")
    ds = load_csv(args.data)
    if not res["response"] or not res["conditioning"]:
        raise ValidationError("predict needs --response and --conditioning")
    part = make_partition(res["response"], res["conditioning"], ds)
    ds.require_estimable()
    ps = pseudo_normalize(ds)
    if args.plan:
        with open(args.plan) as fh:
            plan = BandwidthPlan.from_json(json.load(fh))
    else:
        strategy, h = _bandwidth_choice(res["bandwidth"])
        plan = select_bandwidths(ps, part.pairs(), strategy, h, res["threads"])
    est = ConditionalEstimator(ds, part, plan, res["threads"], pseudo=ps)
    cd = est.conditional(args.at, grid_size=res["grid_size"])
    names = [ds.names[r] for r in part.response_idx]
    mesh = np.meshgrid(*cd.grid, indexing="ij")
    table = np.column_stack([m.ravel() for m in mesh] + [cd.values.ravel()])
    outs.add("density.csv", _csv_text(table, names + ["density"]))
    sidecar = {
        "normalizer": cd.normalizer,
        "psd_repaired_fraction": float(np.mean(cd.psd_repaired)),
        "bandwidths": _plan_json(plan, ds.names),
        "conditioning_point": {ds.names[c]: float(v) for c, v in zip(part.conditioning_idx, args.at)},
        "integral": cd.integral(),
    }
    outs.add("density.json", _dumps(sidecar))
    return {"response": names, "conditioning": [ds.names[c] for c in part.conditioning_idx],
            "at": list(args.at), "bandwidth": res["bandwidth"] or "cv",
            "plan": os.path.basename(args.plan) if args.plan else None,
            "grid_size": res["grid_size"]}, "density.csv"


def _spec(args, res):
    return SimSpec(args.family, args.n, args.p, dict(args.param), args.margins, res["seed"])


def _cmd_simulate(args, res, outs):
    spec = _spec(args, res)
    ds = sample(spec)
    outs.add("sample.csv", _csv_text(ds.values, ds.names))
    return {"family": spec.family, "n": spec.n, "p": spec.p, "margins": spec.margins,
            "params": {k: v for k, v in spec.params.items() if k != "corr"}}, "sample.csv"


def _cmd_ise_bench(args, res, outs):
    _require_out(res, "ise-bench")
    spec = _spec(args, res)
    methods = tuple(_name_list(args.method))
    strategy, h = _bandwidth_choice(res["bandwidth"])
    reports = compare_ise(spec, args.at, args.replicates, methods, res["grid_size"] or 2000,
                          strategy, h, res["threads"])
    rows = np.column_stack([np.arange(args.replicates), np.array(reports[methods[0]].seeds, dtype=float)]
                           + [np.array(reports[m].per_replicate) for m in methods])
    outs.add("ise.csv", _csv_text(rows, ["replicate", "seed"] + [f"ise_{m}" for m in methods]))
    summary = reports[methods[0]].to_json() if len(methods) == 1 else \
        {m: r.to_json() for m, r in reports.items()}
    outs.add("summary.json", _dumps(summary))
    return {"family": spec.family, "n": spec.n, "p": spec.p, "margins": spec.margins,
            "params": {k: v for k, v in spec.params.items() if k != "corr"}, "at": list(args.at),
            "replicates": args.replicates, "method": list(methods),
            "bandwidth": res["bandwidth"] or "cv", "grid_size": res["grid_size"] or 2000}, "ise.csv"


def _cmd_partial_cov(args, res, outs):
    ds = load_csv(args.data)
    col = ds.index(args.column) if args.column else 0
    strategy, h = _bandwidth_choice(res["bandwidth"])
    curve = partial_local_cov(ds.values[:, col], args.lag, args.given, args.at, args.points,
                              bandwidth=strategy, h=h, threads=res["threads"])
    table = np.column_stack([curve.points, curve.x_points, curve.unconditional, curve.conditional])
    outs.add("partial_cov.csv", _csv_text(table, ["point", "x", "unconditional", "conditional"]))
    return {"column": ds.names[col], "lag": args.lag, "given": list(args.given), "at": list(args.at),
            "points": args.points, "bandwidth": res["bandwidth"] or "cv"}, "partial_cov.csv"


def _cmd_var_backtest(args, res, outs):
    _require_out(res, "var-backtest")
    ds = load_csv(args.data)
    strategy, h = _bandwidth_choice(res["bandwidth"])
    rep = var_backtest(ds.values, args.warmup, args.levels, args.plan_policy, args.window,
                       args.window_length, strategy, h, res["grid_size"] or 2000, res["threads"])
    outs.add("report.json", _dumps(rep.to_json()))
    names = ["day", "realized"]
    for a in rep.levels:
        names += [f"var_{a:g}", f"exceeded_{a:g}"]
    names.append("skipped")
    rows = []
    for d in rep.days:
        row = [d.day, d.realized]
        for v, e in zip(d.var, d.exceeded):
            row += [v, float(e)]
        rows.append(row + [float(d.skipped)])
    outs.add("days.csv", _csv_text(np.array(rows), names))
    return {"levels": rep.levels, "warmup": args.warmup, "plan_policy": rep.plan_policy,
            "window": args.window, "window_length": args.window_length,
            "bandwidth": res["bandwidth"] or "cv", "grid_size": res["grid_size"] or 2000}, "report.json"


COMMANDS = {
    "transform": _cmd_transform,
    "bandwidth": _cmd_bandwidth,
    "predict": _cmd_predict,
    "simulate": _cmd_simulate,
    "ise-bench": _cmd_ise_bench,
    "partial-cov": _cmd_partial_cov,
    "var-backtest": _cmd_var_backtest,
}


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code not in (0, None) else EXIT_OK
    try:
        res = _resolve(args)
        outs = _Outputs(res["out"])
        config, main_output = COMMANDS[args.command](args, res, outs)
        inputs = {}
        for key in ("data", "plan", "config"):
            path = getattr(args, key, None)
            if path:
                inputs[key] = {"file": os.path.basename(path), "sha256": _sha256(path)}
        manifest = {"subcommand": args.command, "config": config, "inputs": inputs,
                    "seed": res["seed"], "version": __version__}
        outs.flush(manifest, main_output)
    except NumericalError as exc:
        print(f"lgcde: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LgcdeError, ValueError) as exc:
        print(f"lgcde: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"lgcde: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
