"""Command line interface: fit, detect, diagnose, and simulate.

Every command writes its outputs into a directory given by --out and
returns exit code 0 only when all files were written.  Usage mistakes
exit with 2 (argparse), data or engine errors with 1.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .diagnostics import (compute_diagnostics, outlier_map,
                          rd_reduction_plot, residual_map)
from .detect import detect_cells
from .fileio import read_matrix_csv, read_t3, write_matrix_csv, write_t3
from .macro import MacroOptions, MacroResult, macroparafac
from .parafac import FitOptions, als_complete, als_incomplete
from .simulation import SCENARIOS, run_scenario, summarize_rows
from .svgplot import (render_boxplot, render_outlier_map,
                      render_rd_reduction, render_residual_map)
from .tensor import CpModel, Tensor3, fold_mode1

__all__ = ["main"]

RESULT_FIELDS = ["replicate", "scenario", "method", "mse", "b_angle",
                 "c_angle", "mse_imp"]
SUMMARY_COLS = ["mse", "b_angle", "c_angle", "mse_imp"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _write_csv(path, fields, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row.get(k)) for k in fields])


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(obj, indent=2, sort_keys=True))
        fh.write("\n")


def _is_t3(path):
    name = str(path)
    return name.endswith(".t3") or name.endswith(".t3.gz")


def _int_list(text, n, what):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != n:
        raise argparse.ArgumentTypeError(f"{what} needs {n} integers")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} needs {n} integers")


def _quartet(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("quartet needs four fractions")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError("quartet needs four fractions")


def _dims(text):
    return _int_list(text, 3, "dims")


def cmd_fit(args):
    t = read_t3(args.input)
    i_dim, j_dim, k_dim = t.dims
    out = Path(args.out)
    info = {
        "method": args.method,
        "rank": args.rank,
        "seed": args.seed,
        "dims": {"I": i_dim, "J": j_dim, "K": k_dim},
    }
    if args.method == "par":
        opts = FitOptions(rank=args.rank, seed=args.seed,
                          n_starts=args.starts)
        if t.mask.all():
            res = als_complete(t, opts)
        else:
            res, _ = als_incomplete(t, opts)
        model = res.model
        info.update(loss=res.loss, n_iter=res.n_iter,
                    converged=res.converged, h=None, h_star=None,
                    rowwise_set=[], n_cell_flags=0)
        extra = {}
    else:
        opts = MacroOptions(rank=args.rank, h=args.h, seed=args.seed,
                            fit=FitOptions(rank=args.rank, seed=args.seed,
                                           n_starts=args.starts))
        res = macroparafac(t, opts)
        model = res.model
        log = res.stage_log
        info.update(loss=log["loss5"], n_iter=log["n_iter5"],
                    converged=log["converged5"], h=res.h,
                    h_star=sorted(i + 1 for i in res.h_star),
                    rowwise_set=sorted(i + 1 for i in res.rowwise_set),
                    n_cell_flags=len(res.cell_set))
        extra = {"x_full.t3": res.x_full, "residuals.t3": res.residuals}
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "A.csv", model.a)
    write_matrix_csv(out / "B.csv", model.b)
    write_matrix_csv(out / "C.csv", model.c)
    _write_json(out / "fit.json", info)
    for name, tensor in extra.items():
        write_t3(out / name, tensor)
    return 0


def cmd_detect(args):
    if _is_t3(args.input):
        t = read_t3(args.input)
        values, mask = t.unfold()
        j_dim = t.dims[1]
    else:
        values = read_matrix_csv(args.input)
        mask = np.isfinite(values)
        values = np.where(mask, values, 0.0)
        j_dim = None
    flags = detect_cells(values, mask=mask, cutoff_p=args.cutoff,
                         max_neighbors=args.neighbors, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if j_dim is not None:
        # matricized column index c holds cell (j, k) = (c % J, c // J)
        cells = sorted((i + 1, c % j_dim + 1, c // j_dim + 1)
                       for i, c in flags.cell_outliers)
        _write_csv(out / "cells.csv", ["i", "j", "k"],
                   [dict(zip(["i", "j", "k"], c)) for c in cells])
        write_t3(out / "imputed.t3", fold_mode1(flags.imputed, t.dims))
    else:
        cells = sorted((i + 1, c + 1) for i, c in flags.cell_outliers)
        _write_csv(out / "cells.csv", ["i", "col"],
                   [dict(zip(["i", "col"], c)) for c in cells])
        write_matrix_csv(out / "imputed.csv", flags.imputed)
    _write_csv(out / "rows.csv", ["i"],
               [{"i": i + 1} for i in sorted(flags.row_flags)])
    return 0


def _load_fit_dir(fitdir):
    fitdir = Path(fitdir)
    with open(fitdir / "fit.json", "r", encoding="utf-8") as fh:
        info = json.load(fh)
    if info.get("method") != "macro":
        raise ValueError("diagnose needs a fit directory produced by "
                         "'fit --method macro'")
    model = CpModel(read_matrix_csv(fitdir / "A.csv"),
                    read_matrix_csv(fitdir / "B.csv"),
                    read_matrix_csv(fitdir / "C.csv"))
    x_full = read_t3(fitdir / "x_full.t3")
    residuals = read_t3(fitdir / "residuals.t3")
    return info, model, x_full, residuals


def cmd_diagnose(args):
    info, model, x_full, residuals = _load_fit_dir(args.fitdir)
    x = read_t3(args.input)
    want = tuple(info["dims"][k] for k in ("I", "J", "K"))
    if x.dims != want:
        raise ValueError(f"input dims {x.dims} do not match the fit dims "
                         f"{want}")
    fitted = model.fitted().values
    x_na = Tensor3(np.where(x.mask, x.values, fitted))
    res = MacroResult(
        model=model, x_na=x_na, x_cell=x_na, x_full=x_full,
        residuals=residuals,
        rowwise_set=frozenset(i - 1 for i in info["rowwise_set"]),
        cell_set=frozenset(), h_star=frozenset(i - 1 for i in info["h_star"]),
        h=info["h"], x_full_stage1=x_full, stage_log={})
    diag = compute_diagnostics(res, x, p_cell=args.p_cell, p_sd=args.p_sd,
                               seed=args.seed)
    i_dim, j_dim, k_dim = x.dims
    samples = args.sample or []
    for s in samples:
        if not 1 <= s <= i_dim:
            raise ValueError(f"--sample {s} outside 1..{i_dim}")
    agg = args.agg if args.agg > 0 else max(1, -(-(j_dim * k_dim) // 160))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [{"i": i + 1, "rd": float(diag.rd[i]),
             "rd_imp": float(diag.rd_imp[i]), "sd": float(diag.sd[i]),
             "poc": float(diag.poc[i]), "color": diag.color[i]}
            for i in range(i_dim)]
    _write_csv(out / "diagnostics.csv",
               ["i", "rd", "rd_imp", "sd", "poc", "color"], rows)
    (out / "outlier_map.svg").write_text(
        render_outlier_map(outlier_map(diag)), encoding="utf-8")
    (out / "rd_reduction.svg").write_text(
        render_rd_reduction(rd_reduction_plot(diag)), encoding="utf-8")
    (out / "residual_map.svg").write_text(
        render_residual_map(residual_map(diag, col_block=agg)),
        encoding="utf-8")
    for s in samples:
        (out / f"residual_map_sample_{s}.svg").write_text(
            render_residual_map(residual_map(diag, sample=s - 1)),
            encoding="utf-8")
    return 0


def cmd_simulate(args):
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if not methods:
        raise ValueError("no methods given")
    for m in methods:
        if m not in ("par", "macro"):
            raise ValueError(f"unknown method {m!r}")
    scenario = args.scenario
    if scenario is None:
        scenario = args.quartet
        for name, quartet in SCENARIOS.items():
            if tuple(quartet) == tuple(scenario):
                scenario = name
                break
    elif scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; known: "
                         + ", ".join(sorted(SCENARIOS)))
    rows = []
    for m in methods:
        rows.extend(run_scenario(scenario, m, n_rep=args.reps,
                                 seed=args.seed, gamma=args.gamma,
                                 dims=args.dims, noise=args.noise,
                                 n_starts=args.starts))
    summary = summarize_rows(rows)
    sum_fields = ["scenario", "method", "n_rep"]
    for col in SUMMARY_COLS:
        sum_fields += [f"{col}_q1", f"{col}_median", f"{col}_q3"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "results.csv", RESULT_FIELDS, rows)
    _write_csv(out / "summary.csv", sum_fields, summary)
    if args.emit_boxplot:
        groups = [(m, [r["mse"] for r in rows if r["method"] == m])
                  for m in methods]
        scen_name = scenario if isinstance(scenario, str) else \
            "({},{},{},{})".format(*(f"{v:g}" for v in scenario))
        (out / "boxplot.svg").write_text(
            render_boxplot(groups, title=f"scenario {scen_name}"),
            encoding="utf-8")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="macrotensor",
        description="Robust trilinear decomposition of three-way arrays "
                    "with cellwise and rowwise outlier handling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a trilinear model to a .t3 file")
    p.add_argument("input", help=".t3 or .t3.gz long-format tensor file")
    p.add_argument("--method", choices=("par", "macro"), default="macro")
    p.add_argument("--rank", type=int, required=True,
                   help="number of components")
    p.add_argument("--h", type=int, default=None,
                   help="working subset size (macro)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--starts", type=int, default=5,
                   help="random starts for the initial loadings")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("detect",
                       help="flag and impute deviating cells")
    p.add_argument("input", help=".t3/.t3.gz tensor or flat CSV matrix")
    p.add_argument("--cutoff", type=float, default=0.99,
                   help="flagging quantile")
    p.add_argument("--neighbors", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("diagnose",
                       help="per-sample diagnostics and plots for a fit")
    p.add_argument("fitdir", help="directory written by 'fit --method macro'")
    p.add_argument("input", help="the .t3 file that was fitted")
    p.add_argument("--p-cell", type=float, default=0.998, dest="p_cell",
                   help="cell flagging probability")
    p.add_argument("--p-sd", type=float, default=0.998, dest="p_sd",
                   help="score distance cutoff probability")
    p.add_argument("--agg", type=int, default=0,
                   help="residual map column block size (0 = auto)")
    p.add_argument("--sample", type=int, action="append",
                   help="also render a per-sample residual map (1-based, "
                        "repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("simulate",
                       help="run the benchmark generator and fitters")
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--scenario", help="named contamination scenario")
    grp.add_argument("--quartet", type=_quartet,
                     help="clean,rowwise,cellwise,missing fractions")
    p.add_argument("--gamma", type=float, default=7.0,
                   help="cellwise shift size in column deviations")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", default="par,macro",
                   help="comma list from: par, macro")
    p.add_argument("--dims", type=_dims, default=(50, 76, 61),
                   help="I,J,K of the generated arrays")
    p.add_argument("--noise", type=float, default=0.2)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--emit-boxplot", action="store_true",
                   help="also render per-method MSE boxplots")
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"macrotensor: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
