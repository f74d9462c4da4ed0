"""Command-line interface: ``moclust simulate | fit | oclust | eval | nullcheck``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure,
4 fit finished without meeting the convergence tolerance.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .em import FitConfig, fit
from .errors import (
    DegenerateComponentError,
    DegenerateDataError,
    FactorizationError,
    FitError,
    InsufficientDataError,
    NumericError,
    SubsetFailureError,
)
from .metrics import ari, labels_with_outlier_class, outlier_eval, truth_with_outlier_class
from .nullmodel import NullGammaMixture, kl_divergence, subset_logliks
from .simgen import FAMILIES, SimConfig, generate
from .trimmer import run_oclust

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4

log = logging.getLogger("moclust")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_fit_flags(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=int(os.environ.get("MOCLUST_THREADS", "1")))
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--n-inits", type=int, default=5)
    p.add_argument("--uv-sweeps", type=int, default=1)


def _cfg(args) -> FitConfig:
    try:
        return FitConfig(args.max_iters, args.rel_tol, args.n_inits, args.uv_sweeps, args.seed, args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = _out_dir(args)
    lines = []
    for k in range(args.count):
        seed = args.seed + k
        sim = generate(SimConfig(args.family, seed))
        path = out / f"{args.family}_seed{seed}.jsonl"
        io.write_dataset(path, sim.data)
        lines.append(f"{io.file_sha256(path)}  {path.name}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_fit(args) -> int:
    data = io.read_dataset(args.data)
    if args.G < 1:
        raise UsageError("G must be >= 1")
    res = fit(data, args.G, _cfg(args))
    out = _out_dir(args)
    io.write_model(out / "model.json", res.model, res.loglik)
    io.write_labels(out / "labels.csv", data.ids, res)
    print(f"loglik {res.loglik!r} iterations {res.n_iters} converged {res.converged}")
    if not res.converged:
        print(f"warning: EM stopped after {res.n_iters} iterations without converging", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_oclust(args) -> int:
    data = io.read_dataset(args.data)
    start = time.perf_counter()
    res = run_oclust(data, args.G, args.F, _cfg(args), gross_quantile=args.gross_quantile)
    runtime = time.perf_counter() - start
    out = _out_dir(args)
    io.write_trace(out / "trace.csv", res.trace)
    (out / "outliers.txt").write_text("".join(f"{i}\n" for i in res.outlier_ids))
    io.write_model(out / "model.json", res.final_fit.model, res.final_fit.loglik)
    fit_labels = dict(zip(res.retained.ids, res.final_fit.hard_labels))
    labels = labels_with_outlier_class(data.ids, fit_labels, res.outlier_ids)
    io.write_labels(out / "labels.csv", data.ids, labels=labels)
    summary = {
        "f_star": res.f_star,
        "kl_min": float(res.kl_values.min()),
        "n_outliers": len(res.outlier_ids),
        "gross_outliers": res.gross_ids,
        "runtime_s": runtime,
        "truncated": res.truncated,
        "warning": res.warning,
    }
    io.write_json(out / "summary.json", summary)
    if args.emit_plot:
        io.write_plot_csv(out / "kl_plot.csv", res.trace)
    print(f"f_star {res.f_star} kl_min {summary['kl_min']!r}")
    return EXIT_OK


def _eval_one(pred_dir: Path, truth_path) -> dict:
    truth = io.read_labeled(truth_path)
    outliers = [ln.strip() for ln in (pred_dir / "outliers.txt").read_text().splitlines() if ln.strip()]
    pred_labels = io.read_labels(pred_dir / "labels.csv")
    ids = truth.data.ids
    missing = set(ids) ^ set(pred_labels)
    if missing:
        raise KeyError(f"ids differ between prediction and truth: {sorted(missing)[:5]}")
    rates = outlier_eval(outliers, truth)
    pred = labels_with_outlier_class(ids, pred_labels, outliers)
    score = ari(truth_with_outlier_class(truth.true_cluster, truth.is_outlier), pred)
    return {"pred": str(pred_dir), "truth": str(truth_path), "ari": score, "n_predicted": len(outliers), **rates.to_dict()}


def cmd_eval(args) -> int:
    pairs = args.pairs
    if len(pairs) % 2:
        raise UsageError("eval takes PRED_DIR TRUTH_FILE pairs")
    rows = [_eval_one(Path(pairs[k]), pairs[k + 1]) for k in range(0, len(pairs), 2)]
    report = {"runs": rows, "mean_ari": float(np.mean([r["ari"] for r in rows]))}
    if args.out:
        io.write_json(args.out, report)
    for r in rows:
        print(f"{r['pred']}\tari={r['ari']:.4f}\tpredicted={r['n_predicted']}\ttp={r['tp']}\tfp={r['fp']}")
    print(f"mean\tari={report['mean_ari']:.4f}")
    return EXIT_OK


def cmd_nullcheck(args) -> int:
    data = io.read_dataset(args.data)
    cfg = _cfg(args)
    full = fit(data, args.G, cfg)
    ys = subset_logliks(data, args.G, cfg, full)
    null = NullGammaMixture.from_model(full.model)
    kl = kl_divergence(ys, null)
    out = _out_dir(args)
    with open(out / "ys.csv", "w", encoding="utf-8") as fh:
        fh.write("id,y,cluster\n")
        for obs_id, y, g in zip(data.ids, ys.ys, ys.subset_labels):
            if np.isfinite(y):
                fh.write(f"{obs_id},{float(y)!r},{int(g)}\n")
    io.write_json(
        out / "null.json",
        {
            "shape": null.shape,
            "components": [{"weight": float(w), "shift": float(k)} for w, k in zip(null.weights, null.shifts)],
            "kl": kl.value,
            "n_bins": kl.n_bins,
            "n_valid": int(ys.valid.sum()),
            "n_failed": ys.n_failed,
        },
    )
    print(f"kl {kl.value!r} n_valid {int(ys.valid.sum())}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moclust", description="Matrix-variate normal clustering with outlier trimming.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write simulated datasets")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a G-component mixture")
    p.add_argument("data")
    p.add_argument("--G", type=int, required=True)
    _add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("oclust", help="cluster with iterative outlier trimming")
    p.add_argument("data")
    p.add_argument("--G", type=int, required=True)
    p.add_argument("--F", type=int, required=True, help="maximum number of outliers")
    _add_fit_flags(p)
    p.add_argument("--gross-quantile", type=float, default=None)
    p.add_argument("--emit-plot", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_oclust)

    p = sub.add_parser("eval", help="score oclust output against ground truth")
    p.add_argument("pairs", nargs="+", metavar="PRED_DIR TRUTH_FILE")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nullcheck", help="leave-one-out values and KL against the gamma null")
    p.add_argument("data")
    p.add_argument("--G", type=int, required=True)
    _add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_nullcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"moclust: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, FactorizationError, NumericError, SubsetFailureError, DegenerateComponentError) as exc:
        print(f"moclust: numerical failure: {exc}", file=sys.stderr)
        for line in getattr(exc, "diagnostics", []):
            print(f"  {line}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.DataFormatError, InsufficientDataError, DegenerateDataError, KeyError, ValueError, OSError) as exc:
        print(f"moclust: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
