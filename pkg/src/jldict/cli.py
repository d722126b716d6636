"""Command line interface.

Exit codes: 0 success, 2 usage or invalid argument, 3 data/model mismatch or
unreadable data, 4 corrupt model file, 5 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
import time
from dataclasses import replace
from itertools import product
from pathlib import Path

import numpy as np

from . import dimsel
from .classify import confusion_matrix, encode, metrics_from_confusion, predict_codes
from .container import load_model, save_model
from .data import apply_standardization, load_csv, load_idx, load_idx_images, read_csv_matrix
from .embed import distortion_report, DISTORTION_SCALES
from .errors import CorruptModel, InvalidArgument, JLDictError, NumericalFailure, ParseError
from .pipeline import PipelineConfig, cross_validate, fit
from .plots import histogram_svg, line_svg

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISMATCH = 3
EXIT_CORRUPT = 4
EXIT_NUMERIC = 5

log = logging.getLogger("jldict")
fmt = dimsel.format_float


class UsageError(Exception):
    pass


# --- argument parsing --------------------------------------------------------

def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _data_parent(labels_required=True):
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--data", required=True, help="IDX images file or CSV features file")
    p.add_argument("--labels", help="IDX labels file (IDX format only)")
    p.add_argument("--format", choices=("idx", "csv"),
                   help="input format; inferred from the extension when omitted")
    p.add_argument("--label-column", default="label", help="label column of a CSV file")
    return p


def _pipeline_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--eps", type=float, help="perturbation budget in (0, 1)")
    g.add_argument("--auto-eps", action="store_true",
                   help="choose eps where p(eps) flattens (default)")
    g.add_argument("--p", type=int, dest="p_override", help="fix the projection dimension")
    p.add_argument("--atoms-per-class", type=int, default=10)
    p.add_argument("--sigma2", type=float, default=0.03)
    p.add_argument("--tau", type=float, default=0.35)
    p.add_argument("--kernel-bandwidth", type=float,
                   help="Gaussian bandwidth for kernel mode (default: median distance)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--augment-to", type=int, help="raise smaller classes to this count")
    p.add_argument("--augment-noise", type=float, default=0.05)
    p.add_argument("--max-outer", type=int, default=30)
    p.add_argument("--coder-iters", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jldict", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat key: value file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)
    data = _data_parent()
    pipe = _pipeline_parent()

    s = sub.add_parser("select-dim", help="JL projection dimension for N samples")
    s.add_argument("--n", type=int, required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--eps", type=float)
    g.add_argument("--auto", "--auto-eps", dest="auto_eps", action="store_true")
    s.add_argument("--flatness-tol", type=float, default=dimsel.DEFAULT_FLATNESS_TOL)
    s.add_argument("--eps-range", default="0.05:0.95:0.005", help="LO:HI:STEP for the curve")
    s.add_argument("--out", help="write the (epsilon, p, dp/deps) curve as CSV")
    s.add_argument("--svg", help="write the p(eps) curve as SVG")

    s = sub.add_parser("train", parents=[data, pipe], help="fit a model")
    s.add_argument("--out", required=True, help="model file to write")

    s = sub.add_parser("predict", help="classify samples with a saved model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--format", choices=("idx", "csv"))
    s.add_argument("--label-column", default="label",
                   help="CSV column to ignore if present")
    s.add_argument("--out", help="prediction CSV (default: stdout)")

    s = sub.add_parser("eval", parents=[data, pipe], help="stratified cross-validation")
    s.add_argument("--folds", type=int, default=10)
    s.add_argument("--out", help="directory for per-fold and confusion CSVs")

    s = sub.add_parser("sweep", parents=[data, pipe], help="grid of hyperparameters")
    s.add_argument("--folds", type=int, default=3)
    s.add_argument("--grid-sigma2", type=_floats)
    s.add_argument("--grid-tau", type=_floats)
    s.add_argument("--grid-p", type=_ints)
    s.add_argument("--grid-atoms-per-class", type=_ints)
    s.add_argument("--out", help="sweep CSV (default: stdout)")

    s = sub.add_parser("distortion", help="pairwise distance distortion of a linear model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--labels")
    s.add_argument("--format", choices=("idx", "csv"))
    s.add_argument("--label-column", default="label")
    s.add_argument("--pairs", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, help="band for the outside fraction (default: model's)")
    s.add_argument("--scale", choices=DISTORTION_SCALES, default="orthonormal")
    s.add_argument("--out", help="histogram CSV")
    s.add_argument("--svg", help="histogram SVG (default: --out with .svg suffix)")
    return parser


def read_config(path) -> list[str]:
    """Turn a key: value file into command line tokens placed before the user's."""
    tokens = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected 'key: value'")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens += [flag, value]
    return tokens


DIMENSION_FLAGS = {"--eps", "--auto-eps", "--auto", "--p"}


def _drop_flags(tokens, flags):
    out, i = [], 0
    while i < len(tokens):
        if tokens[i] in flags:
            i += 1
            if i < len(tokens) and not tokens[i].startswith("--"):
                i += 1
            continue
        out.append(tokens[i])
        i += 1
    return out


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if known.config:
        if not rest:
            parser.error("missing command")
        tokens = read_config(known.config)
        if DIMENSION_FLAGS & set(rest):
            # a dimension choice on the command line replaces the config file's
            tokens = _drop_flags(tokens, DIMENSION_FLAGS)
        rest = [rest[0], *tokens, *rest[1:]]
    return parser.parse_args(rest)


def pipeline_config(args, **extra) -> PipelineConfig:
    eps = args.eps
    if eps is not None and not 0 < eps < 1:
        raise UsageError("--eps must lie in (0, 1)")
    return PipelineConfig(
        epsilon=eps, p_override=args.p_override, atoms_per_class=args.atoms_per_class,
        sigma2=args.sigma2, tau=args.tau, kernel_bandwidth=args.kernel_bandwidth,
        seed=args.seed, folds=getattr(args, "folds", 3), augment_to=args.augment_to,
        augment_noise=args.augment_noise, max_outer=args.max_outer,
        coder_max_iters=args.coder_iters, **extra)


# --- data helpers --------------------------------------------------------------

def _format(args):
    if args.format:
        return args.format
    return "csv" if str(args.data).lower().endswith(".csv") else "idx"


def load_labeled(args):
    if _format(args) == "csv":
        return load_csv(args.data, args.label_column)
    if not args.labels:
        raise UsageError("--labels is required for IDX data")
    return load_idx(args.data, args.labels)


def load_features(args) -> np.ndarray:
    if _format(args) == "csv":
        with open(args.data, newline="") as fh:
            header = next(csv.reader(fh), [])
        column = args.label_column if args.label_column in [h.strip() for h in header] else None
        Y, _, _ = read_csv_matrix(args.data, column)
        return Y
    return load_idx_images(args.data)


def _write_text(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="\n") as fh:
            fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# --- commands --------------------------------------------------------------------

def cmd_select_dim(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    sel = dimsel.select_dimension(args.n, args.eps, args.flatness_tol)
    print(f"epsilon={sel.epsilon!r} p={sel.p} dp_deps={sel.derivative!r}")
    if args.out or args.svg:
        try:
            lo, hi, step = (float(v) for v in args.eps_range.split(":"))
        except ValueError:
            raise UsageError("--eps-range must look like LO:HI:STEP") from None
        if not (0 < lo <= hi < 1 and step > 0):
            raise UsageError("--eps-range must satisfy 0 < LO <= HI < 1 and STEP > 0")
        grid = lo + step * np.arange(int(np.floor((hi - lo) / step + 1e-9)) + 1)
        rows = dimsel.emit_dimension_curve(args.n, grid)
        if args.out:
            _write_text(args.out, dimsel.curve_to_csv(rows))
        if args.svg:
            _write_text(args.svg, line_svg([r[0] for r in rows], [r[1] for r in rows],
                                           f"JL dimension, N={args.n}", "epsilon", "p"))
    return EXIT_OK


def cmd_train(args) -> int:
    config = pipeline_config(args)
    ds = load_labeled(args)
    res = fit(ds, config)
    save_model(res.model, args.out)
    rep = res.report
    traj = rep.loss_trajectory
    print(f"mode={res.model.projection.mode} p={res.p} epsilon={fmt(res.epsilon)} "
          f"K={res.model.dictionary.shape[1]} classes={ds.n_classes}")
    print(f"outer_iterations={rep.outer_iterations} converged={rep.converged} "
          f"loss_first={fmt(traj[0])} loss_last={fmt(traj[-1])} "
          f"replaced_atoms={rep.replaced_atoms} rolled_back={rep.rejected_iterations}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    Y = load_features(args)
    d = model.projection.input_dim
    if Y.shape[0] != d:
        print(f"error: data has {Y.shape[0]} features, model expects {d}", file=sys.stderr)
        return EXIT_MISMATCH
    rows = []
    if Y.shape[1]:
        Z, X = encode(model, Y)
        labels, S = predict_codes(model, Z, X)
        for i, (lab, s) in enumerate(zip(labels, S)):
            ordered = np.sort(s)
            margin = float(ordered[1] - ordered[0]) if s.size > 1 else float("inf")
            name = model.class_names[lab] if model.class_names else int(lab)
            rows.append([i, name, float(ordered[0]), margin])
    _write_text(args.out, _csv_text(["index", "predicted_label", "score_best", "score_margin"],
                                    rows))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    config = pipeline_config(args)
    ds = load_labeled(args)
    results = cross_validate(ds, config, jobs=args.jobs)
    acc = np.array([r.metrics.accuracy for r in results])
    f1 = np.array([r.metrics.macro_f1 for r in results])
    print(f"accuracy={fmt(acc.mean())} +- {fmt(acc.std())}")
    print(f"macro_f1={fmt(f1.mean())} +- {fmt(f1.std())}")
    if args.out:
        out = Path(args.out)
        rows = [[r.fold, r.p, r.metrics.accuracy, r.metrics.macro_f1, r.train_seconds,
                 1000.0 * r.metrics.seconds_per_sample] for r in results]
        _write_text(out / "folds.csv", _csv_text(
            ["fold", "p", "accuracy", "macro_f1", "train_seconds", "test_ms_per_sample"], rows))
        for r in results:
            cm = r.metrics.confusion
            _write_text(out / f"confusion_fold{r.fold}.csv",
                        _csv_text(["true\\pred", *range(cm.shape[1])],
                                  [[i, *cm[i].tolist()] for i in range(cm.shape[0])]))
        _write_text(out / "summary.csv", _csv_text(
            ["metric", "mean", "std"],
            [["accuracy", float(acc.mean()), float(acc.std())],
             ["macro_f1", float(f1.mean()), float(f1.std())]]))
    return EXIT_OK


def _sweep_fold(task):
    """Fit each training configuration once and score every tau from one encoding."""
    train_ds, test_ds, configs, taus = task
    out = {}
    for key, config in configs.items():
        res = fit(train_ds, config)
        t0 = time.perf_counter()
        Z, X = encode(res.model, test_ds.Y)
        enc = time.perf_counter() - t0
        n = res.model.medoids.dim and max(res.model.medoids.labels) + 1
        for tau in taus:
            t1 = time.perf_counter()
            pred, _ = predict_codes(res.model, Z, X, tau)
            per = (enc + time.perf_counter() - t1) / max(test_ds.n_samples, 1)
            m = metrics_from_confusion(confusion_matrix(test_ds.labels, pred, n), per)
            out[key + (tau,)] = (m, res.seconds, res.p)
    return out


def cmd_sweep(args) -> int:
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    base = pipeline_config(args)
    sig = args.grid_sigma2 or [base.sigma2]
    taus = args.grid_tau or [base.tau]
    ps = args.grid_p or [base.p_override]
    apcs = args.grid_atoms_per_class or [base.atoms_per_class]
    if any(t <= 0 for t in taus):
        raise UsageError("tau values must be positive")
    configs = {}
    for s2, p, a in product(sig, ps, apcs):
        if p is not None:
            configs[(s2, p, a)] = replace(base, sigma2=s2, p_override=p, epsilon=None,
                                          atoms_per_class=a)
        else:
            configs[(s2, p, a)] = replace(base, sigma2=s2, atoms_per_class=a)
    ds = load_labeled(args)
    from .data import stratified_kfold
    splits = stratified_kfold(ds, args.folds, base.seed)
    tasks = [(ds.subset(tr), ds.subset(te), configs, taus) for tr, te in splits]
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            per_fold = list(pool.map(_sweep_fold, tasks))
    else:
        per_fold = [_sweep_fold(t) for t in tasks]

    rows = []
    for cell, (s2, tau, p, a) in enumerate(product(sig, taus, ps, apcs)):
        key = (s2, p, a, tau)
        ms = [f[key] for f in per_fold]
        rows.append([cell, float(s2), float(tau), ms[0][2], a, a * ds.n_classes,
                     float(np.mean([m.accuracy for m, _, _ in ms])),
                     float(np.mean([m.macro_f1 for m, _, _ in ms])),
                     float(np.mean([t for _, t, _ in ms])),
                     float(1000.0 * np.mean([m.seconds_per_sample for m, _, _ in ms]))])
    _write_text(args.out, _csv_text(
        ["cell", "sigma2", "tau", "p", "atoms_per_class", "K", "accuracy", "macro_f1",
         "train_seconds", "test_ms_per_sample"], rows))
    return EXIT_OK


def cmd_distortion(args) -> int:
    model = load_model(args.model)
    if model.projection.mode != "linear":
        print("error: distortion is defined for linear-mode models only", file=sys.stderr)
        return EXIT_USAGE
    Y = load_features(args)
    if Y.shape[0] != model.projection.input_dim:
        print(f"error: data has {Y.shape[0]} features, model expects "
              f"{model.projection.input_dim}", file=sys.stderr)
        return EXIT_MISMATCH
    if model.mean is not None:
        Y = apply_standardization(Y, model.mean, model.scale)
    rep = distortion_report(model.projection, Y, args.pairs, args.seed, epsilon=args.eps,
                            scale=args.scale)
    print(f"pairs={rep.n_pairs} min={fmt(rep.ratio_min)} mean={fmt(rep.ratio_mean)} "
          f"max={fmt(rep.ratio_max)} epsilon={fmt(rep.epsilon)} "
          f"outside_fraction={fmt(rep.fraction_outside)}")
    if args.out:
        rows = [[float(a), float(b), int(c)] for a, b, c in
                zip(rep.hist_edges[:-1], rep.hist_edges[1:], rep.hist_counts)]
        _write_text(args.out, _csv_text(["bin_low", "bin_high", "count"], rows))
    svg = args.svg or (str(Path(args.out).with_suffix(".svg")) if args.out else None)
    if svg:
        _write_text(svg, histogram_svg(rep.hist_counts, rep.hist_edges,
                                       "Squared distance ratio after projection", "ratio"))
    return EXIT_OK


COMMANDS = {
    "select-dim": cmd_select_dim,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "distortion": cmd_distortion,
}


def _setup_logging():
    level = os.environ.get("JLDICT_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CorruptModel as exc:
        print(f"error: corrupt model: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except NumericalFailure as exc:
        print(f"error{_where(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgument, JLDictError) as exc:
        print(f"error{_where(exc)}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _where(exc):
    st = getattr(exc, "stage", None)
    return f" in stage {st}" if st else ""


if __name__ == "__main__":
    sys.exit(main())
