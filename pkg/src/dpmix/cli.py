"""Command-line interface: ``gen``, ``train``, ``score`` and ``evaluate``.

Options can also come from a ``key=value`` file passed with ``--config``;
flags given on the command line win. Keys are the long option names with
dashes or underscores (``max_iters=200``, ``outlier-fraction=0.1``).

Exit codes: 0 success, 2 input error, 3 numerical failure.

Seeds: every command derives its random streams from one integer ``seed``
via ``numpy.random.SeedSequence(seed).spawn(2)``. In ``gen`` child 0 draws
the dataset and child 1 the train/test split; in ``train`` child 0 draws the
initial responsibilities; in ``score`` child 1 draws the Monte-Carlo
posterior samples.
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .data import encode, load_csv, read_schema
from .dpmm import PriorConfig, fit, load_model, save_model, score_exact_gaussian, score_mc
from .errors import ConfigError, InputError, NumericalError, ParseError
from .metrics import ScoreReport, anomaly_ranks, stratified_split
from .synth import SynthConfig, gen_dataset

log = logging.getLogger("dpmix")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3

# option name -> converter, for values read from a config file
_CONFIG_KEYS = {
    "seed": int,
    "K": int,
    "s0": float,
    "r0": float,
    "elbo_tol": float,
    "max_iters": int,
    "mc_samples": int,
    "init": str,
    "n_samples": int,
    "n_features": int,
    "outlier_fraction": float,
    "box_scale": float,
    "min_dof": float,
    "test_fraction": float,
}


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key.lower() == "k":
            key = "K"
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return values


def _apply_config(args):
    if getattr(args, "config", None) is None:
        return
    for key, value in read_config_file(args.config).items():
        if not hasattr(args, key):
            raise ConfigError(f"key {key!r} does not apply to '{args.command}'")
        if getattr(args, key) is None:
            setattr(args, key, value)


def _or(value, default):
    return default if value is None else value


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_table(path, required):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise ParseError(f"{path} is empty; a header row is required")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    if missing:
        raise ParseError(f"{path} lacks columns {missing}")
    idx = [header.index(c) for c in required]
    out = []
    for rowno, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", rowno)
        out.append([row[i].strip() for i in idx])
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    config = SynthConfig(
        n_samples=_or(args.n_samples, 2000),
        n_features=_or(args.n_features, 5),
        outlier_fraction=_or(args.outlier_fraction, 0.05),
        seed=_or(args.seed, 0),
        box_scale=_or(args.box_scale, 7.0),
        min_dof=_or(args.min_dof, 0.1),
    )
    gen_seq, split_seq = np.random.SeedSequence(config.seed).spawn(2)
    ds = gen_dataset(config, np.random.default_rng(gen_seq))
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "schema.txt"), "w", encoding="utf-8") as fh:
        fh.write(ds.schema(with_label=False).to_text())
    test_fraction = _or(args.test_fraction, 0.0)
    if test_fraction > 0:
        train, test = stratified_split(ds.labels, test_fraction, np.random.default_rng(split_seq))
        ds.write_csv(os.path.join(args.out_dir, "train.csv"), train)
        ds.write_csv(os.path.join(args.out_dir, "test.csv"), test)
        ds.write_labels(os.path.join(args.out_dir, "train_labels.csv"), train)
        ds.write_labels(os.path.join(args.out_dir, "test_labels.csv"), test)
        log.info("wrote %d train and %d test rows to %s", train.size, test.size, args.out_dir)
    else:
        ds.write_csv(os.path.join(args.out_dir, "data.csv"))
        ds.write_labels(os.path.join(args.out_dir, "labels.csv"))
        log.info("wrote %d rows to %s", ds.X.shape[0], args.out_dir)
    return EXIT_OK


def cmd_train(args):
    schema = read_schema(args.schema) if os.path.exists(args.schema) else None
    if schema is None:
        raise InputError(f"schema file {args.schema} does not exist")
    raw = load_csv(args.data, schema)
    if raw.n_rows == 0:
        raise InputError(f"{args.data} has no data rows")
    view = encode(raw, schema)
    config = PriorConfig(
        K=_or(args.K, 10),
        s0=_or(args.s0, 1.0),
        r0=_or(args.r0, 1e-3),
        elbo_tol=_or(args.elbo_tol, 1e-6),
        max_iters=_or(args.max_iters, 500),
        mc_samples=_or(args.mc_samples, 100),
        seed=_or(args.seed, 0),
        init=_or(args.init, "kmeans++"),
    )
    model, trace = fit(view, config)
    save_model(model, args.model)
    elbo_path = args.elbo_out or os.path.splitext(args.model)[0] + ".elbo.csv"
    _write_rows(elbo_path, ["iteration", "elbo"], [[i + 1, repr(float(v))] for i, v in enumerate(trace)])
    active = int((model.weights > 0.05).sum())
    log.info("%d iterations, final elbo %.6f, %d components above 5%%", len(trace), trace[-1], active)
    if not model.converged:
        print(f"warning: stopped after max_iters={config.max_iters} without converging", file=sys.stderr)
    return EXIT_OK


def cmd_score(args):
    model = load_model(args.model)
    if model.schema is None or model.encoding is None:
        raise InputError("model file carries no schema; it cannot score CSV input")
    raw = load_csv(args.data, model.schema)
    if raw.n_rows == 0:
        raise InputError(f"{args.data} has no data rows")
    view = encode(raw, model.schema, model.encoding)
    if args.exact:
        logp = score_exact_gaussian(model, view)
    else:
        seed = _or(args.seed, model.config.seed)
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])
        logp = score_mc(model, view, rng=rng, mc_samples=_or(args.mc_samples, model.config.mc_samples))
    scores = -logp
    ranks = anomaly_ranks(scores)
    _write_rows(
        args.out,
        ["id", "score", "rank"],
        [[i, repr(float(s)), int(r)] for i, s, r in zip(raw.ids, scores, ranks)],
    )
    return EXIT_OK


def cmd_evaluate(args):
    score_rows = _read_table(args.scores, ["id", "score"])
    label_rows = _read_table(args.labels, ["id", "label"])
    if not score_rows:
        raise InputError(f"{args.scores} has no rows")
    labels = {}
    for rowno, (i, v) in enumerate(label_rows, start=1):
        if v not in ("0", "1"):
            raise ParseError(f"label {v!r} is not 0 or 1", rowno, "label")
        labels[i] = int(v)
    ids = [r[0] for r in score_rows]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate ids in scores file")
    missing = [i for i in ids if i not in labels]
    if missing or len(labels) != len(ids):
        raise InputError(
            f"score and label ids do not match ({len(missing)} scores without a label, "
            f"{len(labels) - len(ids) + len(missing)} labels without a score)"
        )
    try:
        scores = [float(r[1]) for r in score_rows]
    except ValueError as exc:
        raise ParseError(f"bad score value: {exc}") from None
    report = ScoreReport(ids, scores, [labels[i] for i in ids])
    metrics = report.metrics()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=1, sort_keys=True)
            fh.write("\n")
    if args.pr_out:
        p, r, t = report.pr_points()
        _write_rows(args.pr_out, ["threshold", "precision", "recall"],
                    [[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(t, p, r)])
    if args.roc_out:
        f, t_, th = report.roc_points()
        _write_rows(args.roc_out, ["threshold", "fpr", "tpr"],
                    [[repr(float(a)), repr(float(b)), repr(float(c))] for a, b, c in zip(th, f, t_)])
    print(f"average_precision {metrics['average_precision']:.6f}")
    print(f"roc_auc {metrics['roc_auc']:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpmix", description="Dirichlet process mixture novelty detection.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; command-line flags take precedence")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--seed", type=int)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n-samples", type=int)
    g.add_argument("--n-features", type=int)
    g.add_argument("--outlier-fraction", type=float)
    g.add_argument("--box-scale", type=float, help="outlier box half-width in standard deviations")
    g.add_argument("--min-dof", type=float)
    g.add_argument("--test-fraction", type=float,
                   help="write train/test CSVs and label files instead of data.csv and labels.csv")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="fit a model")
    t.add_argument("--data", required=True)
    t.add_argument("--schema", required=True)
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--elbo-out", help="per-iteration ELBO CSV (default: <model>.elbo.csv)")
    t.add_argument("-K", "--K", dest="K", type=int, help="truncation level")
    t.add_argument("--s0", type=float)
    t.add_argument("--r0", type=float)
    t.add_argument("--elbo-tol", type=float)
    t.add_argument("--max-iters", type=int)
    t.add_argument("--mc-samples", type=int, help="stored default for scoring")
    t.add_argument("--init", choices=("kmeans++", "uniform"))
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", parents=[common], help="score rows with a fitted model")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--exact", action="store_true", help="closed-form Student-t scores (Gaussian-only models)")
    s.add_argument("--mc-samples", type=int)
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("evaluate", parents=[common], help="average precision and ROC AUC")
    e.add_argument("--scores", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--out", help="metrics JSON")
    e.add_argument("--pr-out")
    e.add_argument("--roc-out")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _apply_config(args)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
