"""``rigscan`` command line.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
Options may also come from a JSON ``--config`` file whose keys are option
names (``batch_size``, ``sims`` ...), either at top level or under a
subcommand key; command-line flags win over the file.  ``RIGSCAN_SEED`` is
used when neither gives a seed.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .bids import ColumnMapping, Dataset, Label, Period, eligible_reference_firms, ingest_csv, write_csv
from .errors import ConfigError, DataError, RigscanError
from .experiment import SplitSpec, run_transfer, run_within_domain, summarize
from .model import TrainConfig, load_model, save_model, train
from .nn import OptimizerConfig
from .raster import (ManifestEntry, RasterConfig, load_manifest_images, read_pgm, rasterize,
                     write_manifest, write_pgm)
from .screen import build_graphs, quadrant_density, read_graphs, write_graphs
from .synthgen import MarketConfig, Regime, generate_corpus, write_corpus

log = logging.getLogger("rigscan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _fraction(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _common(p):
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=None,
                   help="base random seed (default: $RIGSCAN_SEED or 0)")
    g.add_argument("--config", default=None, help="JSON file with option defaults")
    g.add_argument("--out", default="rigscan_out", help="output directory")
    g.add_argument("--jobs", type=_positive_int, default=1,
                   help="worker processes; results do not depend on it")
    g.add_argument("-v", "--verbose", action="store_true")


def _train_options(p):
    p.add_argument("--epochs", type=_positive_int, default=40)
    p.add_argument("--batch-size", type=_positive_int, default=16)
    p.add_argument("--val-split", type=_fraction, default=0.10)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--threshold", type=_fraction, default=0.5)


def _raster_options(p):
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--radius", type=_nonneg_int, default=1)
    p.add_argument("--mode", choices=("additive", "binary"), default="additive")


def build_parser():
    parser = _Parser(prog="rigscan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rigscan {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("ingest", help="validate a bid CSV and write it in canonical form")
    p.add_argument("--input", required=True)
    p.add_argument("--schema", help="INI file with a [columns] section")
    _common(p)

    p = sub.add_parser("graphs", help="build interaction graphs for eligible firms")
    p.add_argument("--input", required=True)
    p.add_argument("--schema")
    p.add_argument("--min-bids", type=_positive_int, default=10)
    p.add_argument("--period", choices=("whole", "yearly"), default="whole")
    _common(p)

    p = sub.add_parser("rasterize", help="render graphs to PGM images plus a manifest")
    p.add_argument("--graphs", required=True, help="graphs.jsonl from the graphs command")
    p.add_argument("--source", default="", help="country/source tag for the manifest")
    _raster_options(p)
    _common(p)

    p = sub.add_parser("synth", help="generate a labelled synthetic image corpus")
    p.add_argument("--collusive", type=_nonneg_int, default=239)
    p.add_argument("--competitive", type=_nonneg_int, default=288)
    p.add_argument("--n-firms", type=_positive_int, default=10)
    p.add_argument("--n-tenders", type=_positive_int, default=60)
    p.add_argument("--min-bidders", type=_positive_int, default=3)
    p.add_argument("--max-bidders", type=_positive_int, default=6)
    p.add_argument("--noise", type=_positive_float, default=0.20)
    p.add_argument("--cover-gap", type=_nonneg_float, default=0.15)
    p.add_argument("--cover-spread", type=_positive_float, default=0.05)
    p.add_argument("--min-bids", type=_positive_int, default=10)
    p.add_argument("--source", default="synthetic")
    _raster_options(p)
    _common(p)

    p = sub.add_parser("train", help="train the CNN on a manifest")
    p.add_argument("--manifest", required=True)
    _train_options(p)
    _common(p)

    p = sub.add_parser("predict", help="score images with a trained model")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--image", action="append", help="PGM file (repeatable)")
    p.add_argument("--threshold", type=_fraction, default=None,
                   help="override the threshold stored in the model")
    _common(p)

    p = sub.add_parser("experiment", help="repeated 75/25 split evaluation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sims", type=_positive_int, default=20)
    p.add_argument("--test-split", type=_fraction, default=0.25)
    p.add_argument("--stratified", action="store_true")
    p.add_argument("--permute-labels", action="store_true",
                   help="shuffle labels first (chance-level control)")
    _train_options(p)
    _common(p)

    p = sub.add_parser("transfer", help="train on one manifest, test on another")
    p.add_argument("--train-manifest", required=True)
    p.add_argument("--test-manifest", required=True)
    p.add_argument("--sims", type=_positive_int, default=20)
    _train_options(p)
    _common(p)

    p = sub.add_parser("summarize", help="six-number summary of a column of values")
    p.add_argument("--input", required=True, help="CSV file, e.g. runs.csv")
    p.add_argument("--column", default=None, help="column name (default: first column "
                   "named accuracy, else the last column)")
    _common(p)
    return parser


def _load_config(path, command):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(command, {}))
    return {k.replace("-", "_"): v for k, v in merged.items()}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = _load_config(args.config, args.command)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(cfg) - known - {"config"})
        if unknown:
            raise UsageError(f"unknown option(s) in config: {', '.join(unknown)}")
        # re-validate config values through the same argparse types
        for action in subparser._actions:
            if action.dest in cfg and action.type is not None:
                try:
                    cfg[action.dest] = action.type(str(cfg[action.dest]))
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"config option {action.dest}: {exc}") from None
        subparser.set_defaults(**cfg)
        args = parser.parse_args(argv)
    if args.seed is None:
        env = os.environ.get("RIGSCAN_SEED")
        try:
            args.seed = int(env) if env else 0
        except ValueError:
            raise UsageError(f"RIGSCAN_SEED={env!r} is not an integer") from None
    return args


def _train_config(args, threshold=None):
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        validation_fraction=args.val_split,
        optimizer=OptimizerConfig(name=args.optimizer, learning_rate=args.lr),
        seed=args.seed,
        threshold=args.threshold if threshold is None else threshold,
    )


def _write(out, name, text):
    with open(os.path.join(out, name), "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _mapping(args):
    return ColumnMapping.from_file(args.schema) if args.schema else ColumnMapping()


def cmd_ingest(args):
    ds = ingest_csv(args.input, _mapping(args))
    write_csv(ds, os.path.join(args.out, "bids.csv"))
    years = sorted({t.date.year for t in ds.tenders})
    summary = {
        "tenders": len(ds.tenders),
        "bids": sum(len(t.bids) for t in ds.tenders),
        "firms": len(ds.firms()),
        "firms_with_10_bids": len(eligible_reference_firms(ds, 10)),
        "years": years,
        "collusive_tenders": sum(t.class_label == Label.COLLUSIVE for t in ds.tenders),
        "competitive_tenders": sum(t.class_label == Label.COMPETITIVE for t in ds.tenders),
    }
    _write(args.out, "ingest_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"{summary['tenders']} tenders, {summary['bids']} bids, {summary['firms']} firms")
    return [args.input], ["bids.csv", "ingest_summary.json"]


def cmd_graphs(args):
    ds = ingest_csv(args.input, _mapping(args))
    if not eligible_reference_firms(ds, args.min_bids):
        raise DataError(f"no firm submitted at least {args.min_bids} bids; "
                        f"lower --min-bids or supply more data")
    graphs = build_graphs(ds, args.min_bids, Period(args.period))
    if not graphs:
        raise DataError("eligible firms exist but none has a tender with co-bidders")
    write_graphs(graphs, os.path.join(args.out, "graphs.jsonl"))
    buf = [["reference_firm", "period_tag", "class_label", "points", "ll", "lr", "ul", "ur"]]
    for g in graphs:
        buf.append([g.reference_firm, g.period_tag, int(g.class_label), len(g.points),
                    *(repr(v) for v in quadrant_density(g))])
    with open(os.path.join(args.out, "quadrants.csv"), "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(buf)
    print(f"{len(graphs)} graphs")
    return [args.input], ["graphs.jsonl", "quadrants.csv"]


def _raster_config(args):
    return RasterConfig(size=args.size, marker_radius=args.radius, intensity_mode=args.mode)


def _rasterize_one(job):
    graph, cfg = job
    return rasterize(graph, cfg)


def cmd_rasterize(args):
    graphs = read_graphs(args.graphs)
    if not graphs:
        raise DataError(f"{args.graphs} holds no graphs")
    cfg = _raster_config(args)
    jobs = [(g, cfg) for g in graphs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            images = list(pool.map(_rasterize_one, jobs, chunksize=16))
    else:
        images = [_rasterize_one(j) for j in jobs]
    os.makedirs(os.path.join(args.out, "images"), exist_ok=True)
    entries = []
    for i, (g, img) in enumerate(zip(graphs, images)):
        rel = os.path.join("images", f"g{i:05d}.pgm")
        write_pgm(img, os.path.join(args.out, rel))
        entries.append(ManifestEntry(rel, g.class_label, args.source))
    write_manifest(entries, os.path.join(args.out, "manifest.csv"))
    print(f"{len(entries)} images")
    return [args.graphs], ["manifest.csv"] + [e.path for e in entries]


def cmd_synth(args):
    common = dict(n_firms=args.n_firms, n_tenders=args.n_tenders, min_bidders=args.min_bidders,
                  max_bidders=args.max_bidders, noise=args.noise, cover_gap=args.cover_gap,
                  cover_spread=args.cover_spread, seed=args.seed)
    configs = [MarketConfig(regime=Regime.COVER_BIDDING, name="c", **common),
               MarketConfig(regime=Regime.COMPETITIVE, name="k", **common)]
    corpus = generate_corpus(configs, {Label.COLLUSIVE: args.collusive,
                                       Label.COMPETITIVE: args.competitive},
                             _raster_config(args), args.min_bids, args.source)
    write_corpus(corpus, args.out)
    tenders = tuple(t for ds in corpus.datasets for t in ds.tenders)
    write_csv(Dataset(tenders, "synthetic"), os.path.join(args.out, "bids.csv"))
    print(f"{args.collusive} collusive + {args.competitive} competitive images")
    outputs = ["manifest.csv", "bids.csv"]
    outputs += [os.path.join("images", f"g{i:05d}.pgm") for i in range(len(corpus.images))]
    return [], outputs


def cmd_train(args):
    x, y, _ = load_manifest_images(args.manifest)
    model, report = train(x, y, _train_config(args))
    save_model(model, os.path.join(args.out, "model.rgsn"))
    report.to_csv(os.path.join(args.out, "train_report.csv"))
    last = report.epochs[-1]
    print(f"trained {len(report.epochs)} epochs: loss {last.loss:.4f}, "
          f"train acc {last.train_accuracy:.3f}, val acc {last.val_accuracy:.3f}")
    return [args.manifest], ["model.rgsn", "train_report.csv"]


def cmd_predict(args):
    model = load_model(args.model)
    if args.threshold is not None:
        model.threshold = args.threshold
    if args.manifest:
        x, y, entries = load_manifest_images(args.manifest)
        paths = [e.path for e in entries]
        labels = [int(e.label) for e in entries]
        inputs = [args.model, args.manifest]
    else:
        imgs = [read_pgm(p) for p in args.image]
        x = np.stack([im.pixels for im in imgs])[:, None]
        paths = list(args.image)
        labels = [int(im.label) for im in imgs]
        inputs = [args.model, *args.image]
    proba = model.predict_proba(x)
    cls = model.classify(proba)
    with open(os.path.join(args.out, "predictions.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "probability", "predicted", "label"])
        for p, pr, c, lab in zip(paths, proba, cls, labels):
            w.writerow([p, repr(float(pr)), int(c), lab])
    print(f"{int(np.sum(cls))} of {len(cls)} images flagged collusive")
    return inputs, ["predictions.csv"]


def _write_summary(args, summary):
    _write(args.out, "summary.csv", summary.to_csv())
    _write(args.out, "summary.txt", summary.to_text())
    _write(args.out, "runs.csv", summary.runs_csv())
    sys.stdout.write(summary.to_text())
    return ["summary.csv", "summary.txt", "runs.csv"]


def cmd_experiment(args):
    x, y, _ = load_manifest_images(args.manifest)
    if args.permute_labels:
        y = np.random.default_rng(np.random.SeedSequence([args.seed, 0x5EED])).permutation(y)
    split = SplitSpec(args.test_split, args.stratified, args.seed)
    summary = run_within_domain(x, y, _train_config(args), args.sims, split, args.seed, args.jobs)
    return [args.manifest], _write_summary(args, summary)


def cmd_transfer(args):
    xa, ya, _ = load_manifest_images(args.train_manifest)
    xb, yb, _ = load_manifest_images(args.test_manifest)
    summary = run_transfer(xa, ya, xb, yb, _train_config(args), args.sims, args.seed, args.jobs)
    return [args.train_manifest, args.test_manifest], _write_summary(args, summary)


def cmd_summarize(args):
    with open(args.input, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{args.input} has no data rows")
    header = rows[0]
    column = args.column or ("accuracy" if "accuracy" in header else header[-1])
    if column not in header:
        raise DataError(f"{args.input} has no column {column!r}")
    i = header.index(column)
    try:
        values = [float(r[i]) for r in rows[1:] if r]
    except ValueError as exc:
        raise DataError(f"{args.input}: {exc}") from None
    s = summarize(values)
    with open(os.path.join(args.out, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["", "Minimum", "1st quartile", "Median", "Mean", "3rd quartile", "Maximum",
                    "Observations"])
        w.writerow([column, *(repr(v) for v in s.as_tuple()), len(values)])
    print("  ".join(f"{v:.4f}" for v in s.as_tuple()))
    return [args.input], ["summary.csv"]


COMMANDS = {
    "ingest": cmd_ingest,
    "graphs": cmd_graphs,
    "rasterize": cmd_rasterize,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "experiment": cmd_experiment,
    "transfer": cmd_transfer,
    "summarize": cmd_summarize,
}

# execution-only options that never change results
_UNRECORDED = {"out", "jobs", "verbose", "config"}


def _write_run_manifest(args, inputs, outputs):
    snapshot = {k: v for k, v in sorted(vars(args).items())
                if k not in _UNRECORDED and k != "command"}
    record = {
        "command": args.command,
        "config": snapshot,
        "seed": args.seed,
        "inputs": list(inputs),
        "outputs": sorted(outputs),
        "tool_version": __version__,
    }
    _write(args.out, "run_manifest.json", json.dumps(record, indent=2, sort_keys=True) + "\n")


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"rigscan: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        os.makedirs(args.out, exist_ok=True)
        inputs, outputs = COMMANDS[args.command](args)
        _write_run_manifest(args, inputs, outputs)
    except ConfigError as exc:
        print(f"rigscan {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (RigscanError, OSError, ValueError) as exc:
        print(f"rigscan {args.command}: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
