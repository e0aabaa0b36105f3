"""Repeated-split evaluation, per-class accuracy and summary tables."""

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateSplit, EmptyInput, InsufficientData
from .model import TrainConfig, train

log = logging.getLogger(__name__)

STAT_NAMES = ("Minimum", "1st quartile", "Median", "Mean", "3rd quartile", "Maximum")
ROW_NAMES = ("All graphs", "Collusion", "Competition")
MAX_SPLIT_ATTEMPTS = 1000


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.25
    stratified: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test fraction must lie strictly between 0 and 1")


def _round_half_up(v):
    return int(math.floor(v + 0.5))


def split_indices(labels, spec, rng=None):
    """Random train/test partition of ``range(len(labels))``.

    The test fold has round(test_fraction * n) items.  Stratified splits
    apportion that total across classes by largest remainder.
    """
    y = np.asarray(labels)
    n = len(y)
    n_test = _round_half_up(spec.test_fraction * n)
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    if not spec.stratified:
        perm = rng.permutation(n)
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    classes = np.unique(y)
    exact = {c: spec.test_fraction * np.count_nonzero(y == c) for c in classes}
    quota = {c: int(math.floor(v)) for c, v in exact.items()}
    short = n_test - sum(quota.values())
    for c in sorted(classes, key=lambda c: (-(exact[c] - quota[c]), c))[:short]:
        quota[c] += 1
    test = []
    for c in classes:
        members = np.flatnonzero(y == c)
        test.extend(rng.permutation(members)[:quota[c]])
    test = np.sort(np.array(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


@dataclass(frozen=True)
class EvalMetrics:
    tp: int
    tn: int
    fp: int
    fn: int

    @classmethod
    def from_predictions(cls, y_true, y_pred):
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        return cls(
            tp=int(np.count_nonzero((y_true == 1) & (y_pred == 1))),
            tn=int(np.count_nonzero((y_true == 0) & (y_pred == 0))),
            fp=int(np.count_nonzero((y_true == 0) & (y_pred == 1))),
            fn=int(np.count_nonzero((y_true == 1) & (y_pred == 0))),
        )

    @property
    def n_pos(self):
        return self.tp + self.fn

    @property
    def n_neg(self):
        return self.tn + self.fp

    @property
    def accuracy(self):
        return (self.tp + self.tn) / (self.n_pos + self.n_neg)

    @property
    def true_positive_rate(self):
        return self.tp / self.n_pos if self.n_pos else math.nan

    @property
    def true_negative_rate(self):
        return self.tn / self.n_neg if self.n_neg else math.nan


@dataclass(frozen=True)
class Summary:
    minimum: float
    q1: float
    median: float
    mean: float
    q3: float
    maximum: float

    def as_tuple(self):
        return (self.minimum, self.q1, self.median, self.mean, self.q3, self.maximum)


def _quantile(sorted_values, q):
    # linear interpolation at position 1 + (n - 1) q (1-based)
    h = (len(sorted_values) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(sorted_values) - 1)
    return sorted_values[lo] + (h - lo) * (sorted_values[hi] - sorted_values[lo])


def summarize(values):
    """Minimum, quartiles, median, mean and maximum of a sample."""
    v = sorted(float(x) for x in values)
    if not v:
        raise EmptyInput("cannot summarise an empty list")
    mean = math.fsum(v) / len(v)
    # keep the mean inside [min, max] despite rounding
    mean = min(max(mean, v[0]), v[-1])
    return Summary(v[0], _quantile(v, 0.25), _quantile(v, 0.5), mean, _quantile(v, 0.75), v[-1])


@dataclass
class SimulationSummary:
    """Accuracy summaries over repeated runs, one row per class grouping."""

    rows: dict
    observations: dict
    runs: list = field(default_factory=list)

    @property
    def n_runs(self):
        return len(self.runs)

    @classmethod
    def from_runs(cls, runs, labels):
        y = np.asarray(labels)
        rows = {
            "All graphs": summarize([m.accuracy for m in runs]),
            "Collusion": summarize([m.true_positive_rate for m in runs]),
            "Competition": summarize([m.true_negative_rate for m in runs]),
        }
        obs = {
            "All graphs": int(len(y)),
            "Collusion": int(np.count_nonzero(y == 1)),
            "Competition": int(np.count_nonzero(y == 0)),
        }
        return cls(rows, obs, list(runs))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["", *STAT_NAMES, "Observations"])
        for name in ROW_NAMES:
            w.writerow([name, *(repr(v) for v in self.rows[name].as_tuple()),
                        self.observations[name]])
        return buf.getvalue()

    def to_text(self, digits=3):
        header = ["", *STAT_NAMES, "Observations"]
        body = [[name, *(f"{v:.{digits}f}" for v in self.rows[name].as_tuple()),
                 str(self.observations[name])] for name in ROW_NAMES]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        lines = []
        for r in [header, *body]:
            cells = [r[0].ljust(widths[0])] + [c.rjust(wd) for c, wd in zip(r[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        return "\n".join(lines) + "\n"

    def runs_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "accuracy", "tpr", "tnr", "tp", "tn", "fp", "fn"])
        for i, m in enumerate(self.runs):
            w.writerow([i, repr(m.accuracy), repr(m.true_positive_rate),
                        repr(m.true_negative_rate), m.tp, m.tn, m.fp, m.fn])
        return buf.getvalue()


def _draw_split(y, spec, run_seed):
    """Redraw (logged) until the test fold holds both classes and the
    training fold holds at least two of each."""
    for attempt in range(MAX_SPLIT_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence([run_seed, attempt]))
        train_idx, test_idx = split_indices(y, spec, rng)
        n_test = [np.count_nonzero(y[test_idx] == c) for c in (0, 1)]
        n_train = [np.count_nonzero(y[train_idx] == c) for c in (0, 1)]
        if min(n_test) >= 1 and min(n_train) >= 2:
            return train_idx, test_idx
        log.warning("run seed %d: degenerate split (test %s, train %s per class), "
                    "redrawing (attempt %d)", run_seed, n_test, n_train, attempt + 1)
    raise DegenerateSplit(f"no usable split after {MAX_SPLIT_ATTEMPTS} attempts")


def _within_run(args):
    x, y, cfg, spec, run_seed = args
    train_idx, test_idx = _draw_split(y, spec, run_seed)
    model, _ = train(x[train_idx], y[train_idx], replace(cfg, seed=run_seed))
    pred = model.classify(model.predict_proba(x[test_idx]))
    return EvalMetrics.from_predictions(y[test_idx], pred)


def _transfer_run(args):
    x_train, y_train, x_test, y_test, cfg, run_seed = args
    model, _ = train(x_train, y_train, replace(cfg, seed=run_seed))
    pred = model.classify(model.predict_proba(x_test))
    return EvalMetrics.from_predictions(y_test, pred)


def _map_runs(fn, jobs_args, jobs):
    if jobs <= 1:
        return [fn(a) for a in jobs_args]
    # results come back in submission order, so aggregation is schedule-independent
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, jobs_args))


def _check_classes(y, what):
    y = np.asarray(y)
    counts = [int(np.count_nonzero(y == c)) for c in (0, 1)]
    if min(counts) == 0:
        raise InsufficientData(f"{what} needs both classes, has {counts[1]} collusive "
                               f"and {counts[0]} competitive")


def run_within_domain(x, y, cfg=TrainConfig(), n_runs=20, split=SplitSpec(), base_seed=0,
                      jobs=1):
    """Train and test on ``n_runs`` random splits of one corpus.

    Run ``r`` uses seed ``base_seed + r`` for its split, weight init, batch
    order and validation subset.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_classes(y, "corpus")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    args = [(x, y, cfg, split, base_seed + r) for r in range(n_runs)]
    runs = _map_runs(_within_run, args, jobs)
    return SimulationSummary.from_runs(runs, y)


def run_transfer(x_train, y_train, x_test, y_test, cfg=TrainConfig(), n_runs=20, base_seed=0,
                 jobs=1):
    """Train on one corpus and test on another, retraining for every run.

    The data are fixed, so variation across runs comes only from the seeded
    weight init, batch order and validation subset.
    """
    x_train = np.asarray(x_train, dtype=np.float64)
    x_test = np.asarray(x_test, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    if len(y_train) == 0 or len(y_test) == 0:
        raise InsufficientData("training and test corpora must be nonempty")
    _check_classes(y_test, "test corpus")
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    args = [(x_train, y_train, x_test, y_test, cfg, base_seed + r) for r in range(n_runs)]
    runs = _map_runs(_transfer_run, args, jobs)
    return SimulationSummary.from_runs(runs, y_test)
