"""Synthetic procurement markets with competitive and cover-bidding regimes.

Competitive tenders: every bidder draws ``cost * (1 + U(0, noise))``.

Cover-bidding tenders: a rotation fixed per market picks the winner, who
bids ``cost * (1 + U(0, noise))``; every other bidder (all cartel members)
bids ``winner * (1 + cover_gap + U(0, cover_spread))``.  That opens a gap
between the two lowest bids and squeezes the losing bids together, which
leaves the lower-left corner of the normalised interaction plot empty.
"""

import datetime as dt
import enum
import os
from dataclasses import dataclass, replace

import numpy as np

from .bids import BidRecord, Dataset, Label, eligible_reference_firms
from .errors import ConfigError, NoEligibleTenders
from .raster import ManifestEntry, RasterConfig, rasterize, write_manifest, write_pgm
from .screen import build_interaction_graph


class Regime(enum.Enum):
    COMPETITIVE = "competitive"
    COVER_BIDDING = "cover"

    @property
    def label(self):
        return Label.COLLUSIVE if self is Regime.COVER_BIDDING else Label.COMPETITIVE


@dataclass(frozen=True)
class MarketConfig:
    n_firms: int = 10
    n_tenders: int = 60
    min_bidders: int = 3
    max_bidders: int = 6
    cost_low: float = 1e5
    cost_high: float = 1e6
    noise: float = 0.20
    regime: Regime = Regime.COMPETITIVE
    cover_gap: float = 0.15
    cover_spread: float = 0.05
    seed: int = 0
    name: str = "m"
    start_date: dt.date = dt.date(2003, 4, 1)
    days_between: int = 7
    region: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        # gap <= spread is allowed so the regimes can be made to converge
        if self.cover_spread <= 0 or self.cover_gap < 0:
            raise ConfigError("need cover_spread > 0 and cover_gap >= 0")
        if self.min_bidders < 2 or self.max_bidders < self.min_bidders:
            raise ConfigError("bidders per tender must satisfy 2 <= min <= max")
        if self.max_bidders > self.n_firms:
            raise ConfigError("more bidders per tender than firms in the market")
        if self.n_tenders < 1:
            raise ConfigError("n_tenders must be >= 1")
        if not 0 < self.cost_low <= self.cost_high:
            raise ConfigError("need 0 < cost_low <= cost_high")
        if self.noise <= 0:
            raise ConfigError("noise must be > 0")


def generate(cfg):
    """Draw one market.  All randomness comes from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    firms = [f"{cfg.name}F{i:02d}" for i in range(cfg.n_firms)]
    rotation = rng.permutation(cfg.n_firms)
    label = cfg.regime.label
    records = []
    for t in range(cfg.n_tenders):
        tid = f"{cfg.name}T{t:04d}"
        date = cfg.start_date + dt.timedelta(days=t * cfg.days_between)
        k = int(rng.integers(cfg.min_bidders, cfg.max_bidders + 1))
        cost = rng.uniform(cfg.cost_low, cfg.cost_high)
        if cfg.regime is Regime.COVER_BIDDING:
            winner = int(rotation[t % cfg.n_firms])
            others = [i for i in range(cfg.n_firms) if i != winner]
            covers = rng.choice(others, size=k - 1, replace=False)
            bidders = [winner, *(int(c) for c in covers)]
            win_bid = cost * (1.0 + rng.uniform(0.0, cfg.noise))
            bids = [win_bid] + list(win_bid * (1.0 + cfg.cover_gap
                                               + rng.uniform(0.0, cfg.cover_spread, size=k - 1)))
        else:
            bidders = [int(i) for i in rng.choice(cfg.n_firms, size=k, replace=False)]
            bids = list(cost * (1.0 + rng.uniform(0.0, cfg.noise, size=k)))
        for firm, value in sorted(zip(bidders, bids)):
            records.append(BidRecord(tid, firms[firm], float(value), date, cfg.region, label))
    return Dataset.from_records(records, provenance=f"synthetic:{cfg.name}:seed={cfg.seed}")


@dataclass
class Corpus:
    """Rasterised labelled graphs, in generation order."""

    images: list
    labels: list
    sources: list
    datasets: list

    @property
    def x(self):
        return np.stack([im.pixels for im in self.images])[:, None]

    @property
    def y(self):
        return np.array([int(v) for v in self.labels], dtype=np.int64)

    def relabel(self, labels):
        return Corpus(self.images, [Label(int(v)) for v in labels], self.sources, self.datasets)


def _market_seed(base, index):
    return int(np.random.SeedSequence([base, index]).generate_state(1)[0])


def generate_corpus(configs, sizes, raster=RasterConfig(), min_bids=10, source="synthetic"):
    """Rasterised graphs for each requested class count.

    ``sizes`` maps a Label to the number of graphs wanted.  Markets are drawn
    from the configs of the matching regime in turn, each with a seed derived
    from the config seed and the market index, until enough eligible firms
    have produced graphs; surplus graphs from the last market are dropped.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("no market configs given")
    sizes = {Label(k): int(v) for k, v in sizes.items()}
    images, labels, sources, datasets = [], [], [], []
    for label in sorted(sizes, reverse=True):
        want = sizes[label]
        if want <= 0:
            continue
        pool = [c for c in configs if c.regime.label == label]
        if not pool:
            raise ConfigError(f"no market config produces {label.name.lower()} graphs")
        got = 0
        market = 0
        barren = 0
        while got < want:
            base = pool[market % len(pool)]
            cfg = replace(base, seed=_market_seed(base.seed, market),
                          name=f"{base.name}{label.name[:3].lower()}{market:03d}")
            market += 1
            ds = generate(cfg)
            datasets.append(ds)
            before = got
            for firm in eligible_reference_firms(ds, min_bids):
                if got == want:
                    break
                try:
                    g = build_interaction_graph(ds, firm, "all")
                except NoEligibleTenders:
                    continue
                images.append(rasterize(g, raster))
                labels.append(label)
                sources.append(source)
                got += 1
            barren = barren + 1 if got == before else 0
            if barren >= 20:
                raise ConfigError(f"20 markets in a row gave no graph with >= {min_bids} bids")
    return Corpus(images, labels, sources, datasets)


def write_corpus(corpus, out_dir, manifest_name="manifest.csv"):
    """Write one PGM per image plus a manifest; returns the manifest path."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    entries = []
    for i, (img, label, src) in enumerate(zip(corpus.images, corpus.labels, corpus.sources)):
        rel = os.path.join("images", f"g{i:05d}.pgm")
        write_pgm(img, os.path.join(out_dir, rel))
        entries.append(ManifestEntry(rel, label, src))
    path = os.path.join(out_dir, manifest_name)
    write_manifest(entries, path)
    return path
