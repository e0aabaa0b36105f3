"""Bid rotation screen: min-max normalised pairwise interaction graphs."""

import json
import logging
from dataclasses import dataclass

from .bids import Dataset, Label, Period, eligible_reference_firms, partition_periods
from .errors import DegenerateTender, MixedLabels, NoEligibleTenders

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NormalizedBid:
    tender_id: str
    firm_id: str
    value: float


@dataclass(frozen=True)
class GraphPoint:
    x: float
    y: float
    partner_firm: str
    tender_id: str


@dataclass(frozen=True)
class InteractionGraph:
    """One reference firm's pairwise interactions over a period.

    x is the reference firm's normalised bid, y the partner's, both taken
    from the same tender.
    """

    reference_firm: str
    period_tag: str
    points: tuple
    class_label: Label

    def __post_init__(self):
        if not self.points:
            raise ValueError("interaction graph needs at least one point")
        for p in self.points:
            if p.partner_firm == self.reference_firm:
                raise ValueError("reference firm cannot be its own partner")
            if not (0.0 <= p.x <= 1.0 and 0.0 <= p.y <= 1.0):
                raise ValueError(f"point ({p.x}, {p.y}) outside the unit square")

    def to_json(self):
        return json.dumps({
            "reference_firm": self.reference_firm,
            "period_tag": self.period_tag,
            "class_label": int(self.class_label),
            "points": [[p.x, p.y, p.partner_firm, p.tender_id] for p in self.points],
        }, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        pts = tuple(GraphPoint(float(x), float(y), str(f), str(t)) for x, y, f, t in d["points"])
        return cls(d["reference_firm"], d["period_tag"], pts, Label(d["class_label"]))


def min_max_transform(tender):
    """Map each bid to ``(b - b_min) / (b_max - b_min)``.

    Raises DegenerateTender when the tender has fewer than two bids or all
    bids are equal.
    """
    values = [b.bid_value for b in tender.bids]
    lo, hi = min(values), max(values)
    if len(values) < 2 or hi == lo:
        raise DegenerateTender(f"tender {tender.tender_id}: cannot normalise "
                               f"{len(values)} bid(s) spanning [{lo}, {hi}]")
    span = hi - lo
    return [NormalizedBid(tender.tender_id, b.firm_id, (b.bid_value - lo) / span)
            for b in tender.bids]


def build_interaction_graph(ds, reference_firm, period_tag="all"):
    """Collect (reference, partner) normalised bid pairs over all tenders.

    Every co-bidder counts, whatever its own bid count.  Degenerate tenders
    are skipped with a warning.
    """
    points = []
    labels = set()
    for t in ds.tenders:
        if t.bid_of(reference_firm) is None or len(t.bids) < 2:
            continue
        try:
            norm = min_max_transform(t)
        except DegenerateTender as exc:
            log.warning("skipping %s", exc)
            continue
        x = next(nb.value for nb in norm if nb.firm_id == reference_firm)
        for nb in norm:
            if nb.firm_id != reference_firm:
                points.append(GraphPoint(x, nb.value, nb.firm_id, t.tender_id))
        labels.add(t.class_label)
    if not points:
        raise NoEligibleTenders(f"firm {reference_firm} has no tender with co-bidders "
                                f"in period {period_tag}")
    if len(labels) > 1:
        raise MixedLabels(f"firm {reference_firm} in period {period_tag} spans "
                          f"collusive and competitive tenders")
    return InteractionGraph(reference_firm, period_tag, tuple(points), labels.pop())


def build_graphs(ds, min_bids=10, policy=Period.WHOLE):
    """Graphs for every eligible firm, period and class label.

    Eligibility is counted over the whole dataset.  Within each period the
    tenders are further split by class label, so a firm active both before
    and after a cartel breakup gets one graph for each regime.
    """
    firms = eligible_reference_firms(ds, min_bids)
    graphs = []
    for tag, part in partition_periods(ds, policy):
        by_label = {}
        for t in part.tenders:
            by_label.setdefault(t.class_label, []).append(t)
        for label in sorted(by_label, reverse=True):
            sub = Dataset(tuple(by_label[label]), ds.provenance)
            for firm in firms:
                try:
                    graphs.append(build_interaction_graph(sub, firm, tag))
                except NoEligibleTenders:
                    continue
    return graphs


def quadrant_density(g, split=0.5):
    """Share of points in the (lower-left, lower-right, upper-left, upper-right) quadrants.

    Points on a cut line count toward the lower/left side.
    """
    counts = [0, 0, 0, 0]
    for p in g.points:
        counts[(2 if p.y > split else 0) + (1 if p.x > split else 0)] += 1
    n = len(g.points)
    return tuple(c / n for c in counts)


def write_graphs(graphs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(g.to_json() + "\n")


def read_graphs(path):
    with open(path, encoding="utf-8") as fh:
        return [InteractionGraph.from_json(line) for line in fh if line.strip()]
