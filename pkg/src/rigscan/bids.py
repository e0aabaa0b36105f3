"""Bid records, tenders and datasets; CSV ingest and export."""

import configparser
import csv
import datetime as dt
import enum
import logging
import math
from collections import Counter
from dataclasses import dataclass, fields
from typing import Optional

from .errors import DuplicateBid, EmptyDataset, ParseError

log = logging.getLogger(__name__)


class Label(enum.IntEnum):
    UNLABELED = -1
    COMPETITIVE = 0
    COLLUSIVE = 1

    @classmethod
    def parse(cls, text):
        t = str(text).strip().lower()
        if t in ("1", "collusive", "collusion", "cartel"):
            return cls.COLLUSIVE
        if t in ("0", "competitive", "competition"):
            return cls.COMPETITIVE
        if t in ("", "-1", "unlabeled", "unknown"):
            return cls.UNLABELED
        raise ValueError(f"unrecognised class label {text!r}")


class Period(enum.Enum):
    WHOLE = "whole"
    YEARLY = "yearly"


@dataclass(frozen=True)
class BidRecord:
    tender_id: str
    firm_id: str
    bid_value: float
    date: dt.date
    region: str
    class_label: Label
    contract_class: Optional[str] = None

    def __post_init__(self):
        if not (self.bid_value > 0 and math.isfinite(self.bid_value)):
            raise ValueError(f"bid value must be positive and finite, got {self.bid_value!r}")


@dataclass(frozen=True)
class Tender:
    """All bids of one procurement auction.

    Single-bid tenders are allowed so that ingest stays lossless; they never
    produce graph points because the min-max transform rejects them.
    """

    tender_id: str
    date: dt.date
    bids: tuple
    class_label: Label

    def __post_init__(self):
        if not self.bids:
            raise ValueError(f"tender {self.tender_id} has no bids")
        firms = set()
        for b in self.bids:
            if b.tender_id != self.tender_id:
                raise ValueError(f"bid for {b.tender_id} filed under tender {self.tender_id}")
            if b.class_label != self.class_label:
                raise ValueError(f"tender {self.tender_id} mixes class labels")
            if b.firm_id in firms:
                raise DuplicateBid(f"firm {b.firm_id} bids twice in tender {self.tender_id}")
            firms.add(b.firm_id)

    @property
    def firms(self):
        return [b.firm_id for b in self.bids]

    def bid_of(self, firm_id):
        for b in self.bids:
            if b.firm_id == firm_id:
                return b
        return None


@dataclass(frozen=True)
class Dataset:
    tenders: tuple
    provenance: str = ""

    def __post_init__(self):
        seen = set()
        for t in self.tenders:
            if t.tender_id in seen:
                raise ValueError(f"duplicate tender id {t.tender_id}")
            seen.add(t.tender_id)

    def __len__(self):
        return len(self.tenders)

    def records(self):
        for t in self.tenders:
            yield from t.bids

    def firms(self):
        return sorted({b.firm_id for b in self.records()})

    def bid_counts(self):
        return Counter(b.firm_id for b in self.records())

    @classmethod
    def from_records(cls, records, provenance=""):
        """Group records into tenders, keeping first-seen order of tenders and bids."""
        grouped = {}
        for r in records:
            grouped.setdefault(r.tender_id, []).append(r)
        tenders = []
        for tid, bids in grouped.items():
            tenders.append(Tender(tid, bids[0].date, tuple(bids), bids[0].class_label))
        return cls(tuple(tenders), provenance)


COLUMN_FIELDS = ("tender_id", "firm_id", "bid_value", "date", "region",
                 "class_label", "contract_class")


@dataclass(frozen=True)
class ColumnMapping:
    """Maps each record field to a CSV header name.

    ``contract_class`` may be mapped to ``None`` when the file has no such
    column.  Load from an INI-style file with a ``[columns]`` section::

        [columns]
        tender_id = auction
        bid_value = amount_chf
    """

    tender_id: str = "tender_id"
    firm_id: str = "firm_id"
    bid_value: str = "bid_value"
    date: str = "date"
    region: str = "region"
    class_label: str = "class_label"
    contract_class: Optional[str] = "contract_class"

    @classmethod
    def from_file(cls, path):
        cp = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
        if not cp.has_section("columns"):
            raise ValueError(f"{path}: missing [columns] section")
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, value in cp.items("columns"):
            if key not in known:
                raise ValueError(f"{path}: unknown field {key!r}")
            kw[key] = value.strip() or None
        return cls(**kw)


def _parse_row(row, mapping, lineno, has_contract_class):
    def get(field):
        value = row.get(getattr(mapping, field))
        if value is None:
            raise ParseError(lineno, f"missing value for {field}")
        return value.strip()

    tender_id, firm_id = get("tender_id"), get("firm_id")
    if not tender_id or not firm_id:
        raise ParseError(lineno, "empty tender or firm id")
    raw = get("bid_value")
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(lineno, f"bid value {raw!r} is not a decimal number") from None
    if not (value > 0 and math.isfinite(value)):
        raise ParseError(lineno, f"bid value {raw!r} is not strictly positive")
    try:
        date = dt.date.fromisoformat(get("date"))
    except ValueError:
        raise ParseError(lineno, f"date {row.get(mapping.date)!r} is not YYYY-MM-DD") from None
    try:
        label = Label.parse(get("class_label"))
    except ValueError as exc:
        raise ParseError(lineno, str(exc)) from None
    cc = None
    if has_contract_class:
        cc = (row.get(mapping.contract_class) or "").strip() or None
    return BidRecord(tender_id, firm_id, value, date, get("region"), label, cc)


def ingest_csv(path, mapping=None, provenance=None):
    """Read a bid CSV into a :class:`Dataset`.

    Row numbers in errors count the header as row 1.  Every tender must carry
    a single date and class label.
    """
    mapping = mapping or ColumnMapping()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [getattr(mapping, f) for f in COLUMN_FIELDS[:-1]]
        missing = [c for c in required if c not in header]
        if missing:
            raise ParseError(1, f"missing columns: {', '.join(missing)}")
        has_cc = mapping.contract_class is not None and mapping.contract_class in header

        records = []
        seen = {}
        first = {}
        for lineno, row in enumerate(reader, start=2):
            rec = _parse_row(row, mapping, lineno, has_cc)
            key = (rec.tender_id, rec.firm_id)
            if key in seen:
                raise DuplicateBid(f"row {lineno}: firm {rec.firm_id} already bid in tender "
                                   f"{rec.tender_id} (row {seen[key]})")
            seen[key] = lineno
            ref = first.setdefault(rec.tender_id, rec)
            if rec.class_label != ref.class_label:
                raise ParseError(lineno, f"tender {rec.tender_id} mixes class labels")
            if rec.date != ref.date:
                raise ParseError(lineno, f"tender {rec.tender_id} has more than one date")
            records.append(rec)
    if not records:
        raise EmptyDataset(f"{path}: no bid rows")
    return Dataset.from_records(records, provenance if provenance is not None else str(path))


def _format_value(v):
    # repr round-trips floats exactly
    return repr(float(v))


def write_csv(ds, path, mapping=None):
    mapping = mapping or ColumnMapping()
    cols = [f for f in COLUMN_FIELDS if getattr(mapping, f) is not None]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([getattr(mapping, f) for f in cols])
        for r in ds.records():
            row = {
                "tender_id": r.tender_id,
                "firm_id": r.firm_id,
                "bid_value": _format_value(r.bid_value),
                "date": r.date.isoformat(),
                "region": r.region,
                "class_label": int(r.class_label),
                "contract_class": r.contract_class or "",
            }
            w.writerow([row[f] for f in cols])


def eligible_reference_firms(ds, min_bids=10):
    counts = ds.bid_counts()
    return sorted(f for f, n in counts.items() if n >= min_bids)


def partition_periods(ds, policy=Period.WHOLE):
    """Split a dataset into ``(period_tag, Dataset)`` pairs.

    ``WHOLE`` gives a single ``"all"`` partition; ``YEARLY`` one partition per
    calendar year that has tenders, tagged by the year.
    """
    policy = Period(policy)
    if policy is Period.WHOLE:
        return [("all", ds)]
    by_year = {}
    for t in ds.tenders:
        by_year.setdefault(t.date.year, []).append(t)
    return [(str(y), Dataset(tuple(by_year[y]), ds.provenance)) for y in sorted(by_year)]
