"""Scatter rasterisation of interaction graphs, binary PGM I/O and image manifests."""

import csv
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .bids import Label
from .errors import ConfigError, DataError, MalformedPgm, ShapeMismatch

BINARY = "binary"
ADDITIVE = "additive"
STAMP = 0.25


@dataclass
class GrayscaleImage:
    """Row-major grayscale raster, 0 = background, 1 = full point mass.

    ``meta`` carries reference_firm / period_tag / class_label and is written
    to the PGM comment line.
    """

    pixels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ValueError("pixels must be a 2-D array")
        if not np.all((self.pixels >= 0.0) & (self.pixels <= 1.0)):
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def label(self):
        if "class_label" in self.meta:
            return Label(int(self.meta["class_label"]))
        return Label.UNLABELED


@dataclass(frozen=True)
class RasterConfig:
    size: int = 64
    marker_radius: int = 1
    intensity_mode: str = ADDITIVE

    def __post_init__(self):
        if self.size < 16:
            raise ConfigError(f"raster size must be >= 16, got {self.size}")
        if self.marker_radius < 0:
            raise ConfigError(f"marker radius must be >= 0, got {self.marker_radius}")
        if self.intensity_mode not in (BINARY, ADDITIVE):
            raise ConfigError(f"unknown intensity mode {self.intensity_mode!r}")


def _disc(radius):
    r = np.arange(-radius, radius + 1)
    dr, dc = np.meshgrid(r, r, indexing="ij")
    keep = dr * dr + dc * dc <= radius * radius
    return dr[keep], dc[keep]


def _half_up(v):
    return np.floor(v + 0.5).astype(np.int64)


def rasterize(graph, cfg=RasterConfig()):
    """Stamp each point as a filled disc on a ``size`` x ``size`` grid.

    Column is round(x * (size-1)); row is round((1-y) * (size-1)) so that y
    grows upward.  Rounding is half-up.
    """
    if not graph.points:
        raise ValueError("cannot rasterise an empty graph")
    n = cfg.size
    xs = np.array([p.x for p in graph.points])
    ys = np.array([p.y for p in graph.points])
    cols = _half_up(xs * (n - 1))
    rows = _half_up((1.0 - ys) * (n - 1))
    dr, dc = _disc(cfg.marker_radius)
    rr = (rows[:, None] + dr[None, :]).ravel()
    cc = (cols[:, None] + dc[None, :]).ravel()
    inside = (rr >= 0) & (rr < n) & (cc >= 0) & (cc < n)
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (rr[inside], cc[inside]), 1)
    if cfg.intensity_mode == BINARY:
        pixels = (counts > 0).astype(np.float64)
    else:
        pixels = np.minimum(counts * STAMP, 1.0)
    meta = {
        "reference_firm": graph.reference_firm,
        "period_tag": graph.period_tag,
        "class_label": int(graph.class_label),
    }
    return GrayscaleImage(pixels, meta)


_META_KEYS = ("reference_firm", "period_tag", "class_label")


def _comment(meta):
    parts = []
    for key in _META_KEYS:
        if key in meta:
            value = str(meta[key])
            if re.search(r"\s", value):
                raise ValueError(f"metadata value {value!r} contains whitespace")
            parts.append(f"{key}={value}")
    return " ".join(parts)


def pgm_bytes(img):
    data = _half_up(img.pixels * 255.0).astype(np.uint8)
    header = "P5\n"
    comment = _comment(img.meta)
    if comment:
        header += f"# {comment}\n"
    header += f"{img.width} {img.height}\n255\n"
    return header.encode("ascii") + data.tobytes()


def write_pgm(img, path):
    with open(path, "wb") as fh:
        fh.write(pgm_bytes(img))


def parse_pgm(data):
    """Parse binary PGM (P5, maxval 255) bytes."""
    pos = 0
    tokens = []
    meta = {}

    def skip_space_and_comments():
        nonlocal pos
        while pos < len(data):
            ch = data[pos:pos + 1]
            if ch == b"#":
                end = data.find(b"\n", pos)
                if end < 0:
                    raise MalformedPgm("unterminated comment")
                for item in data[pos + 1:end].decode("ascii", "replace").split():
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k] = v
                pos = end + 1
            elif ch.isspace():
                pos += 1
            else:
                return

    while len(tokens) < 4:
        skip_space_and_comments()
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedPgm("truncated header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise MalformedPgm(f"not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedPgm("non-numeric header field") from None
    if maxval != 255:
        raise MalformedPgm(f"unsupported maxval {maxval}")
    if width <= 0 or height <= 0:
        raise MalformedPgm(f"bad dimensions {width}x{height}")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise MalformedPgm("missing whitespace before raster")
    pos += 1
    raster = data[pos:]
    if len(raster) != width * height:
        raise MalformedPgm(f"expected {width * height} raster bytes, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width) / 255.0
    if "class_label" in meta:
        meta["class_label"] = int(meta["class_label"])
    return GrayscaleImage(pixels, meta)


def read_pgm(path):
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Label
    source: str = ""


def write_manifest(entries, path):
    """Write ``path,label,source`` rows; image paths are stored as given."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "source"])
        for e in entries:
            w.writerow([e.path, int(e.label), e.source])


def read_manifest(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"path", "label"} <= set(reader.fieldnames):
            raise DataError(f"{path}: manifest needs 'path' and 'label' columns")
        entries = []
        for lineno, r in enumerate(reader, start=2):
            try:
                entries.append(ManifestEntry(r["path"], Label.parse(r["label"]),
                                             r.get("source") or ""))
            except ValueError as exc:
                raise DataError(f"{path} row {lineno}: {exc}") from None
        return entries


def load_manifest_images(path):
    """Load every image a manifest lists.

    Returns ``(x, y, entries)`` with x of shape [N, 1, H, W] and y the 0/1
    labels.  Relative image paths resolve against the manifest directory.
    """
    entries = read_manifest(path)
    base = os.path.dirname(os.path.abspath(path))
    images = []
    for e in entries:
        p = e.path if os.path.isabs(e.path) else os.path.join(base, e.path)
        images.append(read_pgm(p).pixels)
    if not images:
        return np.zeros((0, 1, 0, 0)), np.zeros(0, dtype=np.int64), entries
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ShapeMismatch(f"{path}: images differ in size: {sorted(shapes)}")
    x = np.stack(images)[:, None, :, :]
    y = np.array([int(e.label) for e in entries], dtype=np.int64)
    return x, y, entries
