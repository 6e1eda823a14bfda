"""Readers and writers for CULane ``.lines.txt`` and TuSimple JSON-lines files."""

from dataclasses import dataclass, field
import json
import math
import os
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError
from .geometry import resample_polyline

TUSIMPLE_ABSENT = -2


# ---------------------------------------------------------------------------
# CULane


@dataclass(frozen=True)
class CulaneRecord:
    image_path: str
    lanes: list = field(default_factory=list)


def parse_culane_lines(text, source=None):
    """Parse ``.lines.txt`` content into a list of ``(k, 2)`` point arrays.

    Each non-blank line holds one lane as ``x1 y1 x2 y2 ...``. A lane needs
    at least two points with strictly monotonic y.
    """
    lanes = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) % 2:
            raise ParseError(f"odd number of coordinates ({len(tokens)})", lineno, source)
        try:
            values = [float(t) for t in tokens]
        except ValueError as exc:
            raise ParseError(f"non-numeric token: {exc}", lineno, source) from None
        pts = np.array(values, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise ParseError("non-finite coordinate", lineno, source)
        if len(pts) < 2:
            raise ParseError("a lane needs at least two points", lineno, source)
        dy = np.diff(pts[:, 1])
        if not (np.all(dy > 0) or np.all(dy < 0)):
            raise ParseError("y must be strictly monotonic within a lane", lineno, source)
        lanes.append(pts)
    return lanes


def write_culane_lines(lanes):
    out = []
    for pts in lanes:
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        out.append(" ".join(f"{x:.4f} {y:.4f}" for x, y in pts))
    return "".join(line + "\n" for line in out)


def culane_label_path(root, image_path):
    """``<root>/<image stem>.lines.txt`` for an image path from a list file."""
    rel = image_path.lstrip("/\\")
    stem, _ = os.path.splitext(rel)
    return Path(root) / (stem + ".lines.txt")


def read_culane_file(path, missing_ok=False):
    path = Path(path)
    if missing_ok and not path.exists():
        return []
    return parse_culane_lines(path.read_text(), source=str(path))


def write_culane_file(path, lanes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(write_culane_lines(lanes))


def culane_lanes_on_grid(point_lanes, grid):
    return [resample_polyline(pts, grid) for pts in point_lanes]


# ---------------------------------------------------------------------------
# TuSimple


@dataclass(frozen=True, eq=False)
class TusimpleRecord:
    """One TuSimple image; lane arrays hold NaN where the file has ``-2``."""

    raw_file: str
    h_samples: tuple
    lanes: list
    run_time: float = None

    def __post_init__(self):
        n = len(self.h_samples)
        for k, lane in enumerate(self.lanes):
            if len(lane) != n:
                raise FormatError(
                    f"lane {k} has {len(lane)} entries but h_samples has {n}", key="lanes"
                )

    def __eq__(self, other):
        if not isinstance(other, TusimpleRecord):
            return NotImplemented
        return (
            self.raw_file == other.raw_file
            and list(self.h_samples) == list(other.h_samples)
            and len(self.lanes) == len(other.lanes)
            and all(np.array_equal(a, b, equal_nan=True) for a, b in zip(self.lanes, other.lanes))
            and self.run_time == other.run_time
        )

    __hash__ = None

    def polylines(self):
        """Valid ``(x, y)`` points of each lane."""
        ys = np.asarray(self.h_samples, dtype=np.float64)
        out = []
        for lane in self.lanes:
            ok = np.isfinite(lane)
            out.append(np.column_stack([lane[ok], ys[ok]]))
        return out


def _number(value, key, lineno):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"{key} must hold numbers, got {value!r}", key=key, lineno=lineno)
    return value


def parse_tusimple_json(line, lineno=None):
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(obj, dict):
        raise FormatError("record must be a JSON object", lineno=lineno)
    for key in ("lanes", "h_samples", "raw_file"):
        if key not in obj:
            raise FormatError(f"missing key {key!r}", key=key, lineno=lineno)
    if not isinstance(obj["raw_file"], str):
        raise FormatError("raw_file must be a string", key="raw_file", lineno=lineno)
    if not isinstance(obj["h_samples"], list) or not isinstance(obj["lanes"], list):
        raise FormatError("lanes and h_samples must be lists", key="lanes", lineno=lineno)
    h_samples = tuple(_number(v, "h_samples", lineno) for v in obj["h_samples"])
    lanes = []
    for k, lane in enumerate(obj["lanes"]):
        if not isinstance(lane, list):
            raise FormatError(f"lane {k} must be a list", key="lanes", lineno=lineno)
        if len(lane) != len(h_samples):
            raise FormatError(
                f"lane {k} has {len(lane)} entries but h_samples has {len(h_samples)}",
                key="lanes", lineno=lineno,
            )
        xs = np.array([_number(v, "lanes", lineno) for v in lane], dtype=np.float64)
        xs[xs == TUSIMPLE_ABSENT] = np.nan
        lanes.append(xs)
    run_time = obj.get("run_time")
    if run_time is not None:
        _number(run_time, "run_time", lineno)
    return TusimpleRecord(obj["raw_file"], h_samples, lanes, run_time)


def write_tusimple_json(record):
    """Serialize one record as a JSON line; coordinates are written as integers."""
    lanes = [
        [TUSIMPLE_ABSENT if not math.isfinite(x) else int(round(x)) for x in lane]
        for lane in record.lanes
    ]
    obj = {
        "lanes": lanes,
        "h_samples": [int(round(h)) for h in record.h_samples],
        "raw_file": record.raw_file,
    }
    if record.run_time is not None:
        obj["run_time"] = record.run_time
    return json.dumps(obj, separators=(", ", ": "))


def read_tusimple_file(path):
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                records.append(parse_tusimple_json(line, lineno))
    return records


def write_tusimple_file(path, records):
    Path(path).write_text("".join(write_tusimple_json(r) + "\n" for r in records))


# ---------------------------------------------------------------------------
# list files


def load_list(path):
    """Image paths from a list file, in order, duplicates kept.

    Only the first whitespace-separated token of each line is used, so
    annotated train lists (path followed by labels) load too.
    """
    with open(path, newline=None) as fh:
        return [line.split()[0] for line in fh if line.strip()]


def load_category_lists(mapping):
    """``{image path: category}`` from ``{category: list file}``."""
    out = {}
    for category, path in mapping.items():
        for image in load_list(path):
            out.setdefault(image, category)
    return out


@dataclass(frozen=True)
class PartitionCheck:
    missing: list
    """Main-list images in no category list."""
    extra: list
    """Category-list images absent from the main list."""
    overlapping: list
    """Images listed under more than one category."""

    @property
    def ok(self):
        return not (self.missing or self.extra or self.overlapping)


def check_partition(main, category_lists):
    """Compare the main list with per-category lists (``{category: [paths]}``)."""
    seen = {}
    for category, paths in category_lists.items():
        for p in set(paths):
            seen.setdefault(p, []).append(category)
    main_set = set(main)
    return PartitionCheck(
        missing=sorted(main_set - seen.keys()),
        extra=sorted(seen.keys() - main_set),
        overlapping=sorted(p for p, cats in seen.items() if len(cats) > 1),
    )
