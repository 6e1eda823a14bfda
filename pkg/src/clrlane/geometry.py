"""Lane representations, prior decoding and thick-line rasterization.

Coordinates are image pixels with the origin at the top-left corner; row
index ``i = 0`` is the top of the image. A lane is stored as ``N``
horizontal positions sampled at the fixed rows ``y_i = H / (N - 1) * i``.

Rasterized masks are kept internally as per-row pixel runs (``lo``/``hi``
column bounds, inclusive). A row of a thick polyline is a short union of
intervals, so pairwise mask IoU reduces to interval overlaps and never
touches the full canvas.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import check_1d, check_positive, check_probability
from .errors import DimensionError, DomainError

#: Stored in ``Lane.xs`` for rows where the lane does not exist. Consumers
#: must test ``Lane.valid``; the magnitude carries no meaning.
INVALID_X = -1.0e5

_EPS = 1e-9


@dataclass(frozen=True)
class LaneGrid:
    """Vertical sampling grid shared by lanes and priors."""

    n_points: int
    image_height: float
    image_width: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise DomainError(f"n_points must be an integer >= 2, got {self.n_points!r}")
        object.__setattr__(self, "n_points", int(self.n_points))
        check_positive(self.image_height, "image_height")
        check_positive(self.image_width, "image_width")

    @property
    def row_step(self):
        return self.image_height / (self.n_points - 1)

    @property
    def ys(self):
        return self.row_step * np.arange(self.n_points, dtype=np.float64)


def _frozen(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _is_contiguous(valid):
    idx = np.flatnonzero(valid)
    return idx.size == 0 or idx[-1] - idx[0] + 1 == idx.size


@dataclass(frozen=True, eq=False)
class Lane:
    """A polyline sampled on ``grid``; rows with ``valid[i] == False`` are absent."""

    grid: LaneGrid
    xs: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        n = self.grid.n_points
        xs = check_1d(self.xs, "xs", length=n)
        valid = check_1d(self.valid, "valid", length=n, dtype=bool)
        if not _is_contiguous(valid):
            raise DomainError("valid rows of a lane must form one contiguous run")
        if not np.all(np.isfinite(xs[valid])):
            raise DomainError("valid rows must carry finite x values")
        xs = np.where(valid, xs, INVALID_X)
        object.__setattr__(self, "xs", _frozen(xs))
        object.__setattr__(self, "valid", _frozen(valid))

    @classmethod
    def from_xs(cls, grid, xs):
        """Build a lane from an x-array where NaN marks absent rows."""
        xs = check_1d(xs, "xs", length=grid.n_points)
        return cls(grid, np.nan_to_num(xs, nan=INVALID_X), np.isfinite(xs))

    @classmethod
    def empty(cls, grid):
        return cls(grid, np.full(grid.n_points, INVALID_X), np.zeros(grid.n_points, bool))

    @property
    def n_valid(self):
        return int(self.valid.sum())

    def xs_or_nan(self):
        return np.where(self.valid, self.xs, np.nan)

    def points(self):
        """Valid ``(x, y)`` points ordered top to bottom, shape ``(k, 2)``."""
        ys = self.grid.ys
        return np.column_stack([self.xs[self.valid], ys[self.valid]])

    def __eq__(self, other):
        if not isinstance(other, Lane):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.xs[self.valid], other.xs[other.valid])
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LanePrior:
    """Parameterized lane proposal.

    ``start_x``/``start_y`` are normalized image coordinates of the start
    point (``start_y = 1`` is the bottom edge), ``theta`` is the angle to the
    x-axis in radians measured counter-clockwise as seen on screen, ``length``
    counts rows from the start row toward the top, and ``offsets`` are
    horizontal pixel offsets from the straight ray through the start point.
    """

    score: float
    start_x: float
    start_y: float
    theta: float
    length: float
    offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "score", check_probability(self.score, "score"))
        for name in ("start_x", "start_y", "theta", "length"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        if self.offsets is None:
            raise DimensionError("offsets are required")
        offsets = check_1d(self.offsets, "offsets")
        if not np.all(np.isfinite(offsets)):
            raise DomainError("offsets must be finite")
        object.__setattr__(self, "offsets", _frozen(offsets))

    @property
    def n_points(self):
        return self.offsets.shape[0]

    def to_vector(self):
        """``[score, start_x, start_y, theta, length, *offsets]``."""
        head = [self.score, self.start_x, self.start_y, self.theta, self.length]
        return np.concatenate([head, self.offsets])

    @classmethod
    def from_vector(cls, vec):
        vec = check_1d(vec, "prior vector")
        if vec.shape[0] < 7:
            raise DimensionError("a prior vector needs 5 scalars and >= 2 offsets")
        return cls(vec[0], vec[1], vec[2], vec[3], vec[4], vec[5:])

    def replace(self, **changes):
        values = dict(
            score=self.score, start_x=self.start_x, start_y=self.start_y,
            theta=self.theta, length=self.length, offsets=self.offsets,
        )
        values.update(changes)
        return LanePrior(**values)

    def __eq__(self, other):
        if not isinstance(other, LanePrior):
            return NotImplemented
        return np.array_equal(self.to_vector(), other.to_vector())

    __hash__ = None


def ray_x(start_x, start_y, theta, ys):
    """x of the straight ray through a start pixel at rows ``ys``."""
    cot = math.cos(theta) / math.sin(theta)
    return start_x + (start_y - np.asarray(ys, dtype=np.float64)) * cot


def start_row(start_y, grid):
    """Index of the lowest grid row lying at or above normalized ``start_y``."""
    row = math.floor(start_y * grid.image_height / grid.row_step + _EPS)
    return min(max(row, -1), grid.n_points - 1)


def decode_prior(prior, grid):
    """Sample a prior on ``grid`` and return the resulting :class:`Lane`.

    The lane spans ``round(length)`` rows counted upward from the start
    row. Rows whose x lies outside ``[0, W)`` are invalid: leading ones are
    skipped (the lane enters from the side) and the lane ends at the first
    one after it has entered, so valid rows stay contiguous.
    """
    if prior.n_points != grid.n_points:
        raise DimensionError(
            f"prior has {prior.n_points} offsets but grid has {grid.n_points} rows"
        )
    if math.sin(prior.theta) == 0.0:
        raise DomainError("theta must not be parallel to the x-axis")
    x0 = prior.start_x * grid.image_width
    y0 = prior.start_y * grid.image_height
    xs = ray_x(x0, y0, prior.theta, grid.ys) + prior.offsets

    first = start_row(prior.start_y, grid)
    n_rows = min(max(int(math.floor(prior.length + 0.5)), 0), first + 1)
    valid = np.zeros(grid.n_points, dtype=bool)
    entered = False
    for i in range(first, first - n_rows, -1):
        if 0.0 <= xs[i] < grid.image_width:
            valid[i] = entered = True
        elif entered:
            break
    return Lane(grid, xs, valid)


def lane_params(lane):
    """Recover ``(start_x, start_y, theta)`` from a sampled lane.

    The start point is the bottom-most valid point; theta is the direction
    from there to the top-most valid point (pi/2 for single-point lanes).
    """
    if lane.n_valid == 0:
        raise DomainError("cannot derive parameters of an empty lane")
    pts = lane.points()
    top, bottom = pts[0], pts[-1]
    g = lane.grid
    if len(pts) == 1:
        theta = math.pi / 2
    else:
        theta = math.atan2(bottom[1] - top[1], top[0] - bottom[0])
    return bottom[0] / g.image_width, bottom[1] / g.image_height, theta


def resample_polyline(points, grid):
    """Linearly interpolate an ``(x, y)`` polyline onto the rows of ``grid``.

    Rows outside the polyline's y-extent, or whose x leaves ``[0, W)``, are
    invalid; if that splits the lane, the longest contiguous run is kept.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        return Lane.empty(grid)
    order = np.argsort(pts[:, 1], kind="stable")
    px, py = pts[order, 0], pts[order, 1]
    ys = grid.ys
    inside = (ys >= py[0] - _EPS) & (ys <= py[-1] + _EPS)
    xs = np.interp(ys, py, px)
    valid = inside & (xs >= 0.0) & (xs < grid.image_width)
    return Lane(grid, xs, _longest_run(valid))


def _longest_run(valid):
    if _is_contiguous(valid):
        return valid
    padded = np.concatenate([[False], valid, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    starts, stops = edges[::2], edges[1::2]
    k = int(np.argmax(stops - starts))
    out = np.zeros_like(valid)
    out[starts[k]:stops[k]] = True
    return out


# ---------------------------------------------------------------------------
# rasterization


@dataclass(frozen=True)
class RowRuns:
    """Pixel masks of ``M`` polylines as per-row column runs.

    ``lo`` and ``hi`` have shape ``(M, H, K)``; run ``k`` of row ``r`` covers
    columns ``lo..hi`` inclusive, and unused slots hold ``lo = 0, hi = -1``.
    """

    lo: np.ndarray
    hi: np.ndarray
    width: int

    @property
    def areas(self):
        return np.clip(self.hi - self.lo + 1, 0, None).sum(axis=(1, 2))

    def to_masks(self):
        m, h, _ = self.lo.shape
        diff = np.zeros((m, h, self.width + 1), dtype=np.int32)
        ok = self.hi >= self.lo
        mi, ri, _ = np.nonzero(ok)
        np.add.at(diff, (mi, ri, self.lo[ok]), 1)
        np.add.at(diff, (mi, ri, self.hi[ok] + 1), -1)
        return np.cumsum(diff, axis=2)[:, :, : self.width] > 0


def _body_row_intervals(x0, y0, x1, y1, y, r):
    """Horizontal extent of the rectangle swept by segment p0-p1 on row ``y``.

    The rectangle is the set of points projecting inside the segment at
    distance at most ``r``. All arguments broadcast; misses give ``lo > hi``.
    """
    dx, dyy = x1 - x0, y1 - y0
    length2 = dx * dx + dyy * dyy
    length = np.sqrt(length2)
    rel = y - y0
    with np.errstate(divide="ignore", invalid="ignore"):
        # projection onto the segment within [0, 1]
        a = (-rel * dyy) / dx
        b = (length2 - rel * dyy) / dx
        proj_lo = np.where(dx != 0, x0 + np.minimum(a, b), -np.inf)
        proj_hi = np.where(dx != 0, x0 + np.maximum(a, b), np.inf)
        proj_ok = (dx != 0) | ((rel * dyy >= 0) & (rel * dyy <= length2))
        # perpendicular distance within r
        c = (rel * dx - r * length) / dyy
        d = (rel * dx + r * length) / dyy
        perp_lo = np.where(dyy != 0, x0 + np.minimum(c, d), -np.inf)
        perp_hi = np.where(dyy != 0, x0 + np.maximum(c, d), np.inf)
        perp_ok = (dyy != 0) | (np.abs(rel * dx) <= r * length)
    lo = np.maximum(proj_lo, perp_lo)
    hi = np.minimum(proj_hi, perp_hi)
    miss = ~(proj_ok & perp_ok & (length2 > 0))
    return np.where(miss, np.inf, lo), np.where(miss, -np.inf, hi)


def _expand_rows(rmin, rmax):
    """Flatten per-item row ranges into ``(item index, row)`` pairs."""
    counts = np.clip(rmax - rmin + 1, 0, None)
    total = int(counts.sum())
    idx = np.repeat(np.arange(counts.size), counts)
    starts = np.cumsum(counts) - counts
    rows = rmin[idx] + (np.arange(total) - starts[idx])
    return idx, rows


def _capsule_pieces(polylines, radius, height):
    """Row intervals whose per-row union is the thick polyline.

    Each segment's capsule is split into its end disks (one chord per vertex
    and row) and its rectangular body. Returns ``(key, lo, hi, monotone)``
    where ``key = polyline * height + row`` and ``monotone`` says every
    polyline has strictly monotonic y.
    """
    verts, segs, monotone = [], [], True
    for k, pts in enumerate(polylines):
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            continue
        dy = np.diff(pts[:, 1])
        monotone = monotone and (bool(np.all(dy > 0)) or bool(np.all(dy < 0)))
        v = np.empty((len(pts), 3))
        v[:, 0] = k
        v[:, 1:] = pts
        verts.append(v)
        s = np.empty((len(pts) - 1, 5))
        s[:, 0] = k
        s[:, 1:3] = pts[:-1]
        s[:, 3:5] = pts[1:]
        segs.append(s)
    if not verts:
        empty = np.empty(0)
        return empty.astype(np.int64), empty, empty, True
    verts = np.concatenate(verts)
    segs = np.concatenate(segs)

    vk, vx, vy = verts.T
    rmin = np.maximum(np.ceil(vy - radius - _EPS), 0).astype(np.int64)
    rmax = np.minimum(np.floor(vy + radius + _EPS), height - 1).astype(np.int64)
    i, rows = _expand_rows(rmin, rmax)
    dy = rows - vy[i]
    half = np.sqrt(np.clip(radius * radius - dy * dy, 0.0, None))
    disk_ok = np.abs(dy) <= radius
    disk_key = vk[i].astype(np.int64) * height + rows
    disk_lo = np.where(disk_ok, vx[i] - half, np.inf)
    disk_hi = np.where(disk_ok, vx[i] + half, -np.inf)

    sk, x0, y0, x1, y1 = segs.T
    seg_len = np.hypot(x1 - x0, y1 - y0)
    with np.errstate(invalid="ignore", divide="ignore"):
        reach = np.where(seg_len > 0, radius * np.abs(x1 - x0) / seg_len, 0.0)
    rmin = np.maximum(np.ceil(np.minimum(y0, y1) - reach - _EPS), 0).astype(np.int64)
    rmax = np.minimum(np.floor(np.maximum(y0, y1) + reach + _EPS), height - 1).astype(np.int64)
    j, brow = _expand_rows(rmin, rmax)
    body_lo, body_hi = _body_row_intervals(x0[j], y0[j], x1[j], y1[j], brow.astype(np.float64), radius)
    body_key = sk[j].astype(np.int64) * height + brow

    key = np.concatenate([disk_key, body_key])
    lo = np.concatenate([disk_lo, body_lo])
    hi = np.concatenate([disk_hi, body_hi])
    return key, lo, hi, monotone


def rasterize_runs(polylines, line_width, canvas):
    """Rasterize several polylines at once into a :class:`RowRuns`.

    A pixel ``(c, r)`` (integer coordinates) is set when its distance to
    some segment between consecutive points is at most ``line_width / 2``.
    """
    check_positive(line_width, "line_width")
    if line_width < 1:
        raise DomainError("line_width must be >= 1")
    height, width = int(canvas[0]), int(canvas[1])
    radius = line_width / 2.0
    m = len(polylines)
    key, flo, fhi, monotone = _capsule_pieces(polylines, radius, height)

    if monotone:
        # consecutive capsules cutting a row share the chord of their joint
        # disk, so every row is a single interval
        lo_f = np.full(m * height, np.inf)
        hi_f = np.full(m * height, -np.inf)
        np.minimum.at(lo_f, key, flo)
        np.maximum.at(hi_f, key, fhi)
        hit = lo_f <= hi_f
        lo = np.zeros(m * height, dtype=np.int64)
        hi = np.full(m * height, -1, dtype=np.int64)
        lo[hit] = np.maximum(np.ceil(lo_f[hit] - _EPS), 0)
        hi[hit] = np.minimum(np.floor(hi_f[hit] + _EPS), width - 1)
        bad = lo > hi
        lo[bad], hi[bad] = 0, -1
        return RowRuns(lo.reshape(m, height, 1), hi.reshape(m, height, 1), width)

    ok = flo <= fhi
    clo = np.maximum(np.ceil(flo[ok] - _EPS), 0).astype(np.int64)
    chi = np.minimum(np.floor(fhi[ok] + _EPS), width - 1).astype(np.int64)
    key = key[ok]
    keep = clo <= chi
    clo, chi, key = clo[keep], chi[keep], key[keep]
    if key.size == 0:
        return RowRuns(
            np.zeros((m, height, 1), dtype=np.int64), np.full((m, height, 1), -1, dtype=np.int64),
            width,
        )

    order = np.lexsort((clo, key))
    clo, chi, key = clo[order], chi[order], key[order]
    # merge overlapping or touching runs within each (polyline, row)
    stride = width + 2
    reach = np.maximum.accumulate(chi + key * stride)
    new = np.ones(key.size, dtype=bool)
    new[1:] = (key[1:] != key[:-1]) | (clo[1:] + key[1:] * stride > reach[:-1] + 1)
    first = np.flatnonzero(new)
    run_lo = clo[first]
    run_hi = np.maximum.reduceat(chi, first)
    run_key = key[first]

    group_start = np.ones(run_key.size, dtype=bool)
    group_start[1:] = run_key[1:] != run_key[:-1]
    group_first = np.maximum.accumulate(np.where(group_start, np.arange(run_key.size), 0))
    slot = np.arange(run_key.size) - group_first
    n_slots = int(slot.max()) + 1

    lo = np.zeros((m * height, n_slots), dtype=np.int64)
    hi = np.full((m * height, n_slots), -1, dtype=np.int64)
    lo[run_key, slot] = run_lo
    hi[run_key, slot] = run_hi
    return RowRuns(lo.reshape(m, height, n_slots), hi.reshape(m, height, n_slots), width)


def rasterize(lane, line_width, canvas):
    """Binary ``(H, W)`` mask of ``lane`` drawn ``line_width`` pixels thick.

    Lanes with fewer than two valid points give an empty mask.
    """
    return rasterize_runs([lane.points()], line_width, canvas).to_masks()[0]


def mask_iou(a, b):
    """Intersection over union of two boolean masks (0 when both are empty)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


def pairwise_runs_iou(a, b):
    """``(Ma, Mb)`` mask-IoU matrix between two :class:`RowRuns` sets."""
    if a.lo.shape[1] != b.lo.shape[1] or a.width != b.width:
        raise DimensionError("run sets were rasterized on different canvases")
    lo = np.maximum(a.lo[:, None, :, :, None], b.lo[None, :, :, None, :])
    hi = np.minimum(a.hi[:, None, :, :, None], b.hi[None, :, :, None, :])
    inter = np.clip(hi - lo + 1, 0, None).sum(axis=(2, 3, 4))
    union = a.areas[:, None] + b.areas[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return iou
