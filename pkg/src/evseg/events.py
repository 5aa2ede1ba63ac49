"""Event containers, event warping and accumulation into count images.

An event camera reports asynchronous per-pixel brightness changes. Each
record carries a pixel location, a microsecond timestamp and a polarity
sign. Segmenting motion works on short time windows of such records:
events are transported ("warped") to a common reference time along the
trajectories of a candidate motion model and accumulated into a count
image whose sharpness scores the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .motion import FourParamMotion, warp_points

MICROS = 1_000_000.0


@dataclass(frozen=True)
class Event:
    """One brightness-change record: pixel (x, y), microsecond timestamp, polarity."""

    x: int
    y: int
    t: int
    p: int

    def __post_init__(self) -> None:
        if self.p not in (-1, 1):
            raise ValueError(f"polarity must be -1 or +1, got {self.p}")
        if self.x < 0 or self.y < 0 or self.t < 0:
            raise ValueError("event coordinates and timestamp must be non-negative")


@dataclass
class EventWindow:
    """Time-sorted events inside [t_start, t_end] on a width x height sensor.

    Coordinates are stored as parallel arrays for vectorized processing;
    `events()` yields `Event` records for item-level access.
    """

    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray
    ps: np.ndarray
    t_start: int
    t_end: int
    width: int
    height: int

    def __post_init__(self) -> None:
        self.xs = np.asarray(self.xs, dtype=np.int64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        self.ts = np.asarray(self.ts, dtype=np.int64)
        self.ps = np.asarray(self.ps, dtype=np.int64)
        n = len(self.xs)
        if not (len(self.ys) == len(self.ts) == len(self.ps) == n):
            raise ValueError("event arrays must have equal length")
        if self.t_end <= self.t_start:
            raise ValueError("window must span a positive time interval")
        if n:
            if np.any(np.diff(self.ts) < 0):
                raise ValueError("events must be sorted by timestamp")
            if self.ts[0] < self.t_start or self.ts[-1] > self.t_end:
                raise ValueError("event timestamps must lie inside the window")
            if (np.any(self.xs < 0) or np.any(self.xs >= self.width)
                    or np.any(self.ys < 0) or np.any(self.ys >= self.height)):
                raise ValueError("event coordinates must lie inside the sensor")
            if not np.all(np.isin(self.ps, (-1, 1))):
                raise ValueError("polarity must be -1 or +1")

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def delta_t(self) -> int:
        return self.t_end - self.t_start

    @property
    def positions(self) -> np.ndarray:
        """(N, 2) float array of raw event pixel positions."""
        return np.stack([self.xs, self.ys], axis=1).astype(float)

    @property
    def center(self) -> np.ndarray:
        """Geometric center of the sensor, used as the rotation/scale origin."""
        return np.array([(self.width - 1) / 2.0, (self.height - 1) / 2.0])

    def events(self):
        for x, y, t, p in zip(self.xs, self.ys, self.ts, self.ps):
            yield Event(int(x), int(y), int(t), int(p))

    def subset(self, index: np.ndarray) -> "EventWindow":
        """Window restricted to the given event indices (same time span)."""
        return EventWindow(self.xs[index], self.ys[index], self.ts[index],
                           self.ps[index], self.t_start, self.t_end,
                           self.width, self.height)

    def slice_time(self, t0: int, t1: int) -> "EventWindow":
        """Events with t0 <= t < t1 as a new window spanning [t0, t1]."""
        keep = (self.ts >= t0) & (self.ts < t1)
        return EventWindow(self.xs[keep], self.ys[keep], self.ts[keep],
                           self.ps[keep], t0, t1, self.width, self.height)

    @classmethod
    def from_events(cls, events, t_start: int, t_end: int,
                    width: int, height: int) -> "EventWindow":
        xs = np.array([e.x for e in events], dtype=np.int64)
        ys = np.array([e.y for e in events], dtype=np.int64)
        ts = np.array([e.t for e in events], dtype=np.int64)
        ps = np.array([e.p for e in events], dtype=np.int64)
        return cls(xs, ys, ts, ps, t_start, t_end, width, height)


@dataclass
class Iwe:
    """Image of warped events: per-pixel accumulated event mass.

    `dropped_mass` holds the kernel mass that fell outside the sensor, so
    `pixels.sum() + dropped_mass` equals the number of accumulated events.
    """

    pixels: np.ndarray
    width: int
    height: int
    t_ref: int
    dropped_mass: float = 0.0

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.shape != (self.height, self.width):
            raise ValueError("pixel grid shape must be (height, width)")


def warp_event(e: Event, m: FourParamMotion, t_ref: int,
               center=(0.0, 0.0)) -> np.ndarray:
    """Transport one event to the reference time along its model trajectory.

    The event moves with the constant velocity the model assigns to its
    location, for (t_ref - t) seconds; the result may fall outside the
    sensor.
    """
    dt = (t_ref - e.t) / MICROS
    return warp_points(np.array([[e.x, e.y]], dtype=float), m, dt, center)[0]


def warp_window(w: EventWindow, m: FourParamMotion, t_ref: int,
                center=None) -> np.ndarray:
    """Warped (N, 2) positions of every event in the window at t_ref."""
    if center is None:
        center = w.center
    dts = (t_ref - w.ts) / MICROS
    return warp_points(w.positions, m, dts, center)


def _splat_kernel(positions: np.ndarray, eps: float):
    """5x5 unit-sum Gaussian splat footprint for each real-valued position.

    Returns integer pixel columns/rows and per-pixel weights, all of shape
    (N, 25). Weights for one event sum to 1 before any bounds clipping.
    """
    base = np.rint(positions).astype(np.int64)
    offs = np.arange(-2, 3)
    ox, oy = np.meshgrid(offs, offs, indexing="xy")
    px = base[:, 0:1] + ox.ravel()[None, :]
    py = base[:, 1:2] + oy.ravel()[None, :]
    dx = px - positions[:, 0:1]
    dy = py - positions[:, 1:2]
    wgt = np.exp(-(dx * dx + dy * dy) / (2.0 * eps * eps))
    wgt /= wgt.sum(axis=1, keepdims=True)
    return px, py, wgt


def accumulate_positions(positions: np.ndarray, width: int, height: int,
                         t_ref: int, smoothing_eps: float = 1.0) -> Iwe:
    """Accumulate already-warped positions into an Iwe (see accumulate_iwe)."""
    if smoothing_eps <= 0:
        raise ValueError("smoothing_eps must be positive")
    grid = np.zeros(height * width)
    dropped = 0.0
    if len(positions):
        px, py, wgt = _splat_kernel(np.asarray(positions, dtype=float),
                                    smoothing_eps)
        inside = (px >= 0) & (px < width) & (py >= 0) & (py < height)
        lin = (py * width + px)[inside]
        grid = np.bincount(lin, weights=wgt[inside], minlength=height * width)
        dropped = float(wgt[~inside].sum())
    return Iwe(grid.reshape(height, width), width, height, t_ref, dropped)


def accumulate_iwe(w: EventWindow, m: FourParamMotion, t_ref: int | None = None,
                   smoothing_eps: float = 1.0, center=None) -> Iwe:
    """Warp every event to t_ref and splat it into a count image.

    Each event contributes a unit-mass truncated Gaussian (5x5 support);
    polarity is ignored. Kernel mass falling outside the sensor is
    recorded in `dropped_mass` instead of the grid. t_ref defaults to the
    window start.
    """
    if t_ref is None:
        t_ref = w.t_start
    warped = warp_window(w, m, t_ref, center)
    return accumulate_positions(warped, w.width, w.height, t_ref, smoothing_eps)


def contrast_variance(i: Iwe) -> float:
    """Per-pixel variance of the count image; sharp alignment scores high."""
    if i.pixels.size == 0:
        raise ValueError("variance of an empty image is undefined")
    return float(np.var(i.pixels))


def sample_bilinear(i: Iwe, positions: np.ndarray) -> np.ndarray:
    """Bilinearly interpolated pixel values at real-valued positions.

    Positions outside the grid sample as zero.
    """
    pts = np.atleast_2d(np.asarray(positions, dtype=float))
    x, y = pts[:, 0], pts[:, 1]
    out = np.zeros(len(pts))
    ok = (x >= 0) & (x <= i.width - 1) & (y >= 0) & (y <= i.height - 1)
    if np.any(ok):
        xo, yo = x[ok], y[ok]
        x0 = np.clip(np.floor(xo).astype(int), 0, i.width - 2) if i.width > 1 \
            else np.zeros(len(xo), dtype=int)
        y0 = np.clip(np.floor(yo).astype(int), 0, i.height - 2) if i.height > 1 \
            else np.zeros(len(yo), dtype=int)
        fx = xo - x0
        fy = yo - y0
        p = i.pixels
        x1 = np.minimum(x0 + 1, i.width - 1)
        y1 = np.minimum(y0 + 1, i.height - 1)
        val = (p[y0, x0] * (1 - fx) * (1 - fy) + p[y0, x1] * fx * (1 - fy)
               + p[y1, x0] * (1 - fx) * fy + p[y1, x1] * fx * fy)
        out[ok] = val
    return out
