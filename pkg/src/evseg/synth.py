"""Synthetic event streams with exact per-event ground truth.

The generator seeds random texture points on a moving background and on
independently moving foreground patches, transports every point along
its layer's motion and emits an event whenever the accumulated travel
since the last emission reaches one pixel (scaled by the contrast
threshold). Foreground occludes background: an event is suppressed when
its pixel lies under a patch at emission time. The result is the exact
event geometry the segmentation pipeline consumes, with known labels and
motions for every event.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import EventWindow, MICROS
from .motion import FourParamMotion, inverse_warp_points, warp_points


class InvalidSpec(Exception):
    """Scene description cannot produce a valid event stream."""


BASE_CONTRAST = 0.2  # contrast threshold that corresponds to 1 px per event


@dataclass(frozen=True)
class ObjectSpec:
    """A textured moving patch: 'rectangle' with size (w, h) or 'disk' with a radius."""

    shape: str
    center: tuple[float, float]
    size: object                 # (w, h) for rectangle, radius for disk
    density: float               # texture points per px^2
    motion: FourParamMotion

    def half_extent(self) -> tuple[float, float]:
        if self.shape == "rectangle":
            w, h = self.size
            return w / 2.0, h / 2.0
        if self.shape == "disk":
            r = float(self.size)
            return r, r
        raise InvalidSpec(f"unknown object shape {self.shape!r}")

    def area(self) -> float:
        if self.shape == "rectangle":
            w, h = self.size
            return float(w) * float(h)
        return float(np.pi) * float(self.size) ** 2

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership of (N, 2) points in the patch at t = 0."""
        pts = np.atleast_2d(points)
        dx = pts[:, 0] - self.center[0]
        dy = pts[:, 1] - self.center[1]
        if self.shape == "rectangle":
            hw, hh = self.half_extent()
            return (np.abs(dx) <= hw) & (np.abs(dy) <= hh)
        return dx * dx + dy * dy <= float(self.size) ** 2


@dataclass
class SceneSpec:
    """Sensor geometry, duration and the moving layers of a synthetic scene."""

    width: int
    height: int
    duration: float              # seconds
    background_density: float    # texture points per px^2
    background_motion: FourParamMotion
    objects: list = field(default_factory=list)
    contrast_threshold: float = BASE_CONTRAST
    seed: int = 0


@dataclass
class GroundTruth:
    """Per-event labels (0 = background, i = object i), motions, and the
    label map at the end of the window (foreground overwrites background)."""

    labels: np.ndarray
    motions: list
    label_map: np.ndarray


def _validate(spec: SceneSpec) -> None:
    if spec.duration <= 0:
        raise InvalidSpec("duration must be positive")
    if spec.background_density <= 0:
        raise InvalidSpec("background density must be positive")
    if spec.contrast_threshold <= 0:
        raise InvalidSpec("contrast threshold must be positive")
    for i, obj in enumerate(spec.objects):
        if obj.density <= 0:
            raise InvalidSpec(f"object {i} density must be positive")
        hw, hh = obj.half_extent()
        cx, cy = obj.center
        if (cx - hw < 0 or cx + hw > spec.width - 1
                or cy - hh < 0 or cy + hh > spec.height - 1):
            raise InvalidSpec(f"object {i} exceeds the sensor at t = 0")
    motions = [spec.background_motion] + [o.motion for o in spec.objects]
    if all(not np.any(m.as_array()) for m in motions):
        raise InvalidSpec("every layer is static; no events would be produced")


def _sample_points(spec: SceneSpec, rng: np.random.Generator):
    """Texture point positions per layer, background first."""
    layers = []
    n_bg = int(round(spec.background_density * spec.width * spec.height))
    bg = np.stack([rng.uniform(0, spec.width - 1, n_bg),
                   rng.uniform(0, spec.height - 1, n_bg)], axis=1)
    layers.append(bg)
    for obj in spec.objects:
        n = max(1, int(round(obj.density * obj.area())))
        if obj.shape == "rectangle":
            hw, hh = obj.half_extent()
            pts = np.stack([rng.uniform(obj.center[0] - hw, obj.center[0] + hw, n),
                            rng.uniform(obj.center[1] - hh, obj.center[1] + hh, n)],
                           axis=1)
        else:
            rad = float(obj.size) * np.sqrt(rng.uniform(0, 1, n))
            ang = rng.uniform(0, 2 * np.pi, n)
            pts = np.stack([obj.center[0] + rad * np.cos(ang),
                            obj.center[1] + rad * np.sin(ang)], axis=1)
        layers.append(pts)
    return layers


def _emit_layer(points: np.ndarray, motion: FourParamMotion, spec: SceneSpec,
                center: np.ndarray):
    """Event positions/times for one layer's texture points.

    Returns (pix (M,2) int, t_us (M,), point_id (M,), k (M,), pol (M,));
    already restricted to the sensor bounds.
    """
    step_px = 1.0 * spec.contrast_threshold / BASE_CONTRAST
    vel = warp_points(points, motion, 1.0, center) - points
    speed = np.hypot(vel[:, 0], vel[:, 1])
    counts = np.floor(speed * spec.duration / step_px + 1e-9).astype(int)
    counts[speed <= 0] = 0
    total = int(counts.sum())
    if total == 0:
        empty_i = np.empty(0, dtype=int)
        return (np.empty((0, 2), dtype=int), empty_i, empty_i, empty_i, empty_i)
    idx = np.repeat(np.arange(len(points)), counts)
    starts = np.repeat(np.cumsum(counts) - counts, counts)
    ks = np.arange(total) - starts + 1
    t = ks * step_px / speed[idx]
    pos = points[idx] + vel[idx] * t[:, None]
    pix = np.rint(pos).astype(int)
    pol = 1 - 2 * ((ks - 1) % 2)
    t_us = np.rint(t * MICROS).astype(np.int64)
    inb = ((pix[:, 0] >= 0) & (pix[:, 0] < spec.width)
           & (pix[:, 1] >= 0) & (pix[:, 1] < spec.height))
    return pix[inb], t_us[inb], idx[inb], ks[inb], pol[inb]


def _occluded(pix: np.ndarray, t_us: np.ndarray, objects, start: int,
              spec: SceneSpec, center: np.ndarray) -> np.ndarray:
    """True where an event pixel lies under any object with index >= start."""
    out = np.zeros(len(pix), dtype=bool)
    dts = t_us / MICROS
    for obj in objects[start:]:
        origin = inverse_warp_points(pix.astype(float), obj.motion, dts, center)
        out |= obj.contains(origin)
    return out


def generate_scene(spec: SceneSpec) -> tuple[EventWindow, GroundTruth]:
    """Build the event window and exact ground truth for a scene."""
    _validate(spec)
    rng = np.random.default_rng(spec.seed)
    center = np.array([(spec.width - 1) / 2.0, (spec.height - 1) / 2.0])
    layers = _sample_points(spec, rng)
    motions = [spec.background_motion] + [o.motion for o in spec.objects]

    all_pix, all_t, all_pol, all_label = [], [], [], []
    sort_point, sort_k = [], []
    for li, (pts, m) in enumerate(zip(layers, motions)):
        pix, t_us, pid, ks, pol = _emit_layer(pts, m, spec, center)
        if len(pix):
            # layer li is occluded by objects stacked above it
            occ = _occluded(pix, t_us, spec.objects, li, spec, center)
            keep = ~occ
            pix, t_us, pid, ks, pol = (pix[keep], t_us[keep], pid[keep],
                                       ks[keep], pol[keep])
        all_pix.append(pix)
        all_t.append(t_us)
        all_pol.append(pol)
        all_label.append(np.full(len(pix), li, dtype=int))
        sort_point.append(pid)
        sort_k.append(ks)

    pix = np.concatenate(all_pix)
    t_us = np.concatenate(all_t)
    pol = np.concatenate(all_pol)
    labels = np.concatenate(all_label)
    pid = np.concatenate(sort_point)
    ks = np.concatenate(sort_k)

    order = np.lexsort((ks, pid, labels, t_us))
    t_end = int(round(spec.duration * MICROS))
    window = EventWindow(pix[order, 0], pix[order, 1], t_us[order], pol[order],
                         t_start=0, t_end=t_end,
                         width=spec.width, height=spec.height)

    label_map = np.zeros((spec.height, spec.width), dtype=int)
    gx, gy = np.meshgrid(np.arange(spec.width), np.arange(spec.height))
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(float)
    for i, obj in enumerate(spec.objects, start=1):
        origin = inverse_warp_points(grid, obj.motion, spec.duration, center)
        inside = obj.contains(origin).reshape(spec.height, spec.width)
        label_map[inside] = i

    return window, GroundTruth(labels[order], motions, label_map)


def make_correspondences(points: np.ndarray, m: FourParamMotion, dt: float,
                         center=(0.0, 0.0), noise: float = 0.0,
                         rng: np.random.Generator | None = None) -> list:
    """Feature pairs generated exactly by a model, optionally perturbed.

    Gaussian noise of the given sigma (px) is added to the tracked
    endpoint only, mimicking tracker error.
    """
    from .motion import Correspondence

    pts = np.atleast_2d(np.asarray(points, dtype=float))
    curr = warp_points(pts, m, dt, center)
    if noise > 0:
        if rng is None:
            rng = np.random.default_rng(0)
        curr = curr + rng.normal(0.0, noise, curr.shape)
    return [Correspondence((float(p[0]), float(p[1])),
                           (float(c[0]), float(c[1])), dt)
            for p, c in zip(pts, curr)]
