"""Text file formats and image rendering.

Event files are plain text: a `# width height` header followed by one
event per line, `t x y p`, with integer microsecond timestamps and
polarity written as 0/1. Labeled files append a label column (255 marks
outliers; clusters are numbered by size, largest first). Scene files are
key=value lines where each `object.shape=` line opens a new object
block. Count images render as binary PGM, labeled events as binary PPM.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .events import EventWindow, Iwe
from .motion import FourParamMotion
from .synth import ObjectSpec, SceneSpec

OUTLIER_FILE_LABEL = 255

PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (255, 225, 25),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (128, 128, 0),
], dtype=np.uint8)
OUTLIER_COLOR = np.array((128, 128, 128), dtype=np.uint8)


class ParseError(Exception):
    def __init__(self, message: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)
        self.line = line


class OrderError(ParseError):
    """Timestamps regressed."""


class BoundsError(ParseError):
    """Coordinates outside the sensor."""


def _open_text(source):
    if hasattr(source, "read"):
        return source
    return open(source, "r", encoding="ascii")


def _read_records(source, expect_label: bool):
    stream = _open_text(source)
    width = height = None
    rows = []
    labels = []
    want = 5 if expect_label else 4
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if width is None:
                parts = line[1:].split()
                if len(parts) != 2:
                    raise ParseError("header must be '# width height'", lineno)
                try:
                    width, height = int(parts[0]), int(parts[1])
                except ValueError:
                    raise ParseError("header fields must be integers", lineno)
            continue
        if width is None:
            raise ParseError("missing '# width height' header", lineno)
        parts = line.split()
        if len(parts) != want:
            raise ParseError(f"expected {want} fields, got {len(parts)}",
                             lineno)
        try:
            vals = [int(x) for x in parts]
        except ValueError:
            raise ParseError("fields must be integers", lineno)
        t, x, y, pol = vals[:4]
        if pol not in (0, 1):
            raise ParseError("polarity must be 0 or 1", lineno)
        if not (0 <= x < width and 0 <= y < height):
            raise BoundsError(f"({x}, {y}) outside {width}x{height}", lineno)
        if rows and t < rows[-1][0]:
            raise OrderError("timestamp regressed", lineno)
        rows.append((t, x, y, 1 if pol else -1))
        if expect_label:
            labels.append(vals[4])
    if width is None:
        raise ParseError("missing '# width height' header")
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    return arr, np.array(labels, dtype=np.int64), width, height


def slice_windows(ts: np.ndarray, delta_t_us: int) -> list[tuple[int, int]]:
    """Consecutive [start, end) spans of delta_t_us covering all events."""
    if len(ts) == 0:
        return []
    t0 = int(ts[0])
    spans = []
    start = t0
    while start <= ts[-1]:
        spans.append((start, start + delta_t_us))
        start += delta_t_us
    return spans


def parse_events(source, delta_t_ms: float = 30.0) -> list[EventWindow]:
    """Read an event file and slice it into consecutive windows."""
    if delta_t_ms <= 0:
        raise ParseError("delta_t_ms must be positive")
    arr, _, width, height = _read_records(source, expect_label=False)
    delta_us = int(round(delta_t_ms * 1000))
    windows = []
    for start, end in slice_windows(arr[:, 0], delta_us):
        keep = (arr[:, 0] >= start) & (arr[:, 0] < end)
        sub = arr[keep]
        windows.append(EventWindow(sub[:, 1], sub[:, 2], sub[:, 0], sub[:, 3],
                                   start, end, width, height))
    return windows


def read_labeled_events(source) -> tuple[EventWindow, np.ndarray]:
    """Companion reader for write_labeled_events; 255 maps back to -1."""
    arr, labels, width, height = _read_records(source, expect_label=True)
    t_end = int(arr[:, 0].max()) + 1 if len(arr) else 1
    w = EventWindow(arr[:, 1], arr[:, 2], arr[:, 0], arr[:, 3],
                    0 if len(arr) == 0 else int(arr[0, 0]), t_end,
                    width, height)
    out = labels.copy()
    out[out == OUTLIER_FILE_LABEL] = -1
    return w, out


def _polarity_bit(ps: np.ndarray) -> np.ndarray:
    return (ps > 0).astype(int)


def write_events(w: EventWindow, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# {w.width} {w.height}\n")
        for t, x, y, p in zip(w.ts, w.xs, w.ys, _polarity_bit(w.ps)):
            fh.write(f"{t} {x} {y} {p}\n")


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters by size, largest first; outliers become 255."""
    labels = np.asarray(labels, dtype=int)
    ids = [int(l) for l in np.unique(labels) if l >= 0]
    ids.sort(key=lambda l: (-int(np.sum(labels == l)), l))
    mapping = {old: new for new, old in enumerate(ids)}
    out = np.full(len(labels), OUTLIER_FILE_LABEL, dtype=int)
    for old, new in mapping.items():
        out[labels == old] = new
    return out


def write_labeled_events(w: EventWindow, labels: np.ndarray, path) -> None:
    """Write `t x y p label` lines with canonical size-ordered labels."""
    labels = np.asarray(labels, dtype=int)
    if len(labels) != len(w):
        raise ValueError("labeling does not match the window")
    canon = canonical_labels(labels)
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"# {w.width} {w.height}\n")
            for t, x, y, p, l in zip(w.ts, w.xs, w.ys, _polarity_bit(w.ps),
                                     canon):
                fh.write(f"{t} {x} {y} {p} {l}\n")
    except OSError as exc:
        raise OSError(f"cannot write labeled events to {path}: {exc}") from exc


def write_ground_truth(w: EventWindow, labels: np.ndarray, motions,
                       path) -> None:
    """Ground-truth file: labeled events plus motion comment lines."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# {w.width} {w.height}\n")
        for i, m in enumerate(motions):
            fh.write(f"# motion {i} {m.m_u!r} {m.m_v!r} {m.m_s!r} "
                     f"{m.m_theta!r}\n")
        for t, x, y, p, l in zip(w.ts, w.xs, w.ys, _polarity_bit(w.ps),
                                 np.asarray(labels, dtype=int)):
            fh.write(f"{t} {x} {y} {p} {l}\n")


def read_ground_truth_motions(source) -> list[FourParamMotion]:
    motions = []
    stream = _open_text(source)
    for line in stream:
        line = line.strip()
        if line.startswith("# motion "):
            parts = line.split()
            motions.append(FourParamMotion(*(float(v) for v in parts[3:7])))
    return motions


def render_iwe(i: Iwe, path) -> None:
    """Grayscale count image as binary PGM, linearly scaled by the max."""
    peak = i.pixels.max()
    if peak > 0:
        gray = np.clip(i.pixels / peak * 255.0, 0, 255).astype(np.uint8)
    else:
        gray = np.zeros_like(i.pixels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{i.width} {i.height}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def render_labeled_events(w: EventWindow, labels: np.ndarray, path) -> None:
    """Color raster of event pixels by cluster, outliers gray, as PPM."""
    labels = np.asarray(labels, dtype=int)
    img = np.zeros((w.height, w.width, 3), dtype=np.uint8)
    order = np.argsort(labels, kind="stable")   # outliers first, then clusters
    for idx in order:
        l = labels[idx]
        color = OUTLIER_COLOR if l < 0 or l == OUTLIER_FILE_LABEL \
            else PALETTE[l % len(PALETTE)]
        img[w.ys[idx], w.xs[idx]] = color
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w.width} {w.height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def parse_scene_spec(source) -> SceneSpec:
    """Scene description from key=value lines.

    Repeated `object.` blocks define foreground patches; each
    `object.shape=` line opens a new one. Motions are comma lists
    `m_u,m_v,m_s,m_theta` (trailing zeros may be omitted).
    """
    stream = _open_text(source)
    top: dict[str, str] = {}
    objects: list[dict[str, str]] = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError("expected key=value", lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key.startswith("object."):
            sub = key[len("object."):]
            if sub == "shape":
                objects.append({})
            if not objects:
                raise ParseError("object block must start with object.shape",
                                 lineno)
            objects[-1][sub] = value
        else:
            top[key] = value

    def motion_of(text: str) -> FourParamMotion:
        vals = [float(v) for v in text.split(",")]
        vals += [0.0] * (4 - len(vals))
        return FourParamMotion(*vals[:4])

    known = {"width", "height", "duration", "seed", "contrast_threshold",
             "background.density", "background.motion"}
    unknown = set(top) - known
    if unknown:
        raise ParseError(f"unknown scene keys: {sorted(unknown)}")
    try:
        spec = SceneSpec(
            width=int(top["width"]), height=int(top["height"]),
            duration=float(top["duration"]),
            background_density=float(top["background.density"]),
            background_motion=motion_of(top["background.motion"]),
            contrast_threshold=float(top.get("contrast_threshold", "0.2")),
            seed=int(top.get("seed", "0")))
    except KeyError as missing:
        raise ParseError(f"missing scene key {missing}")
    for ob in objects:
        shape = ob.get("shape")
        if shape not in ("rectangle", "disk"):
            raise ParseError(f"unknown object shape {shape!r}")
        center = tuple(float(v) for v in ob["center"].split(","))
        if shape == "disk":
            size = float(ob["radius"])
        else:
            size = tuple(float(v) for v in ob["size"].split(","))
        spec.objects.append(ObjectSpec(shape, center, size,
                                       float(ob["density"]),
                                       motion_of(ob["motion"])))
    return spec
