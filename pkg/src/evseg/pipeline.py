"""End-to-end segmentation: tracking, feature clustering, event labeling."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import RunConfig
from .events import EventWindow
from .features import InsufficientFeatures, build_feature_set
from .level1 import ModelPool, progressive_fit
from .level2 import EventLabeling, segment


class PipelineError(Exception):
    """A window could not be segmented."""


def segment_window(w: EventWindow, cfg: RunConfig, seed: int,
                   prev_window: EventWindow | None = None,
                   traces: dict | None = None
                   ) -> tuple[EventLabeling, ModelPool]:
    """Segment one window.

    Feature correspondences come from the previous window when provided
    (tracking_mode "across"), otherwise from the window's two halves.
    """
    if len(w) == 0:
        raise PipelineError("window contains no events")
    try:
        if prev_window is not None and cfg.tracking_mode == "across":
            fs = build_feature_set(prev_window, w,
                                   k_neighbors=cfg.tracker.k_neighbors,
                                   params=cfg.tracker)
        else:
            mid = w.t_start + w.delta_t // 2
            first = w.slice_time(w.t_start, mid)
            second = w.slice_time(mid, w.t_end)
            fs = build_feature_set(first, second,
                                   k_neighbors=cfg.tracker.k_neighbors,
                                   params=cfg.tracker)
    except InsufficientFeatures as exc:
        raise PipelineError(f"feature tracking failed: {exc}") from exc

    rng = np.random.default_rng(seed)
    center = w.center
    l1_trace = None if traces is None else traces.setdefault("level1", [])
    _, pool = progressive_fit(fs, cfg.level1, rng, center,
                              energy_trace=l1_trace)
    if not pool.models:
        raise PipelineError("feature clustering produced no motion instances")

    l2_trace = None if traces is None else traces.setdefault("level2", [])
    exp_trace = None if traces is None else traces.setdefault("expansion", [])
    labeling, refined = segment(w, pool, cfg.level2, t_ref=w.t_start,
                                center=center, energy_trace=l2_trace,
                                expansion_trace=exp_trace)
    return labeling, refined


def _segment_indexed(args):
    idx, w, cfg, prev = args
    labeling, pool = segment_window(w, cfg, cfg.seed + idx, prev)
    return idx, labeling, pool


def segment_stream(windows: list[EventWindow], cfg: RunConfig):
    """Segment every window; per-window seeds keep runs reproducible.

    Windows are independent once sliced, so jobs > 1 distributes them
    over processes while preserving output order.
    """
    tasks = []
    for i, w in enumerate(windows):
        prev = windows[i - 1] if (i > 0 and cfg.tracking_mode == "across") \
            else None
        tasks.append((i, w, cfg, prev))
    results: list = [None] * len(windows)
    if cfg.jobs > 1 and len(windows) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for idx, labeling, mp in pool.map(_segment_indexed, tasks):
                results[idx] = (labeling, mp)
    else:
        for task in tasks:
            idx, labeling, mp = _segment_indexed(task)
            results[idx] = (labeling, mp)
    return results
