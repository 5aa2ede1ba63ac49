"""Corner detection and pyramidal flow tracking on event count images.

Features are detected on the raw (uncompensated) count image of one
window and tracked into the next window's image, yielding the feature
correspondences that seed motion hypotheses. A k-nearest-neighbour graph
over the source positions provides the spatial coherence structure used
by the clustering stage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .events import EventWindow, Iwe, accumulate_iwe
from .motion import Correspondence, FourParamMotion

MIN_FEATURES = 4              # twice the minimal sample size
LK_MAX_ITERS = 30
LK_CONVERGENCE = 0.01         # px update
LK_MIN_EIGENVALUE = 1e-4      # of the per-pixel-normalized normal matrix


class InsufficientFeatures(Exception):
    """Too few feature correspondences survived tracking."""


@dataclass(frozen=True)
class TrackerParams:
    """Detector/tracker defaults sized for 240x180 to 346x260 sensors."""

    max_corners: int = 300
    quality_level: float = 0.05
    min_distance: float = 7.0
    lk_levels: int = 3
    lk_win: int = 15
    blur_sigma: float = 1.0
    k_neighbors: int = 6


@dataclass
class FeatureSet:
    """Tracked correspondences plus the neighbour graph over x_prev."""

    x_prev: np.ndarray            # (N, 2)
    x_curr: np.ndarray            # (N, 2)
    dt: float                     # seconds
    edges: np.ndarray             # (E, 2) int, each undirected edge once

    def __len__(self) -> int:
        return len(self.x_prev)

    def correspondence(self, i: int) -> Correspondence:
        return Correspondence(tuple(self.x_prev[i]), tuple(self.x_curr[i]),
                              self.dt)

    def correspondences(self, index=None) -> list:
        idx = range(len(self)) if index is None else index
        return [self.correspondence(int(i)) for i in idx]


def _min_eig_scores(img: np.ndarray) -> np.ndarray:
    """Smaller structure-tensor eigenvalue per pixel (Sobel, 5x5 window)."""
    ix = ndimage.sobel(img, axis=1, mode="nearest")
    iy = ndimage.sobel(img, axis=0, mode="nearest")
    sxx = ndimage.uniform_filter(ix * ix, size=5, mode="nearest")
    syy = ndimage.uniform_filter(iy * iy, size=5, mode="nearest")
    sxy = ndimage.uniform_filter(ix * iy, size=5, mode="nearest")
    half_tr = (sxx + syy) / 2.0
    rad = np.sqrt(((sxx - syy) / 2.0) ** 2 + sxy * sxy)
    return half_tr - rad


def detect_corners(i: Iwe, max_n: int = 300, quality_level: float = 0.05,
                   min_distance: float = 7.0) -> np.ndarray:
    """Strongest min-eigenvalue corners, greedily spaced by min_distance.

    Returns up to max_n (x, y) points sorted by score descending; empty
    on featureless images.
    """
    if not 0 < quality_level < 1:
        raise ValueError("quality_level must lie in (0, 1)")
    if min_distance < 1:
        raise ValueError("min_distance must be at least 1 px")
    score = _min_eig_scores(i.pixels)
    score[:2, :] = score[-2:, :] = 0.0        # window/border artifacts
    score[:, :2] = score[:, -2:] = 0.0
    smax = score.max()
    if smax <= 0:
        return np.empty((0, 2))
    ys, xs = np.nonzero(score > quality_level * smax)
    vals = score[ys, xs]
    order = np.argsort(-vals, kind="stable")
    picked: list[tuple[float, float]] = []
    min_d2 = min_distance * min_distance
    for k in order:
        x, y = float(xs[k]), float(ys[k])
        if all((x - px) ** 2 + (y - py) ** 2 >= min_d2 for px, py in picked):
            picked.append((x, y))
            if len(picked) >= max_n:
                break
    return np.array(picked).reshape(-1, 2)


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img.astype(float)]
    for _ in range(levels - 1):
        blurred = ndimage.gaussian_filter(pyr[-1], 1.0, mode="nearest")
        pyr.append(blurred[::2, ::2])
    return pyr


def _patch(img: np.ndarray, cx: float, cy: float, half: int) -> np.ndarray:
    dy, dx = np.mgrid[-half:half + 1, -half:half + 1]
    coords = np.stack([dy + cy, dx + cx])
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def track_lk(prev: Iwe, curr: Iwe, points: np.ndarray, levels: int = 3,
             win: int = 15) -> list[tuple[np.ndarray, np.ndarray, bool]]:
    """Iterative coarse-to-fine flow per point.

    Returns (point, tracked point, ok) triples. Tracking fails when the
    tracked point leaves the image or the normal matrix of the local
    system is near-singular.
    """
    if prev.pixels.shape != curr.pixels.shape:
        raise ValueError("images must share dimensions")
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if win < 5 or win % 2 == 0:
        raise ValueError("win must be odd and >= 5")
    half = (win - 1) // 2
    pyr_prev = _pyramid(prev.pixels, levels)
    pyr_curr = _pyramid(curr.pixels, levels)
    grads = [np.gradient(p) for p in pyr_prev]   # (d/dy, d/dx) per level

    results = []
    npix = float(win * win)
    for pt in np.atleast_2d(points):
        flow = np.zeros(2)
        ok = True
        for lvl in range(levels - 1, -1, -1):
            img_p = pyr_prev[lvl]
            img_c = pyr_curr[lvl]
            s = 2.0 ** lvl
            px, py = pt[0] / s, pt[1] / s
            gy, gx = grads[lvl]
            t_patch = _patch(img_p, px, py, half)
            ix = _patch(gx, px, py, half)
            iy = _patch(gy, px, py, half)
            G = np.array([[np.sum(ix * ix), np.sum(ix * iy)],
                          [np.sum(ix * iy), np.sum(iy * iy)]])
            eigs = np.linalg.eigvalsh(G / npix)
            if eigs[0] < LK_MIN_EIGENVALUE:
                ok = False
                break
            d0 = flow / s
            d = d0.copy()
            h, w = img_c.shape
            for _ in range(LK_MAX_ITERS):
                c_patch = _patch(img_c, px + d[0], py + d[1], half)
                err = t_patch - c_patch
                b = np.array([np.sum(ix * err), np.sum(iy * err)])
                step = np.linalg.solve(G, b)
                d += step
                if not (0 <= px + d[0] <= w - 1 and 0 <= py + d[1] <= h - 1):
                    d = d0.copy()       # diverged: keep the incoming estimate
                    break
                if np.hypot(*step) < LK_CONVERGENCE:
                    break
            flow = d * s
            # bounds in original coordinates; coarse levels sample clamped
            h0, w0 = prev.pixels.shape
            tx, ty = pt[0] + flow[0], pt[1] + flow[1]
            if not (0 <= tx <= w0 - 1 and 0 <= ty <= h0 - 1):
                ok = False
                break
        results.append((pt.astype(float), pt + flow, ok))
    return results


def _knn_edges(points: np.ndarray, k: int) -> np.ndarray:
    """Symmetric k-NN edge list, each undirected edge stored once."""
    n = len(points)
    if n < 2:
        return np.empty((0, 2), dtype=int)
    tree = cKDTree(points)
    k_eff = min(k + 1, n)
    _, nbrs = tree.query(points, k=k_eff)
    pairs = set()
    for i in range(n):
        for j in np.atleast_1d(nbrs[i]):
            if i != j:
                pairs.add((min(i, int(j)), max(i, int(j))))
    return np.array(sorted(pairs), dtype=int).reshape(-1, 2)


def build_feature_set(prev_window: EventWindow, curr_window: EventWindow,
                      k_neighbors: int = 6,
                      params: TrackerParams | None = None) -> FeatureSet:
    """Detect corners on the previous window's count image, track them into
    the current window's, and assemble the surviving correspondences.

    Raises InsufficientFeatures when fewer than twice the minimal sample
    size survive.
    """
    if params is None:
        params = TrackerParams(k_neighbors=k_neighbors)
    if (prev_window.width, prev_window.height) != (curr_window.width,
                                                   curr_window.height):
        raise ValueError("windows must share sensor geometry")
    zero = FourParamMotion()
    iwe_prev = accumulate_iwe(prev_window, zero)
    iwe_curr = accumulate_iwe(curr_window, zero)
    if params.blur_sigma > 0:
        iwe_prev = Iwe(ndimage.gaussian_filter(iwe_prev.pixels,
                                               params.blur_sigma),
                       iwe_prev.width, iwe_prev.height, iwe_prev.t_ref)
        iwe_curr = Iwe(ndimage.gaussian_filter(iwe_curr.pixels,
                                               params.blur_sigma),
                       iwe_curr.width, iwe_curr.height, iwe_curr.t_ref)
    corners = detect_corners(iwe_prev, params.max_corners,
                             params.quality_level, params.min_distance)
    if len(corners) == 0:
        raise InsufficientFeatures("no corners detected")
    tracked = track_lk(iwe_prev, iwe_curr, corners, params.lk_levels,
                       params.lk_win)
    keep = [(p, q) for (p, q, ok) in tracked if ok]
    if len(keep) < MIN_FEATURES:
        raise InsufficientFeatures(
            f"only {len(keep)} correspondences survived tracking")
    x_prev = np.array([p for p, _ in keep])
    x_curr = np.array([q for _, q in keep])
    dt = (curr_window.t_start - prev_window.t_start) / 1e6
    if dt <= 0:
        raise ValueError("windows must be ordered in time")
    return FeatureSet(x_prev, x_curr, dt,
                      _knn_edges(x_prev, k_neighbors))
