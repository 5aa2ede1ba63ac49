"""Event-wise labeling by spatio-temporal graph cut.

Events embed at (x, y, alpha * t) so that temporal adjacency becomes
geometric; a k-NN graph over that embedding carries a Potts smoothness
term. The data term warps each event by a candidate model and reads the
normalized count image of that model's current cluster: mass under the
warped position means the event rides the same trajectory family. A
per-active-model cost keeps the pool compact. Labeling (expansion moves)
and per-cluster model refinement (contrast maximization, accepted only
when the total energy drops) alternate until the energy stalls; the
recorded energy never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.spatial import cKDTree

from .events import (EventWindow, Iwe, MICROS, accumulate_iwe,
                     contrast_variance, sample_bilinear, warp_window)
from .level1 import ModelPool
from .motion import FourParamMotion
from .mrf import MultiLabelProblem, alpha_expansion, evaluate_energy

OUTLIER = -1
TEMPORAL_SPAN_PX = 10.0      # default embedding depth of one window
# member-built cluster images: normalize low enough that typical aligned
# members saturate instead of only the densest pile
NORM_PERCENTILE = 90.0
# whole-window images (bootstrap, re-activation): anchor near the best
# aligned piles so only genuinely aligned events respond
BOOTSTRAP_PERCENTILE = 99.9


class EmptyPool(Exception):
    """Segmentation needs at least one initial motion instance."""


@dataclass
class Level2Params:
    lambda_potts: float = 1.0
    beta_mdl: float = 2000.0          # per active model, units of data cost
    outlier_cost: float = 0.95        # constant data cost of the outlier label
    k_neighbors: int = 8
    alpha_scale: float | None = None  # px/s; None: window span -> 10 px
    max_bcd_rounds: int = 8
    cm_eval_budget: int = 150         # objective evaluations per model/round
    smoothing_eps: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.outlier_cost <= 1:
            raise ValueError("outlier_cost must lie in (0, 1]")
        for name in ("lambda_potts", "beta_mdl", "k_neighbors",
                     "max_bcd_rounds", "cm_eval_budget"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class StGraph:
    """k-NN graph over the (x, y, alpha * t) embedding of a window."""

    num_nodes: int
    edges: np.ndarray          # (E, 2) int, each undirected edge once
    weights: np.ndarray        # (E,)
    alpha: float               # px/s


@dataclass
class EventLabeling:
    """Per-event label (model index, OUTLIER = -1) over a model pool."""

    labels: np.ndarray
    num_models: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=int)
        bad = (self.labels >= self.num_models) | \
              ((self.labels < 0) & (self.labels != OUTLIER))
        if np.any(bad):
            raise ValueError("labels must be model indices or OUTLIER")

    def active_models(self) -> np.ndarray:
        present = np.unique(self.labels)
        return present[present >= 0]

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def resolve_alpha(w: EventWindow, p: Level2Params) -> float:
    if p.alpha_scale is not None:
        return p.alpha_scale
    return TEMPORAL_SPAN_PX / (w.delta_t / MICROS)


def build_st_graph(w: EventWindow, p: Level2Params) -> StGraph:
    """Connect each event to its spatio-temporal nearest neighbours."""
    n = len(w)
    if n < 2:
        raise ValueError("graph needs at least two events")
    alpha = resolve_alpha(w, p)
    embed = np.column_stack([w.xs, w.ys, alpha * (w.ts / MICROS)])
    tree = cKDTree(embed)
    k_eff = min(p.k_neighbors + 1, n)
    _, nbrs = tree.query(embed, k=k_eff)
    nbrs = np.atleast_2d(nbrs)
    rows = np.repeat(np.arange(n), nbrs.shape[1])
    cols = nbrs.ravel()
    keep = rows != cols
    lo = np.minimum(rows[keep], cols[keep])
    hi = np.maximum(rows[keep], cols[keep])
    edges = np.unique(np.column_stack([lo, hi]), axis=0)
    return StGraph(n, edges, np.ones(len(edges)), alpha)


@dataclass
class ClusterImage:
    """A cluster's count image plus its robust normalization value."""

    iwe: Iwe
    norm: float


def build_cluster_images(w: EventWindow, labels: np.ndarray, models,
                         p: Level2Params, t_ref: int,
                         center) -> list[ClusterImage | None]:
    """Per-model count image over the model's current members.

    A model without members falls back to a whole-window image so that
    expansion moves can still re-activate it when events support it.
    """
    images: list[ClusterImage | None] = []
    for j, m in enumerate(models):
        members = np.flatnonzero(labels == j)
        if len(members) == 0:
            iwe = accumulate_iwe(w, m, t_ref, p.smoothing_eps, center)
            images.append(ClusterImage(iwe, _norm_value(iwe,
                                                        BOOTSTRAP_PERCENTILE)))
            continue
        iwe = accumulate_iwe(w.subset(members), m, t_ref,
                             p.smoothing_eps, center)
        images.append(ClusterImage(iwe, _norm_value(iwe)))
    return images


def _norm_value(iwe: Iwe, percentile: float = NORM_PERCENTILE) -> float:
    positive = iwe.pixels[iwe.pixels > 0]
    if len(positive) == 0:
        return 0.0
    return float(np.percentile(positive, percentile))


def _model_costs(w: EventWindow, m: FourParamMotion,
                 image: ClusterImage | None, t_ref: int,
                 center) -> np.ndarray:
    """1 - normalized cluster-image response at each event's warped position."""
    if image is None or image.norm <= 0:
        return np.ones(len(w))
    warped = warp_window(w, m, t_ref, center)
    response = sample_bilinear(image.iwe, warped) / image.norm
    return 1.0 - np.clip(response, 0.0, 1.0)


def data_cost_matrix(w: EventWindow, models, images, p: Level2Params,
                     t_ref: int, center) -> np.ndarray:
    """(N, L+1) data costs; the last column is the outlier label."""
    n = len(w)
    costs = np.empty((n, len(models) + 1))
    for j, m in enumerate(models):
        costs[:, j] = _model_costs(w, m, images[j], t_ref, center)
    costs[:, -1] = p.outlier_cost
    return costs


def data_cost(w: EventWindow, index: int, label: int, images,
              models, p: Level2Params, t_ref: int, center) -> float:
    """Single-event data cost against one label (OUTLIER allowed)."""
    if label == OUTLIER:
        return p.outlier_cost
    sub = w.subset(np.array([index]))
    return float(_model_costs(sub, models[label], images[label], t_ref,
                              center)[0])


def _assemble_problem(graph: StGraph, costs: np.ndarray,
                      p: Level2Params) -> MultiLabelProblem:
    n_labels = costs.shape[1]
    label_costs = np.append(np.full(n_labels - 1, p.beta_mdl), 0.0)
    return MultiLabelProblem(graph.num_nodes, costs, graph.edges,
                             p.lambda_potts * graph.weights, label_costs,
                             outlier_label=n_labels - 1)


def energy(w: EventWindow, labels: np.ndarray, models, graph: StGraph,
           images, p: Level2Params, t_ref: int, center) -> float:
    """Total labeling energy: data + Potts + per-active-model cost."""
    costs = data_cost_matrix(w, models, images, p, t_ref, center)
    internal = labels.copy()
    internal[internal == OUTLIER] = len(models)
    return evaluate_energy(_assemble_problem(graph, costs, p), internal)


def label_events(graph: StGraph, w: EventWindow, models, images,
                 init: np.ndarray, p: Level2Params, t_ref: int, center,
                 energy_trace: list | None = None) -> np.ndarray:
    """Expansion-move relabeling against the current cluster images."""
    costs = data_cost_matrix(w, models, images, p, t_ref, center)
    problem = _assemble_problem(graph, costs, p)
    internal = init.copy()
    internal[internal == OUTLIER] = len(models)
    labels, _ = alpha_expansion(problem, internal, energy_trace=energy_trace)
    out = labels.copy()
    out[out == len(models)] = OUTLIER
    return out


def _member_data_cost(members: EventWindow, m: FourParamMotion,
                      p: Level2Params, t_ref: int, center) -> float:
    """Data cost of a cluster against its own freshly built image."""
    iwe = accumulate_iwe(members, m, t_ref, p.smoothing_eps, center)
    image = ClusterImage(iwe, _norm_value(iwe))
    return float(_model_costs(members, m, image, t_ref, center).sum())


def refine_models_cm(w: EventWindow, labels: np.ndarray, models,
                     p: Level2Params, t_ref: int, center) -> list:
    """Per-cluster contrast maximization, gated on the total energy.

    Each active model seeds a derivative-free search that maximizes the
    variance of its members' count image; the candidate replaces the old
    model only when the members' data cost strictly drops (the Potts and
    model-count terms do not depend on the parameters).
    """
    refined = list(models)
    for j, m in enumerate(models):
        members_idx = np.flatnonzero(labels == j)
        if len(members_idx) == 0:
            continue
        members = w.subset(members_idx)

        def neg_variance(theta) -> float:
            cand = FourParamMotion.from_array(theta)
            return -contrast_variance(
                accumulate_iwe(members, cand, t_ref, p.smoothing_eps, center))

        x0 = m.as_array()
        steps = np.array([max(0.1 * abs(x0[0]), 1.0),
                          max(0.1 * abs(x0[1]), 1.0),
                          max(0.1 * abs(x0[2]), 0.05),
                          max(0.1 * abs(x0[3]), 0.05)])
        simplex = np.vstack([x0, x0 + np.diag(steps)])
        res = minimize(neg_variance, x0, method="Nelder-Mead",
                       options={"initial_simplex": simplex,
                                "maxfev": p.cm_eval_budget,
                                "xatol": 1e-3, "fatol": 1e-6})
        cand = FourParamMotion.from_array(res.x)
        if _member_data_cost(members, cand, p, t_ref, center) < \
                _member_data_cost(members, m, p, t_ref, center) - 1e-12:
            refined[j] = cand
    return refined


def _drop_empty(labels: np.ndarray, models: list) -> tuple[np.ndarray, list]:
    sizes = [(labels == j).sum() for j in range(len(models))]
    keep = [j for j, s in enumerate(sizes) if s > 0]
    if len(keep) == len(models):
        return labels, models
    remap = {old: new for new, old in enumerate(keep)}
    out = np.full(len(labels), OUTLIER)
    for old, new in remap.items():
        out[labels == old] = new
    return out, [models[j] for j in keep]


def bootstrap_labels(w: EventWindow, models, p: Level2Params, t_ref: int,
                     center) -> np.ndarray:
    """Initial labeling from whole-window count images per model.

    Cluster images need a labeling; seeding with images built from all
    events under each model breaks the circularity using only the
    initial pool.
    """
    images = []
    for m in models:
        iwe = accumulate_iwe(w, m, t_ref, p.smoothing_eps, center)
        images.append(ClusterImage(iwe, _norm_value(iwe,
                                                    BOOTSTRAP_PERCENTILE)))
    costs = data_cost_matrix(w, models, images, p, t_ref, center)
    labels = costs.argmin(axis=1)
    labels[labels == len(models)] = OUTLIER
    return labels


def segment(w: EventWindow, init_models: ModelPool, p: Level2Params,
            t_ref: int | None = None, center=None,
            energy_trace: list | None = None,
            expansion_trace: list | None = None
            ) -> tuple[EventLabeling, ModelPool]:
    """Alternate labeling and refinement from the initial model pool.

    Returns the event labeling and the surviving refined models. The
    per-round energies appended to `energy_trace` are non-increasing:
    a round that fails to lower the self-consistent energy is rolled
    back and the descent stops.
    """
    if not init_models.models:
        raise EmptyPool("level-two segmentation needs initial models")
    if t_ref is None:
        t_ref = w.t_start
    if center is None:
        center = w.center
    graph = build_st_graph(w, p)
    models = list(init_models.models)
    labels = bootstrap_labels(w, models, p, t_ref, center)

    images = build_cluster_images(w, labels, models, p, t_ref, center)
    e_cur = energy(w, labels, models, graph, images, p, t_ref, center)
    if energy_trace is not None:
        energy_trace.append(e_cur)

    for _ in range(p.max_bcd_rounds):
        new_labels = label_events(graph, w, models, images, labels, p,
                                  t_ref, center,
                                  energy_trace=expansion_trace)
        new_models = refine_models_cm(w, new_labels, models, p, t_ref, center)
        new_images = build_cluster_images(w, new_labels, new_models, p,
                                          t_ref, center)
        e_new = energy(w, new_labels, new_models, graph, new_images, p,
                       t_ref, center)
        if e_new > e_cur - 1e-12:
            break                      # keep the previous, lower-energy state
        improvement = e_cur - e_new
        labels, models, images, e_cur = new_labels, new_models, new_images, e_new
        if energy_trace is not None:
            energy_trace.append(e_cur)
        if improvement < 1e-4 * len(w):
            break

    labels, models = _drop_empty(labels, models)
    member_sets = [np.flatnonzero(labels == j) for j in range(len(models))]
    return EventLabeling(labels, len(models)), ModelPool(models, member_sets)
