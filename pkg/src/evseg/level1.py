"""Feature clustering by progressive multi-model fitting.

Motion hypotheses are proposed one at a time by a graph-cut RANSAC loop
whose quality score only rewards support that is not already explained
by the accepted models (the compound instance). Each accepted hypothesis
joins the pool, the pool is re-optimized jointly over all features by
alternating expansion-move labeling and per-cluster refinement, and the
loop stops once the probabilistic upper bound on the inliers of any
still-undiscovered model drops below the minimal sample size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSet, InsufficientFeatures
from .motion import (DegenerateSample, FourParamMotion, NonConvergence,
                     fit_minimal_dlt, geometric_errors, refine_model_geometric)
from .mrf import (FlowNetwork, MultiLabelProblem, alpha_expansion,
                  evaluate_energy, min_cut)

OUTLIER = -1
MINIMAL_SET_SIZE = 2
MIN_CLUSTER_FEATURES = 3     # one more than the minimal sample
PEARL_MAX_ROUNDS = 10
PEARL_TOLERANCE = 1e-6


@dataclass
class Level1Params:
    zeta: float = 1.5                 # inlier threshold (px)
    mu: float = 0.95                  # confidence
    napsac_radius: float = 30.0       # px
    gc_lambda: float = 0.1            # pairwise weight, proposal graph cut
    pearl_lambda: float = 1.0         # Potts weight, multi-instance step
    pearl_beta: float | None = None   # per-instance cost; default 2 * zeta^2
    outlier_cost: float | None = None  # px-equivalent unary; default 2 * zeta
    k_max: int = 10_000               # proposal-loop iteration cap
    max_proposals: int = 64           # progressive-loop hard cap

    def __post_init__(self) -> None:
        if self.zeta <= 0:
            raise ValueError("zeta must be positive")
        if not 0 < self.mu < 1:
            raise ValueError("mu must lie in (0, 1)")
        if self.pearl_beta is None:
            self.pearl_beta = 2.0 * self.zeta ** 2
        if self.outlier_cost is None:
            self.outlier_cost = 2.0 * self.zeta
        for name in ("napsac_radius", "gc_lambda", "pearl_lambda",
                     "pearl_beta", "outlier_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def gamma(self) -> float:
        """Truncation scale of the quality score."""
        return 1.5 * self.zeta


@dataclass
class ModelPool:
    """Active motion instances with their supporting feature indices."""

    models: list = field(default_factory=list)
    inlier_sets: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.models)


def napsac_sample(fs: FeatureSet, rng: np.random.Generator,
                  radius: float) -> tuple[int, int]:
    """A local minimal sample: one index uniform, the second from within
    `radius` of the first (global fallback when the neighbourhood is empty)."""
    n = len(fs)
    i = int(rng.integers(n))
    d = fs.x_prev - fs.x_prev[i]
    near = np.flatnonzero((d[:, 0] ** 2 + d[:, 1] ** 2 <= radius * radius))
    near = near[near != i]
    if len(near):
        j = int(rng.choice(near))
    else:
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
    return i, j


def model_errors(fs: FeatureSet, m: FourParamMotion,
                 center=(0.0, 0.0)) -> np.ndarray:
    return geometric_errors(fs.x_prev, fs.x_curr, fs.dt, m, center)


def compound_errors(fs: FeatureSet, models, center=(0.0, 0.0)) -> np.ndarray:
    """Per-feature distance to the nearest accepted model (+inf if none)."""
    if not models:
        return np.full(len(fs), np.inf)
    errs = np.stack([model_errors(fs, m, center) for m in models])
    return errs.min(axis=0)


def msac_quality(m_h: FourParamMotion, compound: ModelPool, fs: FeatureSet,
                 zeta: float, center=(0.0, 0.0),
                 union_errors: np.ndarray | None = None) -> float:
    """Truncated-quadratic support that discounts features already explained
    by the compound instance.

    Each feature contributes a loss in [0, 1]: small when it fits the
    hypothesis and no accepted model, 1 when it misfits the hypothesis or
    fits the compound. The score is |F| minus the total loss.
    """
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    g2 = (1.5 * zeta) ** 2
    e_h = model_errors(fs, m_h, center)
    if union_errors is None:
        union_errors = compound_errors(fs, compound.models, center)
    with np.errstate(invalid="ignore"):
        overlap = 1.0 - (union_errors ** 2) / g2
    overlap = np.where(np.isfinite(union_errors), overlap, -np.inf)
    loss = np.minimum(1.0, np.maximum((e_h ** 2) / g2, overlap))
    return float(len(fs) - loss.sum())


def required_iterations(eta: float, s: int, mu: float,
                        k_max: int = 10_000) -> int:
    """Sample count for confidence mu at inlier ratio eta, clamped to
    [1, k_max]."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    if eta >= 1.0:
        return 1
    hit = eta ** s
    if hit <= 0.0 or 1.0 - hit >= 1.0:
        return k_max
    k = int(np.ceil(np.log(1.0 - mu) / np.log(1.0 - hit)))
    return int(np.clip(k, 1, k_max))


def termination_bound(f_total: int, compound_inliers: int, s: int, n: int,
                      mu: float) -> float:
    """Upper bound on the support of a yet-unseen model after n proposals."""
    if n < 1:
        raise ValueError("bound needs at least one proposal")
    if compound_inliers > f_total:
        raise ValueError("compound inliers cannot exceed the feature count")
    return (f_total - compound_inliers) * (1.0 - (1.0 - mu) ** (1.0 / n)) ** (1.0 / s)


def _graph_cut_inliers(fs: FeatureSet, e_h: np.ndarray, gamma: float,
                       gc_lambda: float) -> np.ndarray:
    """Binary inlier/outlier split over the feature graph."""
    unary_in = np.minimum(1.0, (e_h ** 2) / (gamma ** 2))
    g = FlowNetwork(len(fs))
    g.source_caps += 1.0 - unary_in       # cost of the outlier side
    g.sink_caps += unary_in               # cost of the inlier side
    for i, j in fs.edges:
        g.add_arc(int(i), int(j), gc_lambda)
        g.add_arc(int(j), int(i), gc_lambda)
    side, _ = min_cut(g)
    return np.flatnonzero(side)


def gc_ransac_propose(fs: FeatureSet, compound: ModelPool, p: Level1Params,
                      rng: np.random.Generator, center=(0.0, 0.0)):
    """One graph-cut RANSAC pass against the current compound instance.

    Returns (model, zeta-inlier indices, quality) for the best hypothesis,
    or None when no sample ever gathered more than a minimal set of
    inliers independent of the compound.
    """
    n = len(fs)
    if n < MINIMAL_SET_SIZE:
        raise InsufficientFeatures("need at least a minimal sample")
    e_union = compound_errors(fs, compound.models, center)
    best_m = None
    best_q = -np.inf
    best_support = 0
    k, k_needed = 0, p.k_max
    while k < k_needed:
        k += 1
        i, j = napsac_sample(fs, rng, p.napsac_radius)
        try:
            m = fit_minimal_dlt([fs.correspondence(i), fs.correspondence(j)],
                                center)
        except DegenerateSample:
            continue
        q = msac_quality(m, compound, fs, p.zeta, center,
                         union_errors=e_union)
        improved = False
        local_rounds = 0
        while q > best_q and local_rounds < 50:
            local_rounds += 1
            improved = True
            best_m, best_q = m, q
            e_h = model_errors(fs, m, center)
            best_support = max(best_support, int(np.sum(
                (e_h < p.zeta) & (e_union > p.zeta))))
            inl = _graph_cut_inliers(fs, e_h, p.gamma, p.gc_lambda)
            if len(inl) < MINIMAL_SET_SIZE:
                break
            try:
                m = refine_model_geometric(m, fs.correspondences(inl), center)
            except NonConvergence as stall:
                m = stall.best
            q = msac_quality(m, compound, fs, p.zeta, center,
                             union_errors=e_union)
        if improved:
            e_best = model_errors(fs, best_m, center)
            eta = float(np.sum(e_best < p.zeta)) / n
            k_needed = min(k_needed,
                           required_iterations(eta, MINIMAL_SET_SIZE, p.mu,
                                               p.k_max))
    if best_m is None or best_support < MINIMAL_SET_SIZE + 1:
        return None
    inliers = np.flatnonzero(model_errors(fs, best_m, center) < p.zeta)
    return best_m, inliers, best_q


def _pearl_problem(fs: FeatureSet, models, p: Level1Params,
                   center) -> MultiLabelProblem:
    # model unaries truncate above the outlier cost, not at it: an exact tie
    # would let the smoothness term flood far-away features onto whichever
    # instance exists instead of the outlier label
    n = len(fs)
    cap = (2.0 * p.outlier_cost) ** 2
    unary = np.empty((n, len(models) + 1))
    for l, m in enumerate(models):
        unary[:, l] = np.minimum(model_errors(fs, m, center) ** 2, cap)
    unary[:, -1] = p.outlier_cost ** 2
    weights = np.full(len(fs.edges), p.pearl_lambda)
    costs = np.append(np.full(len(models), p.pearl_beta), 0.0)
    return MultiLabelProblem(n, unary, fs.edges, weights, costs,
                             outlier_label=len(models))


def _to_internal(labels: np.ndarray, n_models: int) -> np.ndarray:
    out = labels.copy()
    out[out == OUTLIER] = n_models
    return out


def _to_external(labels: np.ndarray, n_models: int) -> np.ndarray:
    out = labels.copy()
    out[out == n_models] = OUTLIER
    return out


def pearl_optimize(pool: ModelPool, fs: FeatureSet, p: Level1Params,
                   center=(0.0, 0.0), init: np.ndarray | None = None,
                   energy_trace: list | None = None
                   ) -> tuple[np.ndarray, ModelPool]:
    """Alternate expansion-move labeling and per-cluster refinement.

    The recorded energy sequence (labeling steps and gated refitting
    steps) is non-increasing. Instances that end up with fewer than
    MIN_CLUSTER_FEATURES members are dropped afterwards and their
    features relabeled over the reduced pool.
    """
    if not pool.models:
        raise ValueError("pool must contain at least one model")
    models = list(pool.models)
    n = len(fs)
    cap = (2.0 * p.outlier_cost) ** 2
    if init is None:
        labels = np.full(n, len(models))       # all-outlier start
    else:
        labels = _to_internal(np.asarray(init, dtype=int), len(models))

    prev_energy = np.inf
    for _ in range(PEARL_MAX_ROUNDS):
        problem = _pearl_problem(fs, models, p, center)
        labels, energy = alpha_expansion(problem, labels,
                                         energy_trace=energy_trace)
        # refit each instance on its members, keeping a candidate only if
        # it lowers the truncated data cost it is responsible for
        for l, m in enumerate(models):
            members = np.flatnonzero(labels == l)
            if len(members) < MINIMAL_SET_SIZE:
                continue
            try:
                cand = refine_model_geometric(m, fs.correspondences(members),
                                              center)
            except NonConvergence as stall:
                cand = stall.best
            e_old = np.minimum(model_errors(fs, m, center)[members] ** 2, cap)
            e_new = np.minimum(model_errors(fs, cand, center)[members] ** 2, cap)
            if e_new.sum() < e_old.sum() - 1e-15:
                models[l] = cand
        energy = evaluate_energy(_pearl_problem(fs, models, p, center), labels)
        if energy_trace is not None:
            energy_trace.append(energy)
        if prev_energy - energy < PEARL_TOLERANCE:
            break
        prev_energy = energy

    # prune instances with too few members; relabel over the reduced pool
    while True:
        sizes = np.array([(labels == l).sum() for l in range(len(models))],
                         dtype=int)
        weak = np.flatnonzero(sizes < MIN_CLUSTER_FEATURES)
        if len(weak) == 0 or len(models) == 0:
            break
        keep = [l for l in range(len(models)) if sizes[l] >= MIN_CLUSTER_FEATURES]
        new_index = {old: new for new, old in enumerate(keep)}
        models = [models[l] for l in keep]
        remapped = np.full(n, len(models))
        for old, new in new_index.items():
            remapped[labels == old] = new
        if models:
            problem = _pearl_problem(fs, models, p, center)
            labels, _ = alpha_expansion(problem, remapped)
        else:
            labels = remapped
            break

    inlier_sets = [np.flatnonzero(labels == l) for l in range(len(models))]
    return _to_external(labels, len(models)), ModelPool(models, inlier_sets)


def progressive_fit(fs: FeatureSet, p: Level1Params,
                    rng: np.random.Generator, center=(0.0, 0.0),
                    energy_trace: list | None = None
                    ) -> tuple[np.ndarray, ModelPool]:
    """Full proposal/optimization loop over a feature set.

    Returns the final feature labeling (OUTLIER = -1) and the pool of
    surviving motion instances.
    """
    n = len(fs)
    if n < MINIMAL_SET_SIZE:
        raise InsufficientFeatures("need at least a minimal sample")
    labels = np.full(n, OUTLIER)
    pool = ModelPool()
    bound = float(MINIMAL_SET_SIZE + 2)
    proposals = 0
    while bound > MINIMAL_SET_SIZE + 1 and proposals < p.max_proposals:
        prop = gc_ransac_propose(fs, pool, p, rng, center)
        if prop is None:
            break
        model, _, _ = prop
        trial = ModelPool(pool.models + [model], [])
        labels, pool = pearl_optimize(trial, fs, p, center, init=labels,
                                      energy_trace=energy_trace)
        proposals += 1
        e_union = compound_errors(fs, pool.models, center)
        covered = int(np.sum(e_union < p.zeta))
        bound = termination_bound(n, covered, MINIMAL_SET_SIZE, proposals,
                                  p.mu)
    return labels, pool
