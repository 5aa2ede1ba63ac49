"""Discrete energy minimization: s-t min-cut and alpha-expansion.

Both fitting levels reduce their labeling subproblems to these two
solvers: binary inlier/outlier classification uses a single min-cut,
multi-label assignment with per-label activation costs runs repeated
expansion moves, each itself a min-cut.

The max-flow kernel is scipy's compiled solver, which works on int32
capacities; float capacities are scaled so the total stays within int32
range. The reported cut value is the exact float cost of the returned
partition, so it is immune to the fixed-point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

CAP_BUDGET = float(2 ** 30)     # scaled capacities must sum below int32 range


@dataclass
class FlowNetwork:
    """Directed arcs with capacities plus per-node terminal capacities.

    A source arc (cap c) is cut when its node ends on the sink side, a
    sink arc when the node ends on the source side.
    """

    num_nodes: int
    arcs: list = field(default_factory=list)          # (u, v, cap)
    source_caps: np.ndarray = None
    sink_caps: np.ndarray = None

    def __post_init__(self) -> None:
        if self.source_caps is None:
            self.source_caps = np.zeros(self.num_nodes)
        if self.sink_caps is None:
            self.sink_caps = np.zeros(self.num_nodes)
        self.source_caps = np.asarray(self.source_caps, dtype=float).copy()
        self.sink_caps = np.asarray(self.sink_caps, dtype=float).copy()

    def add_arc(self, u: int, v: int, cap: float) -> None:
        if cap < 0:
            raise ValueError("arc capacity must be non-negative")
        if cap > 0:
            self.arcs.append((u, v, float(cap)))

    def add_terminal(self, node: int, source_cap: float = 0.0,
                     sink_cap: float = 0.0) -> None:
        self.source_caps[node] += source_cap
        self.sink_caps[node] += sink_cap


def _partition_cost(g: FlowNetwork, source_side: np.ndarray) -> float:
    """Float cost of the cut induced by a source-side indicator."""
    val = float(g.sink_caps[source_side].sum()
                + g.source_caps[~source_side].sum())
    for (u, v, c) in g.arcs:
        if source_side[u] and not source_side[v]:
            val += c
    return val


def min_cut(g: FlowNetwork) -> tuple[np.ndarray, float]:
    """Minimum s-t cut of the network.

    Returns (source_side, cut_value): source_side[i] is True when node i
    stays reachable from the source in the residual graph; the value is
    the float cost of that partition, which equals the max flow up to the
    fixed-point rounding (exact on integer-friendly capacities).
    """
    n = g.num_nodes
    src, snk = n, n + 1
    us = [a[0] for a in g.arcs]
    vs = [a[1] for a in g.arcs]
    caps = [a[2] for a in g.arcs]
    for i in range(n):
        if g.source_caps[i] > 0:
            us.append(src)
            vs.append(i)
            caps.append(g.source_caps[i])
        if g.sink_caps[i] > 0:
            us.append(i)
            vs.append(snk)
            caps.append(g.sink_caps[i])
    if not caps:
        return np.zeros(n, dtype=bool), 0.0

    caps = np.asarray(caps, dtype=float)
    scale = CAP_BUDGET / caps.sum()           # scipy max-flow is int32 inside
    icaps = np.rint(caps * scale).astype(np.int64)
    mat = csr_matrix((icaps, (us, vs)), shape=(n + 2, n + 2))
    mat.sum_duplicates()
    res = maximum_flow(mat, src, snk)
    residual = mat - res.flow               # union sparsity; reverse arcs included
    residual.data = (residual.data > 0).astype(np.int64)
    residual.eliminate_zeros()
    reach = breadth_first_order(residual, src, directed=True,
                                return_predecessors=False)
    source_side = np.zeros(n, dtype=bool)
    source_side[reach[reach < n]] = True
    return source_side, _partition_cost(g, source_side)


@dataclass
class MultiLabelProblem:
    """Unary + Potts + per-label activation energy over an undirected graph.

    Each undirected edge is stored once; `label_costs[l]` is charged when
    label l has at least one member. `outlier_label`, when set, marks the
    label playing the catch-all role (by convention its activation cost
    is zero).
    """

    num_nodes: int
    unary: np.ndarray                        # (N, L)
    edges: np.ndarray                        # (E, 2) int
    weights: np.ndarray                      # (E,) >= 0
    label_costs: np.ndarray                  # (L,)
    outlier_label: int | None = None

    def __post_init__(self) -> None:
        self.unary = np.asarray(self.unary, dtype=float)
        self.edges = np.asarray(self.edges, dtype=int).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float)
        self.label_costs = np.asarray(self.label_costs, dtype=float)
        if np.any(self.weights < 0):
            raise ValueError("Potts weights must be non-negative")
        if not np.all(np.isfinite(self.unary)):
            raise ValueError("unary costs must be finite")

    @property
    def num_labels(self) -> int:
        return self.unary.shape[1]


def evaluate_energy(p: MultiLabelProblem, labels: np.ndarray) -> float:
    """Exact energy of a labeling: unary + Potts + activation costs."""
    labels = np.asarray(labels, dtype=int)
    e = float(p.unary[np.arange(p.num_nodes), labels].sum())
    if len(p.edges):
        li, lj = labels[p.edges[:, 0]], labels[p.edges[:, 1]]
        e += float(p.weights[li != lj].sum())
    active = np.unique(labels)
    e += float(p.label_costs[active].sum())
    return e


def _expansion_move(p: MultiLabelProblem, labels: np.ndarray,
                    alpha: int) -> np.ndarray:
    """One alpha-expansion step; returns the candidate labeling.

    Binary variables: source side = take alpha, sink side = keep the
    current label. Pairwise Potts terms are submodular for expansion
    moves; activation costs enter through auxiliary nodes that detect
    whether a label gains its first member or loses its last one.
    """
    n = p.num_nodes
    free = labels != alpha
    aux_ids: dict[int, int] = {}
    extra = 0

    def aux(l: int) -> int:
        nonlocal extra
        if l not in aux_ids:
            aux_ids[l] = n + extra
            extra += 1
        return aux_ids[l]

    # count auxiliary nodes first so the network can be sized
    alpha_active = bool(np.any(~free))
    losable = [l for l in np.unique(labels[free])
               if p.label_costs[l] > 0]
    if not alpha_active and p.label_costs[alpha] > 0:
        gain_aux = True
    else:
        gain_aux = False
    total_aux = len(losable) + (1 if gain_aux else 0)

    g = FlowNetwork(n + total_aux)
    # source arc cut when node keeps its old label; sink arc when it takes alpha
    keep_cost = p.unary[np.arange(n), labels]
    take_cost = p.unary[:, alpha]
    inf_pool = float(np.sum(np.abs(p.unary)) + p.weights.sum()
                     + np.abs(p.label_costs).sum() + 1.0)
    for i in range(n):
        if free[i]:
            g.add_terminal(i, source_cap=keep_cost[i], sink_cap=take_cost[i])
        else:
            # already alpha: force source side
            g.add_terminal(i, source_cap=inf_pool)

    for (i, j), w in zip(p.edges, p.weights):
        if w <= 0:
            continue
        fi, fj = labels[i], labels[j]
        if not free[i] and not free[j]:
            continue                          # constant
        if not free[i]:                       # i fixed to alpha
            if fj != alpha:
                g.add_terminal(j, source_cap=w)   # pay w if j keeps fj
            continue
        if not free[j]:
            if fi != alpha:
                g.add_terminal(i, source_cap=w)
            continue
        # both free, neither currently alpha
        t00, t01, t10, t11 = 0.0, w, w, (w if fi != fj else 0.0)
        e1 = t10 - t00
        if e1 >= 0:
            g.add_terminal(i, source_cap=e1)
        else:
            g.add_terminal(i, sink_cap=-e1)
        e2 = t11 - t10
        if e2 >= 0:
            g.add_terminal(j, source_cap=e2)
        else:
            g.add_terminal(j, sink_cap=-e2)
        g.add_arc(i, j, t01 + t10 - t00 - t11)

    if gain_aux:
        # charge the activation cost of alpha when anyone switches to it
        z = aux(alpha)
        g.add_terminal(z, sink_cap=p.label_costs[alpha])
        for i in np.flatnonzero(free):
            g.add_arc(i, z, inf_pool)
    for l in losable:
        # credit label l's cost when all of its members leave: equivalently
        # charge it whenever at least one member keeps l
        y = aux(l)
        g.add_terminal(y, source_cap=p.label_costs[l])
        for i in np.flatnonzero(free & (labels == l)):
            g.add_arc(y, i, inf_pool)

    source_side, _ = min_cut(g)
    new_labels = labels.copy()
    new_labels[free & source_side[:n]] = alpha
    return new_labels


def alpha_expansion(p: MultiLabelProblem, init: np.ndarray,
                    energy_trace: list | None = None
                    ) -> tuple[np.ndarray, float]:
    """Cycle expansion moves over all labels until no move helps.

    Returns the final labeling and its exact energy; the energy never
    exceeds the energy of `init`. When `energy_trace` is given, the
    energy after every accepted move is appended to it.
    """
    labels = np.asarray(init, dtype=int).copy()
    if np.any(labels < 0) or np.any(labels >= p.num_labels):
        raise ValueError("init labeling out of range")
    energy = evaluate_energy(p, labels)
    if energy_trace is not None:
        energy_trace.append(energy)
    while True:
        improved = False
        for alpha in range(p.num_labels):
            cand = _expansion_move(p, labels, alpha)
            cand_e = evaluate_energy(p, cand)
            if cand_e < energy - 1e-12:
                labels, energy = cand, cand_e
                improved = True
                if energy_trace is not None:
                    energy_trace.append(energy)
        if not improved:
            break
    return labels, energy
