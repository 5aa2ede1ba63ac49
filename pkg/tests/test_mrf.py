import itertools

import numpy as np
import pytest

from evseg.mrf import (FlowNetwork, MultiLabelProblem, alpha_expansion,
                       evaluate_energy, min_cut)


def brute_force_cut(g: FlowNetwork) -> float:
    """Minimum cut value by enumerating every source-side subset."""
    n = g.num_nodes
    best = np.inf
    for bits in range(2 ** n):
        side = [(bits >> i) & 1 for i in range(n)]  # 1 = source side
        val = 0.0
        for i in range(n):
            val += g.sink_caps[i] if side[i] else g.source_caps[i]
        for (u, v, c) in g.arcs:
            if side[u] and not side[v]:
                val += c
        best = min(best, val)
    return best


def cut_cost_of_labeling(g: FlowNetwork, source_side: np.ndarray) -> float:
    val = 0.0
    for i in range(g.num_nodes):
        val += g.sink_caps[i] if source_side[i] else g.source_caps[i]
    for (u, v, c) in g.arcs:
        if source_side[u] and not source_side[v]:
            val += c
    return val


def brute_force_labeling(p: MultiLabelProblem):
    best_e, best_l = np.inf, None
    for combo in itertools.product(range(p.num_labels), repeat=p.num_nodes):
        e = evaluate_energy(p, np.array(combo))
        if e < best_e:
            best_e, best_l = e, np.array(combo)
    return best_l, best_e


def random_network(rng: np.random.Generator, n: int) -> FlowNetwork:
    g = FlowNetwork(n)
    for i in range(n):
        g.add_terminal(i, source_cap=float(rng.uniform(0, 5)),
                       sink_cap=float(rng.uniform(0, 5)))
    n_arcs = int(rng.integers(0, 2 * n))
    for _ in range(n_arcs):
        u, v = rng.integers(0, n, 2)
        if u != v:
            g.add_arc(int(u), int(v), float(rng.uniform(0, 3)))
    return g


def random_problem(rng: np.random.Generator, n: int = 8, labels: int = 3,
                   with_label_costs: bool = True) -> MultiLabelProblem:
    unary = rng.uniform(0, 1, (n, labels))
    edges = []
    for _ in range(int(rng.integers(4, 12))):
        i, j = rng.integers(0, n, 2)
        if i < j and (i, j) not in edges:
            edges.append((int(i), int(j)))
    weights = rng.uniform(0, 0.6, len(edges))
    costs = rng.uniform(0, 0.8, labels) if with_label_costs \
        else np.zeros(labels)
    return MultiLabelProblem(n, unary, np.array(edges, dtype=int).reshape(-1, 2),
                             weights, costs)


class TestMinCut:
    def test_single_node(self):
        g = FlowNetwork(1)
        g.add_terminal(0, source_cap=5.0, sink_cap=3.0)
        side, value = min_cut(g)
        assert value == pytest.approx(3.0, abs=1e-9)
        # the returned partition must realize the minimum cut cost
        assert cut_cost_of_labeling(g, side) == pytest.approx(3.0, abs=1e-9)

    def test_two_node_bridge(self):
        g = FlowNetwork(2)
        g.add_terminal(0, source_cap=4.0)
        g.add_terminal(1, sink_cap=4.0)
        g.add_arc(0, 1, 1.0)
        g.add_arc(1, 0, 1.0)
        side, value = min_cut(g)
        assert value == pytest.approx(1.0, abs=1e-9)
        assert side[0] and not side[1]

    def test_matches_enumeration_random(self):
        for seed in range(100):
            rng = np.random.default_rng(seed)
            g = random_network(rng, 10)
            side, value = min_cut(g)
            assert value == pytest.approx(brute_force_cut(g), abs=1e-9)
            assert cut_cost_of_labeling(g, side) == pytest.approx(value, abs=1e-9)

    def test_empty_network(self):
        side, value = min_cut(FlowNetwork(3))
        assert value == 0.0

    def test_rejects_negative_capacity(self):
        g = FlowNetwork(2)
        with pytest.raises(ValueError):
            g.add_arc(0, 1, -1.0)


class TestAlphaExpansion:
    def test_no_edges_argmin(self):
        rng = np.random.default_rng(0)
        unary = rng.uniform(0, 1, (6, 3))
        p = MultiLabelProblem(6, unary, np.empty((0, 2), dtype=int),
                              np.empty(0), np.zeros(3))
        labels, energy = alpha_expansion(p, np.zeros(6, dtype=int))
        assert np.array_equal(labels, unary.argmin(axis=1))
        assert energy == pytest.approx(unary.min(axis=1).sum())

    def test_strong_edge_forces_agreement(self):
        unary = np.array([[0.0, 1.0], [1.0, 0.0]])
        p = MultiLabelProblem(2, unary, np.array([[0, 1]]), np.array([10.0]),
                              np.zeros(2))
        labels, energy = alpha_expansion(p, np.array([0, 1]))
        assert labels[0] == labels[1]
        # enumeration: (0,0)=1, (1,1)=1, (0,1)=10, (1,0)=12
        assert energy == pytest.approx(1.0)

    def test_against_brute_force(self):
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(seed)
            p = random_problem(rng)
            init = p.unary.argmin(axis=1)
            labels, energy = alpha_expansion(p, init)
            assert energy == pytest.approx(evaluate_energy(p, labels), abs=1e-9)
            _, best = brute_force_labeling(p)
            assert energy >= best - 1e-9
            assert energy <= best * 1.05 + 1e-9
            if best > 0:
                worst = max(worst, energy / best)
        assert worst <= 1.05

    def test_monotone_trace(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            p = random_problem(rng)
            trace: list = []
            init = rng.integers(0, p.num_labels, p.num_nodes)
            alpha_expansion(p, init, energy_trace=trace)
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_label_cost_empties_redundant_label(self):
        # two identical labels; the activation cost should leave one active
        unary = np.tile(np.array([[0.1, 0.1]]), (5, 1))
        p = MultiLabelProblem(5, unary, np.empty((0, 2), dtype=int),
                              np.empty(0), np.array([0.5, 0.5]))
        init = np.array([0, 1, 0, 1, 0])
        labels, energy = alpha_expansion(p, init)
        assert len(np.unique(labels)) == 1
        assert energy == pytest.approx(0.1 * 5 + 0.5)

    def test_label_permutation_equivariance(self):
        rng = np.random.default_rng(33)
        p = random_problem(rng, n=7, labels=3)
        init = p.unary.argmin(axis=1)
        labels_a, e_a = alpha_expansion(p, init)
        perm = np.array([2, 0, 1])          # new index of each old label
        inv = np.argsort(perm)
        p2 = MultiLabelProblem(p.num_nodes, p.unary[:, inv], p.edges,
                               p.weights, p.label_costs[inv])
        labels_b, e_b = alpha_expansion(p2, perm[init])
        assert e_a == pytest.approx(e_b, abs=1e-9)
        assert np.array_equal(perm[labels_a], labels_b)

    def test_rejects_invalid_init(self):
        p = MultiLabelProblem(2, np.zeros((2, 2)), np.empty((0, 2), dtype=int),
                              np.empty(0), np.zeros(2))
        with pytest.raises(ValueError):
            alpha_expansion(p, np.array([0, 5]))
