"""Graph structures: d-separation, moralization, triangulation, junction trees."""

import itertools

import numpy as np
import pytest

from midas.factors import DiscreteVariable, Factor
from midas.graphs import (
    CHANCE,
    DECISION,
    UTILITY,
    GraphError,
    InfluenceDiagram,
    build_junction_tree,
    d_separated,
    moralize,
    strong_order,
    total_clique_size,
    triangulate,
)
from midas.graphs import bayesian_network

from oracles import bayes_ball_d_separated, enumerate_conditional, is_chordal, random_bayes_net


def binary(name):
    return DiscreteVariable(name, ("0", "1"))


def chain_abc():
    a, b, c = binary("A"), binary("B"), binary("C")
    cpts = {
        "A": Factor([a], [0.3, 0.7]),
        "B": Factor([a, b], [[0.9, 0.1], [0.2, 0.8]]),
        "C": Factor([b, c], [[0.6, 0.4], [0.25, 0.75]]),
    }
    return bayesian_network([a, b, c], cpts)


def collider_abc():
    a, b, c = binary("A"), binary("B"), binary("C")
    table = np.array([[[0.9, 0.1], [0.5, 0.5]], [[0.3, 0.7], [0.05, 0.95]]])
    cpts = {
        "A": Factor([a], [0.4, 0.6]),
        "C": Factor([c], [0.55, 0.45]),
        "B": Factor([a, c, b], table),
    }
    return bayesian_network([a, b, c], cpts)


class TestDSeparation:
    def test_chain_blocked_by_middle(self):
        dag = chain_abc()
        assert d_separated(dag, {"A"}, {"C"}, {"B"})
        assert not d_separated(dag, {"A"}, {"C"}, set())

    def test_collider_rules(self):
        dag = collider_abc()
        assert d_separated(dag, {"A"}, {"C"}, set())
        assert not d_separated(dag, {"A"}, {"C"}, {"B"})

    def test_unknown_variable_rejected(self):
        with pytest.raises(GraphError):
            d_separated(chain_abc(), {"A"}, {"Q"}, set())

    def test_overlapping_sets_rejected(self):
        with pytest.raises(GraphError):
            d_separated(chain_abc(), {"A"}, {"A"}, set())

    def test_agrees_with_bayes_ball_oracle_on_random_dags(self, rng):
        for _ in range(120):
            n = int(rng.integers(3, 8))
            bn = random_bayes_net(rng, n)
            names = list(bn.variables)
            rng.shuffle(names)
            x, y = names[0], names[1]
            zs = set(names[2 : 2 + int(rng.integers(0, n - 2 + 1))])
            got = d_separated(bn, {x}, {y}, zs)
            want = bayes_ball_d_separated(bn.parents, {x}, {y}, zs)
            assert got == want

    def test_dsep_implies_numeric_independence(self, rng):
        found = 0
        for _ in range(200):
            bn = random_bayes_net(rng, int(rng.integers(3, 6)))
            names = list(bn.variables)
            rng.shuffle(names)
            x, y = names[0], names[1]
            zs = list(names[2 : 2 + int(rng.integers(0, 2))])
            if not d_separated(bn, {x}, {y}, set(zs)):
                continue
            found += 1
            z_assign = {z: 0 for z in zs}
            base = enumerate_conditional(bn, x, z_assign)
            for y_state in range(bn.variables[y].cardinality):
                cond = enumerate_conditional(bn, x, {**z_assign, y: y_state})
                assert np.max(np.abs(cond - base)) <= 1e-9
            if found >= 25:
                break
        assert found >= 10  # the sweep must actually exercise separated pairs


class TestMoralize:
    def test_chain_adds_no_edge(self):
        adj = moralize(chain_abc())
        assert adj["A"] == {"B"}
        assert adj["B"] == {"A", "C"}
        assert adj["C"] == {"B"}

    def test_collider_marries_parents(self):
        adj = moralize(collider_abc())
        assert adj["A"] == {"B", "C"}
        assert adj["C"] == {"B", "A"}

    def test_utility_parents_married_but_node_dropped(self):
        a, b = binary("A"), binary("B")
        model = InfluenceDiagram(
            [a, b, DiscreteVariable("U", ("u",))],
            {"A": CHANCE, "B": CHANCE, "U": UTILITY},
            [("A", "U"), ("B", "U")],
            cpts={"A": Factor([a], [0.5, 0.5]), "B": Factor([b], [0.5, 0.5])},
            utilities={"U": Factor([a, b], np.zeros((2, 2)), allow_negative=True)},
        )
        adj = moralize(model)
        assert "U" not in adj
        assert adj["A"] == {"B"}

    def test_matches_pairwise_parent_oracle_on_random_dags(self, rng):
        for _ in range(30):
            bn = random_bayes_net(rng, int(rng.integers(3, 9)))
            adj = moralize(bn)
            want = {n: set() for n in bn.variables}
            for child, ps in bn.parents.items():
                for p in ps:
                    want[child].add(p)
                    want[p].add(child)
                for p, q in itertools.combinations(ps, 2):
                    want[p].add(q)
                    want[q].add(p)
            assert adj == want


class TestTriangulate:
    def test_tree_has_zero_fill(self):
        graph = {"A": {"B"}, "B": {"A", "C", "D"}, "C": {"B"}, "D": {"B"}}
        _order, cliques = triangulate(graph)
        assert sorted(sorted(c) for c in cliques) == [["A", "B"], ["B", "C"], ["B", "D"]]

    def test_four_cycle_fills_one_edge(self):
        graph = {
            "A": {"B", "D"},
            "B": {"A", "C"},
            "C": {"B", "D"},
            "D": {"C", "A"},
        }
        _order, cliques = triangulate(graph)
        assert len(cliques) == 2
        assert all(len(c) == 3 for c in cliques)

    def test_random_graphs_become_chordal(self, rng):
        for _ in range(40):
            n = 8
            names = [f"N{i}" for i in range(n)]
            adj = {m: set() for m in names}
            for i, j in itertools.combinations(range(n), 2):
                if rng.random() < 0.3:
                    adj[names[i]].add(names[j])
                    adj[names[j]].add(names[i])
            order, cliques = triangulate(adj)
            # Rebuild the filled graph implied by the cliques.
            filled = {m: set() for m in names}
            for c in cliques:
                for u, v in itertools.combinations(sorted(c), 2):
                    filled[u].add(v)
                    filled[v].add(u)
            for m in names:  # fill may only add edges
                assert adj[m] <= filled[m]
            assert is_chordal(filled)
            assert sorted(order.order) == sorted(names)


class TestStrongOrder:
    def test_single_decision_unobserved_chance_first(self):
        c, d = binary("C"), binary("D")
        model = InfluenceDiagram(
            [c, d, DiscreteVariable("U", ("u",))],
            {"C": CHANCE, "D": DECISION, "U": UTILITY},
            [("C", "U"), ("D", "U")],
            cpts={"C": Factor([c], [0.5, 0.5])},
            utilities={"U": Factor([c, d], np.zeros((2, 2)), allow_negative=True)},
            decision_order=["D"],
        )
        order = strong_order(model)
        assert order.order == ("C", "D")
        assert order.kind == "strong"

    def test_hidden_observation_decision_chain(self):
        h, o, d = binary("H"), binary("O"), binary("D")
        model = InfluenceDiagram(
            [h, o, d, DiscreteVariable("U", ("u",))],
            {"H": CHANCE, "O": CHANCE, "D": DECISION, "U": UTILITY},
            [("H", "O"), ("O", "D"), ("D", "U"), ("H", "U")],
            cpts={
                "H": Factor([h], [0.5, 0.5]),
                "O": Factor([h, o], [[0.9, 0.1], [0.1, 0.9]]),
            },
            utilities={"U": Factor([d, h], np.zeros((2, 2)), allow_negative=True)},
            decision_order=["D"],
        )
        order = strong_order(model)
        assert order.order == ("H", "D", "O")
        # Constraint-satisfaction oracle: the returned order must be in the set
        # of permutations satisfying the known/unknown position constraints.
        valid = [
            perm
            for perm in itertools.permutations(["H", "O", "D"])
            if perm.index("H") < perm.index("D") < perm.index("O")
        ]
        assert order.order in valid

    def test_position_constraints_on_two_decision_model(self):
        names = ["S1", "O1", "D1", "S2", "O2", "D2"]
        variables = [binary(n) for n in names]
        by_id = {v.id: v for v in variables}
        cpts = {
            "S1": Factor([by_id["S1"]], [0.5, 0.5]),
            "O1": Factor([by_id["S1"], by_id["O1"]], [[0.8, 0.2], [0.2, 0.8]]),
            "S2": Factor([by_id["S1"], by_id["S2"]], [[0.7, 0.3], [0.3, 0.7]]),
            "O2": Factor([by_id["S2"], by_id["O2"]], [[0.8, 0.2], [0.2, 0.8]]),
        }
        model = InfluenceDiagram(
            variables + [DiscreteVariable("U", ("u",))],
            {**{n: CHANCE for n in names if not n.startswith("D")},
             "D1": DECISION, "D2": DECISION, "U": UTILITY},
            [
                ("S1", "O1"), ("S1", "S2"), ("S2", "O2"),
                ("O1", "D1"), ("O2", "D2"), ("D1", "D2"),
                ("S2", "U"), ("D2", "U"),
            ],
            cpts=cpts,
            utilities={"U": Factor([by_id["S2"], variables[5]], np.zeros((2, 2)), allow_negative=True)},
            decision_order=["D1", "D2"],
        )
        order = strong_order(model)
        pos = {n: i for i, n in enumerate(order.order)}
        # Unobserved chance variables come before every decision.
        for hidden in ("S1", "S2"):
            assert pos[hidden] < pos["D2"] < pos["D1"]
        # Observations are eliminated after the decision they inform.
        assert pos["D1"] < pos["O1"]
        assert pos["D2"] < pos["O2"]
        # O2 is unknown at D1, so it must be eliminated before D1.
        assert pos["O2"] < pos["D1"]

    def test_cyclic_information_constraint_rejected(self):
        d1, d2 = binary("D1"), binary("D2")
        model_args = dict(
            cpts={},
            utilities={},
        )
        with pytest.raises(GraphError):
            model = InfluenceDiagram(
                [d1, d2],
                {"D1": DECISION, "D2": DECISION},
                [("D2", "D1")],
                decision_order=["D1", "D2"],
                **model_args,
            )
            strong_order(model)


class TestJunctionTree:
    def _vars(self, names, card=2):
        return {n: DiscreteVariable(n, tuple(str(i) for i in range(card))) for n in names}

    def test_two_cliques_share_one_variable(self):
        variables = self._vars(["A", "B", "C"])
        jt = build_junction_tree(
            [frozenset({"A", "B"}), frozenset({"B", "C"})], variables
        )
        assert len(jt.edges) == 1
        _i, _j, sep = jt.edges[0]
        assert sep == {"B"}

    def test_chain_of_three_cliques(self):
        variables = self._vars(["A", "B", "C", "D"])
        jt = build_junction_tree(
            [frozenset({"A", "B"}), frozenset({"B", "C"}), frozenset({"C", "D"})],
            variables,
        )
        assert jt.satisfies_running_intersection()
        assert len(jt.edges) == 2

    def test_disconnected_components_joined(self):
        variables = self._vars(["A", "B", "C", "D"])
        jt = build_junction_tree(
            [frozenset({"A", "B"}), frozenset({"C", "D"})], variables
        )
        assert len(jt.edges) == 1
        assert jt.edges[0][2] == frozenset()

    def test_rip_on_triangulated_random_graphs(self, rng):
        for _ in range(25):
            names = [f"N{i}" for i in range(10)]
            variables = self._vars(names, card=3)
            adj = {m: set() for m in names}
            for i, j in itertools.combinations(range(10), 2):
                if rng.random() < 0.25:
                    adj[names[i]].add(names[j])
                    adj[names[j]].add(names[i])
            _order, cliques = triangulate(adj)
            jt = build_junction_tree(cliques, variables)
            # Independent per-variable connectivity oracle.
            for var in names:
                members = [i for i, c in enumerate(jt.cliques) if var in c]
                if not members:
                    continue
                reached = {members[0]}
                frontier = [members[0]]
                while frontier:
                    i = frontier.pop()
                    for j, _sep in jt.neighbors(i):
                        if j in members and j not in reached:
                            reached.add(j)
                            frontier.append(j)
                assert reached == set(members)


class TestTotalCliqueSize:
    def test_single_clique_two_binary(self):
        variables = {
            "A": DiscreteVariable("A", ("0", "1")),
            "B": DiscreteVariable("B", ("0", "1")),
        }
        jt = build_junction_tree([frozenset({"A", "B"})], variables)
        assert total_clique_size(jt) == 4

    def test_two_ternary_cliques(self):
        variables = {
            n: DiscreteVariable(n, ("0", "1", "2")) for n in ("A", "B", "C")
        }
        jt = build_junction_tree(
            [frozenset({"A", "B"}), frozenset({"B", "C"})], variables
        )
        assert total_clique_size(jt) == 18


class TestInfluenceDiagramInvariants:
    def test_cycle_rejected(self):
        a, b = binary("A"), binary("B")
        with pytest.raises(GraphError):
            InfluenceDiagram(
                [a, b],
                {"A": CHANCE, "B": CHANCE},
                [("A", "B"), ("B", "A")],
                cpts={},
                check_cpts=False,
            )

    def test_utility_with_children_rejected(self):
        a = binary("A")
        u = DiscreteVariable("U", ("u",))
        with pytest.raises(GraphError):
            InfluenceDiagram(
                [a, u],
                {"A": CHANCE, "U": UTILITY},
                [("U", "A")],
                cpts={},
                check_cpts=False,
            )

    def test_unnormalized_cpt_rejected(self):
        a = binary("A")
        with pytest.raises(GraphError):
            InfluenceDiagram(
                [a],
                {"A": CHANCE},
                [],
                cpts={"A": Factor([a], [0.5, 0.6])},
            )

    def test_decision_order_must_cover_decisions(self):
        d = binary("D")
        with pytest.raises(GraphError):
            InfluenceDiagram([d], {"D": DECISION}, [], decision_order=[])
