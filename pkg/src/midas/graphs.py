"""Graph representations and the compilation pipeline for decision models.

Covers directed acyclic graphs over chance/decision/utility nodes,
d-separation, moralization, min-fill triangulation, junction-tree
construction, and strong elimination orders that respect the temporal
order of observations and decisions.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .factors import DiscreteVariable, Factor, FactorError

__all__ = [
    "GraphError",
    "CHANCE",
    "DECISION",
    "UTILITY",
    "InfluenceDiagram",
    "JunctionTree",
    "EliminationOrder",
    "d_separated",
    "moralize",
    "triangulate",
    "strong_order",
    "build_junction_tree",
    "total_clique_size",
]

CHANCE = "chance"
DECISION = "decision"
UTILITY = "utility"


class GraphError(ValueError):
    """Raised when a graph violates a structural contract."""


class InfluenceDiagram:
    """Chance/decision/utility nodes with arcs, CPTs, and a total decision order.

    Arcs into decision nodes are information arcs: they declare what is
    observed before that decision is taken.  No-forgetting (later decisions
    know everything earlier ones knew) is implied rather than drawn.
    A diagram without decision or utility nodes is an ordinary Bayesian
    network and is accepted everywhere a network is expected.
    """

    def __init__(
        self,
        variables: Sequence[DiscreteVariable],
        kinds: Mapping[str, str],
        arcs: Iterable[tuple[str, str]],
        cpts: Mapping[str, Factor] | None = None,
        utilities: Mapping[str, Factor] | None = None,
        decision_order: Sequence[str] = (),
        check_cpts: bool = True,
    ):
        self.variables = {v.id: v for v in variables}
        self.kinds = dict(kinds)
        for name in self.kinds:
            if self.kinds[name] not in (CHANCE, DECISION, UTILITY):
                raise GraphError(f"unknown node kind {self.kinds[name]!r} for {name!r}")
        self.parents: dict[str, list[str]] = {n: [] for n in self.kinds}
        self.children: dict[str, list[str]] = {n: [] for n in self.kinds}
        self.arcs = []
        for parent, child in arcs:
            if parent not in self.kinds or child not in self.kinds:
                raise GraphError(f"arc ({parent!r}, {child!r}) references unknown node")
            self.parents[child].append(parent)
            self.children[parent].append(child)
            self.arcs.append((parent, child))
        self.cpts = dict(cpts or {})
        self.utilities = dict(utilities or {})
        self.decision_order = list(decision_order)

        self._check_structure()
        if check_cpts:
            self._check_tables()

    # -- structural invariants ------------------------------------------

    def _check_structure(self) -> None:
        if self._find_cycle():
            raise GraphError("arc graph is cyclic")
        decisions = [n for n, k in self.kinds.items() if k == DECISION]
        if sorted(decisions) != sorted(self.decision_order):
            raise GraphError(
                "decision_order must list every decision node exactly once; "
                f"got {self.decision_order} for decisions {decisions}"
            )
        for n, k in self.kinds.items():
            if k == UTILITY and self.children[n]:
                raise GraphError(f"utility node {n!r} has children")

    def _find_cycle(self) -> bool:
        indegree = {n: len(self.parents[n]) for n in self.kinds}
        queue = deque(n for n, d in indegree.items() if d == 0)
        seen = 0
        while queue:
            n = queue.popleft()
            seen += 1
            for c in self.children[n]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    queue.append(c)
        return seen != len(self.kinds)

    def _check_tables(self) -> None:
        for n, k in self.kinds.items():
            if k == CHANCE:
                if n not in self.cpts:
                    raise GraphError(f"chance node {n!r} has no CPT")
                cpt = self.cpts[n]
                expected = {n, *self.chance_parents(n)}
                if set(cpt.scope_ids) != expected:
                    raise GraphError(
                        f"CPT scope for {n!r} is {cpt.scope_ids}, expected {sorted(expected)}"
                    )
                sums = cpt.values.sum(axis=cpt.axis(n))
                if not np.allclose(sums, 1.0, atol=1e-9):
                    raise GraphError(
                        f"CPT for {n!r} is not normalized per parent configuration "
                        f"(max deviation {np.max(np.abs(sums - 1.0)):.3g})"
                    )
            elif k == UTILITY:
                if n not in self.utilities:
                    raise GraphError(f"utility node {n!r} has no table")
                table = self.utilities[n]
                if set(table.scope_ids) != set(self.parents[n]):
                    raise GraphError(
                        f"utility scope for {n!r} is {table.scope_ids}, "
                        f"expected parents {sorted(self.parents[n])}"
                    )

    # -- accessors -------------------------------------------------------

    def nodes_of_kind(self, kind: str) -> list[str]:
        return [n for n, k in self.kinds.items() if k == kind]

    @property
    def chance_nodes(self) -> list[str]:
        return self.nodes_of_kind(CHANCE)

    @property
    def decision_nodes(self) -> list[str]:
        return self.nodes_of_kind(DECISION)

    @property
    def utility_nodes(self) -> list[str]:
        return self.nodes_of_kind(UTILITY)

    def chance_parents(self, node: str) -> list[str]:
        """Parents of a node, ignoring none (CPT scopes are node + parents)."""
        return list(self.parents[node])

    def informational_predecessors(self, decision: str) -> list[str]:
        """Everything known when `decision` is taken, under no-forgetting.

        Explicit information parents of this decision plus, for every earlier
        decision, that decision itself and its information parents.
        """
        known: list[str] = []
        for d in self.decision_order:
            for p in self.parents[d]:
                if p not in known:
                    known.append(p)
            if d == decision:
                return known
            if d not in known:
                known.append(d)
        raise GraphError(f"{decision!r} is not a decision node")

    def topological_order(self) -> list[str]:
        indegree = {n: len(self.parents[n]) for n in self.kinds}
        queue = deque(sorted(n for n, d in indegree.items() if d == 0))
        order = []
        while queue:
            n = queue.popleft()
            order.append(n)
            for c in self.children[n]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    queue.append(c)
        return order

    def ancestors_of(self, nodes: Iterable[str]) -> set[str]:
        result = set()
        stack = list(nodes)
        while stack:
            n = stack.pop()
            if n in result:
                continue
            result.add(n)
            stack.extend(self.parents[n])
        return result

    def with_cpt(self, node: str, cpt: Factor) -> "InfluenceDiagram":
        cpts = dict(self.cpts)
        cpts[node] = cpt
        return InfluenceDiagram(
            list(self.variables.values()),
            self.kinds,
            self.arcs,
            cpts,
            self.utilities,
            self.decision_order,
        )


def bayesian_network(
    variables: Sequence[DiscreteVariable],
    cpts: Mapping[str, Factor],
    check_cpts: bool = True,
) -> InfluenceDiagram:
    """A pure chance-node diagram; parent sets are read off the CPT scopes."""
    kinds = {v.id: CHANCE for v in variables}
    arcs = []
    for node, cpt in cpts.items():
        for pid in cpt.scope_ids:
            if pid != node:
                arcs.append((pid, node))
    return InfluenceDiagram(variables, kinds, arcs, cpts, check_cpts=check_cpts)


# -- d-separation ------------------------------------------------------


def d_separated(
    dag: InfluenceDiagram,
    xs: Iterable[str],
    ys: Iterable[str],
    zs: Iterable[str] = (),
) -> bool:
    """True iff every path between xs and ys is blocked by zs.

    Implemented by separation in the moralized ancestral graph; the test
    suite cross-checks against an independent Bayes-ball reachability oracle.
    Utility nodes take no part: they are payoff sinks, not variables.
    """
    xs, ys, zs = set(xs), set(ys), set(zs)
    for name in xs | ys | zs:
        if name not in dag.kinds:
            raise GraphError(f"unknown variable id {name!r}")
        if dag.kinds[name] == UTILITY:
            raise GraphError(f"{name!r} is a utility node; d-separation is over chance/decision nodes")
    if (xs & ys) or (xs & zs) or (ys & zs):
        raise GraphError("d-separation requires disjoint node sets")

    relevant = dag.ancestors_of(xs | ys | zs)
    # Moralize the ancestral subgraph (utility nodes never appear: they are
    # childless, so they are ancestors only of themselves).
    adj: dict[str, set[str]] = {n: set() for n in relevant if dag.kinds[n] != UTILITY}
    for child in adj:
        ps = [p for p in dag.parents[child] if p in adj]
        for p in ps:
            adj[p].add(child)
            adj[child].add(p)
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                adj[ps[i]].add(ps[j])
                adj[ps[j]].add(ps[i])
    # Remove the conditioning set and look for an x-y path.
    frontier = deque(x for x in xs if x in adj)
    seen = set(frontier)
    while frontier:
        n = frontier.popleft()
        if n in ys:
            return False
        for m in adj[n]:
            if m not in seen and m not in zs:
                seen.add(m)
                frontier.append(m)
    return True


# -- moralization, triangulation, junction trees -----------------------


def moralize(dag: InfluenceDiagram) -> dict[str, set[str]]:
    """Undirected moral graph: marry parents, drop directions, drop utility nodes.

    Utility parent sets are still married, so their scopes survive as cliques.
    """
    adj: dict[str, set[str]] = {
        n: set() for n, k in dag.kinds.items() if k != UTILITY
    }
    for child in dag.kinds:
        ps = [p for p in dag.parents[child] if dag.kinds[p] != UTILITY]
        if dag.kinds[child] != UTILITY:
            for p in ps:
                adj[p].add(child)
                adj[child].add(p)
        for i in range(len(ps)):
            for j in range(i + 1, len(ps)):
                adj[ps[i]].add(ps[j])
                adj[ps[j]].add(ps[i])
    return adj


@dataclass(frozen=True)
class EliminationOrder:
    """A permutation of non-utility variable ids, plain or strong."""

    order: tuple[str, ...]
    kind: str = "plain"  # plain | strong


def _min_fill_cost(adj: Mapping[str, set[str]], node: str) -> int:
    nbrs = list(adj[node])
    cost = 0
    for i in range(len(nbrs)):
        for j in range(i + 1, len(nbrs)):
            if nbrs[j] not in adj[nbrs[i]]:
                cost += 1
    return cost


def _clique_weight(
    adj: Mapping[str, set[str]], node: str, cardinality: Mapping[str, int]
) -> float:
    w = float(cardinality.get(node, 2))
    for nbr in adj[node]:
        w *= cardinality.get(nbr, 2)
    return w


def _eliminate_in_order(
    graph: Mapping[str, set[str]], order: Sequence[str]
) -> tuple[list[frozenset[str]], int]:
    """Run elimination along `order`; return elimination cliques and fill count."""
    adj = {n: set(nbrs) for n, nbrs in graph.items()}
    cliques = []
    fills = 0
    for node in order:
        nbrs = list(adj[node])
        cliques.append(frozenset([node, *nbrs]))
        for i in range(len(nbrs)):
            for j in range(i + 1, len(nbrs)):
                a, b = nbrs[i], nbrs[j]
                if b not in adj[a]:
                    adj[a].add(b)
                    adj[b].add(a)
                    fills += 1
        for nbr in nbrs:
            adj[nbr].discard(node)
        del adj[node]
    return cliques, fills


def _prune_to_maximal(cliques: Sequence[frozenset[str]]) -> list[frozenset[str]]:
    ordered = sorted(set(cliques), key=len, reverse=True)
    maximal: list[frozenset[str]] = []
    for c in ordered:
        if not any(c < m for m in maximal):
            maximal.append(c)
    return maximal


def triangulate(
    graph: Mapping[str, set[str]],
    cardinality: Mapping[str, int] | None = None,
    restricted_blocks: Sequence[Sequence[str]] | None = None,
) -> tuple[EliminationOrder, list[frozenset[str]]]:
    """Min-fill triangulation; returns the elimination order and maximal cliques.

    Ties break by minimum clique weight, then by variable id.  When
    `restricted_blocks` is given, each block is exhausted before the next one
    starts (used for strong orders); otherwise all nodes form one block.
    """
    cardinality = cardinality or {}
    adj = {n: set(nbrs) for n, nbrs in graph.items()}
    blocks = (
        [list(b) for b in restricted_blocks]
        if restricted_blocks is not None
        else [sorted(adj)]
    )
    order: list[str] = []
    cliques: list[frozenset[str]] = []
    for block in blocks:
        remaining = set(block)
        while remaining:
            best = min(
                sorted(remaining),
                key=lambda n: (
                    _min_fill_cost(adj, n),
                    _clique_weight(adj, n, cardinality),
                    n,
                ),
            )
            remaining.discard(best)
            order.append(best)
            nbrs = list(adj[best])
            cliques.append(frozenset([best, *nbrs]))
            for i in range(len(nbrs)):
                for j in range(i + 1, len(nbrs)):
                    a, b = nbrs[i], nbrs[j]
                    if b not in adj[a]:
                        adj[a].add(b)
                        adj[b].add(a)
            for nbr in nbrs:
                adj[nbr].discard(best)
            del adj[best]
    kind = "plain" if restricted_blocks is None else "strong"
    return EliminationOrder(tuple(order), kind), _prune_to_maximal(cliques)


def strong_order(dag: InfluenceDiagram) -> EliminationOrder:
    """Elimination order compatible with the temporal order of decisions.

    Eliminates, first to last: chance variables never observed; then the last
    decision; then the block observed just before it; and so on back to the
    variables known before the first decision.  Within each block min-fill
    chooses, so position(v) < position(D_k) for everything unobserved at D_k
    and position(D_k) < position(w) for everything known at D_k.
    """
    decisions = dag.decision_order
    known_at: dict[str, int] = {}
    for i, d in enumerate(decisions):
        for p in dag.parents[d]:
            if dag.kinds[p] == DECISION:
                if decisions.index(p) >= i:
                    raise GraphError(
                        f"cyclic information constraint: decision {p!r} informs earlier {d!r}"
                    )
                continue
            known_at.setdefault(p, i)

    blocks: list[list[str]] = []
    never_observed = [
        n
        for n, k in dag.kinds.items()
        if k == CHANCE and n not in known_at
    ]
    blocks.append(sorted(never_observed))
    for i in range(len(decisions) - 1, -1, -1):
        blocks.append([decisions[i]])
        blocks.append(sorted(n for n, at in known_at.items() if at == i))

    moral = moralize(dag)
    cards = {n: v.cardinality for n, v in dag.variables.items()}
    order, _ = triangulate(moral, cards, restricted_blocks=blocks)
    return EliminationOrder(order.order, kind="strong")


@dataclass
class JunctionTree:
    """A clique tree with separators, satisfying the running intersection property."""

    cliques: list[frozenset[str]]
    edges: list[tuple[int, int, frozenset[str]]]
    variables: dict[str, DiscreteVariable]
    potentials: list[Factor] = field(default_factory=list)

    def neighbors(self, i: int) -> list[tuple[int, frozenset[str]]]:
        out = []
        for a, b, sep in self.edges:
            if a == i:
                out.append((b, sep))
            elif b == i:
                out.append((a, sep))
        return out

    def containing_clique(self, var_ids: Iterable[str]) -> int:
        wanted = set(var_ids)
        for i, c in enumerate(self.cliques):
            if wanted <= c:
                return i
        raise GraphError(f"no clique contains {sorted(wanted)}")

    def satisfies_running_intersection(self) -> bool:
        for var in self.variables:
            members = [i for i, c in enumerate(self.cliques) if var in c]
            if not members:
                continue
            # BFS within the induced subtree.
            seen = {members[0]}
            frontier = deque([members[0]])
            while frontier:
                i = frontier.popleft()
                for j, _sep in self.neighbors(i):
                    if j not in seen and var in self.cliques[j]:
                        seen.add(j)
                        frontier.append(j)
            if seen != set(members):
                return False
        return True


def build_junction_tree(
    cliques: Sequence[frozenset[str]],
    variables: Mapping[str, DiscreteVariable],
) -> JunctionTree:
    """Maximum-weight spanning tree over clique-intersection sizes.

    Disconnected components are joined by empty separators, so the result is
    always a single tree.
    """
    cliques = list(cliques)
    n = len(cliques)
    if n == 0:
        raise GraphError("cannot build a junction tree from zero cliques")
    candidates = []
    for i in range(n):
        for j in range(i + 1, n):
            sep = cliques[i] & cliques[j]
            candidates.append((len(sep), i, j, sep))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))

    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges: list[tuple[int, int, frozenset[str]]] = []
    for _w, i, j, sep in candidates:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j, sep))
        if len(edges) == n - 1:
            break

    jt = JunctionTree(cliques, edges, dict(variables))
    if not jt.satisfies_running_intersection():
        raise GraphError("junction tree violates the running intersection property")
    return jt


def total_clique_size(jt: JunctionTree) -> int:
    """Sum over cliques of the product of member-variable cardinalities."""
    total = 0
    for c in jt.cliques:
        size = 1
        for var in c:
            size *= jt.variables[var].cardinality
        total += size
    return total
