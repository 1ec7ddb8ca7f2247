"""Independent brute-force oracles used to check the engine.

Everything here recomputes results by direct enumeration or reachability,
deliberately avoiding the code paths under test.  Factors are used only as
containers (scope + table lookup).
"""

from __future__ import annotations

import itertools

import numpy as np

from midas.factors import DiscreteVariable, Factor


def oracle_multiply(a: Factor, b: Factor) -> Factor:
    """Nested-loop product over the union scope."""
    union = list(a.scope) + [v for v in b.scope if v.id not in a]
    shape = tuple(v.cardinality for v in union)
    out = np.empty(shape)
    for idx in np.ndindex(*shape):
        assignment = {v.id: i for v, i in zip(union, idx)}
        out[idx] = a.get(assignment) * b.get(assignment)
    return Factor(union, out, allow_negative=True)


def oracle_sum_out(f: Factor, var_id: str) -> Factor:
    keep = [v for v in f.scope if v.id != var_id]
    card = f.variable(var_id).cardinality
    shape = tuple(v.cardinality for v in keep)
    out = np.zeros(shape)
    for idx in np.ndindex(*shape):
        assignment = {v.id: i for v, i in zip(keep, idx)}
        total = 0.0
        for s in range(card):
            total += f.get({**assignment, var_id: s})
        out[idx] = total
    return Factor(keep, out, allow_negative=True)


def oracle_max_out(f: Factor, var_id: str) -> tuple[Factor, np.ndarray]:
    """Linear-scan max and first-winner argmax."""
    keep = [v for v in f.scope if v.id != var_id]
    card = f.variable(var_id).cardinality
    shape = tuple(v.cardinality for v in keep)
    best = np.empty(shape)
    arg = np.empty(shape, dtype=int)
    for idx in np.ndindex(*shape):
        assignment = {v.id: i for v, i in zip(keep, idx)}
        values = [f.get({**assignment, var_id: s}) for s in range(card)]
        m = max(values)
        best[idx] = m
        arg[idx] = values.index(m)
    return Factor(keep, best, allow_negative=True), arg


def oracle_reduce(f: Factor, assignments: dict[str, int]) -> Factor:
    out = np.empty(f.values.shape)
    for idx in np.ndindex(*f.values.shape):
        joint = {v.id: i for v, i in zip(f.scope, idx)}
        consistent = all(
            joint.get(var, obs) == obs for var, obs in assignments.items()
        )
        out[idx] = f.values[idx] if consistent else 0.0
    return Factor(f.scope, out, allow_negative=True)


def bayes_ball_d_separated(parents, xs, ys, zs) -> bool:
    """Reachability oracle: active-trail search over (node, direction) states.

    `parents` maps node -> list of parents.  Direction 'up' means the ball
    arrived from a child, 'down' means it arrived from a parent.
    """
    xs, ys, zs = set(xs), set(ys), set(zs)
    children: dict[str, list[str]] = {n: [] for n in parents}
    for child, ps in parents.items():
        for p in ps:
            children[p].append(child)

    ancestors_of_z = set()
    stack = list(zs)
    while stack:
        n = stack.pop()
        if n in ancestors_of_z:
            continue
        ancestors_of_z.add(n)
        stack.extend(parents[n])

    frontier = [(x, "up") for x in xs]
    visited = set(frontier)
    while frontier:
        node, direction = frontier.pop()
        if node in ys:
            return False
        moves = []
        if direction == "up" and node not in zs:
            moves += [(p, "up") for p in parents[node]]
            moves += [(c, "down") for c in children[node]]
        elif direction == "down":
            if node not in zs:
                moves += [(c, "down") for c in children[node]]
            if node in ancestors_of_z:
                moves += [(p, "up") for p in parents[node]]
        for move in moves:
            if move not in visited:
                visited.add(move)
                frontier.append(move)
    return True


def is_chordal(adj: dict[str, set[str]]) -> bool:
    """Simplicial-elimination check: repeatedly remove a simplicial vertex."""
    graph = {n: set(nbrs) for n, nbrs in adj.items()}
    while graph:
        simplicial = None
        for n in sorted(graph):
            nbrs = list(graph[n])
            if all(
                nbrs[j] in graph[nbrs[i]]
                for i in range(len(nbrs))
                for j in range(i + 1, len(nbrs))
            ):
                simplicial = n
                break
        if simplicial is None:
            return False
        for nbr in graph[simplicial]:
            graph[nbr].discard(simplicial)
        del graph[simplicial]
    return True


def enumerate_conditional(model, target: str, evidence: dict[str, int]) -> np.ndarray:
    """P(target | evidence) by full-joint enumeration over all chance nodes."""
    variables = list(model.variables.values())
    order = [v.id for v in variables]
    cards = [v.cardinality for v in variables]
    target_card = model.variables[target].cardinality
    dist = np.zeros(target_card)
    for idx in itertools.product(*[range(c) for c in cards]):
        joint = dict(zip(order, idx))
        if any(joint[var] != val for var, val in evidence.items()):
            continue
        p = 1.0
        for node in model.chance_nodes:
            p *= model.cpts[node].get(joint)
        dist[joint[target]] += p
    total = dist.sum()
    if total <= 0:
        raise ZeroDivisionError("evidence has zero probability")
    return dist / total


def random_factor(
    rng: np.random.Generator,
    variables: list[DiscreteVariable],
    *,
    low: float = 0.0,
    high: float = 1.0,
) -> Factor:
    shape = tuple(v.cardinality for v in variables)
    return Factor(variables, rng.uniform(low, high, size=shape))


def random_bayes_net(rng: np.random.Generator, n_vars: int, max_states: int = 3,
                     edge_prob: float = 0.4):
    """Random small Bayesian network with strictly positive CPTs."""
    from midas.graphs import bayesian_network

    variables = [
        DiscreteVariable(f"V{i}", tuple(f"s{j}" for j in range(rng.integers(2, max_states + 1))))
        for i in range(n_vars)
    ]
    cpts = {}
    for i, v in enumerate(variables):
        parents = [variables[j] for j in range(i) if rng.random() < edge_prob]
        scope = parents + [v]
        shape = tuple(u.cardinality for u in scope)
        raw = rng.uniform(0.05, 1.0, size=shape)
        raw /= raw.sum(axis=-1, keepdims=True)
        cpts[v.id] = Factor(scope, raw)
    return bayesian_network(variables, cpts)
