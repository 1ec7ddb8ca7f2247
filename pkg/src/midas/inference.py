"""Exact inference: junction-tree propagation and decision optimization.

Two solve paths are kept deliberately separate.  Bayesian-network reasoning
(what-if consequence forecasts) goes through junction-tree propagation.
Decision optimization goes through variable elimination along a strong order,
carrying (probability, probability-weighted utility) factor pairs so that no
division happens at impossible information scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import itertools

import numpy as np

from .factors import (
    ContradictoryEvidenceError,
    DiscreteVariable,
    Evidence,
    Factor,
    FactorError,
    add,
    marginalize_sum,
    multiply,
    reduce,
)
from .graphs import (
    CHANCE,
    DECISION,
    GraphError,
    InfluenceDiagram,
    JunctionTree,
    build_junction_tree,
    moralize,
    strong_order,
    triangulate,
)

__all__ = [
    "Policy",
    "SolveResult",
    "compile_network",
    "propagate",
    "joint_brute_force",
    "solve_id",
    "enumerate_policies",
    "expected_utility_of_policy",
]

JOINT_STATE_GUARD = 10**7
POLICY_COUNT_GUARD = 10**6


# ---------------------------------------------------------------------------
# Junction-tree propagation
# ---------------------------------------------------------------------------


def compile_network(model: InfluenceDiagram) -> JunctionTree:
    """Moralize, triangulate (min-fill), and build a calibrated-ready clique tree.

    Every CPT is assigned to one covering clique; clique potentials are the
    products of their assigned CPTs, extended to full clique scope.
    """
    if model.decision_nodes:
        raise GraphError(
            "compile_network expects a pure chance network; "
            "convert decisions to chance nodes first"
        )
    moral = moralize(model)
    cards = {n: v.cardinality for n, v in model.variables.items()}
    _, cliques = triangulate(moral, cards)
    jt = build_junction_tree(cliques, model.variables)

    assigned: dict[int, list[Factor]] = {i: [] for i in range(len(jt.cliques))}
    for node in model.chance_nodes:
        cpt = model.cpts[node]
        idx = jt.containing_clique(cpt.scope_ids)
        assigned[idx].append(cpt)

    potentials = []
    for i, clique in enumerate(jt.cliques):
        scope = [model.variables[n] for n in sorted(clique)]
        pot = Factor.unit(scope)
        for cpt in assigned[i]:
            pot = multiply(pot, cpt)
        potentials.append(pot)
    jt.potentials = potentials
    return jt


def _project(f: Factor, keep: frozenset[str]) -> Factor:
    for var_id in [v.id for v in f.scope if v.id not in keep]:
        f = marginalize_sum(f, var_id)
    return f


def propagate(
    jt: JunctionTree, evidence: Evidence | None = None
) -> tuple[dict[str, np.ndarray], float]:
    """Two-phase message passing; returns ({var: P(var | e)}, likelihood P(e)).

    Raises ContradictoryEvidenceError when the evidence has zero likelihood.
    """
    evidence = evidence or Evidence()
    for var_id, idx in evidence.items():
        if var_id not in jt.variables:
            raise FactorError(f"evidence variable {var_id!r} is not in the model")
        if not 0 <= idx < jt.variables[var_id].cardinality:
            raise FactorError(f"evidence index {idx} out of range for {var_id!r}")

    potentials = [reduce(pot, evidence) for pot in jt.potentials]
    n = len(jt.cliques)

    # Root the tree at clique 0 and order cliques leaves-first.
    parent_of = {0: None}
    order = [0]
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j, _sep in jt.neighbors(i):
            if j not in parent_of:
                parent_of[j] = i
                order.append(j)
                frontier.append(j)

    messages: dict[tuple[int, int], Factor] = {}

    def message(src: int, dst: int, sep: frozenset[str]) -> Factor:
        f = potentials[src]
        for k, _s in jt.neighbors(src):
            if k != dst:
                f = multiply(f, messages[(k, src)])
        return _project(f, sep)

    # Collect (leaves to root), then distribute (root to leaves).
    for i in reversed(order[1:]):
        p = parent_of[i]
        sep = next(s for j, s in jt.neighbors(i) if j == p)
        messages[(i, p)] = message(i, p, sep)
    for i in order:
        for j, sep in jt.neighbors(i):
            if parent_of.get(j) == i:
                messages[(i, j)] = message(i, j, sep)

    beliefs = []
    for i in range(n):
        b = potentials[i]
        for j, _sep in jt.neighbors(i):
            b = multiply(b, messages[(j, i)])
        beliefs.append(b)

    likelihood = beliefs[0].total()
    if likelihood <= 0.0:
        raise ContradictoryEvidenceError(
            f"evidence has zero likelihood: {dict(evidence.items())}"
        )

    marginals: dict[str, np.ndarray] = {}
    for var_id in jt.variables:
        for i, clique in enumerate(jt.cliques):
            if var_id in clique:
                m = _project(beliefs[i], frozenset([var_id]))
                marginals[var_id] = m.values / likelihood
                break
    return marginals, float(likelihood)


def joint_brute_force(model: InfluenceDiagram, evidence: Evidence | None = None) -> Factor:
    """Exact joint over all chance variables: product of all CPTs, reduced by evidence.

    Testing oracle only; refuses joint state spaces above 10^7.
    """
    if model.decision_nodes:
        raise GraphError("joint_brute_force expects a pure chance network")
    size = 1
    for v in model.variables.values():
        size *= v.cardinality
        if size > JOINT_STATE_GUARD:
            raise GraphError(f"joint state space exceeds guard of {JOINT_STATE_GUARD}")
    joint = Factor.scalar(1.0)
    for node in model.chance_nodes:
        joint = multiply(joint, model.cpts[node])
    if evidence is not None:
        joint = reduce(joint, evidence)
    return joint


# ---------------------------------------------------------------------------
# Decision optimization
# ---------------------------------------------------------------------------


@dataclass
class Policy:
    """Per decision: chosen state index for each configuration of what is known.

    Tables are recorded over the variables that actually mattered during
    elimination; `decide` evaluates the full information-scenario function by
    ignoring irrelevant observations.  Zero-probability scenarios carry
    choice 0 by convention.
    """

    tables: dict[str, tuple[tuple[str, ...], np.ndarray]] = field(default_factory=dict)

    def decide(self, decision: str, assignment: Mapping[str, int]) -> int:
        scope_ids, table = self.tables[decision]
        idx = tuple(assignment[v] for v in scope_ids)
        return int(table[idx])

    def full_table(self, model: InfluenceDiagram, decision: str) -> np.ndarray:
        """Choice table expanded over every informational predecessor."""
        known = model.informational_predecessors(decision)
        shape = tuple(model.variables[v].cardinality for v in known)
        out = np.zeros(shape, dtype=int)
        for idx in np.ndindex(*shape) if shape else [()]:
            assignment = dict(zip(known, idx))
            out[idx] = self.decide(decision, assignment)
        return out


@dataclass
class SolveResult:
    """Optimal expected utility, the policy achieving it, and first-decision detail."""

    meu: float
    policy: Policy
    per_alternative: np.ndarray  # EU of each first-decision alternative


@dataclass
class _Pair:
    """(probability, probability-weighted utility) carried through elimination."""

    p: Factor
    m: Factor

    def scope_ids(self) -> set[str]:
        return set(self.p.scope_ids) | set(self.m.scope_ids)


def _pair_combine(a: _Pair, b: _Pair) -> _Pair:
    return _Pair(
        p=multiply(a.p, b.p),
        m=add(multiply(a.p, b.m), multiply(b.p, a.m)),
    )


def _pair_sum_out(pair: _Pair, var_id: str) -> _Pair:
    p = marginalize_sum(pair.p, var_id) if var_id in pair.p else pair.p
    m = marginalize_sum(pair.m, var_id) if var_id in pair.m else pair.m
    return _Pair(p, m)


def _align(pair: _Pair) -> _Pair:
    """Give p and m identical scopes and axis order (needed before a gather)."""
    p = multiply(pair.p, Factor.unit(pair.m.scope))
    zero = Factor(p.scope, np.zeros(p.values.shape), allow_negative=True)
    return _Pair(p, add(zero, pair.m))


def _pair_max_out(pair: _Pair, var_id: str) -> tuple[_Pair, tuple[tuple[str, ...], np.ndarray]]:
    """Max-eliminate a decision from the utility mass; gather p at the argmax.

    Along a strong order the probability part is constant across the decision's
    states, so the argmax of the weighted mass is the argmax of expected
    utility; ties break to the lowest state index.
    """
    aligned = _align(pair)
    ax = aligned.m.axis(var_id)
    arg = np.argmax(aligned.m.values, axis=ax)
    m_max = np.take_along_axis(aligned.m.values, np.expand_dims(arg, ax), ax).squeeze(ax)
    p_at = np.take_along_axis(aligned.p.values, np.expand_dims(arg, ax), ax).squeeze(ax)
    new_scope = tuple(v for v in aligned.m.scope if v.id != var_id)
    new_pair = _Pair(
        Factor(new_scope, p_at),
        Factor(new_scope, m_max, allow_negative=True),
    )
    scenario_scope = tuple(v.id for v in new_scope)
    return new_pair, (scenario_scope, arg)


def solve_id(
    model: InfluenceDiagram,
    evidence: Evidence | None = None,
    with_per_alternative: bool = True,
) -> SolveResult:
    """Maximize expected utility by elimination along the strong order.

    Sum-eliminates unobserved chance variables, max-eliminates decisions
    (recording each argmax into the policy), and accumulates the sum of all
    utility nodes.  Deterministic: ties always resolve to the lowest state
    index.
    """
    meu, policy = _eliminate(model, evidence, fixed_first=None)
    first = model.decision_order[0] if model.decision_order else None
    if first is not None and with_per_alternative:
        card = model.variables[first].cardinality
        per_alt = np.empty(card)
        for alt in range(card):
            per_alt[alt], _ = _eliminate(model, evidence, fixed_first=alt)
    elif first is not None:
        per_alt = np.array([meu])
    else:
        per_alt = np.array([meu])
    return SolveResult(meu=meu, policy=policy, per_alternative=per_alt)


def _eliminate(
    model: InfluenceDiagram,
    evidence: Evidence | None,
    fixed_first: int | None,
) -> tuple[float, Policy]:
    evidence = evidence or Evidence()
    order = strong_order(model)
    first = model.decision_order[0] if model.decision_order else None

    pairs: list[_Pair] = []
    for node in model.chance_nodes:
        cpt = reduce(model.cpts[node], evidence)
        pairs.append(_Pair(cpt, Factor.scalar(0.0, allow_negative=True)))
    for node in model.utility_nodes:
        pairs.append(_Pair(Factor.scalar(1.0), model.utilities[node]))

    policy = Policy()
    for var_id in order.order:
        # Observed variables were sliced by the reduce above; summing them out
        # here just drops the dead axis.
        bucket = [p for p in pairs if var_id in p.scope_ids()]
        rest = [p for p in pairs if var_id not in p.scope_ids()]
        if not bucket:
            if model.kinds[var_id] == DECISION:
                policy.tables[var_id] = ((), np.zeros((), dtype=int))
            continue
        combined = bucket[0]
        for other in bucket[1:]:
            combined = _pair_combine(combined, other)
        if model.kinds[var_id] == CHANCE:
            new_pair = _pair_sum_out(combined, var_id)
        else:
            if var_id == first and fixed_first is not None:
                new_pair = _select_decision(combined, var_id, fixed_first)
                policy.tables[var_id] = ((), np.asarray(fixed_first, dtype=int))
            else:
                new_pair, (scope_ids, arg) = _pair_max_out(combined, var_id)
                policy.tables[var_id] = (scope_ids, np.asarray(arg, dtype=int))
        pairs = rest + [new_pair]

    final = pairs[0]
    for other in pairs[1:]:
        final = _pair_combine(final, other)
    p_total = final.p.total()
    m_total = final.m.total()
    if p_total <= 0.0:
        raise ContradictoryEvidenceError("all information scenarios have zero probability")
    return m_total / p_total, policy


def _select_decision(pair: _Pair, var_id: str, index: int) -> _Pair:
    aligned = _align(pair)
    ax = aligned.m.axis(var_id)
    take = (slice(None),) * ax + (index,)
    new_scope = tuple(v for v in aligned.m.scope if v.id != var_id)
    return _Pair(
        Factor(new_scope, aligned.p.values[take]),
        Factor(new_scope, aligned.m.values[take], allow_negative=True),
    )


# ---------------------------------------------------------------------------
# Policy-space oracles
# ---------------------------------------------------------------------------


def _policy_domains(model: InfluenceDiagram) -> dict[str, list[str]]:
    return {d: model.informational_predecessors(d) for d in model.decision_order}


def _policy_count(model: InfluenceDiagram) -> int:
    log_count = 0.0
    for d, known in _policy_domains(model).items():
        scenarios = 1
        for v in known:
            scenarios *= model.variables[v].cardinality
        log_count += scenarios * np.log(model.variables[d].cardinality)
        if log_count > np.log(POLICY_COUNT_GUARD) + 1:
            return POLICY_COUNT_GUARD + 1
    return int(round(np.exp(log_count)))


def _policy_bn(model: InfluenceDiagram, policy: Policy) -> InfluenceDiagram:
    """Replace decisions with deterministic CPTs implementing the policy."""
    kinds = {n: (CHANCE if k == DECISION else k) for n, k in model.kinds.items()}
    arcs = [(p, c) for (p, c) in model.arcs if model.kinds[c] != DECISION]
    cpts = dict(model.cpts)
    domains = _policy_domains(model)
    for d in model.decision_order:
        known = domains[d]
        scope = [model.variables[v] for v in known] + [model.variables[d]]
        shape = tuple(v.cardinality for v in scope)
        table = np.zeros(shape)
        for idx in np.ndindex(*shape[:-1]) if known else [()]:
            assignment = dict(zip(known, idx))
            table[idx + (policy.decide(d, assignment),)] = 1.0
        cpts[d] = Factor(scope, table)
        for v in known:
            arcs.append((v, d))
    return InfluenceDiagram(
        list(model.variables.values()),
        kinds,
        arcs,
        cpts,
        utilities=model.utilities,
        decision_order=[],
    )


def expected_utility_of_policy(model: InfluenceDiagram, policy: Policy) -> float:
    """Expected total utility when every decision follows the given policy."""
    for d in model.decision_order:
        if d not in policy.tables:
            raise GraphError(f"policy is missing a table for decision {d!r}")
    bn = _policy_bn(model, policy)
    joint = joint_brute_force(bn)
    total = 0.0
    for u in model.utility_nodes:
        util = model.utilities[u]
        proj = joint
        for var_id in [v.id for v in joint.scope if v.id not in util]:
            proj = marginalize_sum(proj, var_id)
        total += float(np.sum(_reorder(proj).values * _reorder(util).values))
    return total


def _reorder(f: Factor) -> Factor:
    """Canonical scope order (sorted by id) so tables align elementwise."""
    order = sorted(range(len(f.scope)), key=lambda i: f.scope[i].id)
    scope = tuple(f.scope[i] for i in order)
    values = np.transpose(f.values, order) if order else f.values
    return Factor(scope, values, allow_negative=True)


def enumerate_policies(model: InfluenceDiagram) -> SolveResult:
    """Evaluate every deterministic policy; ties go to the lexicographically smallest.

    Testing oracle for the strong-order optimizer; refuses policy spaces above
    10^6.
    """
    count = _policy_count(model)
    if count > POLICY_COUNT_GUARD:
        raise GraphError(f"policy space of {count} exceeds guard of {POLICY_COUNT_GUARD}")

    domains = _policy_domains(model)
    per_decision_tables: list[list[np.ndarray]] = []
    for d in model.decision_order:
        shape = tuple(model.variables[v].cardinality for v in domains[d])
        cells = int(np.prod(shape)) if shape else 1
        card = model.variables[d].cardinality
        tables = [
            np.array(combo, dtype=int).reshape(shape)
            for combo in itertools.product(range(card), repeat=cells)
        ]
        per_decision_tables.append(tables)

    best_eu = -np.inf
    best_policy: Policy | None = None
    for combo in itertools.product(*per_decision_tables):
        policy = Policy(
            {
                d: (tuple(domains[d]), table)
                for d, table in zip(model.decision_order, combo)
            }
        )
        eu = expected_utility_of_policy(model, policy)
        if eu > best_eu:
            best_eu = eu
            best_policy = policy

    assert best_policy is not None
    first = model.decision_order[0]
    card = model.variables[first].cardinality
    per_alt = np.empty(card)
    for alt in range(card):
        # Future decisions re-optimized with the first fixed to this alternative.
        per_alt[alt] = _best_with_first_fixed(model, per_decision_tables, alt)
    return SolveResult(meu=best_eu, policy=best_policy, per_alternative=per_alt)


def _best_with_first_fixed(
    model: InfluenceDiagram,
    per_decision_tables: list[list[np.ndarray]],
    alt: int,
) -> float:
    domains = _policy_domains(model)
    first = model.decision_order[0]
    shape = tuple(model.variables[v].cardinality for v in domains[first])
    fixed_table = np.full(shape, alt, dtype=int)
    best = -np.inf
    for combo in itertools.product(*per_decision_tables[1:]):
        policy = Policy({first: (tuple(domains[first]), fixed_table)})
        for d, table in zip(model.decision_order[1:], combo):
            policy.tables[d] = (tuple(domains[d]), table)
        eu = expected_utility_of_policy(model, policy)
        best = max(best, eu)
    return best
