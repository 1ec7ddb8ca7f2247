"""Discrete variables, potentials, and the table operations all inference is built on.

A :class:`Factor` is a nonnegative real table over an ordered set of discrete
variables.  Tables are stored as C-ordered numpy arrays with one axis per scope
variable, so the flattened view has the FIRST scope variable varying slowest
and the LAST varying fastest.  That layout is the single convention shared by
the parameter file, the oracles in the test suite, and the engine itself.

Factors are immutable after construction: every operation returns a new
factor, so they can be shared freely across concurrent solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "FactorError",
    "ContradictoryEvidenceError",
    "DiscreteVariable",
    "Evidence",
    "Factor",
    "multiply",
    "marginalize_sum",
    "marginalize_max",
    "reduce",
    "normalize",
]


class FactorError(ValueError):
    """Raised when a factor operation violates its contract."""


class ContradictoryEvidenceError(FactorError):
    """Raised when evidence zeroes out an entire table (likelihood 0)."""


@dataclass(frozen=True)
class DiscreteVariable:
    """A named discrete variable with an ordered list of state labels."""

    id: str
    states: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(str(s) for s in self.states))
        if len(self.states) < 1:
            raise FactorError(f"variable {self.id!r} needs at least one state")
        if len(set(self.states)) != len(self.states):
            raise FactorError(f"variable {self.id!r} has duplicate state labels")

    @property
    def cardinality(self) -> int:
        return len(self.states)

    def state_index(self, label: str) -> int:
        try:
            return self.states.index(str(label))
        except ValueError:
            raise FactorError(f"variable {self.id!r} has no state {label!r}") from None


@dataclass(frozen=True)
class Evidence:
    """Observed state indices, keyed by variable id."""

    assignments: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "assignments", dict(self.assignments))

    def __contains__(self, var_id: str) -> bool:
        return var_id in self.assignments

    def __getitem__(self, var_id: str) -> int:
        return self.assignments[var_id]

    def items(self):
        return self.assignments.items()

    def merged_with(self, other: "Evidence | Mapping[str, int]") -> "Evidence":
        merged = dict(self.assignments)
        other_items = other.items() if isinstance(other, Evidence) else other.items()
        for k, v in other_items:
            if k in merged and merged[k] != v:
                raise FactorError(f"conflicting evidence for {k!r}")
            merged[k] = v
        return Evidence(merged)


class Factor:
    """A real-valued table over an ordered scope of discrete variables.

    Probability potentials must be nonnegative and finite; utility tables may
    carry negative values and are built with ``allow_negative=True``.
    """

    __slots__ = ("scope", "values", "_by_id")

    def __init__(self, scope: Sequence[DiscreteVariable], values, *, allow_negative: bool = False):
        scope = tuple(scope)
        ids = [v.id for v in scope]
        if len(set(ids)) != len(ids):
            raise FactorError(f"duplicate variable in scope: {ids}")
        shape = tuple(v.cardinality for v in scope)
        table = np.array(values, dtype=float, order="C")
        if table.shape != shape:
            if table.size == int(np.prod(shape, dtype=np.int64)):
                table = table.reshape(shape)
            else:
                raise FactorError(
                    f"table of size {table.size} does not match scope shape {shape}"
                )
        if not np.all(np.isfinite(table)):
            raise FactorError("factor entries must be finite")
        if not allow_negative and np.any(table < 0):
            raise FactorError("factor entries must be nonnegative")
        table.setflags(write=False)
        object.__setattr__(self, "scope", scope)
        object.__setattr__(self, "values", table)
        object.__setattr__(self, "_by_id", {v.id: i for i, v in enumerate(scope)})

    def __setattr__(self, name, value):
        raise AttributeError("Factor is immutable")

    # -- introspection -------------------------------------------------

    @property
    def scope_ids(self) -> tuple[str, ...]:
        return tuple(v.id for v in self.scope)

    def variable(self, var_id: str) -> DiscreteVariable:
        return self.scope[self.axis(var_id)]

    def axis(self, var_id: str) -> int:
        try:
            return self._by_id[var_id]
        except KeyError:
            raise FactorError(f"variable {var_id!r} not in scope {self.scope_ids}") from None

    def __contains__(self, var_id: str) -> bool:
        return var_id in self._by_id

    def flat(self) -> np.ndarray:
        """The table in first-variable-slowest (C-order) layout."""
        return self.values.reshape(-1)

    def get(self, assignment: Mapping[str, int]) -> float:
        """Entry at a joint state given as {variable id: state index}."""
        idx = tuple(assignment[v.id] for v in self.scope)
        return float(self.values[idx])

    def total(self) -> float:
        return float(self.values.sum())

    def __repr__(self):
        return f"Factor({self.scope_ids}, shape={self.values.shape})"

    # -- convenience wrappers around the module-level ops ---------------

    def __mul__(self, other: "Factor") -> "Factor":
        return multiply(self, other)

    def sum_out(self, var_id: str) -> "Factor":
        return marginalize_sum(self, var_id)

    def normalized(self) -> "Factor":
        return normalize(self)

    @staticmethod
    def unit(scope: Sequence[DiscreteVariable]) -> "Factor":
        shape = tuple(v.cardinality for v in scope)
        return Factor(scope, np.ones(shape))

    @staticmethod
    def scalar(value: float, *, allow_negative: bool = False) -> "Factor":
        return Factor((), np.asarray(float(value)), allow_negative=allow_negative)


def _check_shared_variables(a: Factor, b: Factor) -> None:
    for v in a.scope:
        if v.id in b:
            other = b.variable(v.id)
            if other.states != v.states:
                raise FactorError(
                    f"shared variable {v.id!r} has mismatched state lists: "
                    f"{v.states} vs {other.states}"
                )


def _expand_to(f: Factor, union_scope: tuple[DiscreteVariable, ...]) -> np.ndarray:
    """View of f's table positioned and broadcast over the union scope."""
    positions = [f.axis(v.id) for v in union_scope if v.id in f]
    table = np.transpose(f.values, positions) if positions else f.values
    shape = tuple(v.cardinality if v.id in f else 1 for v in union_scope)
    return table.reshape(shape)


def multiply(a: Factor, b: Factor) -> Factor:
    """Potential product: scope is the union, entries multiply after alignment."""
    _check_shared_variables(a, b)
    union = a.scope + tuple(v for v in b.scope if v.id not in a)
    values = _expand_to(a, union) * _expand_to(b, union)
    negative = bool(np.any(a.values < 0) or np.any(b.values < 0))
    return Factor(union, values, allow_negative=negative)


def add(a: Factor, b: Factor) -> Factor:
    """Entrywise sum over the union scope (used for utility accumulation)."""
    _check_shared_variables(a, b)
    union = a.scope + tuple(v for v in b.scope if v.id not in a)
    values = _expand_to(a, union) + _expand_to(b, union)
    return Factor(union, values, allow_negative=True)


def marginalize_sum(f: Factor, var_id: str) -> Factor:
    """Sum-eliminate one variable from the scope."""
    ax = f.axis(var_id)
    new_scope = tuple(v for v in f.scope if v.id != var_id)
    negative = bool(np.any(f.values < 0))
    return Factor(new_scope, f.values.sum(axis=ax), allow_negative=negative)


def marginalize_max(f: Factor, var_id: str) -> tuple[Factor, Factor]:
    """Max-eliminate one variable, returning (max factor, argmax table).

    Ties break to the LOWEST state index.  Decision variables order their
    states by ascending dose, so a tie favours the lower dose.
    """
    ax = f.axis(var_id)
    new_scope = tuple(v for v in f.scope if v.id != var_id)
    max_values = f.values.max(axis=ax)
    arg_values = np.argmax(f.values, axis=ax)  # first occurrence = lowest index
    negative = bool(np.any(f.values < 0))
    return (
        Factor(new_scope, max_values, allow_negative=negative),
        Factor(new_scope, arg_values.astype(float)),
    )


def reduce(f: Factor, e: Evidence) -> Factor:
    """Zero out entries inconsistent with the evidence; scope is unchanged.

    Evidence on variables absent from the scope is ignored.
    """
    values = None
    for var_id, idx in e.items():
        if var_id not in f:
            continue
        var = f.variable(var_id)
        if not 0 <= idx < var.cardinality:
            raise FactorError(
                f"evidence index {idx} out of range for {var_id!r} "
                f"(cardinality {var.cardinality})"
            )
        if values is None:
            values = np.array(f.values)
        keep = values[(slice(None),) * f.axis(var_id) + (idx,)].copy()
        moved = np.moveaxis(values, f.axis(var_id), 0)
        moved[:] = 0.0
        moved[idx] = keep
    if values is None:
        return f
    negative = bool(np.any(f.values < 0))
    return Factor(f.scope, values, allow_negative=negative)


def normalize(f: Factor) -> Factor:
    """Scale entries to sum to 1.  An all-zero table signals contradictory evidence."""
    total = f.values.sum()
    if total <= 0:
        raise ContradictoryEvidenceError(
            f"cannot normalize factor over {f.scope_ids}: table sum is {total}"
        )
    return Factor(f.scope, f.values / total)


def from_function(
    scope: Sequence[DiscreteVariable],
    fn: Callable[..., float],
    *,
    allow_negative: bool = False,
) -> Factor:
    """Tabulate fn(state index, ...) over every joint state of the scope."""
    scope = tuple(scope)
    shape = tuple(v.cardinality for v in scope)
    values = np.empty(shape)
    for idx in np.ndindex(*shape):
        values[idx] = fn(*idx)
    return Factor(scope, values, allow_negative=allow_negative)


def assignments(scope: Iterable[DiscreteVariable]):
    """Iterate over all joint assignments of a scope as {id: index} dicts."""
    scope = tuple(scope)
    shape = tuple(v.cardinality for v in scope)
    for idx in np.ndindex(*shape):
        yield {v.id: i for v, i in zip(scope, idx)}
