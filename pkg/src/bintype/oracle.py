"""Brute-force entailment oracle.

Applies the deduction rules for the constraint language (reflexivity,
transitivity, field variance, the load/store consistency rule, capability
inheritance and prefix rules) to a fixed point, restricted to derived type
variables whose label words stay within a length bound. Used as ground truth
for the pushdown-system engine on small inputs, never as a scalable solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .constraints import (
    AddConstraint,
    Constraint,
    ConstraintSet,
    DerivedTypeVar,
    FieldLabel,
    LOAD,
    STORE,
    SubConstraint,
    SubtypeConstraint,
    VarConstraint,
    Variance,
    close_prefixes,
)

DEFAULT_FACT_CAP = 100_000


class OracleLimitError(RuntimeError):
    """The bounded closure exceeded its fact cap; the instance is too large."""


@dataclass
class EntailmentClosure:
    """All facts derivable within the word-length bound."""

    bound: int
    var_facts: frozenset
    subtype_facts: frozenset

    def has_var(self, d: DerivedTypeVar) -> bool:
        return d in self.var_facts

    def has_subtype(self, lhs: DerivedTypeVar, rhs: DerivedTypeVar) -> bool:
        return (lhs, rhs) in self.subtype_facts

    def facts(self) -> set[Constraint]:
        out: set[Constraint] = {VarConstraint(v) for v in self.var_facts}
        out |= {SubtypeConstraint(l, r) for (l, r) in self.subtype_facts}
        return out

    def subtypes_over(self, bases: set[str]) -> set[tuple]:
        """Subtype facts whose two endpoints range over the given bases."""
        return {(l, r) for (l, r) in self.subtype_facts
                if l.base in bases and r.base in bases}


def closure(cs: ConstraintSet,
            bound: int,
            labels: Optional[Iterable[FieldLabel]] = None,
            max_facts: int = DEFAULT_FACT_CAP) -> EntailmentClosure:
    """Compute the bounded entailment closure of a prefix-closed set.

    ``labels`` restricts which field labels may be used to build new derived
    type variables; it defaults to the labels appearing in ``cs``.
    """
    cs = close_prefixes(cs)
    alphabet: set[FieldLabel] = set()
    for d in cs.all_dtvs():
        alphabet.update(d.labels)
    if labels is not None:
        alphabet &= set(labels)

    var_facts: set[DerivedTypeVar] = set()
    sub_facts: set[tuple] = set()
    # Index subtype facts both ways and children by parent for rule matching.
    by_lhs: dict[DerivedTypeVar, set[DerivedTypeVar]] = {}
    by_rhs: dict[DerivedTypeVar, set[DerivedTypeVar]] = {}
    children: dict[DerivedTypeVar, set[FieldLabel]] = {}
    work: list[tuple] = []

    def within(d: DerivedTypeVar) -> bool:
        return len(d.labels) <= bound

    def add_var(d: DerivedTypeVar) -> None:
        if d in var_facts or not within(d):
            return
        var_facts.add(d)
        work.append(('var', d))
        if len(var_facts) + len(sub_facts) > max_facts:
            raise OracleLimitError(f'fact cap {max_facts} exceeded')

    def add_sub(l: DerivedTypeVar, r: DerivedTypeVar) -> None:
        if (l, r) in sub_facts or not (within(l) and within(r)):
            return
        sub_facts.add((l, r))
        by_lhs.setdefault(l, set()).add(r)
        by_rhs.setdefault(r, set()).add(l)
        work.append(('sub', l, r))
        if len(var_facts) + len(sub_facts) > max_facts:
            raise OracleLimitError(f'fact cap {max_facts} exceeded')

    for v in cs.existence:
        add_var(v.var)
    for c in cs.subtypes:
        add_sub(c.lhs, c.rhs)
        add_var(c.lhs)
        add_var(c.rhs)

    def on_new_var(d: DerivedTypeVar) -> None:
        # T-Prefix
        p = d.prefix()
        if p is not None:
            add_var(p)
            label = d.labels[-1]
            children.setdefault(p, set()).add(label)
            # S-Pointer, triggered from either capability appearing last
            if label == LOAD and p.with_suffix(STORE) in var_facts:
                add_sub(p.with_suffix(STORE), d)
            elif label == STORE and p.with_suffix(LOAD) in var_facts:
                add_sub(d, p.with_suffix(LOAD))
        # S-Refl
        add_sub(d, d)
        # T-InheritL / T-InheritR / S-Field against existing subtype facts
        if p is not None:
            label = d.labels[-1]
            for r in list(by_lhs.get(p, ())):
                inherit(p, r, label)
            for l in list(by_rhs.get(p, ())):
                inherit(l, p, label)

    def inherit(l: DerivedTypeVar, r: DerivedTypeVar, label: FieldLabel) -> None:
        """Given l <= r and that one side has the child ``label``, propagate
        the capability to the other side and apply the field-variance rule.
        """
        if label not in alphabet:
            return
        lc = l.with_suffix(label)
        rc = r.with_suffix(label)
        if not (within(lc) and within(rc)):
            return
        add_var(lc)
        add_var(rc)
        if label.variance is Variance.CO:
            add_sub(lc, rc)
        else:
            add_sub(rc, lc)

    def on_new_sub(l: DerivedTypeVar, r: DerivedTypeVar) -> None:
        add_var(l)
        add_var(r)
        # S-Trans, as binary composition
        for rr in set(by_lhs.get(r, ())):
            add_sub(l, rr)
        for ll in set(by_rhs.get(l, ())):
            add_sub(ll, r)
        # Inherit/field rules against known children of either side
        for label in set(children.get(l, ())) | set(children.get(r, ())):
            inherit(l, r, label)

    while work:
        item = work.pop()
        if item[0] == 'var':
            on_new_var(item[1])
        else:
            on_new_sub(item[1], item[2])

    return EntailmentClosure(bound, frozenset(var_facts), frozenset(sub_facts))


def entails(cs: ConstraintSet, goal: Constraint, bound: int,
            max_facts: int = DEFAULT_FACT_CAP) -> bool:
    """True iff ``goal`` lies in the bounded closure of ``cs``."""
    clo = closure(cs, bound, max_facts=max_facts)
    if isinstance(goal, VarConstraint):
        return clo.has_var(goal.var)
    if isinstance(goal, SubtypeConstraint):
        return clo.has_subtype(goal.lhs, goal.rhs)
    raise TypeError(f'oracle cannot decide {goal!r}')


# --- additive constraints ----------------------------------------------------

POINTER = 'pointer-like'
INTEGER = 'integer-like'
UNKNOWN = 'unknown'

# Resolution table for add/sub constraints: when every tag in the pattern is
# known, the listed conclusions follow. Patterns and conclusions are keyed by
# operand position (x, y, z = result).
_ADD_RULES = [
    ({'x': INTEGER, 'y': INTEGER}, {'z': INTEGER}),
    ({'z': INTEGER}, {'x': INTEGER, 'y': INTEGER}),
    ({'x': POINTER}, {'y': INTEGER, 'z': POINTER}),
    ({'y': INTEGER, 'z': POINTER}, {'x': POINTER}),
    ({'y': POINTER}, {'x': INTEGER, 'z': POINTER}),
    ({'x': INTEGER, 'z': POINTER}, {'y': POINTER}),
]
_SUB_RULES = [
    ({'x': INTEGER}, {'y': INTEGER, 'z': INTEGER}),
    ({'y': INTEGER, 'z': INTEGER}, {'x': INTEGER}),
    ({'y': INTEGER, 'z': POINTER}, {'x': POINTER}),
    ({'y': POINTER}, {'x': POINTER, 'z': INTEGER}),
    ({'x': POINTER, 'z': INTEGER}, {'y': POINTER}),
    ({'x': POINTER, 'y': INTEGER}, {'z': POINTER}),
    ({'x': POINTER, 'z': POINTER}, {'y': INTEGER}),
]


@dataclass
class AdditiveResult:
    """Outcome of resolving add/sub constraints against operand tags."""

    constraints: ConstraintSet
    tags: dict
    warnings: list = field(default_factory=list)
    consumed: set = field(default_factory=set)


def apply_additive(cs: ConstraintSet,
                   tags: Mapping[str, str]) -> AdditiveResult:
    """Propagate pointer/integer tags through add/sub constraints to a fixed
    point. Fully resolved constraints are marked consumed and dropped from the
    returned set; contradictory matches produce warnings, never failures.
    """
    tags = {k: v for k, v in tags.items() if v != UNKNOWN}
    warnings: list[str] = []
    consumed: set[Constraint] = set()

    def tag_of(d: DerivedTypeVar) -> Optional[str]:
        return tags.get(d.base)

    def set_tag(d: DerivedTypeVar, value: str, source: Constraint) -> bool:
        current = tags.get(d.base)
        if current is None:
            tags[d.base] = value
            return True
        if current != value:
            warnings.append(
                f'{d.base} is both {current} and {value} (from {source})')
        return False

    changed = True
    while changed:
        changed = False
        for c in sorted(cs.additive, key=str):
            rules = _ADD_RULES if isinstance(c, AddConstraint) else _SUB_RULES
            operands = {'x': c.x, 'y': c.y, 'z': c.result}
            for pattern, conclusion in rules:
                if all(tag_of(operands[k]) == v for k, v in pattern.items()):
                    for k, v in conclusion.items():
                        if set_tag(operands[k], v, c):
                            changed = True
            if all(tag_of(d) is not None for d in operands.values()):
                consumed.add(c)

    remaining = ConstraintSet(projected=cs.projected)
    remaining.subtypes = set(cs.subtypes)
    remaining.existence = set(cs.existence)
    remaining.additive = {c for c in cs.additive if c not in consumed}
    return AdditiveResult(remaining, tags, warnings, consumed)
