"""Type-scheme simplification: eliminate variables that do not belong to a
procedure's interface by converting the entailment transducer back into a
small constraint set with fresh internal variables, and drive the bottom-up
inference over the callgraph's strongly connected components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import networkx

from .constraints import (
    CONSTANT_SIGIL,
    ConstraintSet,
    DerivedTypeVar,
    SubtypeConstraint,
    TypeScheme,
    close_prefixes,
)
from .pds import (
    CondensedAutomaton,
    SaturatedTransducer,
    VarToken,
    condense,
    transducer_for,
)

FRESH_PREFIX = 'τ'


@dataclass
class SimplificationRequest:
    """Inputs to a single simplification run."""

    constraints: ConstraintSet
    subject: str
    interesting: set = field(default_factory=set)

    def __post_init__(self) -> None:
        self.interesting = set(self.interesting) | {self.subject}


def _split_word(word: tuple) -> tuple:
    pops = [item for op, item in word if op == 'pop']
    pushes = [item for op, item in word if op == 'push']
    ops = [op for op, _ in word]
    if ops != sorted(ops):  # 'pop' < 'push'
        raise AssertionError(f'mixed pop/push word: {word}')
    return pops, pushes


def constraints_from_condensed(cond: CondensedAutomaton) -> tuple:
    """Read a constraint set off the condensed transducer: a fresh variable
    per internal state, a pop chain on the left of each edge and a reversed
    push chain on the right.
    """
    fresh = {state: f'{FRESH_PREFIX}{i}'
             for i, state in enumerate(cond.internal_states())}
    out = ConstraintSet(projected=fresh.values())
    for src, dst, word in sorted(cond.edges,
                                 key=lambda e: (e[0], e[1], repr(e[2]))):
        pops, pushes = _split_word(word)
        if src == cond.start:
            if not (pops and isinstance(pops[0], VarToken)):
                raise AssertionError(f'start edge without variable token: {word}')
            lhs = DerivedTypeVar(pops[0].name, tuple(pops[1:]))
        else:
            lhs = DerivedTypeVar(fresh[src], tuple(pops))
        if dst in cond.accepting:
            if not (pushes and isinstance(pushes[-1], VarToken)):
                raise AssertionError(f'final edge without variable token: {word}')
            rhs = DerivedTypeVar(pushes[-1].name, tuple(reversed(pushes[:-1])))
        else:
            rhs = DerivedTypeVar(fresh[dst], tuple(reversed(pushes)))
        if lhs != rhs:
            out.add_subtype(lhs, rhs)
    used = {d.base for d in out.all_dtvs()}
    out.projected &= used
    return out, fresh


def simplify(req: SimplificationRequest) -> TypeScheme:
    """Produce a most-general type scheme whose body entails exactly the
    interesting constraints entailed by the input set.
    """
    cs = close_prefixes(req.constraints)
    interesting = set(req.interesting) | cs.constants()
    transducer = transducer_for(cs, interesting - cs.constants())
    cond = condense(transducer.dfa)
    body, _ = constraints_from_condensed(cond)
    quantified = frozenset(b for b in body.free_vars())
    return TypeScheme(quantified, body, req.subject)


def simplified_transducer(req: SimplificationRequest) -> SaturatedTransducer:
    """The transducer underlying :func:`simplify`, for inspection and DOT
    export.
    """
    cs = close_prefixes(req.constraints)
    interesting = set(req.interesting) | cs.constants()
    return transducer_for(cs, interesting - cs.constants())


def display_scheme(scheme: TypeScheme) -> str:
    """Human-oriented rendering: constants bounding one variable are grouped
    with ∧/∨ (display only; the scheme body keeps split constraints).
    """
    uppers: dict[DerivedTypeVar, list] = {}
    lowers: dict[DerivedTypeVar, list] = {}
    plain = []
    for c in sorted(scheme.body.subtypes):
        if c.rhs.is_constant:
            uppers.setdefault(c.lhs, []).append(c.rhs.base)
        elif c.lhs.is_constant:
            lowers.setdefault(c.rhs, []).append(c.lhs.base)
        else:
            plain.append(c)
    lines = [f'forall {name}' for name in sorted(scheme.quantified)]
    lines.extend(f'exists {name}' for name in sorted(scheme.body.projected))
    for c in plain:
        lines.append(str(c))
    for lhs in sorted(uppers):
        lines.append(f'{lhs} <= {" & ".join(sorted(uppers[lhs]))}')
    for rhs in sorted(lowers):
        lines.append(f'{" | ".join(sorted(lowers[rhs]))} <= {rhs}')
    return '\n'.join(lines) + '\n'


ConstraintGenerator = Callable[[str, Mapping[str, TypeScheme], frozenset],
                               ConstraintSet]


def infer_proc_types(callgraph: Mapping[str, Iterable[str]],
                     generator: ConstraintGenerator,
                     interesting_for: Callable[[str], set] | None = None,
                     ) -> dict[str, TypeScheme]:
    """Bottom-up scheme inference over strongly connected components.

    ``callgraph`` maps each procedure to its callees. ``generator`` yields a
    procedure's constraints given the scheme table built so far and the
    procedure's SCC (callees inside the SCC have no scheme yet and are wired
    monomorphically). Within an SCC all members' constraints are pooled and
    each member is simplified against the pool.
    """
    graph = networkx.DiGraph()
    for proc, callees in callgraph.items():
        graph.add_node(proc)
        for callee in callees:
            if callee in callgraph:
                graph.add_edge(proc, callee)
    condensation = networkx.condensation(graph)
    schemes: dict[str, TypeScheme] = {}
    order = list(networkx.topological_sort(condensation))
    for comp in reversed(order):
        scc = frozenset(condensation.nodes[comp]['members'])
        pooled = ConstraintSet()
        for proc in sorted(scc):
            pooled.update(generator(proc, schemes, scc))
        for proc in sorted(scc):
            interesting = interesting_for(proc) if interesting_for else {proc}
            req = SimplificationRequest(pooled.copy(), proc, interesting)
            schemes[proc] = simplify(req)
    return schemes
