"""Pushdown-system engine.

Encodes a constraint set as transition rules over pop/push stack actions,
builds the corresponding labeled graph, saturates it (with lazy handling of
the infinite family of load/store consistency rules), and intersects the
result with the pops-then-pushes language to obtain a finite transducer that
recognizes exactly the elementary subtype derivations between interesting
variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .constraints import (
    ConstraintSet,
    DerivedTypeVar,
    FieldLabel,
    LOAD,
    STORE,
    SubtypeConstraint,
    Variance,
    close_prefixes,
    variance_of_word,
)
from .shapes import Quotient, build_quotient

# --- stack-action symbols ----------------------------------------------------


@dataclass(frozen=True)
class VarToken:
    """Stack token standing for an interesting variable, carrying the variance
    of the label word it is read or written with.
    """

    name: str
    variance: Variance

    def sort_key(self) -> tuple:
        return ('VarToken', self.name, str(self.variance))

    def __str__(self) -> str:
        return f'{self.name}^{self.variance}'


@dataclass(frozen=True)
class StackOp:
    """An element of the pop/push action algebra: pop ℓ, push ℓ, 1 or 0."""

    kind: str  # 'pop' | 'push' | 'one' | 'zero'
    item: object = None

    def __str__(self) -> str:
        if self.kind == 'one':
            return '1'
        if self.kind == 'zero':
            return '0'
        return f'{self.kind} {self.item}'

    def sort_key(self) -> tuple:
        item_key = self.item.sort_key() if self.item is not None else ()
        return (self.kind, item_key)


ONE = StackOp('one')
ZERO = StackOp('zero')


def pop(item) -> StackOp:
    return StackOp('pop', item)


def push(item) -> StackOp:
    return StackOp('push', item)


def compose_pair(a: StackOp, b: StackOp) -> Optional[StackOp]:
    """Reduce a two-symbol product: push(x) then pop(y) is 1 when x = y and 0
    otherwise; 1 is the identity; 0 annihilates. Returns None when the product
    is already a reduced (irreducible) monomial.
    """
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if a.kind == 'push' and b.kind == 'pop':
        return ONE if a.item == b.item else ZERO
    return None


# --- the constraint graph ----------------------------------------------------


@dataclass(frozen=True)
class NodeInfo:
    """Control state of the pushdown encoding: a (possibly side-tagged) base
    variable, the label prefix processed so far, and the variance of any
    pop/push word reaching the node from the start.
    """

    base: str
    tag: str  # 'L', 'R' or ''
    prefix: tuple
    variance: Variance

    def __str__(self) -> str:
        name = self.base + (f'_{self.tag}' if self.tag else '')
        if self.prefix:
            name += '.' + '.'.join(str(l) for l in self.prefix)
        return f'{name}^{self.variance}'


START = NodeInfo('#Start', '', (), Variance.CO)
END = NodeInfo('#End', '', (), Variance.CO)


class ConstraintGraph:
    """Graph of pop/push/unit edges encoding all rules of the pushdown system
    derived from a constraint set.
    """

    def __init__(self, cs: ConstraintSet, interesting: set[str]) -> None:
        overlap = interesting & cs.projected
        if overlap:
            raise ValueError(
                f'interesting variables may not be projected: {sorted(overlap)}')
        self.cs = cs
        self.interesting = set(interesting)
        self.infos: list[NodeInfo] = []
        self._ids: dict[NodeInfo, int] = {}
        self.start = self._node(START)
        self.end = self._node(END)
        self.pop_edges: dict[int, list] = {}
        self.push_edges: dict[int, list] = {}
        self.unit_edges: dict[int, set] = {}
        self._unit_seen: set[tuple] = set()

    def _node(self, info: NodeInfo) -> int:
        idx = self._ids.get(info)
        if idx is None:
            idx = len(self.infos)
            self._ids[info] = idx
            self.infos.append(info)
        return idx

    def node_id(self, info: NodeInfo) -> Optional[int]:
        return self._ids.get(info)

    def _add_pop(self, src: int, item, dst: int) -> None:
        edges = self.pop_edges.setdefault(src, [])
        if (item, dst) not in edges:
            edges.append((item, dst))

    def _add_push(self, src: int, item, dst: int) -> None:
        edges = self.push_edges.setdefault(src, [])
        if (item, dst) not in edges:
            edges.append((item, dst))

    def add_unit(self, src: int, dst: int) -> bool:
        if (src, dst) in self._unit_seen:
            return False
        self._unit_seen.add((src, dst))
        self.unit_edges.setdefault(src, set()).add(dst)
        return True

    def has_unit(self, src: int, dst: int) -> bool:
        return (src, dst) in self._unit_seen

    def _tag(self, base: str, side: str) -> str:
        return side if base in self.interesting else ''

    def _pop_chain(self, base: str, word: tuple, entry: Variance) -> int:
        """Build the pop chain for a rule's left side; return its final node."""
        tag = self._tag(base, 'L')
        v = entry
        cur = self._node(NodeInfo(base, tag, (), v))
        if tag:
            self._add_pop(self.start, VarToken(base, v), cur)
        for i, label in enumerate(word):
            v = v * label.variance
            nxt = self._node(NodeInfo(base, tag, word[:i + 1], v))
            self._add_pop(cur, label, nxt)
            cur = nxt
        return cur

    def _push_chain(self, base: str, word: tuple, entry: Variance) -> int:
        """Build the push chain for a rule's right side; return its first node
        (the one the unit edge points at).
        """
        tag = self._tag(base, 'R')
        exit_node = self._node(NodeInfo(base, tag, (), entry))
        if tag:
            self._add_push(exit_node, VarToken(base, entry), self.end)
        v = entry
        cur = exit_node
        for i, label in enumerate(word):
            v = v * label.variance
            nxt = self._node(NodeInfo(base, tag, word[:i + 1], v))
            self._add_push(nxt, label, cur)
            cur = nxt
        return cur

    def add_rule(self, lhs: DerivedTypeVar, lhs_entry: Variance,
                 rhs: DerivedTypeVar, rhs_entry: Variance) -> None:
        src = self._pop_chain(lhs.base, lhs.labels, lhs_entry)
        dst = self._push_chain(rhs.base, rhs.labels, rhs_entry)
        self.add_unit(src, dst)

    def add_constraint(self, c: SubtypeConstraint) -> None:
        u_var = variance_of_word(c.lhs.labels)
        v_var = variance_of_word(c.rhs.labels)
        # the covariant encoding and its contravariant mirror
        self.add_rule(c.lhs, u_var, c.rhs, v_var)
        self.add_rule(c.rhs, v_var.flip(), c.lhs, u_var.flip())

    def add_interesting(self, name: str) -> None:
        """Entry/exit transitions exist for both variances of every
        interesting variable, whether or not any rule mentions it.
        """
        for v in (Variance.CO, Variance.CONTRA):
            entry = self._node(NodeInfo(name, 'L', (), v))
            self._add_pop(self.start, VarToken(name, v), entry)
            exit_node = self._node(NodeInfo(name, 'R', (), v))
            self._add_push(exit_node, VarToken(name, v), self.end)

    def mirror(self, idx: int) -> Optional[int]:
        info = self.infos[idx]
        if info == START:
            return self.end
        if info == END:
            return self.start
        return self.node_id(
            NodeInfo(info.base, info.tag, info.prefix, info.variance.flip()))

    def edge_count(self) -> int:
        return (sum(len(v) for v in self.pop_edges.values()) +
                sum(len(v) for v in self.push_edges.values()) +
                len(self._unit_seen))

    def to_dot(self, name: str = 'constraint_graph') -> str:
        lines = [f'digraph "{name}" {{']
        for idx, info in enumerate(self.infos):
            lines.append(f'  n{idx} [label="{info}"];')
        for src in sorted(self.pop_edges):
            for item, dst in sorted(self.pop_edges[src], key=lambda e: (str(e[0]), e[1])):
                lines.append(f'  n{src} -> n{dst} [label="pop {item}"];')
        for src in sorted(self.push_edges):
            for item, dst in sorted(self.push_edges[src], key=lambda e: (str(e[0]), e[1])):
                lines.append(f'  n{src} -> n{dst} [label="push {item}"];')
        for src in sorted(self.unit_edges):
            for dst in sorted(self.unit_edges[src]):
                lines.append(f'  n{src} -> n{dst} [label="1"];')
        lines.append('}')
        return '\n'.join(lines) + '\n'


def _conversion_sites(cs: ConstraintSet, quotient: Quotient,
                      interesting: set, depth: int) -> list:
    """Derived type variables of uninteresting base at which the store/load
    consistency rule is instantiated eagerly: every syntactic prefix plus
    every quotient-supported word up to ``depth``, filtered to those that
    provably carry both pointer capabilities.
    """
    sites: dict[DerivedTypeVar, int] = {}
    for d in cs.all_dtvs():
        if d.base not in interesting:
            for p in (d, *d.prefixes()):
                root = quotient.class_of(p)
                if root is not None:
                    sites[p] = root
    for base in sorted(cs.base_vars() - interesting):
        root = quotient.class_of(DerivedTypeVar(base))
        if root is None:
            continue
        frontier = [(DerivedTypeVar(base), root)]
        seen = {DerivedTypeVar(base)}
        for _ in range(depth):
            nxt = []
            for d, node in frontier:
                for label, target in quotient.out_edges(node):
                    child = d.with_suffix(label)
                    if child not in seen:
                        seen.add(child)
                        nxt.append((child, target))
            sites.update(nxt)
            frontier = nxt
    return [alpha for alpha, root in sorted(sites.items())
            if quotient.successor(root, STORE) is not None
            and quotient.successor(root, LOAD) is not None]


def build_graph(cs: ConstraintSet, interesting: Iterable[str],
                conversion_depth: Optional[int] = None) -> ConstraintGraph:
    """Construct the rule graph for a prefix-closed constraint set. Type
    constants are implicitly interesting.

    The store/load consistency rule is instantiated eagerly at conversion
    sites (see :func:`_conversion_sites`); this covers derivations that
    convert a store or load read from the query word itself, which the lazy
    reaching-push treatment cannot reach. At interesting bases such
    conversions only occur inside non-elementary chains, so no sites are
    needed there.
    """
    cs = close_prefixes(cs)
    interesting = set(interesting) | cs.constants()
    g = ConstraintGraph(cs, interesting)
    for name in sorted(interesting):
        g.add_interesting(name)
    for c in sorted(cs.subtypes):
        g.add_constraint(c)
    quotient = build_quotient(cs)
    if conversion_depth is None:
        conversion_depth = max(
            (len(d.labels) for d in cs.all_dtvs()), default=0)
    for alpha in _conversion_sites(cs, quotient, interesting, conversion_depth):
        store_side = alpha.with_suffix(STORE)
        load_side = alpha.with_suffix(LOAD)
        g.add_rule(store_side, variance_of_word(store_side.labels),
                   load_side, variance_of_word(load_side.labels))
        g.add_rule(load_side, variance_of_word(load_side.labels).flip(),
                   store_side, variance_of_word(store_side.labels).flip())
    g.quotient = quotient
    return g


def saturate(g: ConstraintGraph) -> ConstraintGraph:
    """Close the graph under shortcut edges: whenever a node is reached by a
    pending push of ℓ and has an outgoing pop of ℓ, the push/pop pair cancels
    into a unit edge. Pending pushes of store (load) at a contravariant node
    are mirrored as pushes of load (store) at the variance-flipped node,
    instantiating the pointer consistency rule lazily; each mirrored fact is
    also materialized as a real push edge so completed derivations can end
    with it.
    """
    reaching: dict[int, set] = {}

    def reach(node: int) -> set:
        return reaching.setdefault(node, set())

    for src, edges in g.push_edges.items():
        for item, dst in edges:
            if isinstance(item, FieldLabel):
                reach(dst).add((item, src))

    changed = True
    while changed:
        changed = False
        for src in list(g.unit_edges):
            r = reach(src)
            if not r:
                continue
            for dst in list(g.unit_edges[src]):
                before = len(reach(dst))
                reach(dst).update(r)
                if len(reach(dst)) != before:
                    changed = True
        for node in list(g.pop_edges):
            r = reaching.get(node)
            if not r:
                continue
            for label, dst in g.pop_edges[node]:
                for item, origin in list(r):
                    if item == label and g.add_unit(origin, dst):
                        changed = True
        for node in range(len(g.infos)):
            info = g.infos[node]
            if info.variance is not Variance.CONTRA:
                continue
            r = reaching.get(node)
            if not r:
                continue
            flipped = g.mirror(node)
            if flipped is None:
                continue
            for item, origin in list(r):
                if item == LOAD:
                    swapped = STORE
                elif item == STORE:
                    swapped = LOAD
                else:
                    continue
                if (swapped, origin) not in reach(flipped):
                    reach(flipped).add((swapped, origin))
                    g._add_push(origin, swapped, flipped)
                    changed = True
    return g


# --- determinization, minimization, shadowing --------------------------------


class Dfa:
    """Deterministic automaton over pop/push symbols, states renumbered in
    breadth-first discovery order so equal automata are identical objects.
    """

    def __init__(self, start: int, accepting: frozenset, delta: dict) -> None:
        self.start = start
        self.accepting = accepting
        self.delta = delta  # state -> {symbol: state}

    @property
    def n_states(self) -> int:
        states = {self.start} | set(self.delta)
        for row in self.delta.values():
            states.update(row.values())
        states |= self.accepting
        return len(states)

    def step(self, state: int, sym) -> Optional[int]:
        return self.delta.get(state, {}).get(sym)

    def accepts(self, word: Sequence) -> bool:
        state = self.start
        for sym in word:
            state = self.step(state, sym)
            if state is None:
                return False
        return state in self.accepting

    def symbols(self) -> list:
        out = set()
        for row in self.delta.values():
            out.update(row)
        return sorted(out, key=_sym_key)


def _sym_key(sym: tuple) -> tuple:
    op, item = sym
    return (op, item.sort_key())


def _epsilon_closure(states: frozenset, eps: dict) -> frozenset:
    out = set(states)
    work = list(states)
    while work:
        s = work.pop()
        for t in eps.get(s, ()):
            if t not in out:
                out.add(t)
                work.append(t)
    return frozenset(out)


def determinize(start_set: frozenset, accept_test, trans: dict, eps: dict) -> Dfa:
    """Subset construction with epsilon elimination. ``trans`` maps a state to
    {symbol: set of states}; ``accept_test`` decides acceptance of an NFA state.
    """
    start = _epsilon_closure(start_set, eps)
    ids = {start: 0}
    order = [start]
    delta: dict[int, dict] = {}
    accepting = set()
    i = 0
    while i < len(order):
        current = order[i]
        if any(accept_test(s) for s in current):
            accepting.add(i)
        row: dict = {}
        by_sym: dict = {}
        for s in current:
            for sym, targets in trans.get(s, {}).items():
                by_sym.setdefault(sym, set()).update(targets)
        for sym in sorted(by_sym, key=_sym_key):
            target = _epsilon_closure(frozenset(by_sym[sym]), eps)
            if target not in ids:
                ids[target] = len(order)
                order.append(target)
            row[sym] = ids[target]
        if row:
            delta[i] = row
        i += 1
    return Dfa(0, frozenset(accepting), delta)


def _trim(dfa: Dfa) -> Dfa:
    """Drop states that cannot reach acceptance, then renumber canonically."""
    # backward reachability to acceptance
    inverse: dict[int, set] = {}
    states = {dfa.start} | set(dfa.accepting)
    for src, row in dfa.delta.items():
        states.add(src)
        for dst in row.values():
            states.add(dst)
            inverse.setdefault(dst, set()).add(src)
    alive = set(dfa.accepting)
    work = list(alive)
    while work:
        s = work.pop()
        for p in inverse.get(s, ()):
            if p not in alive:
                alive.add(p)
                work.append(p)
    if dfa.start not in alive:
        return Dfa(0, frozenset(), {})
    # forward BFS renumber over sorted symbols
    ids = {dfa.start: 0}
    order = [dfa.start]
    i = 0
    delta: dict[int, dict] = {}
    while i < len(order):
        s = order[i]
        row = {}
        for sym in sorted(dfa.delta.get(s, {}), key=_sym_key):
            t = dfa.delta[s][sym]
            if t not in alive:
                continue
            if t not in ids:
                ids[t] = len(order)
                order.append(t)
            row[sym] = ids[t]
        if row:
            delta[i] = row
        i += 1
    accepting = frozenset(ids[s] for s in dfa.accepting if s in ids)
    return Dfa(0, accepting, delta)


def minimize(dfa: Dfa) -> Dfa:
    """Moore partition refinement over the combined pop/push alphabet, with an
    implicit dead state for missing transitions.
    """
    dfa = _trim(dfa)
    states = sorted(_all_states(dfa))
    if not states:
        return dfa
    symbols = dfa.symbols()
    DEAD = -1
    block = {s: 1 if s in dfa.accepting else 0 for s in states}
    block[DEAD] = 0
    n_blocks = 2
    while True:
        mapping: dict = {}
        new_block = {}
        for s in states + [DEAD]:
            if s == DEAD:
                row = tuple(block[DEAD] for _ in symbols)
            else:
                row = tuple(block[dfa.delta.get(s, {}).get(sym, DEAD)]
                            for sym in symbols)
            key = (block[s], row)
            if key not in mapping:
                mapping[key] = len(mapping)
            new_block[s] = mapping[key]
        block = new_block
        if len(mapping) == n_blocks:
            break
        n_blocks = len(mapping)
    dead_block = block[DEAD]
    delta: dict[int, dict] = {}
    accepting = set()
    for s in states:
        b = block[s]
        if s in dfa.accepting:
            accepting.add(b)
        for sym, t in dfa.delta.get(s, {}).items():
            if block[t] == dead_block:
                continue
            delta.setdefault(b, {})[sym] = block[t]
    return _trim(Dfa(block[dfa.start], frozenset(accepting), delta))


def _all_states(dfa: Dfa) -> set:
    states = {dfa.start} | set(dfa.accepting) | set(dfa.delta)
    for row in dfa.delta.values():
        states.update(row.values())
    return states


def _positive_restriction(dfa: Dfa) -> Dfa:
    """Keep only accepted words encoding positive pairs, i.e. those whose
    variable tokens carry exactly the variance of the label word they are read
    or written with. This discards the contravariant mirror encodings.
    """
    start = (dfa.start, None, Variance.CO, Variance.CO)
    ids = {start: 0}
    order = [start]
    delta: dict[int, dict] = {}
    accepting = set()
    i = 0
    while i < len(order):
        state, a, pop_par, push_par = order[i]
        if state in dfa.accepting:
            accepting.add(i)
        for sym in sorted(dfa.delta.get(state, {}), key=_sym_key):
            target = dfa.delta[state][sym]
            op, item = sym
            if isinstance(item, VarToken):
                if op == 'pop':
                    if a is not None:
                        continue
                    nxt = (target, item.variance, pop_par, push_par)
                else:
                    if a is None or item.variance is not push_par or a is not pop_par:
                        continue
                    nxt = (target, a, pop_par, push_par)
            else:
                if a is None:
                    continue
                if op == 'pop':
                    nxt = (target, a, pop_par * item.variance, push_par)
                else:
                    nxt = (target, a, pop_par, push_par * item.variance)
            if nxt not in ids:
                ids[nxt] = len(order)
                order.append(nxt)
            delta.setdefault(i, {})[sym] = ids[nxt]
        i += 1
    return minimize(Dfa(0, frozenset(accepting), delta))


def pair_word(lhs: DerivedTypeVar, rhs: DerivedTypeVar) -> list:
    """The pop/push word encoding the pair (lhs ⊑ rhs): pop the lhs token and
    labels in order, then push the rhs labels in reverse and its token.
    """
    word = [('pop', VarToken(lhs.base, variance_of_word(lhs.labels)))]
    word.extend(('pop', l) for l in lhs.labels)
    word.extend(('push', l) for l in reversed(rhs.labels))
    word.append(('push', VarToken(rhs.base, variance_of_word(rhs.labels))))
    return word


class SaturatedTransducer:
    """Finite-state transducer over pop (read) and push (write) symbols
    recognizing the elementary subtype derivations of a constraint set, plus
    the capability quotient used to check that queried endpoints exist.
    """

    def __init__(self, full: Dfa, positive: Dfa, quotient: Quotient,
                 interesting: set[str]) -> None:
        self.full = full
        self.dfa = positive
        self.quotient = quotient
        self.interesting = set(interesting)

    def supports(self, d: DerivedTypeVar) -> bool:
        return self.quotient.supports(d.base, d.labels)

    def accepts_pair(self, lhs: DerivedTypeVar, rhs: DerivedTypeVar) -> bool:
        """Raw automaton acceptance of the positive encoding of (lhs, rhs)."""
        return self.dfa.accepts(pair_word(lhs, rhs))

    def _core_pair(self, lhs: DerivedTypeVar, rhs: DerivedTypeVar) -> bool:
        if (lhs.base == rhs.base and lhs.labels and rhs.labels and
                lhs.labels[:-1] == rhs.labels[:-1] and
                lhs.labels[-1] == STORE and rhs.labels[-1] == LOAD):
            return True
        return self.accepts_pair(lhs, rhs)

    def recognizes(self, lhs: DerivedTypeVar, rhs: DerivedTypeVar) -> bool:
        """True iff there is an elementary derivation of lhs ⊑ rhs. Automaton
        acceptance is completed with reflexivity, the store/load consistency
        axiom, and common-suffix extension, all gated on capability support.
        """
        if not (self.supports(lhs) and self.supports(rhs)):
            return False
        if lhs == rhs:
            return True
        la, ra = lhs.labels, rhs.labels
        max_k = 0
        while (max_k < min(len(la), len(ra)) and
               la[len(la) - max_k - 1] == ra[len(ra) - max_k - 1]):
            max_k += 1
        for k in range(max_k + 1):
            u0 = DerivedTypeVar(lhs.base, la[:len(la) - k] if k else la)
            v0 = DerivedTypeVar(rhs.base, ra[:len(ra) - k] if k else ra)
            suffix = la[len(la) - k:] if k else ()
            if variance_of_word(suffix) is Variance.CO:
                if self._core_pair(u0, v0):
                    return True
            elif self._core_pair(v0, u0):
                return True
        return False

    def enumerate_pairs(self, max_word: int) -> set:
        """All directly accepted positive pairs with label words ≤ max_word."""
        out: set[tuple] = set()
        row = self.dfa.delta.get(self.dfa.start, {})
        for sym in sorted(row, key=_sym_key):
            op, item = sym
            if op != 'pop' or not isinstance(item, VarToken):
                continue
            for state, word in self._label_paths(row[sym], 'pop', max_word):
                lhs = DerivedTypeVar(item.name, word)
                out.update(self._finish_pairs(lhs, state, max_word))
        return out

    def _label_paths(self, state: int, op: str, max_word: int) -> Iterator[tuple]:
        yield state, ()
        if max_word == 0:
            return
        for sym in sorted(self.dfa.delta.get(state, {}), key=_sym_key):
            symbol_op, item = sym
            if symbol_op != op or isinstance(item, VarToken):
                continue
            target = self.dfa.delta[state][sym]
            for end, rest in self._label_paths(target, op, max_word - 1):
                yield end, (item,) + rest if op == 'push' else (item,) + rest

    def _finish_pairs(self, lhs: DerivedTypeVar, state: int,
                      max_word: int) -> Iterator[tuple]:
        for mid, pushed in self._label_paths(state, 'push', max_word):
            row = self.dfa.delta.get(mid, {})
            for sym in sorted(row, key=_sym_key):
                op, item = sym
                if op == 'push' and isinstance(item, VarToken) and \
                        row[sym] in self.dfa.accepting:
                    rhs = DerivedTypeVar(item.name, tuple(reversed(pushed)))
                    yield (lhs, rhs)

    def interesting_pairs(self, universe: Iterable[DerivedTypeVar]) -> set:
        """The full subtype relation over a finite, capability-supported set
        of derived type variables: directly accepted pairs, reflexivity,
        store/load axioms and suffix extensions, closed under transitivity.
        """
        universe = sorted(set(universe))
        in_universe = set(universe)
        max_word = max((len(d.labels) for d in universe), default=0)
        pairs: set[tuple] = {(d, d) for d in universe}
        for d in universe:
            if d.labels and d.labels[-1] == STORE:
                twin = DerivedTypeVar(d.base, d.labels[:-1] + (LOAD,))
                if twin in in_universe:
                    pairs.add((d, twin))
        for lhs, rhs in self.enumerate_pairs(max_word):
            if lhs in in_universe and rhs in in_universe:
                pairs.add((lhs, rhs))
        labels = sorted({d.labels[-1] for d in universe if d.labels},
                        key=lambda l: l.sort_key())
        changed = True
        while changed:
            changed = False
            for lhs, rhs in list(pairs):
                for label in labels:
                    a = lhs.with_suffix(label)
                    b = rhs.with_suffix(label)
                    if a in in_universe and b in in_universe:
                        ext = (a, b) if label.variance is Variance.CO else (b, a)
                        if ext not in pairs:
                            pairs.add(ext)
                            changed = True
            by_lhs: dict = {}
            for lhs, rhs in pairs:
                by_lhs.setdefault(lhs, set()).add(rhs)
            for lhs, rhs in list(pairs):
                for nxt in by_lhs.get(rhs, ()):
                    if (lhs, nxt) not in pairs:
                        pairs.add((lhs, nxt))
                        changed = True
        return pairs

    def to_dot(self, name: str = 'transducer') -> str:
        lines = [f'digraph "{name}" {{', '  rankdir=LR;']
        for state in sorted(_all_states(self.dfa)):
            shape = 'doublecircle' if state in self.dfa.accepting else 'circle'
            mark = ' (start)' if state == self.dfa.start else ''
            lines.append(f'  q{state} [shape={shape},label="q{state}{mark}"];')
        for src in sorted(self.dfa.delta):
            for sym in sorted(self.dfa.delta[src], key=_sym_key):
                dst = self.dfa.delta[src][sym]
                op, item = sym
                lines.append(f'  q{src} -> q{dst} [label="{op} {item}"];')
        lines.append('}')
        return '\n'.join(lines) + '\n'


def shadow(g: ConstraintGraph) -> SaturatedTransducer:
    """Intersect the saturated graph's path language with pops-then-pushes,
    determinize and minimize. The result recognizes a word per elementary
    derivation; unit edges are eliminated as epsilon transitions.
    """
    trans: dict[tuple, dict] = {}
    eps: dict[tuple, set] = {}

    def add(src: tuple, sym: tuple, dst: tuple) -> None:
        trans.setdefault(src, {}).setdefault(sym, set()).add(dst)

    for src, edges in g.pop_edges.items():
        for item, dst in edges:
            add((src, 0), ('pop', item), (dst, 0))
    for src, edges in g.push_edges.items():
        for item, dst in edges:
            add((src, 0), ('push', item), (dst, 1))
            add((src, 1), ('push', item), (dst, 1))
    for src, dsts in g.unit_edges.items():
        for dst in dsts:
            for phase in (0, 1):
                eps.setdefault((src, phase), set()).add((dst, phase))

    accept = (g.end, 1)
    dfa = determinize(frozenset({(g.start, 0)}), lambda s: s == accept,
                      trans, eps)
    full = minimize(dfa)
    positive = _positive_restriction(full)
    quotient = getattr(g, 'quotient', None) or build_quotient(g.cs)
    return SaturatedTransducer(full, positive, quotient, set(g.interesting))


def transducer_for(cs: ConstraintSet,
                   interesting: Iterable[str]) -> SaturatedTransducer:
    """Convenience pipeline: build, saturate and shadow in one call."""
    return shadow(saturate(build_graph(cs, interesting)))


# --- condensation ------------------------------------------------------------


class CondensedAutomaton:
    """Word-labeled view of the transducer with linear chains collapsed: only
    the start state, the accepting state and loop-bearing internal states
    remain. This is the granularity at which fresh type variables are
    introduced when converting back to constraints.
    """

    def __init__(self, start: int, accepting: frozenset, edges: set) -> None:
        self.start = start
        self.accepting = accepting
        self.edges = edges  # set of (src, dst, word) with word a symbol tuple

    def states(self) -> list:
        out = {self.start} | set(self.accepting)
        for src, dst, _ in self.edges:
            out.add(src)
            out.add(dst)
        return sorted(out)

    def internal_states(self) -> list:
        return [s for s in self.states()
                if s != self.start and s not in self.accepting]

    def self_loops(self, state: int) -> list:
        return sorted(w for (s, t, w) in self.edges if s == t == state)

    def to_dot(self, name: str = 'simplified') -> str:
        def word_str(word: tuple) -> str:
            return ' '.join(f'{op} {item}' for op, item in word)

        lines = [f'digraph "{name}" {{', '  rankdir=LR;']
        for state in self.states():
            shape = 'doublecircle' if state in self.accepting else 'circle'
            lines.append(f'  q{state} [shape={shape}];')
        for src, dst, word in sorted(self.edges,
                                     key=lambda e: (e[0], e[1], repr(e[2]))):
            lines.append(f'  q{src} -> q{dst} [label="{word_str(word)}"];')
        lines.append('}')
        return '\n'.join(lines) + '\n'


def condense(dfa: Dfa) -> CondensedAutomaton:
    """Eliminate internal states one at a time (farthest from the start
    first), concatenating edge words. States that hold a self-loop are kept,
    so no Kleene stars are ever needed; each loop survives as a self-loop on
    its closest-to-start state.
    """
    edges: set[tuple] = set()
    for src, row in dfa.delta.items():
        for sym, dst in row.items():
            edges.add((src, dst, (sym,)))
    dist = {dfa.start: 0}
    frontier = [dfa.start]
    while frontier:
        nxt = []
        for s in frontier:
            for sym in sorted(dfa.delta.get(s, {}), key=_sym_key):
                t = dfa.delta[s][sym]
                if t not in dist:
                    dist[t] = dist[s] + 1
                    nxt.append(t)
        frontier = nxt
    internal = {s for s in _all_states(dfa)
                if s != dfa.start and s not in dfa.accepting}
    while True:
        has_loop = {s for (s, t, _) in edges if s == t}
        candidates = sorted((s for s in internal if s not in has_loop),
                            key=lambda s: (-dist.get(s, 0), s))
        if not candidates:
            break
        victim = candidates[0]
        internal.discard(victim)
        incoming = [(p, w) for (p, t, w) in edges if t == victim and p != victim]
        outgoing = [(t, w) for (p, t, w) in edges if p == victim]
        edges = {(p, t, w) for (p, t, w) in edges
                 if p != victim and t != victim}
        for p, w1 in incoming:
            for t, w2 in outgoing:
                edges.add((p, t, w1 + w2))
    return CondensedAutomaton(dfa.start, dfa.accepting, edges)
