"""Shape inference: the union-find quotient of the derived-type-variable
prefix graph, congruence-closed over equal labels and over the load/store
pairing. Paths through the quotient are exactly the capability words entailed
by the constraint set, which makes it the support test for entailment queries
and the tree structure of inferred sketches.
"""

from __future__ import annotations

from typing import Iterable, Iterator, Optional

from .constraints import (
    ConstraintSet,
    DerivedTypeVar,
    FieldLabel,
    LOAD,
    LoadLabel,
    STORE,
    StoreLabel,
    close_prefixes,
)
from .oracle import INTEGER, POINTER, UNKNOWN, apply_additive

# Load and store edges share one successor slot: the quotient construction
# merges their targets (the pointee), while tracking which of the two
# capabilities is actually present.
_PTR_KEY = 'ptr'


def edge_key(label: FieldLabel):
    if isinstance(label, (LoadLabel, StoreLabel)):
        return _PTR_KEY
    return label


class _Edge:
    __slots__ = ('target', 'labels')

    def __init__(self, target: int, labels: set) -> None:
        self.target = target
        self.labels = labels


class Quotient:
    """Equivalence classes of derived type variables with labeled out-edges."""

    def __init__(self) -> None:
        self._ids: dict[DerivedTypeVar, int] = {}
        self._parent: list[int] = []
        self._size: list[int] = []
        self._least: list[DerivedTypeVar] = []
        self._edges: list[dict] = []

    # union-find with path compression and union by size
    def _node(self, d: DerivedTypeVar) -> int:
        idx = self._ids.get(d)
        if idx is None:
            idx = len(self._parent)
            self._ids[d] = idx
            self._parent.append(idx)
            self._size.append(1)
            self._least.append(d)
            self._edges.append({})
        return idx

    def find(self, idx: int) -> int:
        root = idx
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[idx] != root:
            self._parent[idx], idx = root, self._parent[idx]
        return root

    def class_of(self, d: DerivedTypeVar) -> Optional[int]:
        idx = self._ids.get(d)
        return self.find(idx) if idx is not None else None

    def representative(self, root: int) -> DerivedTypeVar:
        return self._least[self.find(root)]

    def union(self, a: int, b: int) -> int:
        a, b = self.find(a), self.find(b)
        if a == b:
            return a
        if self._size[a] < self._size[b]:
            a, b = b, a
        self._parent[b] = a
        self._size[a] += self._size[b]
        if self._least[b] < self._least[a]:
            self._least[a] = self._least[b]
        moved = self._edges[b]
        self._edges[b] = {}
        for key, edge in moved.items():
            self._attach(a, key, edge.target, edge.labels)
        return a

    def _attach(self, src: int, key, target: int, labels: set) -> None:
        src = self.find(src)
        existing = self._edges[src].get(key)
        if existing is None:
            self._edges[src][key] = _Edge(self.find(target), set(labels))
        else:
            existing.labels |= labels
            merged = self.union(existing.target, target)
            # self.union may have moved edges around; re-resolve.
            src = self.find(src)
            edge = self._edges[src][key]
            edge.target = self.find(merged)

    def add_dtv(self, d: DerivedTypeVar) -> int:
        idx = self._node(d)
        p = d.prefix()
        if p is not None:
            parent = self.add_dtv(p)
            self._attach(parent, edge_key(d.labels[-1]), idx, {d.labels[-1]})
        return idx

    def unify(self, a: DerivedTypeVar, b: DerivedTypeVar) -> None:
        self.union(self.add_dtv(a), self.add_dtv(b))

    # queries
    def successor(self, root: int, label: FieldLabel) -> Optional[int]:
        edge = self._edges[self.find(root)].get(edge_key(label))
        if edge is None or label not in edge.labels:
            return None
        return self.find(edge.target)

    def out_edges(self, root: int) -> Iterator[tuple]:
        """Yield (label, target-root) pairs, deterministically ordered."""
        seen = []
        for edge in self._edges[self.find(root)].values():
            for label in edge.labels:
                seen.append((label, self.find(edge.target)))
        yield from sorted(seen, key=lambda e: e[0].sort_key())

    def supports(self, base: str, word: Iterable[FieldLabel]) -> bool:
        """True iff the capability word is realizable from the base variable,
        i.e. the existence of base.word is entailed.
        """
        cur = self.class_of(DerivedTypeVar(base))
        if cur is None:
            return False
        for label in word:
            nxt = self.successor(cur, label)
            if nxt is None:
                return False
            cur = nxt
        return True

    def has_pointer_capability(self, root: int) -> bool:
        return _PTR_KEY in self._edges[self.find(root)]

    def roots(self) -> list[int]:
        return sorted({self.find(i) for i in range(len(self._parent))})


def build_quotient(cs: ConstraintSet) -> Quotient:
    """Quotient the prefix graph of ``cs`` by the symmetrized subtype relation
    (union-find over every subtype constraint, congruence over labels with
    load/store paired).
    """
    cs = close_prefixes(cs)
    q = Quotient()
    for d in sorted(cs.all_dtvs()):
        q.add_dtv(d)
    for c in sorted(cs.subtypes):
        q.unify(c.lhs, c.rhs)
    return q


def infer_tags(cs: ConstraintSet, q: Quotient,
               integral_constants: Optional[set] = None) -> dict[str, str]:
    """Initial pointer/integer tags for additive-constraint resolution:
    pointer-like if the variable's class carries a load or store capability,
    integer-like if it is unified with an integral type constant.
    """
    integral = integral_constants or set()
    tags: dict[str, str] = {}
    class_tag: dict[int, str] = {}
    for base in sorted(cs.base_vars()):
        root = q.class_of(DerivedTypeVar(base))
        if root is None:
            continue
        if q.has_pointer_capability(root):
            class_tag[root] = POINTER
        if base.lstrip('#') in integral or base in integral:
            prev = class_tag.get(root)
            if prev is None:
                class_tag[root] = INTEGER
    for base in sorted(cs.base_vars()):
        root = q.class_of(DerivedTypeVar(base))
        tag = class_tag.get(root, UNKNOWN) if root is not None else UNKNOWN
        if tag != UNKNOWN:
            tags[base] = tag
    return tags


def resolve_additive(cs: ConstraintSet, q: Quotient,
                     integral_constants: Optional[set] = None):
    """Run additive-constraint resolution to a joint fixed point with the
    quotient's capability tags. Returns the AdditiveResult.
    """
    return apply_additive(cs, infer_tags(cs, q, integral_constants))
