"""The constraint language: field labels, variance, derived type variables,
constraints, constraint sets and type schemes, plus a textual parser and
serializer for the constraint file format.

Syntax summary (one constraint per line, ``//`` comments):

    var f.in_stack0.load
    f.in_stack0 <= t
    t.load.s32@4 <= #FileDescriptor
    add x, y, z
    sub x, y, z
    exists t
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence


class Variance(Enum):
    """Sign monoid {⊕, ⊖}: CO is the identity, two CONTRAs cancel."""

    CO = '+'
    CONTRA = '-'

    def __mul__(self, other: 'Variance') -> 'Variance':
        if self is other:
            return Variance.CO
        return Variance.CONTRA

    def flip(self) -> 'Variance':
        return self * Variance.CONTRA

    def __str__(self) -> str:
        return self.value


class FieldLabel:
    """A capability accessor with a fixed variance. Instances are immutable."""

    variance: Variance = Variance.CO

    def sort_key(self) -> tuple:
        return (type(self).__name__, str(self))

    def __lt__(self, other: 'FieldLabel') -> bool:
        return self.sort_key() < other.sort_key()


@dataclass(frozen=True)
class InLabel(FieldLabel):
    """Function input at a named location (contravariant)."""

    loc: str
    variance = Variance.CONTRA

    def __str__(self) -> str:
        return f'in_{self.loc}' if self.loc else 'in'


@dataclass(frozen=True)
class OutLabel(FieldLabel):
    """Function output at a named location (covariant)."""

    loc: str

    def __str__(self) -> str:
        return f'out_{self.loc}' if self.loc else 'out'


@dataclass(frozen=True)
class LoadLabel(FieldLabel):
    """Readable-pointer capability (covariant)."""

    def __str__(self) -> str:
        return 'load'


@dataclass(frozen=True)
class StoreLabel(FieldLabel):
    """Writable-pointer capability (contravariant)."""

    variance = Variance.CONTRA

    def __str__(self) -> str:
        return 'store'


@dataclass(frozen=True)
class SigmaLabel(FieldLabel):
    """Has an N-bit field at byte offset k (covariant). Written ``sN@k``."""

    bits: int
    offset: int

    def __post_init__(self) -> None:
        if self.bits <= 0:
            raise ValueError(f'sigma label width must be positive: {self.bits}')

    def __str__(self) -> str:
        return f's{self.bits}@{self.offset}'


LOAD = LoadLabel()
STORE = StoreLabel()

CONSTANT_SIGIL = '#'


def variance_of_word(word: Sequence[FieldLabel]) -> Variance:
    """Variance of a label word: the product of per-label variances.

    The empty word is covariant.
    """
    v = Variance.CO
    for label in word:
        v = v * label.variance
    return v


@dataclass(frozen=True, order=True)
class DerivedTypeVar:
    """A base type variable followed by a word of field labels (``f.in_x.load``).

    Bases starting with ``#`` are type constants (lattice element names); a
    well-formed constant never carries a nonempty word.
    """

    base: str
    labels: tuple = ()

    @property
    def is_constant(self) -> bool:
        return self.base.startswith(CONSTANT_SIGIL)

    def variance(self) -> Variance:
        return variance_of_word(self.labels)

    def with_suffix(self, *labels: FieldLabel) -> 'DerivedTypeVar':
        return DerivedTypeVar(self.base, self.labels + tuple(labels))

    def prefix(self) -> Optional['DerivedTypeVar']:
        if self.labels:
            return DerivedTypeVar(self.base, self.labels[:-1])
        return None

    def prefixes(self) -> Iterator['DerivedTypeVar']:
        """All proper prefixes, longest first, ending with the bare base."""
        labels = self.labels
        while labels:
            labels = labels[:-1]
            yield DerivedTypeVar(self.base, labels)

    def __str__(self) -> str:
        if not self.labels:
            return self.base
        return self.base + '.' + '.'.join(str(l) for l in self.labels)


def dtv(text: str) -> DerivedTypeVar:
    """Shorthand parser for a single derived type variable."""
    return _Parser('', constants=None).parse_dtv_text(text)


class Constraint:
    """Base class for the four constraint forms of the language."""


@dataclass(frozen=True, order=True)
class VarConstraint(Constraint):
    """Existence of a derived type variable: ``var x.load``."""

    var: DerivedTypeVar

    def __str__(self) -> str:
        return f'var {self.var}'


@dataclass(frozen=True, order=True)
class SubtypeConstraint(Constraint):
    """``lhs <= rhs``."""

    lhs: DerivedTypeVar
    rhs: DerivedTypeVar

    def __str__(self) -> str:
        return f'{self.lhs} <= {self.rhs}'


@dataclass(frozen=True, order=True)
class AddConstraint(Constraint):
    """3-place constraint for ``result = x + y`` with no known constant operand."""

    x: DerivedTypeVar
    y: DerivedTypeVar
    result: DerivedTypeVar

    def __str__(self) -> str:
        return f'add {self.x}, {self.y}, {self.result}'


@dataclass(frozen=True, order=True)
class SubConstraint(Constraint):
    """3-place constraint for ``result = x - y``."""

    x: DerivedTypeVar
    y: DerivedTypeVar
    result: DerivedTypeVar

    def __str__(self) -> str:
        return f'sub {self.x}, {self.y}, {self.result}'


class ConstraintError(ValueError):
    """Raised for syntax or well-formedness errors, with line/column info."""

    def __init__(self, message: str, line: int = 0, column: int = 0) -> None:
        where = f' (line {line}, column {column})' if line else ''
        super().__init__(message + where)
        self.line = line
        self.column = column


class ConstraintSet:
    """A finite set of constraints plus the names projected (bound by ∃)."""

    def __init__(self,
                 constraints: Iterable[Constraint] = (),
                 projected: Iterable[str] = ()) -> None:
        self.subtypes: set[SubtypeConstraint] = set()
        self.existence: set[VarConstraint] = set()
        self.additive: set[Constraint] = set()
        self.projected: set[str] = set(projected)
        for c in constraints:
            self.add(c)

    def add(self, c: Constraint) -> None:
        if isinstance(c, SubtypeConstraint):
            self.subtypes.add(c)
        elif isinstance(c, VarConstraint):
            self.existence.add(c)
        elif isinstance(c, (AddConstraint, SubConstraint)):
            self.additive.add(c)
        else:
            raise TypeError(f'not a constraint: {c!r}')

    def add_subtype(self, lhs: DerivedTypeVar, rhs: DerivedTypeVar) -> None:
        self.subtypes.add(SubtypeConstraint(lhs, rhs))

    def add_var(self, var: DerivedTypeVar) -> None:
        self.existence.add(VarConstraint(var))

    def __iter__(self) -> Iterator[Constraint]:
        yield from sorted(self.existence)
        yield from sorted(self.subtypes)
        yield from sorted(self.additive, key=str)

    def __len__(self) -> int:
        return len(self.subtypes) + len(self.existence) + len(self.additive)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, ConstraintSet) and
                self.subtypes == other.subtypes and
                self.existence == other.existence and
                self.additive == other.additive and
                self.projected == other.projected)

    def copy(self) -> 'ConstraintSet':
        return ConstraintSet(list(self), self.projected)

    def update(self, other: 'ConstraintSet') -> None:
        self.subtypes |= other.subtypes
        self.existence |= other.existence
        self.additive |= other.additive
        self.projected |= other.projected

    def all_dtvs(self) -> set[DerivedTypeVar]:
        out: set[DerivedTypeVar] = set()
        for c in self.subtypes:
            out.add(c.lhs)
            out.add(c.rhs)
        for v in self.existence:
            out.add(v.var)
        for a in self.additive:
            out.update((a.x, a.y, a.result))
        return out

    def base_vars(self) -> set[str]:
        return {d.base for d in self.all_dtvs()}

    def constants(self) -> set[str]:
        return {b for b in self.base_vars() if b.startswith(CONSTANT_SIGIL)}

    def free_vars(self) -> set[str]:
        """Base variables that are neither constants nor projected."""
        return {b for b in self.base_vars()
                if not b.startswith(CONSTANT_SIGIL) and b not in self.projected}

    def rename(self, mapping: dict[str, str]) -> 'ConstraintSet':
        """Rename base variables; used by scheme instantiation."""
        def rn(d: DerivedTypeVar) -> DerivedTypeVar:
            return DerivedTypeVar(mapping.get(d.base, d.base), d.labels)

        out = ConstraintSet(projected=(mapping.get(p, p) for p in self.projected))
        for c in self.subtypes:
            out.add_subtype(rn(c.lhs), rn(c.rhs))
        for v in self.existence:
            out.add_var(rn(v.var))
        for a in self.additive:
            out.add(type(a)(rn(a.x), rn(a.y), rn(a.result)))
        return out

    def serialize(self) -> str:
        lines = [f'exists {name}' for name in sorted(self.projected)]
        lines.extend(str(c) for c in self)
        return '\n'.join(lines) + ('\n' if lines else '')

    def to_json(self) -> dict:
        return {
            'projected': sorted(self.projected),
            'constraints': [
                {'kind': _kind_of(c), **_json_fields(c)} for c in self
            ],
        }

    def __str__(self) -> str:
        return self.serialize()


def _kind_of(c: Constraint) -> str:
    return {VarConstraint: 'var', SubtypeConstraint: 'subtype',
            AddConstraint: 'add', SubConstraint: 'sub'}[type(c)]


def _json_fields(c: Constraint) -> dict:
    if isinstance(c, VarConstraint):
        return {'dtv': str(c.var)}
    if isinstance(c, SubtypeConstraint):
        return {'lhs': str(c.lhs), 'rhs': str(c.rhs)}
    return {'x': str(c.x), 'y': str(c.y), 'z': str(c.result)}


def close_prefixes(cs: ConstraintSet) -> ConstraintSet:
    """Close under T-Left, T-Right and T-Prefix: existence of both sides of
    every subtype constraint and of every prefix. Idempotent; result ⊇ input.
    """
    out = cs.copy()
    seen: set[DerivedTypeVar] = set()

    def close_var(d: DerivedTypeVar) -> None:
        if d in seen:
            return
        seen.add(d)
        out.add_var(d)
        for p in d.prefixes():
            if p in seen:
                break
            seen.add(p)
            out.add_var(p)

    for c in cs.subtypes:
        close_var(c.lhs)
        close_var(c.rhs)
    for v in cs.existence:
        close_var(v.var)
    for a in cs.additive:
        close_var(a.x)
        close_var(a.y)
        close_var(a.result)
    return out


@dataclass(frozen=True)
class TypeScheme:
    """∀-quantified variables, a constraint body, and the subject variable."""

    quantified: frozenset
    body: ConstraintSet = field(compare=False)
    subject: str = ''

    def __post_init__(self) -> None:
        loose = self.body.free_vars() - set(self.quantified) - {self.subject}
        if loose:
            raise ConstraintError(
                f'unquantified free variables in scheme body: {sorted(loose)}')

    def instantiate(self, tag: str) -> ConstraintSet:
        """Rename quantified and projected variables with a callsite tag so
        distinct calls never share variables.
        """
        mapping = {name: f'{name}${tag}'
                   for name in set(self.quantified) | self.body.projected}
        return self.body.rename(mapping)

    def serialize(self) -> str:
        header = f'scheme {self.subject}\n'
        return header + self.body.serialize() + 'end\n'

    def __str__(self) -> str:
        return self.serialize()


# --- parsing -----------------------------------------------------------------

_IDENT = re.compile(r'#?[\w$]+', re.UNICODE)
_SIGMA = re.compile(r's(\d+)@(-?\d+)$')


class _Parser:
    def __init__(self, text: str, constants: Optional[set] = None) -> None:
        self.text = text
        self.constants = constants
        self.line_no = 0

    def error(self, message: str, column: int = 1) -> ConstraintError:
        return ConstraintError(message, self.line_no, column)

    def parse_dtv_text(self, token: str, column: int = 1) -> DerivedTypeVar:
        parts = token.split('.')
        base = parts[0]
        if not base or not _IDENT.fullmatch(base):
            raise self.error(f'bad type variable {token!r}', column)
        labels = tuple(self.parse_label(p, column) for p in parts[1:])
        if base.startswith(CONSTANT_SIGIL):
            if labels:
                raise self.error(
                    f'type constant {base} used with field labels', column)
            if self.constants is not None and base[1:] not in self.constants:
                raise self.error(f'unknown type constant {base}', column)
        return DerivedTypeVar(base, labels)

    def parse_label(self, text: str, column: int) -> FieldLabel:
        if text == 'load':
            return LOAD
        if text == 'store':
            return STORE
        if text == 'in' or text.startswith('in_'):
            return InLabel(text[3:] if text != 'in' else '')
        if text == 'out' or text.startswith('out_'):
            return OutLabel(text[4:] if text != 'out' else '')
        m = _SIGMA.fullmatch(text)
        if m:
            bits = int(m.group(1))
            if bits <= 0:
                raise self.error(f'zero-width sigma label {text!r}', column)
            return SigmaLabel(bits, int(m.group(2)))
        raise self.error(f'unknown field label {text!r}', column)

    def parse(self) -> ConstraintSet:
        out = ConstraintSet()
        for self.line_no, raw in enumerate(self.text.splitlines(), start=1):
            line = raw.split('//', 1)[0].strip()
            if not line:
                continue
            self.parse_line(line, out, col=raw.index(line[0]) + 1)
        return out

    def parse_line(self, line: str, out: ConstraintSet, col: int = 1) -> None:
        head, _, rest = line.partition(' ')
        rest = rest.strip()
        if head == 'var':
            out.add_var(self.parse_dtv_text(rest, col))
        elif head == 'exists':
            if not _IDENT.fullmatch(rest):
                raise self.error(f'bad exists name {rest!r}', col)
            out.projected.add(rest)
        elif head in ('add', 'sub'):
            parts = [p.strip() for p in rest.split(',')]
            if len(parts) != 3:
                raise self.error(f'{head} needs three operands', col)
            ctor = AddConstraint if head == 'add' else SubConstraint
            out.add(ctor(*(self.parse_dtv_text(p, col) for p in parts)))
        elif '<=' in line:
            lhs, _, rhs = line.partition('<=')
            out.add_subtype(self.parse_dtv_text(lhs.strip(), col),
                            self.parse_dtv_text(rhs.strip(), col))
        else:
            raise self.error(f'cannot parse constraint {line!r}', col)


def parse_constraints(text: str, constants: Optional[set] = None) -> ConstraintSet:
    """Parse the textual constraint format. If ``constants`` is given,
    ``#Name`` bases are checked against it.
    """
    return _Parser(text, constants).parse()


def parse_constraints_json(data: str | dict,
                           constants: Optional[set] = None) -> ConstraintSet:
    """Parse the JSON mirror of the constraint file schema."""
    if isinstance(data, str):
        data = json.loads(data)
    parser = _Parser('', constants)
    out = ConstraintSet(projected=data.get('projected', ()))
    for entry in data.get('constraints', ()):
        kind = entry['kind']
        if kind == 'var':
            out.add_var(parser.parse_dtv_text(entry['dtv']))
        elif kind == 'subtype':
            out.add_subtype(parser.parse_dtv_text(entry['lhs']),
                            parser.parse_dtv_text(entry['rhs']))
        elif kind in ('add', 'sub'):
            ctor = AddConstraint if kind == 'add' else SubConstraint
            out.add(ctor(parser.parse_dtv_text(entry['x']),
                         parser.parse_dtv_text(entry['y']),
                         parser.parse_dtv_text(entry['z'])))
        else:
            raise ConstraintError(f'unknown constraint kind {kind!r}')
    return out


def parse_schemes(text: str, constants: Optional[set] = None) -> dict[str, TypeScheme]:
    """Parse a file of ``scheme <name> ... end`` blocks into a scheme table."""
    schemes: dict[str, TypeScheme] = {}
    subject = None
    chunk: list[str] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('//', 1)[0].strip()
        if not line:
            continue
        if line.startswith('scheme '):
            if subject is not None:
                raise ConstraintError('nested scheme block', line_no)
            subject = line.split(None, 1)[1].strip()
        elif line == 'end':
            if subject is None:
                raise ConstraintError("'end' outside a scheme block", line_no)
            body = parse_constraints('\n'.join(chunk), constants)
            quantified = frozenset(body.free_vars())
            schemes[subject] = TypeScheme(quantified, body, subject)
            subject, chunk = None, []
        else:
            if subject is None:
                raise ConstraintError('constraint outside a scheme block', line_no)
            chunk.append(line)
    if subject is not None:
        raise ConstraintError('unterminated scheme block')
    return schemes
