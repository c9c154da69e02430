"""Predicates, atomic constraints, formulas, and provenance tags.

Formulas evaluate under three-valued logic: a predicate with no
evidence is Unknown (None), and connectives follow the strong Kleene
tables. Counting nodes resolve as soon as enough children are decided
in either direction.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterator, List, Mapping, Optional, Tuple, Union

from .errors import BadNamedTag, ParseError, UnitMismatch
from .naming import VariableName, parse_variable_name
from .temporal import TimeWindow

Tri = Optional[bool]


def not3(v: Tri) -> Tri:
    return None if v is None else not v


def and3(values: Iterator[Tri]) -> Tri:
    saw_unknown = False
    for v in values:
        if v is False:
            return False
        if v is None:
            saw_unknown = True
    return None if saw_unknown else True


def or3(values: Iterator[Tri]) -> Tri:
    saw_unknown = False
    for v in values:
        if v is True:
            return True
        if v is None:
            saw_unknown = True
    return None if saw_unknown else False


@dataclass(frozen=True)
class CanonicalPredicate:
    """A predicate whose name parses under the stem grammar."""

    variable: VariableName

    @staticmethod
    def parse(symbol: str) -> "CanonicalPredicate":
        return CanonicalPredicate(parse_variable_name(symbol))

    @property
    def relation(self) -> str:
        return self.variable.relation

    @property
    def concept(self) -> str:
        return self.variable.concept

    @property
    def outcome(self) -> Optional[str]:
        return self.variable.outcome

    @property
    def unit(self) -> Optional[str]:
        return self.variable.unit

    @property
    def free_qualifiers(self) -> Tuple[str, ...]:
        return self.variable.free_qualifiers

    @property
    def numeric(self) -> bool:
        return self.variable.numeric

    def window(self) -> TimeWindow:
        return self.variable.timeframe.window()

    def render(self) -> str:
        return self.variable.render()


@dataclass(frozen=True)
class NonCanonicalPredicate:
    """A declared symbol that sits outside the canonical grammar."""

    symbol: str

    def render(self) -> str:
        return self.symbol


Predicate = Union[CanonicalPredicate, NonCanonicalPredicate]


class Cmp(str, enum.Enum):
    LT = "<"
    LE = "<="
    EQ = "="
    NE = "!="
    GE = ">="
    GT = ">"

    def test(self, left: Fraction, right: Fraction) -> bool:
        if self is Cmp.LT:
            return left < right
        if self is Cmp.LE:
            return left <= right
        if self is Cmp.EQ:
            return left == right
        if self is Cmp.NE:
            return left != right
        if self is Cmp.GE:
            return left >= right
        return left > right

    def flipped(self) -> "Cmp":
        return _CMP_NEGATION[self]

    def mirrored(self) -> "Cmp":
        """Comparison seen from the other side: a < b iff b > a."""
        return _CMP_MIRROR[self]


_CMP_NEGATION = {
    Cmp.LT: Cmp.GE, Cmp.LE: Cmp.GT, Cmp.EQ: Cmp.NE,
    Cmp.NE: Cmp.EQ, Cmp.GE: Cmp.LT, Cmp.GT: Cmp.LE,
}
_CMP_MIRROR = {
    Cmp.LT: Cmp.GT, Cmp.LE: Cmp.GE, Cmp.EQ: Cmp.EQ,
    Cmp.NE: Cmp.NE, Cmp.GE: Cmp.LE, Cmp.GT: Cmp.LT,
}


@dataclass(frozen=True)
class AtomicConstraint:
    """predicate cmp target, where target is a bool or exact rational."""

    predicate: Predicate
    cmp: Cmp = Cmp.EQ
    target: Union[bool, Fraction] = True

    def __post_init__(self) -> None:
        if isinstance(self.target, bool):
            if self.cmp not in (Cmp.EQ, Cmp.NE):
                raise ParseError(f"boolean atom with ordering comparison {self.cmp}")
        elif not isinstance(self.target, Fraction):
            raise ParseError(f"unsupported atom target {self.target!r}")

    @property
    def boolean(self) -> bool:
        return isinstance(self.target, bool)


class Node:
    """Base class for formula nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Atom(Node):
    constraint: AtomicConstraint


@dataclass(frozen=True)
class And(Node):
    children: Tuple["Formula", ...]


@dataclass(frozen=True)
class Or(Node):
    children: Tuple["Formula", ...]


@dataclass(frozen=True)
class Not(Node):
    child: "Formula"


@dataclass(frozen=True)
class Implies(Node):
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class Iff(Node):
    lhs: "Formula"
    rhs: "Formula"


@dataclass(frozen=True)
class CountAtLeast(Node):
    k: int
    children: Tuple["Formula", ...]


Formula = Union[Atom, And, Or, Not, Implies, Iff, CountAtLeast]


def atoms_of(formula: Formula) -> Iterator[AtomicConstraint]:
    """All atomic constraints in the tree, depth first, with repeats."""
    stack: List[Formula] = [formula]
    while stack:
        node = stack.pop()
        if isinstance(node, Atom):
            yield node.constraint
        elif isinstance(node, (And, Or, CountAtLeast)):
            stack.extend(reversed(node.children))
        elif isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, (Implies, Iff)):
            stack.append(node.rhs)
            stack.append(node.lhs)
        else:
            raise ParseError(f"unknown formula node {node!r}")


def eval_formula(
    formula: Formula,
    assignment: Mapping[Predicate, Tri],
    numeric_env: Optional[Mapping[Predicate, Tuple[Fraction, Optional[str]]]] = None,
) -> Tri:
    """Three-valued evaluation.

    assignment gives boolean predicate states; numeric_env gives exact
    values with units for numeric predicates. Missing entries are
    Unknown. A numeric atom whose unit disagrees with the recorded
    value's unit raises UnitMismatch.
    """
    numeric_env = numeric_env or {}

    def ev(node: Formula) -> Tri:
        if isinstance(node, Atom):
            return _eval_atom(node.constraint, assignment, numeric_env)
        if isinstance(node, And):
            return and3(ev(c) for c in node.children)
        if isinstance(node, Or):
            return or3(ev(c) for c in node.children)
        if isinstance(node, Not):
            return not3(ev(node.child))
        if isinstance(node, Implies):
            return or3(iter((not3(ev(node.lhs)), ev(node.rhs))))
        if isinstance(node, Iff):
            left, right = ev(node.lhs), ev(node.rhs)
            if left is None or right is None:
                return None
            return left == right
        if isinstance(node, CountAtLeast):
            n = len(node.children)
            true_count = false_count = 0
            for child in node.children:
                v = ev(child)
                if v is True:
                    true_count += 1
                elif v is False:
                    false_count += 1
            if true_count >= node.k:
                return True
            if false_count > n - node.k:
                return False
            return None
        raise ParseError(f"unknown formula node {node!r}")

    return ev(formula)


def _eval_atom(
    atom: AtomicConstraint,
    assignment: Mapping[Predicate, Tri],
    numeric_env: Mapping[Predicate, Tuple[Fraction, Optional[str]]],
) -> Tri:
    if atom.boolean:
        state = assignment.get(atom.predicate)
        if state is None:
            return None
        hit = state == atom.target
        return hit if atom.cmp is Cmp.EQ else not hit
    entry = numeric_env.get(atom.predicate)
    if entry is None:
        return None
    value, unit = entry
    atom_unit = atom.predicate.unit if isinstance(atom.predicate, CanonicalPredicate) else None
    if atom_unit is not None and unit is not None and atom_unit != unit:
        raise UnitMismatch(
            f"value for {atom.predicate.render()} recorded in {unit!r}, atom expects {atom_unit!r}"
        )
    return atom.cmp.test(value, atom.target)


class ComponentClass(str, enum.Enum):
    PRESCREEN = "PrescreenMustSuffice"
    NOT_REQUIREMENT = "NotRequirementOrOneOffAction"
    OTHER = "OtherRequirements"


# The middle suffix reproduces the corpus spelling exactly, including
# its transposed letters; tags round-trip byte for byte.
_CLASS_SUFFIXES = {
    "PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE": ComponentClass.PRESCREEN,
    "NOT_REQUIREMNET_OR_ALWAYS_SATISFIABLE_WITH_ACTION": ComponentClass.NOT_REQUIREMENT,
    "OTHER_REQUIREMENTS": ComponentClass.OTHER,
}
_SUFFIX_BY_CLASS = {v: k for k, v in _CLASS_SUFFIXES.items()}

_TAG_RE = re.compile(
    r"^REQ(\d+)_(?:COMPONENT(\d+)_(%s)|AUXILIARY(\d+))$"
    % "|".join(re.escape(s) for s in _CLASS_SUFFIXES)
)


@dataclass(frozen=True)
class ProvenanceTag:
    req_index: int
    kind: str  # "component" | "auxiliary"
    member_index: int
    component_class: Optional[ComponentClass] = None

    @property
    def is_component(self) -> bool:
        return self.kind == "component"

    def render(self) -> str:
        if self.kind == "component":
            return (f"REQ{self.req_index}_COMPONENT{self.member_index}_"
                    f"{_SUFFIX_BY_CLASS[self.component_class]}")
        return f"REQ{self.req_index}_AUXILIARY{self.member_index}"


def parse_provenance_tag(text: str) -> ProvenanceTag:
    m = _TAG_RE.match(text)
    if m is None:
        raise BadNamedTag(f"tag {text!r} does not follow the requirement grammar")
    req = int(m.group(1))
    if m.group(2) is not None:
        return ProvenanceTag(req, "component", int(m.group(2)), _CLASS_SUFFIXES[m.group(3)])
    return ProvenanceTag(req, "auxiliary", int(m.group(4)))


@dataclass
class Annotation:
    """Side comment attached to a declaration: free text plus JSON fields."""

    free_text: Optional[str] = None
    fields: Optional[Dict[str, object]] = None
    problems: Tuple[str, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.problems


BOOL_ANNOTATION_KEYS = frozenset(
    ["when_to_set_to_true", "when_to_set_to_false", "when_to_set_to_null", "meaning"]
)
NUMERIC_ANNOTATION_KEYS = frozenset(
    ["when_to_set_to_value", "when_to_set_to_null", "meaning"]
)


def validate_annotation(annotation: Annotation, numeric: bool) -> Tuple[str, ...]:
    """Key-set check for a declaration's JSON annotation object."""
    if annotation.fields is None:
        return ()
    expected = NUMERIC_ANNOTATION_KEYS if numeric else BOOL_ANNOTATION_KEYS
    got = set(annotation.fields)
    problems = []
    missing = expected - got
    extra = got - expected
    if missing:
        problems.append("missing keys: " + ", ".join(sorted(missing)))
    if extra:
        problems.append("unexpected keys: " + ", ".join(sorted(extra)))
    for key in sorted(expected & got):
        if not isinstance(annotation.fields[key], str):
            problems.append(f"key {key} is not a string")
    return tuple(problems)


@dataclass
class Declaration:
    symbol: str
    sort: str  # Bool | Real | Int
    predicate: Predicate
    annotation: Optional[Annotation] = None

    @property
    def numeric(self) -> bool:
        return self.sort in ("Real", "Int")

    @property
    def canonical(self) -> bool:
        return isinstance(self.predicate, CanonicalPredicate)


@dataclass
class TrialAssertion:
    formula: Formula
    tag: ProvenanceTag


@dataclass
class CountHelper:
    """A define-fun Int helper summing indicator terms over conditions."""

    name: str
    conditions: Tuple[Formula, ...]


@dataclass
class TrialProgram:
    trial_id: str
    subcohort: str
    side: str  # inclusion | exclusion
    declarations: List[Declaration] = field(default_factory=list)
    assertions: List[TrialAssertion] = field(default_factory=list)
    count_helpers: List[CountHelper] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def declaration_map(self) -> Dict[str, Declaration]:
        return {d.symbol: d for d in self.declarations}

    def components(self) -> List[TrialAssertion]:
        return [a for a in self.assertions if a.tag.is_component]

    def auxiliaries(self) -> List[TrialAssertion]:
        return [a for a in self.assertions if not a.tag.is_component]
