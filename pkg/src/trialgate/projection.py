"""Conversion of constraint programs into executable, recall-safe CNF gates.

A trial program's components are rewritten over canonical atoms only:
auxiliary equivalences are inlined, qualifier-to-stem bridges widen
qualified atoms, and the result is distributed into CNF. Any clause
that cannot be executed faithfully (an opaque symbol, a counting
subformula, an atom whose absence the policy treats as support) is
dropped whole, which can only weaken the gate. The surviving clauses
are each entailed by the original program, so retrieval built on them
can skip pairs but never a pair the program accepts.

Patients project trivially: one unit clause per materialized fact,
plus one intent-facing clause per complaint label.
"""

from __future__ import annotations

import fnmatch
import hashlib
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import product
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Set, Tuple

from .closure import ClosedFact
from .errors import OntologyMissError, ParseError, TooLargeToVerify
from .model import (
    And,
    Annotation,
    Atom,
    AtomicConstraint,
    CanonicalPredicate,
    Cmp,
    ComponentClass,
    CountAtLeast,
    Formula,
    Iff,
    Implies,
    NonCanonicalPredicate,
    Not,
    Or,
    Predicate,
    TrialProgram,
)
from .naming import TEMPLATES, VariableName
from .ontology import COMPLAINT_RELATIONS, INTENT_RELATIONS, RELATIONS, Ontology
from .temporal import SENTINEL_HOURS, TimeWindow

_TEMPLATE_BY_ID = {t.template_id: t for t in TEMPLATES}

# clause roles
RETRIEVAL_RELEVANT = "RetrievalRelevant"
DEFERRED = "Deferred"
KNOCKOUT = "Knockout"
FACT = "Fact"

# missingness tags
SUPPORTS_IF_MISSING = "SupportsIfMissing"
REFUTES_IF_MISSING = "RefutesIfMissing"
INCONCLUSIVE_IF_MISSING = "InconclusiveIfMissing"
_MISSING_TAGS = (SUPPORTS_IF_MISSING, REFUTES_IF_MISSING, INCONCLUSIVE_IF_MISSING)

DEFAULT_CLAUSE_CAP = 512


def atom_parts(variable: VariableName) -> Tuple[str, str, Tuple[str, ...]]:
    """Flatten a variable into (relation, concept, qualifier tokens).

    The outcome hole is carried as an ordinary qualifier token so that
    an outcome-free trial atom subsumes outcome-specific patient facts.
    Tokens come back sorted; qualifier sets are order-insensitive.
    """
    relation = _TEMPLATE_BY_ID[variable.template_id].relation
    qualifiers = variable.free_qualifiers
    if variable.outcome is not None:
        qualifiers = qualifiers + (f"outcome_is_{variable.outcome}",)
    return relation, variable.concept, tuple(sorted(qualifiers))


def qualifiers_digest(qualifiers: Sequence[str]) -> str:
    joined = "\x1f".join(sorted(qualifiers))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class GateAtom:
    """One executable literal of a gate clause.

    Boolean atoms carry the required truth value; numeric atoms carry
    the comparison folded into an interval. `window` is the criterion
    window for trial atoms and the possible-holding window for patient
    atoms; `cert` duplicates it on the trial side.
    """

    relation: str
    concept: str
    qualifiers: Tuple[str, ...]
    window: TimeWindow
    cert: TimeWindow
    numeric: bool
    cmp: Cmp
    bool_target: Optional[bool] = None
    lower: Optional[Fraction] = None
    upper: Optional[Fraction] = None
    lower_incl: bool = True
    upper_incl: bool = True
    unit: Optional[str] = None
    polarity: bool = True

    @property
    def is_intent(self) -> bool:
        return self.relation in INTENT_RELATIONS

    @property
    def is_complaint(self) -> bool:
        return self.relation in COMPLAINT_RELATIONS

    def digest(self) -> str:
        return qualifiers_digest(self.qualifiers)

    def interval(self) -> TimeWindow:
        return TimeWindow(self.lower, self.upper, self.lower_incl, self.upper_incl)


@dataclass(frozen=True)
class GateClause:
    role: str
    atoms: Tuple[GateAtom, ...]
    source_tag: Optional[str] = None


@dataclass
class GateCNF:
    owner: str
    entity_kind: str  # Trial | Patient
    side: str
    subcohort: str
    clauses: List[GateClause] = field(default_factory=list)
    truncated: bool = False

    def relevant(self) -> List[GateClause]:
        return [c for c in self.clauses if c.role == RETRIEVAL_RELEVANT]

    def knockouts(self) -> List[GateClause]:
        return [c for c in self.clauses if c.role == KNOCKOUT]


# ---------------------------------------------------------------------------
# targets and policy


@dataclass(frozen=True)
class TargetSpec:
    relation: str
    concept: str
    qualifiers: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.relation not in INTENT_RELATIONS:
            raise ParseError(f"target relation {self.relation!r} is not an intent relation")
        object.__setattr__(self, "qualifiers", tuple(sorted(self.qualifiers)))


def load_targets(text: str) -> Tuple[TargetSpec, ...]:
    data = json.loads(text)
    if not isinstance(data, dict) or not isinstance(data.get("targets"), list):
        raise ParseError("targets file must be an object with a 'targets' array")
    out = []
    for raw in data["targets"]:
        out.append(TargetSpec(
            relation=raw["relation"], concept=raw["concept"],
            qualifiers=tuple(raw.get("qualifiers", ())),
        ))
    return tuple(out)


@dataclass
class SaliencePolicy:
    """Reviewable data controlling missing-evidence handling and
    documentation-level target alternatives."""

    missingness: Tuple[Tuple[str, str], ...] = ()  # (name glob, tag)
    specificity_allow: Mapping[Tuple[str, str], Tuple[str, ...]] = field(default_factory=dict)

    def missing_tag(self, rendered_name: str) -> str:
        for pattern, tag in self.missingness:
            if fnmatch.fnmatchcase(rendered_name, pattern):
                return tag
        return INCONCLUSIVE_IF_MISSING

    def allowed_ancestors(self, relation: str, concept: str) -> Tuple[str, ...]:
        return tuple(self.specificity_allow.get((relation, concept), ()))


def load_policy(text: str, o: Ontology) -> SaliencePolicy:
    data = json.loads(text)
    missingness = []
    for entry in data.get("missingness", []):
        tag = entry["tag"]
        if tag not in _MISSING_TAGS:
            raise ParseError(f"unknown missingness tag {tag!r}")
        missingness.append((entry["pattern"], tag))
    allow: Dict[Tuple[str, str], Tuple[str, ...]] = {}
    for entry in data.get("specificity_allow", []):
        relation, concept = entry["relation"], entry["concept"]
        ancestors = tuple(entry["ancestors"])
        for ancestor in ancestors:
            if ancestor == concept or not o.concept_subsumes(ancestor, concept):
                raise ParseError(
                    f"specificity allow-list: {ancestor!r} is not a proper ancestor of {concept!r}"
                )
        allow[(relation, concept)] = ancestors
    return SaliencePolicy(missingness=tuple(missingness), specificity_allow=allow)


# ---------------------------------------------------------------------------
# bridges and equivalence inlining


def _atom_of(formula: Formula) -> Optional[AtomicConstraint]:
    if isinstance(formula, Atom):
        a = formula.constraint
        if a.boolean and a.cmp is Cmp.EQ and a.target is True:
            return a
    return None


def _stem_atom(predicate: CanonicalPredicate) -> Optional[Atom]:
    v = predicate.variable
    if not v.free_qualifiers:
        return None
    stem = replace(v, free_qualifiers=())
    return Atom(AtomicConstraint(CanonicalPredicate(stem)))


def collect_bridges(program: TrialProgram) -> Tuple[Dict[Predicate, Tuple[Atom, ...]],
                                                    List[Formula]]:
    """Qualifier-entails-stem implications, explicit plus injected.

    Returns the per-predicate widening map and the list of implications
    that had to be injected because the program omitted them.
    """
    explicit: Dict[Predicate, Set[Predicate]] = {}
    bridge_map: Dict[Predicate, List[Atom]] = {}
    for assertion in program.auxiliaries():
        f = assertion.formula
        if isinstance(f, Implies):
            lhs, rhs = _atom_of(f.lhs), _atom_of(f.rhs)
            if lhs is not None and rhs is not None:
                explicit.setdefault(lhs.predicate, set()).add(rhs.predicate)
                bridge_map.setdefault(lhs.predicate, []).append(Atom(rhs))
        elif isinstance(f, Iff):
            # an equivalence whose right side conjoins the stem also
            # certifies the entailment
            lhs = _atom_of(f.lhs)
            if lhs is not None and isinstance(f.rhs, And):
                for child in f.rhs.children:
                    rhs = _atom_of(child)
                    if rhs is not None:
                        explicit.setdefault(lhs.predicate, set()).add(rhs.predicate)
    injected: List[Formula] = []
    for decl in program.declarations:
        if not decl.canonical or decl.numeric:
            continue
        stem = _stem_atom(decl.predicate)
        if stem is None:
            continue
        if stem.constraint.predicate in explicit.get(decl.predicate, set()):
            continue
        qualified = Atom(AtomicConstraint(decl.predicate))
        injected.append(Implies(qualified, stem))
        bridge_map.setdefault(decl.predicate, []).append(stem)
    return {p: tuple(atoms) for p, atoms in bridge_map.items()}, injected


def collect_equivalences(program: TrialProgram) -> Dict[Predicate, Formula]:
    """Definitions (= defined-atom formula) from the auxiliary assertions."""
    out: Dict[Predicate, Formula] = {}
    for assertion in program.auxiliaries():
        f = assertion.formula
        if not isinstance(f, Iff):
            continue
        lhs, rhs = f.lhs, f.rhs
        defined = _atom_of(lhs)
        body = rhs
        if defined is None:
            defined = _atom_of(rhs)
            body = lhs
        if defined is None or defined.predicate in out:
            continue
        out[defined.predicate] = body
    return out


def _substitute(formula: Formula, eqs: Mapping[Predicate, Formula],
                seen: FrozenSet[Predicate] = frozenset()) -> Formula:
    if isinstance(formula, Atom):
        a = _atom_of(formula)
        if a is not None and a.predicate in eqs and a.predicate not in seen:
            return _substitute(eqs[a.predicate], eqs, seen | {a.predicate})
        return formula
    if isinstance(formula, (And, Or)):
        children = tuple(_substitute(c, eqs, seen) for c in formula.children)
        return type(formula)(children)
    if isinstance(formula, Not):
        return Not(_substitute(formula.child, eqs, seen))
    if isinstance(formula, (Implies, Iff)):
        return type(formula)(_substitute(formula.lhs, eqs, seen),
                             _substitute(formula.rhs, eqs, seen))
    if isinstance(formula, CountAtLeast):
        return CountAtLeast(formula.k,
                            tuple(_substitute(c, eqs, seen) for c in formula.children))
    return formula


def _augment(formula: Formula, bridges: Mapping[Predicate, Tuple[Atom, ...]]) -> Formula:
    """Rewrite each bridged atom q to (q and stem...), equivalent under
    the bridge implications, so distribution leaves a canonical fallback
    clause when q itself cannot be executed."""
    if isinstance(formula, Atom):
        a = _atom_of(formula)
        if a is not None and a.predicate in bridges:
            return And((formula,) + bridges[a.predicate])
        return formula
    if isinstance(formula, (And, Or)):
        return type(formula)(tuple(_augment(c, bridges) for c in formula.children))
    if isinstance(formula, Not):
        return Not(_augment(formula.child, bridges))
    if isinstance(formula, (Implies, Iff)):
        return type(formula)(_augment(formula.lhs, bridges), _augment(formula.rhs, bridges))
    if isinstance(formula, CountAtLeast):
        return CountAtLeast(formula.k, tuple(_augment(c, bridges) for c in formula.children))
    return formula


# ---------------------------------------------------------------------------
# NNF and clause distribution

# literal leaves of the NNF tree
@dataclass(frozen=True)
class _Lit:
    constraint: AtomicConstraint
    negated: bool


@dataclass(frozen=True)
class _Opaque:
    """Subformula with no executable clause form (counting nodes)."""

    negated: bool


_TRUE = ("true",)
_FALSE = ("false",)


def _nnf(formula: Formula, negated: bool):
    if isinstance(formula, Atom):
        return _Lit(formula.constraint, negated)
    if isinstance(formula, Not):
        return _nnf(formula.child, not negated)
    if isinstance(formula, And):
        kind = "or" if negated else "and"
        return (kind, [_nnf(c, negated) for c in formula.children])
    if isinstance(formula, Or):
        kind = "and" if negated else "or"
        return (kind, [_nnf(c, negated) for c in formula.children])
    if isinstance(formula, Implies):
        return _nnf(Or((Not(formula.lhs), formula.rhs)), negated)
    if isinstance(formula, Iff):
        both = And((Implies(formula.lhs, formula.rhs), Implies(formula.rhs, formula.lhs)))
        return _nnf(both, negated)
    if isinstance(formula, CountAtLeast):
        if not formula.children:
            holds = formula.k <= 0
            return _FALSE if holds == negated else _TRUE
        return _Opaque(negated)
    raise ParseError(f"cannot project node {formula!r}")


class _ClauseOverflow(Exception):
    pass


def _distribute(node, budget: List[int]) -> List[FrozenSet]:
    """CNF clause sets, plain distribution. budget[0] caps clause count."""
    if node == _TRUE:
        return []
    if node == _FALSE:
        return [frozenset()]
    if isinstance(node, (_Lit, _Opaque)):
        return [frozenset([node])]
    kind, children = node
    if kind == "and":
        out: List[FrozenSet] = []
        for child in children:
            out.extend(_distribute(child, budget))
            if len(out) > budget[0]:
                raise _ClauseOverflow()
        return out
    clause_sets = [_distribute(child, budget) for child in children]
    total = 1
    for cs in clause_sets:
        total *= len(cs)
        if total > budget[0]:
            raise _ClauseOverflow()
    out = []
    for combo in product(*clause_sets):
        merged = frozenset().union(*combo)
        out.append(merged)
    return out


def _clause_is_tautology(clause: FrozenSet) -> bool:
    lits = {(lit.constraint, lit.negated) for lit in clause if isinstance(lit, _Lit)}
    return any((c, not n) in lits for c, n in lits)


def formula_clauses(formula: Formula, cap: int) -> Tuple[List[FrozenSet], bool]:
    """NNF + distribution, returning (clauses, truncated flag)."""
    tree = _nnf(formula, False)
    try:
        clauses = _distribute(tree, [cap])
    except _ClauseOverflow:
        return [], True
    return [c for c in clauses if not _clause_is_tautology(c)], False


# ---------------------------------------------------------------------------
# literal folding


def _bool_required(constraint: AtomicConstraint, negated: bool) -> bool:
    value = constraint.target == (constraint.cmp is Cmp.EQ)
    return value != negated


def fold_literal(lit: _Lit) -> GateAtom:
    """Flatten one canonical literal into an executable atom."""
    constraint = lit.constraint
    predicate = constraint.predicate
    assert isinstance(predicate, CanonicalPredicate)
    relation, concept, quals = atom_parts(predicate.variable)
    window = predicate.window()
    if constraint.boolean:
        return GateAtom(
            relation=relation, concept=concept, qualifiers=quals,
            window=window, cert=window, numeric=False, cmp=Cmp.EQ,
            bool_target=_bool_required(constraint, lit.negated),
            polarity=not lit.negated,
        )
    cmp = constraint.cmp.flipped() if lit.negated else constraint.cmp
    t = constraint.target
    if cmp is Cmp.GE:
        lower, upper, lo_incl, hi_incl = t, SENTINEL_HOURS, True, True
    elif cmp is Cmp.GT:
        lower, upper, lo_incl, hi_incl = t, SENTINEL_HOURS, False, True
    elif cmp is Cmp.LE:
        lower, upper, lo_incl, hi_incl = -SENTINEL_HOURS, t, True, True
    elif cmp is Cmp.LT:
        lower, upper, lo_incl, hi_incl = -SENTINEL_HOURS, t, True, False
    else:  # EQ and NE share the degenerate interval; cmp disambiguates
        lower, upper, lo_incl, hi_incl = t, t, True, True
    return GateAtom(
        relation=relation, concept=concept, qualifiers=quals,
        window=window, cert=window, numeric=True, cmp=cmp,
        lower=lower, upper=upper, lower_incl=lo_incl, upper_incl=hi_incl,
        unit=predicate.unit, polarity=not lit.negated,
    )


def numeric_value_compatible(trial: GateAtom, value_lower: Fraction,
                             value_upper: Fraction) -> bool:
    """Does some value in the patient interval satisfy the trial comparison?"""
    if trial.cmp is Cmp.NE:
        return not (value_lower == value_upper == trial.lower)
    probe = TimeWindow(value_lower, value_upper, True, True)
    return probe.intersects(trial.interval())


# ---------------------------------------------------------------------------
# trial projection


def _target_atom(spec: TargetSpec) -> GateAtom:
    full = TimeWindow.full()
    return GateAtom(
        relation=spec.relation, concept=spec.concept, qualifiers=spec.qualifiers,
        window=full, cert=full, numeric=False, cmp=Cmp.EQ, bool_target=True,
    )


def _expand_specificity(clause: GateClause, policy: SaliencePolicy,
                        o: Ontology) -> GateClause:
    atoms: List[GateAtom] = []
    for atom in clause.atoms:
        atoms.append(atom)
        if atom.numeric or atom.bool_target is not True:
            continue
        for ancestor in policy.allowed_ancestors(atom.relation, atom.concept):
            atoms.append(replace(atom, concept=ancestor))
    return GateClause(role=clause.role, atoms=tuple(atoms), source_tag=clause.source_tag)


def _assemble_clause(clause: FrozenSet, o: Ontology, policy: SaliencePolicy,
                     role: str, tag: Optional[str]) -> Optional[GateClause]:
    folded: List[GateAtom] = []
    for lit in sorted(clause, key=_literal_sort_key):
        if isinstance(lit, _Opaque):
            return None
        predicate = lit.constraint.predicate
        if isinstance(predicate, NonCanonicalPredicate):
            return None
        name = predicate.render()
        if policy.missing_tag(name) == SUPPORTS_IF_MISSING:
            return None
        atom = fold_literal(lit)
        if atom.concept not in o.concepts:
            raise OntologyMissError(
                f"atom {name!r} references undeclared concept {atom.concept!r}"
            )
        folded.append(atom)
    return GateClause(role=role, atoms=tuple(folded), source_tag=tag)


def _literal_sort_key(lit) -> Tuple:
    if isinstance(lit, _Opaque):
        return (1, "", lit.negated)
    return (0, lit.constraint.predicate.render(), lit.negated,
            lit.constraint.cmp.value, str(lit.constraint.target))


def _role_for(component_class: Optional[ComponentClass], side: str,
              clause: FrozenSet) -> str:
    if side == "exclusion":
        # exclusion components assert the negation of each criterion, so a
        # unit negative clause is certainly contradicted exactly when the
        # criterion certainly holds
        if len(clause) == 1:
            lone = next(iter(clause))
            if isinstance(lone, _Lit) and lone.negated:
                return KNOCKOUT
        return DEFERRED
    if component_class is ComponentClass.PRESCREEN:
        return RETRIEVAL_RELEVANT
    return DEFERRED


def project_trial(program: TrialProgram, o: Ontology, policy: SaliencePolicy,
                  targets: Sequence[TargetSpec] = (),
                  clause_cap: int = DEFAULT_CLAUSE_CAP) -> GateCNF:
    """Project a trial program into its executable gate."""
    eqs = collect_equivalences(program)
    bridges, _ = collect_bridges(program)
    gate = GateCNF(
        owner=program.trial_id, entity_kind="Trial",
        side=program.side, subcohort=program.subcohort,
    )
    budget = clause_cap
    for assertion in program.components():
        if budget <= 0:
            gate.truncated = True
            break
        formula = _augment(_substitute(assertion.formula, eqs), bridges)
        clauses, truncated = formula_clauses(formula, budget)
        if truncated:
            gate.truncated = True
        for clause in clauses:
            if budget <= 0:
                gate.truncated = True
                break
            role = _role_for(assertion.tag.component_class, program.side, clause)
            built = _assemble_clause(clause, o, policy, role, assertion.tag.render())
            if built is None:
                continue
            if built.role == RETRIEVAL_RELEVANT:
                built = _expand_specificity(built, policy, o)
            gate.clauses.append(built)
            budget -= 1
    if targets and program.side == "inclusion":
        atoms: List[GateAtom] = []
        for spec in targets:
            if spec.concept not in o.concepts:
                raise OntologyMissError(
                    f"target references undeclared concept {spec.concept!r}"
                )
            atoms.append(_target_atom(spec))
        clause = GateClause(role=RETRIEVAL_RELEVANT, atoms=tuple(atoms),
                            source_tag="target")
        gate.clauses.append(_expand_specificity(clause, policy, o))
    return gate


def trial_constraint_formula(program: TrialProgram,
                             targets: Sequence[TargetSpec] = ()) -> Formula:
    """The full constraint the projection must stay weaker than:
    components, auxiliaries, injected bridges, and the target condition."""
    _, injected = collect_bridges(program)
    parts: List[Formula] = [a.formula for a in program.assertions]
    parts.extend(injected)
    if targets and program.side == "inclusion":
        parts.append(Or(tuple(
            Atom(AtomicConstraint(NonCanonicalPredicate(_target_symbol(spec))))
            for spec in targets
        )))
    if not parts:
        return CountAtLeast(0, ())
    return And(tuple(parts)) if len(parts) > 1 else parts[0]


def _target_symbol(spec) -> str:
    # works for TargetSpec and GateAtom alike
    return "@target:" + spec.relation + ":" + spec.concept + ":" + ",".join(spec.qualifiers)


# ---------------------------------------------------------------------------
# patient projection


def project_patient(facts: Sequence[ClosedFact], patient_id: str = "patient") -> GateCNF:
    """One unit clause per materialized fact, plus complaint-label atoms."""
    gate = GateCNF(owner=patient_id, entity_kind="Patient", side="facts", subcohort="main")
    for fact in facts:
        if not fact.canonical:
            continue
        variable = fact.predicate.variable
        relation, concept, quals = atom_parts(variable)
        if fact.sort == "Bool":
            atom = GateAtom(
                relation=relation, concept=concept, qualifiers=quals,
                window=fact.poss, cert=fact.cert, numeric=False, cmp=Cmp.EQ,
                bool_target=bool(fact.value),
            )
        else:
            value = Fraction(fact.value)
            atom = GateAtom(
                relation=relation, concept=concept, qualifiers=quals,
                window=fact.poss, cert=fact.cert, numeric=True, cmp=Cmp.EQ,
                lower=value, upper=value, unit=variable.unit,
            )
        gate.clauses.append(GateClause(role=FACT, atoms=(atom,)))
        if fact.sort == "Bool" and fact.value is True:
            for label in fact.complaint_labels:
                complaint = GateAtom(
                    relation=label, concept=concept, qualifiers=quals,
                    window=fact.poss, cert=fact.cert, numeric=False, cmp=Cmp.EQ,
                    bool_target=True,
                )
                gate.clauses.append(GateClause(role=FACT, atoms=(complaint,)))
    return gate


# ---------------------------------------------------------------------------
# entailment checking (test harness for the recall-safety property)


def _var_key(constraint_or_atom) -> Tuple:
    """Map a literal to (variable key, polarity-normal form).

    Returns (key, negate) where negate means the literal is the
    complement of the keyed variable. Ordering comparisons pair up with
    their flipped forms so (x < t) is recognized as the complement of
    (x >= t).
    """
    if isinstance(constraint_or_atom, GateAtom):
        a = constraint_or_atom
        if a.is_intent:
            return ("nc", _target_symbol(a)), False
        base = ("a", a.relation, a.concept, tuple(sorted(a.qualifiers)),
                a.window.key(), a.unit)
        if not a.numeric:
            return base + ("bool",), a.bool_target is not True
        cmp, t = a.cmp, (a.lower if a.cmp in (Cmp.GE, Cmp.GT, Cmp.EQ, Cmp.NE) else a.upper)
        return _numeric_key(base, cmp, t)
    constraint = constraint_or_atom
    predicate = constraint.predicate
    if isinstance(predicate, NonCanonicalPredicate):
        key = ("nc", predicate.symbol)
        if constraint.boolean:
            return key, constraint.target == (constraint.cmp is Cmp.NE)
        return _numeric_key(key, constraint.cmp, constraint.target)
    relation, concept, quals = atom_parts(predicate.variable)
    base = ("a", relation, concept, tuple(sorted(quals)),
            predicate.window().key(), predicate.unit)
    if constraint.boolean:
        return base + ("bool",), constraint.target == (constraint.cmp is Cmp.NE)
    return _numeric_key(base, constraint.cmp, constraint.target)


def _numeric_key(base: Tuple, cmp: Cmp, t) -> Tuple[Tuple, bool]:
    if cmp is Cmp.LT:
        return base + ("num", Cmp.GE.value, t), True
    if cmp is Cmp.LE:
        return base + ("num", Cmp.GT.value, t), True
    if cmp is Cmp.NE:
        return base + ("num", Cmp.EQ.value, t), True
    return base + ("num", cmp.value, t), False


def _formula_vars(formula: Formula, acc: Set[Tuple]) -> None:
    if isinstance(formula, Atom):
        key, _ = _var_key(formula.constraint)
        acc.add(key)
    elif isinstance(formula, (And, Or, CountAtLeast)):
        for child in formula.children:
            _formula_vars(child, acc)
    elif isinstance(formula, Not):
        _formula_vars(formula.child, acc)
    elif isinstance(formula, (Implies, Iff)):
        _formula_vars(formula.lhs, acc)
        _formula_vars(formula.rhs, acc)


def _eval_classical(formula: Formula, assignment: Mapping[Tuple, bool]) -> bool:
    if isinstance(formula, Atom):
        key, negate = _var_key(formula.constraint)
        return assignment[key] != negate
    if isinstance(formula, And):
        return all(_eval_classical(c, assignment) for c in formula.children)
    if isinstance(formula, Or):
        return any(_eval_classical(c, assignment) for c in formula.children)
    if isinstance(formula, Not):
        return not _eval_classical(formula.child, assignment)
    if isinstance(formula, Implies):
        return (not _eval_classical(formula.lhs, assignment)
                or _eval_classical(formula.rhs, assignment))
    if isinstance(formula, Iff):
        return _eval_classical(formula.lhs, assignment) == _eval_classical(formula.rhs, assignment)
    if isinstance(formula, CountAtLeast):
        return sum(_eval_classical(c, assignment) for c in formula.children) >= formula.k
    raise ParseError(f"cannot evaluate node {formula!r}")


def check_gate_entailment(tc: Formula, gate: GateCNF, max_atoms: int = 20) -> bool:
    """Exhaustively verify that every assignment satisfying tc satisfies
    the gate. Test harness only; exponential in the variable count."""
    variables: Set[Tuple] = set()
    _formula_vars(tc, variables)
    gate_literals: List[List[Tuple[Tuple, bool]]] = []
    for clause in gate.clauses:
        lits = []
        for atom in clause.atoms:
            key, negate = _var_key(atom)
            variables.add(key)
            lits.append((key, negate))
        gate_literals.append(lits)
    ordered = sorted(variables)
    if len(ordered) > max_atoms:
        raise TooLargeToVerify(f"{len(ordered)} distinct atoms exceed the {max_atoms} cap")
    for bits in range(1 << len(ordered)):
        assignment = {key: bool(bits >> i & 1) for i, key in enumerate(ordered)}
        if not _eval_classical(tc, assignment):
            continue
        for lits in gate_literals:
            if not any(assignment[key] != negate for key, negate in lits):
                return False
    return True
