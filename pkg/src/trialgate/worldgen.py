"""Synthetic worlds and the brute-force retrieval oracle.

`generate_world` builds a random but fully reproducible world from a
seed: a concept forest, a variable vocabulary over it, trial programs
(rendered to text and re-parsed so the serializer and reader sit on
the tested path), retrieval targets, and patient fact sheets rendered
through the JSON record format. `oracle_match` then computes the
ground-truth pair set by evaluating the original trial formulas in
three-valued logic against the closed patient facts, and
`verify_full_recall` checks the gate engine against it: every pair
the oracle accepts must come back from the store, while extra pairs
are reported but allowed.

The oracle deliberately shares the engine's atom support predicate
and the projection's formula rewrites (equivalence inlining,
qualifier bridges, literal folding), but none of its clause
machinery: formulas are walked recursively, so a projection bug that
drops or mangles a required clause shows up as a missed pair. A
component counts toward eligibility only when it evaluates True;
missing evidence resolves per literal through the salience policy
(supports, refutes, or inconclusive when missing).

With knockouts enforced the oracle removes a pair when an exclusion
component is certainly violated by the patient's certain windows.
That test is slightly stronger than the engine, which only acts on
unit negated-literal clauses and defers the rest, so enforcement can
shrink the oracle set below the engine set (surfacing as extras) but
never the reverse.
"""

import json
import random
import tempfile
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Set, Tuple, Union

from .closure import from_patient_record, run_closure
from .errors import TooLarge
from .model import (
    And,
    Atom,
    AtomicConstraint,
    CanonicalPredicate,
    Cmp,
    ComponentClass,
    CountAtLeast,
    Declaration,
    Formula,
    Iff,
    Implies,
    NonCanonicalPredicate,
    Not,
    Or,
    ProvenanceTag,
    TrialAssertion,
    TrialProgram,
)
from .naming import parse_variable_name
from .ontology import Ontology
from .projection import (
    INCONCLUSIVE_IF_MISSING,
    REFUTES_IF_MISSING,
    SUPPORTS_IF_MISSING,
    GateAtom,
    SaliencePolicy,
    TargetSpec,
    _augment,
    _Lit,
    _substitute,
    _target_atom,
    collect_bridges,
    collect_equivalences,
    fold_literal,
    project_patient,
    project_trial,
)
from .retrieval import (
    TREAT_CHIEF,
    ObjectiveConfig,
    _numeric_value_ok,
    _supports,
    knockout_contradicts,
    objective_named,
    retrieve,
)
from .smtparse import (
    PatientFactRecord,
    parse_patient_facts,
    parse_trial_program,
    serialize_trial_program,
)
from .store import StoreHandle, build_store
from .temporal import inclusion_time_match

CERT_KEY = "timewindow_this_patient_fact_certainly_holds"
POSS_KEY = "largest_timewindow_this_patient_fact_may_hold"

_BOOL_STEMS = (
    "patient_has_finding_of_{c}_{tf}",
    "patient_has_diagnosis_of_{c}_{tf}",
    "patient_has_suspicion_of_{c}_{tf}",
    "patient_has_undergone_{c}_{tf}",
)
_TIMEFRAMES = ("now", "inthehistory", "inthepast2weeks", "inthepast6months")
_UNITS = ("grams_per_deciliter", "milligrams_per_deciliter", "units_per_liter")
_COMPLAINT_LABELS = ("AnyImportantComplaint", "ChiefComplaint",
                     "ChiefComplaintRelated", "PreventionTarget")
_TARGET_RELATIONS = ("Treats", "Treats", "Prevents", "MitigatesHarms")
_AGE_VAR = "patient_age_value_recorded_now_in_years"


@dataclass(frozen=True)
class _Vocabulary:
    bool_vars: Tuple[str, ...]
    numeric_vars: Tuple[str, ...]
    noncanon: Tuple[str, ...]


@dataclass
class SyntheticWorld:
    """One generated ontology, trial set, and patient panel."""

    seed: int
    ontology: Ontology
    policy: SaliencePolicy
    trials: List[TrialProgram]
    targets: Dict[str, Tuple[TargetSpec, ...]]
    patients: List[List[PatientFactRecord]]
    lossless: bool = False

    def patient_name(self, index: int) -> str:
        return f"P{index:03d}"

    def trial_ids(self) -> List[str]:
        return sorted({p.trial_id for p in self.trials})


# ---------------------------------------------------------------------------
# generation


def _gen_ontology(rng: random.Random, n_concepts: int, depth: int) -> Ontology:
    o = Ontology()
    concepts = [f"cond{i:02d}" for i in range(n_concepts)]
    o.concepts |= set(concepts)
    o.concepts.add("age")
    depths = {}
    for i, concept in enumerate(concepts):
        parents = [p for p in concepts[:i] if depths[p] < depth]
        if parents and rng.random() < 0.6:
            parent = rng.choice(parents)
            o.isa_edges.add((concept, parent))
            depths[concept] = depths[parent] + 1
        else:
            depths[concept] = 0
    o.rebuild()
    return o


def _gen_vocabulary(rng: random.Random, o: Ontology, lossless: bool) -> _Vocabulary:
    bool_vars: List[str] = []
    numeric_vars: List[str] = [_AGE_VAR]
    for concept in sorted(o.concepts):
        for _ in range(rng.randint(1, 2)):
            stem = rng.choice(_BOOL_STEMS)
            name = stem.format(c=concept, tf=rng.choice(_TIMEFRAMES))
            if name not in bool_vars:
                bool_vars.append(name)
        if rng.random() < 0.25:
            numeric_vars.append(
                f"patient_{concept}_value_recorded_now_withunit_{rng.choice(_UNITS)}"
            )
    for name in list(bool_vars):
        if rng.random() < 0.15:
            bool_vars.append(name + "@@severity_high")
    noncanon = () if lossless else tuple(
        f"note_mentions_trait{i}" for i in range(3)
    )
    return _Vocabulary(tuple(bool_vars), tuple(numeric_vars), noncanon)


def _canon_atom(name: str, cmp: Cmp = Cmp.EQ, target: object = True) -> Atom:
    return Atom(AtomicConstraint(CanonicalPredicate(parse_variable_name(name)), cmp, target))


def _leaf(rng: random.Random, vocab: _Vocabulary, used: Set[str],
          lossless: bool) -> Atom:
    # Sampling without replacement inside one component avoids degenerate
    # repeats such as (or x (not x)), whose tautology handling would
    # otherwise dominate the generated formulas.
    def pick(pool: Sequence[str]) -> str:
        fresh = [s for s in pool if s not in used] or list(pool)
        name = rng.choice(fresh)
        used.add(name)
        return name

    roll = rng.random()
    if not lossless and vocab.noncanon and roll < 0.20:
        return Atom(AtomicConstraint(NonCanonicalPredicate(pick(vocab.noncanon))))
    if roll < 0.40:
        name = pick(vocab.numeric_vars)
        cmp = rng.choice((Cmp.GE, Cmp.GT, Cmp.LE, Cmp.LT, Cmp.EQ))
        lo, hi = (10, 85) if name == _AGE_VAR else (0, 150)
        return _canon_atom(name, cmp, Fraction(rng.randint(lo, hi)))
    return _canon_atom(pick(vocab.bool_vars), Cmp.EQ, rng.random() < 0.85)


def _component_formula(rng: random.Random, vocab: _Vocabulary,
                       lossless: bool) -> Formula:
    used: Set[str] = set()
    roll = rng.random()
    if roll < 0.35:
        return _leaf(rng, vocab, used, lossless)
    if roll < 0.60:
        width = rng.randint(2, 3)
        return Or(tuple(_leaf(rng, vocab, used, lossless) for _ in range(width)))
    if roll < 0.75:
        return And(tuple(_leaf(rng, vocab, used, lossless) for _ in range(2)))
    if roll < 0.85:
        return Not(_leaf(rng, vocab, used, lossless))
    if roll < 0.93 or lossless:
        return Implies(_leaf(rng, vocab, used, lossless),
                       _leaf(rng, vocab, used, lossless))
    k = rng.randint(1, 2)
    n = rng.randint(k + 1, k + 2)
    return CountAtLeast(k, tuple(_leaf(rng, vocab, used, lossless) for _ in range(n)))


def _iter_atoms(formula: Formula) -> Iterator[Atom]:
    if isinstance(formula, Atom):
        yield formula
    elif isinstance(formula, Not):
        yield from _iter_atoms(formula.child)
    elif isinstance(formula, (And, Or, CountAtLeast)):
        for child in formula.children:
            yield from _iter_atoms(child)
    elif isinstance(formula, (Implies, Iff)):
        yield from _iter_atoms(formula.lhs)
        yield from _iter_atoms(formula.rhs)


def _declarations_for(assertions: Sequence[TrialAssertion]) -> List[Declaration]:
    out: List[Declaration] = []
    seen: Set[str] = set()
    for assertion in assertions:
        for atom in _iter_atoms(assertion.formula):
            predicate = atom.constraint.predicate
            name = predicate.render()
            if name in seen:
                continue
            seen.add(name)
            numeric = isinstance(predicate, CanonicalPredicate) and predicate.numeric
            out.append(Declaration(name, "Real" if numeric else "Bool", predicate))
    return out


def _reparse(trial_id: str, subcohort: str, side: str,
             assertions: Sequence[TrialAssertion]) -> TrialProgram:
    draft = TrialProgram(trial_id, subcohort, side,
                         declarations=_declarations_for(assertions),
                         assertions=list(assertions))
    text = serialize_trial_program(draft)
    return parse_trial_program(text, trial_id=trial_id, subcohort=subcohort, side=side)


def _gen_trial(rng: random.Random, trial_id: str, vocab: _Vocabulary,
               o: Ontology, lossless: bool) -> Tuple[List[TrialProgram],
                                                     Tuple[TargetSpec, ...]]:
    assertions: List[TrialAssertion] = []
    n_components = rng.randint(1, 3)
    for req in range(n_components):
        if lossless:
            cls = ComponentClass.PRESCREEN
        else:
            roll = rng.random()
            cls = (ComponentClass.PRESCREEN if roll < 0.70
                   else ComponentClass.OTHER if roll < 0.90
                   else ComponentClass.NOT_REQUIREMENT)
        formula = _component_formula(rng, vocab, lossless)
        assertions.append(TrialAssertion(formula, ProvenanceTag(req, "component", 0, cls)))
    if not lossless and rng.random() < 0.20:
        # A definition the reader must inline before projection.
        helper = rng.choice(vocab.bool_vars)
        used = {helper}
        rhs = Or((_leaf(rng, vocab, used, lossless), _leaf(rng, vocab, used, lossless)))
        assertions.append(TrialAssertion(Iff(_canon_atom(helper), rhs),
                                         ProvenanceTag(n_components, "auxiliary", 0)))
        assertions.append(TrialAssertion(
            Or((_canon_atom(helper), _leaf(rng, vocab, set(used), lossless))),
            ProvenanceTag(n_components + 1, "component", 0, ComponentClass.PRESCREEN)))
    programs = [_reparse(trial_id, "main", "inclusion", assertions)]

    if rng.random() < 0.4:
        exclusions: List[TrialAssertion] = []
        for req in range(rng.randint(1, 2)):
            used = set()
            negated = Not(_leaf(rng, vocab, used, lossless))
            if rng.random() < 0.1:
                negated = And((negated, Not(_leaf(rng, vocab, used, lossless))))
            exclusions.append(TrialAssertion(
                negated, ProvenanceTag(req, "component", 0, ComponentClass.PRESCREEN)))
        programs.append(_reparse(trial_id, "main", "exclusion", exclusions))

    targets: Tuple[TargetSpec, ...] = ()
    if rng.random() < 0.6:
        targets = tuple(
            TargetSpec(rng.choice(_TARGET_RELATIONS), rng.choice(sorted(o.concepts)))
            for _ in range(rng.randint(1, 2))
        )
    return programs, targets


def _endpoint_json(hours: int) -> Dict[str, object]:
    if hours == 0:
        return {"temporal_direction": "now", "inclusive": True}
    direction = "past" if hours < 0 else "future"
    return {"temporal_direction": direction, "temporal_magnitude": abs(hours),
            "units": "hours", "inclusive": True}


def _window_json(lo: int, hi: int) -> Dict[str, object]:
    return {"start_time": _endpoint_json(lo), "end_time": _endpoint_json(hi)}


def _fact_windows(rng: random.Random) -> Tuple[int, int, int, int]:
    if rng.random() < 0.15:
        # Resolved strictly in the past: overlaps history-scoped criteria
        # but not enrollment-time ones.
        hi = -rng.randint(300, 360)
        lo = hi - rng.randint(5, 50)
        return lo, hi, lo, hi
    if rng.random() < 0.2:
        cert_lo, cert_hi = 0, 0
    else:
        cert_lo, cert_hi = -rng.randint(0, 48), rng.randint(0, 6)
    poss_lo = cert_lo - rng.randint(0, 48)
    poss_hi = cert_hi + rng.randint(0, 6)
    return cert_lo, cert_hi, poss_lo, poss_hi


def _fact_json(rng: random.Random, name: str, numeric: bool) -> Dict[str, object]:
    cert_lo, cert_hi, poss_lo, poss_hi = _fact_windows(rng)
    record: Dict[str, object] = {
        "entity_variable_name": name,
        "type": "Real" if numeric else "Bool",
        CERT_KEY: _window_json(cert_lo, cert_hi),
        POSS_KEY: _window_json(poss_lo, poss_hi),
    }
    if numeric:
        record["extracted_value"] = (rng.randint(5, 90) if name == _AGE_VAR
                                     else rng.randint(0, 150))
    else:
        value = rng.random() < 0.7
        record["extracted_value"] = value
        if value and rng.random() < 0.3:
            record["complaint_labels"] = sorted(
                rng.sample(_COMPLAINT_LABELS, rng.randint(1, 2)))
    return record


def _gen_patient(rng: random.Random, vocab: _Vocabulary,
                 missingness_rate: float) -> List[PatientFactRecord]:
    records: List[Dict[str, object]] = []
    for name in vocab.bool_vars:
        if rng.random() < 1 - missingness_rate:
            records.append(_fact_json(rng, name, numeric=False))
    for name in vocab.numeric_vars:
        if rng.random() < 1 - missingness_rate:
            records.append(_fact_json(rng, name, numeric=True))
    for name in vocab.noncanon:
        if rng.random() < (1 - missingness_rate) * 0.7:
            records.append(_fact_json(rng, name, numeric=False))
    return parse_patient_facts(json.dumps(records))


def generate_world(seed: int, *, n_concepts: int = 16, n_trials: int = 8,
                   n_patients: int = 8, depth: int = 3,
                   missingness_rate: float = 0.35,
                   lossless: bool = False) -> SyntheticWorld:
    """Build a reproducible random world.

    The same seed and parameters always yield an identical world.
    `lossless` removes every projection weakening trigger (opaque
    symbols, counting constraints, non-prescreen components) so the
    engine and the oracle must agree exactly, not just recall-safely.
    """
    if n_concepts < 1 or n_trials < 0 or n_patients < 0:
        raise ValueError("world dimensions out of range")
    if not 1 <= depth <= 4:
        raise ValueError("concept depth must be between 1 and 4")
    if not 0.0 <= missingness_rate <= 1.0:
        raise ValueError("missingness_rate must be within [0, 1]")
    rng = random.Random(seed)
    o = _gen_ontology(rng, n_concepts, depth)
    vocab = _gen_vocabulary(rng, o, lossless)
    trials: List[TrialProgram] = []
    targets: Dict[str, Tuple[TargetSpec, ...]] = {}
    for t in range(n_trials):
        trial_id = f"SYN{t:04d}"
        programs, specs = _gen_trial(rng, trial_id, vocab, o, lossless)
        trials.extend(programs)
        if specs:
            targets[trial_id] = specs
    patients = [_gen_patient(rng, vocab, missingness_rate)
                for _ in range(n_patients)]
    return SyntheticWorld(seed=seed, ontology=o, policy=SaliencePolicy(),
                          trials=trials, targets=targets, patients=patients,
                          lossless=lossless)


def build_world_store(world: SyntheticWorld, path) -> StoreHandle:
    """Project every entity in the world and persist the gates."""
    gates = []
    for program in world.trials:
        specs = world.targets.get(program.trial_id, ())
        gates.append(project_trial(program, world.ontology, world.policy,
                                   targets=specs if program.side == "inclusion" else ()))
    for i, records in enumerate(world.patients):
        closed = run_closure([from_patient_record(r) for r in records],
                             world.ontology)
        gates.append(project_patient(closed.facts, patient_id=world.patient_name(i)))
    return build_store(gates, path)


# ---------------------------------------------------------------------------
# oracle

_FALSE, _UNKNOWN, _TRUE = 0, 1, 2


@dataclass
class _PatientView:
    atoms: List[GateAtom]
    noncanon: Dict[str, List[bool]]


def _patient_views(world: SyntheticWorld) -> List[_PatientView]:
    views = []
    for records in world.patients:
        closed = run_closure([from_patient_record(r) for r in records],
                             world.ontology)
        gate = project_patient(closed.facts, patient_id="oracle")
        atoms = [clause.atoms[0] for clause in gate.clauses]
        noncanon: Dict[str, List[bool]] = {}
        for fact in closed.facts:
            if not fact.canonical and fact.sort == "Bool":
                noncanon.setdefault(fact.predicate.render(), []).append(bool(fact.value))
        views.append(_PatientView(atoms, noncanon))
    return views


def _tag_value(tag: str) -> int:
    if tag == SUPPORTS_IF_MISSING:
        return _TRUE
    if tag == REFUTES_IF_MISSING:
        return _FALSE
    return _UNKNOWN


def _flip(value: int) -> int:
    return 2 - value


def _literal_value(constraint: AtomicConstraint, negated: bool,
                   view: _PatientView, policy: SaliencePolicy) -> int:
    folded = fold_literal(_Lit(constraint, negated))
    if any(_supports(folded, p, None, TREAT_CHIEF) for p in view.atoms):
        return _TRUE
    if folded.numeric:
        # A matching measurement certainly outside the folded region
        # refutes the literal; a mismatched unit is no evidence at all.
        for p in view.atoms:
            if (p.numeric and p.relation == folded.relation
                    and p.concept == folded.concept
                    and set(folded.qualifiers) <= set(p.qualifiers)
                    and p.unit == folded.unit
                    and inclusion_time_match(folded.window, p.window)):
                return _FALSE
    else:
        complement = replace(folded, bool_target=not folded.bool_target)
        if any(_supports(complement, p, None, TREAT_CHIEF) for p in view.atoms):
            return _FALSE
    return _tag_value(policy.missing_tag(constraint.predicate.render()))


def _noncanon_value(constraint: AtomicConstraint, negated: bool,
                    view: _PatientView, policy: SaliencePolicy) -> int:
    symbol = constraint.predicate.render()
    required = bool(constraint.target) != negated
    values = view.noncanon.get(symbol, [])
    if required in values:
        return _TRUE
    if values:
        return _FALSE
    return _tag_value(policy.missing_tag(symbol))


def _eval(formula: Formula, negated: bool, view: _PatientView,
          policy: SaliencePolicy) -> int:
    if isinstance(formula, Atom):
        constraint = formula.constraint
        if isinstance(constraint.predicate, NonCanonicalPredicate):
            return _noncanon_value(constraint, negated, view, policy)
        return _literal_value(constraint, negated, view, policy)
    if isinstance(formula, Not):
        return _eval(formula.child, not negated, view, policy)
    if isinstance(formula, And):
        values = [_eval(c, negated, view, policy) for c in formula.children]
        return max(values, default=_FALSE) if negated else min(values, default=_TRUE)
    if isinstance(formula, Or):
        values = [_eval(c, negated, view, policy) for c in formula.children]
        return min(values, default=_TRUE) if negated else max(values, default=_FALSE)
    if isinstance(formula, Implies):
        if negated:
            return min(_eval(formula.lhs, False, view, policy),
                       _eval(formula.rhs, True, view, policy))
        return max(_eval(formula.lhs, True, view, policy),
                   _eval(formula.rhs, False, view, policy))
    if isinstance(formula, Iff):
        lhs_pos = _eval(formula.lhs, False, view, policy)
        lhs_neg = _eval(formula.lhs, True, view, policy)
        rhs_pos = _eval(formula.rhs, False, view, policy)
        rhs_neg = _eval(formula.rhs, True, view, policy)
        if negated:
            return max(min(lhs_pos, rhs_neg), min(rhs_pos, lhs_neg))
        return min(max(lhs_neg, rhs_pos), max(rhs_neg, lhs_pos))
    if isinstance(formula, CountAtLeast):
        values = [_eval(c, False, view, policy) for c in formula.children]
        true = sum(1 for v in values if v == _TRUE)
        open_ = sum(1 for v in values if v == _UNKNOWN)
        raw = (_TRUE if true >= formula.k
               else _FALSE if true + open_ < formula.k
               else _UNKNOWN)
        return _flip(raw) if negated else raw
    raise TypeError(f"unexpected formula node {type(formula).__name__}")


def _cert_violated(formula: Formula, negated: bool, view: _PatientView) -> bool:
    """Certain-evidence check: True only when the formula is certainly
    false for the patient. Unknowns never justify exclusion."""
    if isinstance(formula, Atom):
        constraint = formula.constraint
        if isinstance(constraint.predicate, NonCanonicalPredicate):
            return False
        folded = fold_literal(_Lit(constraint, negated))
        return any(knockout_contradicts(folded, p) for p in view.atoms)
    if isinstance(formula, Not):
        return _cert_violated(formula.child, not negated, view)
    if isinstance(formula, And):
        if negated:
            return all(_cert_violated(c, True, view) for c in formula.children)
        return any(_cert_violated(c, False, view) for c in formula.children)
    if isinstance(formula, Or):
        if negated:
            return any(_cert_violated(c, True, view) for c in formula.children)
        return all(_cert_violated(c, False, view) for c in formula.children)
    if isinstance(formula, Implies):
        if negated:
            return (_cert_violated(formula.lhs, False, view)
                    or _cert_violated(formula.rhs, True, view))
        return (_cert_violated(formula.lhs, True, view)
                and _cert_violated(formula.rhs, False, view))
    if isinstance(formula, Iff):
        forward = (_cert_violated(formula.lhs, True, view)
                   and _cert_violated(formula.rhs, False, view))
        backward = (_cert_violated(formula.rhs, True, view)
                    and _cert_violated(formula.lhs, False, view))
        if negated:
            return ((_cert_violated(formula.lhs, False, view)
                     or _cert_violated(formula.rhs, True, view))
                    and (_cert_violated(formula.rhs, False, view)
                         or _cert_violated(formula.lhs, True, view)))
        return forward or backward
    if isinstance(formula, CountAtLeast):
        if negated:
            return False
        possible = sum(1 for c in formula.children
                       if not _cert_violated(c, False, view))
        return possible < formula.k
    raise TypeError(f"unexpected formula node {type(formula).__name__}")


def _count_atoms(formula: Formula) -> int:
    return sum(1 for _ in _iter_atoms(formula))


def oracle_match(world: SyntheticWorld,
                 obj: Union[ObjectiveConfig, str] = TREAT_CHIEF,
                 max_atoms: int = 5000) -> Set[Tuple[str, str, str]]:
    """Ground-truth (trial_id, subcohort, patient_id) set for the world."""
    if isinstance(obj, str):
        obj = objective_named(obj)
    views = _patient_views(world)
    exclusions: Dict[str, List[TrialProgram]] = {}
    for program in world.trials:
        if program.side == "exclusion":
            exclusions.setdefault(program.trial_id, []).append(program)

    matched: Set[Tuple[str, str, str]] = set()
    for program in world.trials:
        if program.side != "inclusion":
            continue
        eqs = collect_equivalences(program)
        bridges, _ = collect_bridges(program)
        formulas = [
            _augment(_substitute(assertion.formula, eqs), bridges)
            for assertion in program.components()
            if assertion.tag.component_class is ComponentClass.PRESCREEN
        ]
        total = sum(_count_atoms(f) for f in formulas)
        if total > max_atoms:
            raise TooLarge(
                f"trial {program.trial_id} needs {total} literal evaluations, "
                f"oracle budget is {max_atoms}")
        specs = world.targets.get(program.trial_id, ())
        target_atoms = [_target_atom(spec) for spec in specs]
        for i, view in enumerate(views):
            if target_atoms and not any(
                    _supports(t, p, None, obj)
                    for t in target_atoms for p in view.atoms):
                continue
            if not all(_eval(f, False, view, world.policy) == _TRUE
                       for f in formulas):
                continue
            if obj.enforce_knockouts and any(
                    _cert_violated(assertion.formula, False, view)
                    for x in exclusions.get(program.trial_id, ())
                    for assertion in x.components()):
                continue
            matched.add((program.trial_id, program.subcohort,
                         world.patient_name(i)))
    return matched


def verify_full_recall(world: SyntheticWorld,
                       obj: Union[ObjectiveConfig, str] = TREAT_CHIEF,
                       engine: str = "sql") -> Dict[str, object]:
    """Compare the store engine against the oracle.

    Returns missed pairs (oracle accepted, engine did not; must be
    empty), the count of extra pairs (engine-only, allowed by the
    recall-safe contract), and the achieved recall.
    """
    if isinstance(obj, str):
        obj = objective_named(obj)
    oracle = oracle_match(world, obj)
    with tempfile.TemporaryDirectory() as tmp:
        with build_world_store(world, Path(tmp) / "world.sqlite3") as handle:
            results = retrieve(handle, obj, engine=engine)
    got = {(r.trial_id, r.subcohort, r.patient_id) for r in results}
    missed = sorted(oracle - got)
    recall = 1.0 if not oracle else 1.0 - len(missed) / len(oracle)
    return {
        "missed": missed,
        "extra_count": len(got - oracle),
        "recall": recall,
        "oracle_count": len(oracle),
        "engine_count": len(got),
    }
