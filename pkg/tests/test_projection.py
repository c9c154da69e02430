"""Gate projection tests: recall-safe CNF conversion, policy handling,
and the exhaustive entailment harness."""

from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trialgate.closure import ClosedFact
from trialgate.errors import OntologyMissError, ParseError, TooLargeToVerify
from trialgate.model import (
    And,
    Atom,
    AtomicConstraint,
    CanonicalPredicate,
    Cmp,
    ComponentClass,
    CountAtLeast,
    Iff,
    Implies,
    NonCanonicalPredicate,
    Not,
    Or,
    ProvenanceTag,
    TrialAssertion,
    TrialProgram,
    Declaration,
)
from trialgate.naming import parse_variable_name
from trialgate.ontology import Ontology
from trialgate.projection import (
    DEFERRED,
    FACT,
    KNOCKOUT,
    RETRIEVAL_RELEVANT,
    GateAtom,
    GateCNF,
    GateClause,
    SaliencePolicy,
    TargetSpec,
    atom_parts,
    check_gate_entailment,
    collect_bridges,
    load_policy,
    load_targets,
    project_patient,
    project_trial,
    trial_constraint_formula,
)
from trialgate.smtparse import parse_trial_program
from trialgate.temporal import SENTINEL_HOURS, TimeWindow

FIXTURES = Path(__file__).parent / "fixtures"

FEVER = "patient_has_finding_of_fever_now"
COUGH = "patient_has_finding_of_cough_now"
APPENDICITIS_DX = "patient_has_diagnosis_of_appendicitis_inthepast2weeks"
COLONOSCOPY = "patient_has_undergone_colonoscopy_inthepast2weeks"
FEVER_SEVERE = "patient_has_finding_of_fever_now@@severity_high"
AGE = "patient_age_value_recorded_now_in_years"
HEMOGLOBIN = "patient_hemoglobin_value_recorded_now_withunit_grams_per_deciliter"

NOW = TimeWindow.of(0, 0)


def canon(name: str, cmp: Cmp = Cmp.EQ, target=True) -> Atom:
    predicate = CanonicalPredicate(parse_variable_name(name))
    return Atom(AtomicConstraint(predicate, cmp, target))


def opaque(symbol: str) -> Atom:
    return Atom(AtomicConstraint(NonCanonicalPredicate(symbol)))


def component(formula, req=0, member=0, cls=ComponentClass.OTHER) -> TrialAssertion:
    return TrialAssertion(formula, ProvenanceTag(req, "component", member, cls))


def auxiliary(formula, req=0, member=0) -> TrialAssertion:
    return TrialAssertion(formula, ProvenanceTag(req, "auxiliary", member))


def program(assertions, side="inclusion", declarations=()) -> TrialProgram:
    return TrialProgram("T1", "main", side,
                        declarations=list(declarations),
                        assertions=list(assertions))


def declare(*names: str):
    out = []
    for name in names:
        predicate = CanonicalPredicate(parse_variable_name(name))
        sort = "Real" if predicate.numeric else "Bool"
        out.append(Declaration(name, sort, predicate))
    return out


@pytest.fixture()
def onto() -> Ontology:
    o = Ontology()
    o.concepts |= {
        "fever", "cough", "appendicitis", "colonoscopy", "age", "hemoglobin",
        "acute_appendicitis", "ruptured_suppurative_appendicitis",
        "abdominal_disease",
    }
    o.isa_edges |= {
        ("ruptured_suppurative_appendicitis", "acute_appendicitis"),
        ("acute_appendicitis", "appendicitis"),
        ("appendicitis", "abdominal_disease"),
    }
    o.rebuild()
    return o


EMPTY_POLICY = SaliencePolicy()


# ---------------------------------------------------------------------------
# corpus programs


@pytest.fixture(scope="module")
def inclusion_program() -> TrialProgram:
    text = (FIXTURES / "NCT00362869_inclusion_program.smt2").read_text()
    return parse_trial_program(text, trial_id="NCT00362869", side="inclusion")


@pytest.fixture(scope="module")
def exclusion_program() -> TrialProgram:
    text = (FIXTURES / "NCT00362869_exclusion_program.smt2").read_text()
    return parse_trial_program(text, trial_id="NCT00362869", side="exclusion")


def ontology_covering(*programs: TrialProgram) -> Ontology:
    o = Ontology()
    for p in programs:
        for decl in p.declarations:
            if decl.canonical:
                o.concepts.add(decl.predicate.variable.concept)
    o.rebuild()
    return o


class TestCorpusProjection:
    def test_only_age_clauses_retrieval_relevant(self, inclusion_program):
        o = ontology_covering(inclusion_program)
        gate = project_trial(inclusion_program, o, EMPTY_POLICY)
        relevant = gate.relevant()
        # five components carry the prescreen class but only the two age
        # bounds are expressible over canonical atoms
        assert len(relevant) == 2
        assert {c.source_tag for c in relevant} == {
            "REQ3_COMPONENT0_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE",
            "REQ3_COMPONENT1_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE",
        }
        by_tag = {c.source_tag: c for c in relevant}
        low = by_tag["REQ3_COMPONENT0_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE"].atoms
        high = by_tag["REQ3_COMPONENT1_PRESCREEN_NOTES_MUST_COMPLETELY_SUFFICE"].atoms
        assert len(low) == 1 and len(high) == 1
        assert low[0].numeric and low[0].concept == "age" and low[0].unit == "years"
        assert low[0].cmp is Cmp.GE and low[0].lower == 18
        assert high[0].cmp is Cmp.LE and high[0].upper == 40
        assert low[0].window == NOW

    def test_other_clauses_deferred(self, inclusion_program):
        o = ontology_covering(inclusion_program)
        gate = project_trial(inclusion_program, o, EMPTY_POLICY)
        others = [c for c in gate.clauses if c.role != RETRIEVAL_RELEVANT]
        assert others and all(c.role == DEFERRED for c in others)
        assert not gate.truncated

    def test_exclusion_knockouts_are_unit_negatives(self, exclusion_program):
        o = ontology_covering(exclusion_program)
        gate = project_trial(exclusion_program, o, EMPTY_POLICY)
        knockouts = gate.knockouts()
        assert knockouts
        assert all(len(c.atoms) == 1 for c in knockouts)
        assert not gate.relevant()
        acute = [c for c in knockouts if c.atoms[0].concept == "acute_disease"]
        assert acute and acute[0].atoms[0].bool_target is False

    def test_projection_deterministic(self, inclusion_program):
        o = ontology_covering(inclusion_program)
        first = project_trial(inclusion_program, o, EMPTY_POLICY)
        second = project_trial(inclusion_program, o, EMPTY_POLICY)
        assert first.clauses == second.clauses

    def test_corpus_too_large_for_exhaustive_check(self, inclusion_program):
        o = ontology_covering(inclusion_program)
        gate = project_trial(inclusion_program, o, EMPTY_POLICY)
        tc = trial_constraint_formula(inclusion_program)
        with pytest.raises(TooLargeToVerify):
            check_gate_entailment(tc, gate)

    def test_undeclared_concept_rejected(self, inclusion_program):
        with pytest.raises(OntologyMissError):
            project_trial(inclusion_program, Ontology(), EMPTY_POLICY)


# ---------------------------------------------------------------------------
# projection mechanics


class TestProjectTrial:
    def test_single_non_canonical_atom_gives_vacuous_gate(self, onto):
        p = program([component(opaque("patient_is_literate_now"))])
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert gate.clauses == []
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_conjunction_splits_into_unit_clauses(self, onto):
        p = program([component(And((canon(FEVER), canon(COUGH))),
                               cls=ComponentClass.PRESCREEN)])
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert len(gate.relevant()) == 2
        assert all(len(c.atoms) == 1 for c in gate.clauses)
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_mixed_disjunction_with_opaque_literal_dropped(self, onto):
        p = program([component(Or((canon(FEVER), opaque("patient_is_literate_now"))))])
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert gate.clauses == []

    def test_implication_becomes_clause(self, onto):
        p = program([component(Implies(canon(FEVER), canon(COUGH)))])
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert len(gate.clauses) == 1
        atoms = gate.clauses[0].atoms
        required = {(a.concept, a.bool_target) for a in atoms}
        assert required == {("fever", False), ("cough", True)}
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_counting_subformula_clause_dropped(self, onto):
        count = CountAtLeast(2, (canon(FEVER), canon(COUGH), canon(COLONOSCOPY)))
        p = program([component(count)])
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert gate.clauses == []
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_negated_numeric_folds_comparison(self, onto):
        p = program([component(Not(canon(AGE, Cmp.GE, Fraction(18))))],
                    side="exclusion")
        gate = project_trial(p, onto, EMPTY_POLICY)
        [clause] = gate.clauses
        assert clause.role == KNOCKOUT
        [atom] = clause.atoms
        assert atom.cmp is Cmp.LT and atom.upper == 18 and not atom.upper_incl
        assert atom.lower == -SENTINEL_HOURS

    def test_positive_unit_exclusion_clause_not_knockout(self, onto):
        p = program([component(canon(FEVER))], side="exclusion")
        gate = project_trial(p, onto, EMPTY_POLICY)
        [clause] = gate.clauses
        assert clause.role == DEFERRED

    def test_exclusion_implication_clause_deferred(self, onto):
        p = program([component(Implies(canon(FEVER), canon(COUGH)))],
                    side="exclusion")
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert [c.role for c in gate.clauses] == [DEFERRED]

    def test_clause_cap_truncates(self, onto):
        # (a1 v b1) ^ ... distributes multiplicatively; a tiny cap trips
        big = And(tuple(
            Or((canon(FEVER), canon(COUGH), canon(COLONOSCOPY)))
            for _ in range(3)
        ))
        p = program([component(big)])
        gate = project_trial(p, onto, EMPTY_POLICY, clause_cap=2)
        assert gate.truncated
        assert len(gate.clauses) <= 2

    def test_tautological_clause_dropped(self, onto):
        p = program([component(Or((canon(FEVER), Not(canon(FEVER)))))])
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert gate.clauses == []


class TestBridges:
    def test_bridge_injected_for_qualified_declaration(self, onto):
        p = program([component(canon(FEVER_SEVERE))],
                    declarations=declare(FEVER_SEVERE))
        bridges, injected = collect_bridges(p)
        assert len(injected) == 1
        gate = project_trial(p, onto, EMPTY_POLICY)
        concepts = [(a.concept, a.qualifiers) for c in gate.clauses for a in c.atoms]
        assert (("fever", ("severity_high",)) in concepts
                and ("fever", ()) in concepts)
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_explicit_bridge_not_reinjected(self, onto):
        stem = canon(FEVER)
        aux = auxiliary(Implies(canon(FEVER_SEVERE), stem))
        p = program([aux, component(canon(FEVER_SEVERE))],
                    declarations=declare(FEVER_SEVERE))
        _, injected = collect_bridges(p)
        assert injected == []
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert len(gate.clauses) == 2
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_iff_with_stem_conjunct_counts_as_bridge(self, onto):
        aux = auxiliary(Iff(canon(FEVER_SEVERE), And((canon(FEVER), canon(COUGH)))))
        p = program([aux, component(canon(FEVER_SEVERE))],
                    declarations=declare(FEVER_SEVERE))
        _, injected = collect_bridges(p)
        assert injected == []
        gate = project_trial(p, onto, EMPTY_POLICY)
        # the definition is inlined, so the clauses are over fever and cough
        concepts = {a.concept for c in gate.clauses for a in c.atoms}
        assert concepts == {"fever", "cough"}
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_equivalence_inlined_through_disjunction(self, onto):
        umbrella = canon(FEVER_SEVERE)
        aux = auxiliary(Iff(umbrella, And((canon(FEVER), canon(COUGH)))))
        p = program([aux, component(Or((umbrella, canon(APPENDICITIS_DX))))],
                    declarations=declare(FEVER_SEVERE))
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert len(gate.clauses) == 2
        for clause in gate.clauses:
            assert "appendicitis" in {a.concept for a in clause.atoms}
        assert check_gate_entailment(trial_constraint_formula(p), gate)


class TestPolicy:
    def test_load_rejects_unknown_tag(self, onto):
        text = '{"missingness": [{"pattern": "*", "tag": "AlwaysTrue"}]}'
        with pytest.raises(ParseError):
            load_policy(text, onto)

    def test_load_rejects_non_ancestor(self, onto):
        text = ('{"specificity_allow": [{"relation": "Treats",'
                ' "concept": "appendicitis", "ancestors": ["colonoscopy"]}]}')
        with pytest.raises(ParseError):
            load_policy(text, onto)

    def test_load_rejects_self_ancestor(self, onto):
        text = ('{"specificity_allow": [{"relation": "Treats",'
                ' "concept": "appendicitis", "ancestors": ["appendicitis"]}]}')
        with pytest.raises(ParseError):
            load_policy(text, onto)

    def test_first_matching_pattern_wins(self, onto):
        text = ('{"missingness": ['
                '{"pattern": "patient_has_finding_of_*", "tag": "SupportsIfMissing"},'
                '{"pattern": "*", "tag": "RefutesIfMissing"}]}')
        policy = load_policy(text, onto)
        assert policy.missing_tag(FEVER) == "SupportsIfMissing"
        assert policy.missing_tag(AGE) == "RefutesIfMissing"

    def test_default_tag_inconclusive(self):
        assert EMPTY_POLICY.missing_tag(FEVER) == "InconclusiveIfMissing"

    def test_supports_if_missing_drops_whole_clause(self, onto):
        policy = load_policy(
            '{"missingness": [{"pattern": "*cough*", "tag": "SupportsIfMissing"}]}',
            onto)
        p = program([component(Or((canon(FEVER), canon(COUGH))))])
        gate = project_trial(p, onto, policy)
        assert gate.clauses == []

    def test_supports_if_missing_drops_negated_literal_clause(self, onto):
        # dropping just the literal would strengthen the clause, so the
        # entailment property forces the whole clause out
        policy = load_policy(
            '{"missingness": [{"pattern": "*cough*", "tag": "SupportsIfMissing"}]}',
            onto)
        p = program([component(Or((canon(FEVER), Not(canon(COUGH)))))])
        gate = project_trial(p, onto, policy)
        assert gate.clauses == []
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_other_tags_keep_clause(self, onto):
        policy = load_policy(
            '{"missingness": [{"pattern": "*cough*", "tag": "RefutesIfMissing"}]}',
            onto)
        p = program([component(Or((canon(FEVER), canon(COUGH))))])
        gate = project_trial(p, onto, policy)
        assert len(gate.clauses) == 1 and len(gate.clauses[0].atoms) == 2


class TestTargets:
    def test_target_spec_requires_intent_relation(self):
        with pytest.raises(ParseError):
            TargetSpec(relation="HasDiagnosisOf", concept="appendicitis")

    def test_load_targets(self):
        specs = load_targets(
            '{"targets": [{"relation": "Treats", "concept": "appendicitis",'
            ' "qualifiers": ["stage_late"]}]}')
        assert specs == (TargetSpec("Treats", "appendicitis", ("stage_late",)),)

    def test_empty_allow_list_single_atom(self, onto):
        p = program([component(canon(FEVER))])
        spec = TargetSpec("Treats", "ruptured_suppurative_appendicitis")
        gate = project_trial(p, onto, EMPTY_POLICY, targets=(spec,))
        targets = [c for c in gate.relevant() if c.source_tag == "target"]
        assert len(targets) == 1 and len(targets[0].atoms) == 1
        atom = targets[0].atoms[0]
        assert atom.relation == "Treats" and atom.window == TimeWindow.full()

    def test_allow_list_expands_to_disjunction(self, onto):
        policy = load_policy(
            '{"specificity_allow": [{"relation": "Treats",'
            ' "concept": "ruptured_suppurative_appendicitis",'
            ' "ancestors": ["acute_appendicitis"]}]}', onto)
        p = program([component(canon(FEVER))])
        spec = TargetSpec("Treats", "ruptured_suppurative_appendicitis")
        gate = project_trial(p, onto, policy, targets=(spec,))
        [target] = [c for c in gate.relevant() if c.source_tag == "target"]
        assert [a.concept for a in target.atoms] == [
            "ruptured_suppurative_appendicitis", "acute_appendicitis"]

    def test_medical_relevant_atom_also_expands(self, onto):
        policy = load_policy(
            '{"specificity_allow": [{"relation": "HasDiagnosisOf",'
            ' "concept": "appendicitis", "ancestors": ["abdominal_disease"]}]}',
            onto)
        p = program([component(canon(APPENDICITIS_DX), cls=ComponentClass.PRESCREEN)])
        gate = project_trial(p, onto, policy)
        [clause] = gate.relevant()
        assert [a.concept for a in clause.atoms] == ["appendicitis", "abdominal_disease"]
        # the ancestor atom is a fresh disjunct, so the clause only widens
        assert check_gate_entailment(trial_constraint_formula(p), gate)

    def test_no_target_clause_on_exclusion_side(self, onto):
        p = program([component(canon(FEVER))], side="exclusion")
        spec = TargetSpec("Treats", "appendicitis")
        gate = project_trial(p, onto, EMPTY_POLICY, targets=(spec,))
        assert all(c.source_tag != "target" for c in gate.clauses)

    def test_target_entailment_holds(self, onto):
        p = program([component(canon(FEVER))])
        specs = (TargetSpec("Treats", "appendicitis"),
                 TargetSpec("Prevents", "fever"))
        gate = project_trial(p, onto, EMPTY_POLICY, targets=specs)
        tc = trial_constraint_formula(p, targets=specs)
        assert check_gate_entailment(tc, gate)

    def test_target_with_unknown_concept_rejected(self, onto):
        p = program([component(canon(FEVER))])
        spec = TargetSpec("Treats", "martian_flu")
        with pytest.raises(OntologyMissError):
            project_trial(p, onto, EMPTY_POLICY, targets=(spec,))


# ---------------------------------------------------------------------------
# patient projection


def bool_fact(name: str, value: bool = True, labels=()) -> ClosedFact:
    return ClosedFact(
        predicate=CanonicalPredicate(parse_variable_name(name)),
        sort="Bool", value=value,
        cert=TimeWindow.of(0, 0), poss=TimeWindow.of(-720, 0),
        complaint_labels=tuple(labels),
    )


def numeric_fact(name: str, value) -> ClosedFact:
    return ClosedFact(
        predicate=CanonicalPredicate(parse_variable_name(name)),
        sort="Real", value=Fraction(value),
        cert=TimeWindow.of(0, 0), poss=TimeWindow.of(0, 0),
    )


class TestProjectPatient:
    def test_three_facts_three_unit_clauses(self):
        facts = [bool_fact(FEVER), bool_fact(COUGH, value=False),
                 numeric_fact(AGE, 58)]
        gate = project_patient(facts, "p1")
        assert gate.owner == "p1" and gate.entity_kind == "Patient"
        assert len(gate.clauses) == 3
        assert all(c.role == FACT and len(c.atoms) == 1 for c in gate.clauses)

    def test_numeric_age_becomes_degenerate_interval(self):
        gate = project_patient([numeric_fact(AGE, 58)])
        [atom] = gate.clauses[0].atoms
        assert atom.numeric and atom.lower == atom.upper == 58
        assert atom.lower_incl and atom.upper_incl
        assert atom.unit == "years" and atom.concept == "age"

    def test_windows_carried_onto_atoms(self):
        fact = bool_fact(FEVER)
        gate = project_patient([fact])
        [atom] = gate.clauses[0].atoms
        assert atom.window == fact.poss and atom.cert == fact.cert

    def test_empty_fact_set_empty_gate(self):
        assert project_patient([]).clauses == []

    def test_complaint_labels_become_intent_facing_atoms(self):
        fact = bool_fact(APPENDICITIS_DX, labels=("ChiefComplaint",))
        gate = project_patient([fact])
        assert len(gate.clauses) == 2
        relations = {c.atoms[0].relation for c in gate.clauses}
        assert relations == {"HasDiagnosisOf", "ChiefComplaint"}

    def test_no_complaint_atom_for_negative_fact(self):
        fact = bool_fact(APPENDICITIS_DX, value=False, labels=("ChiefComplaint",))
        gate = project_patient([fact])
        assert len(gate.clauses) == 1
        assert gate.clauses[0].atoms[0].bool_target is False

    def test_non_canonical_fact_skipped(self):
        fact = ClosedFact(
            predicate=NonCanonicalPredicate("patient_is_literate_now"),
            sort="Bool", value=True,
            cert=TimeWindow.of(0, 0), poss=TimeWindow.of(0, 0),
        )
        assert project_patient([fact]).clauses == []


# ---------------------------------------------------------------------------
# entailment harness


class TestEntailmentChecker:
    def test_vacuous_gate_always_true(self, onto):
        gate = GateCNF("T1", "Trial", "inclusion", "main")
        assert check_gate_entailment(canon(FEVER), gate)

    def test_conjunct_clause_entailed(self, onto):
        tc = And((canon(FEVER), canon(COUGH)))
        p = program([component(tc)])
        gate = project_trial(p, onto, EMPTY_POLICY)
        assert check_gate_entailment(tc, gate)

    def test_unrelated_clause_not_entailed(self, onto):
        other = project_trial(program([component(canon(COLONOSCOPY))]),
                              onto, EMPTY_POLICY)
        tc = And((canon(FEVER), canon(COUGH)))
        assert not check_gate_entailment(tc, other)

    def test_atom_budget_enforced(self, onto):
        atoms = tuple(
            Atom(AtomicConstraint(CanonicalPredicate(
                parse_variable_name(f"patient_has_finding_of_c{i}_now"))))
            for i in range(21)
        )
        with pytest.raises(TooLargeToVerify):
            check_gate_entailment(And(atoms), GateCNF("T1", "Trial", "inclusion", "main"))

    def test_counting_evaluated_inside_tc(self, onto):
        # count >= 2 over three atoms entails each pairwise disjunction
        count = CountAtLeast(2, (canon(FEVER), canon(COUGH), canon(COLONOSCOPY)))
        clause = GateClause(role=DEFERRED, atoms=(
            _folded(FEVER), _folded(COUGH)))
        gate = GateCNF("T1", "Trial", "inclusion", "main", clauses=[clause])
        assert check_gate_entailment(count, gate)
        single = GateCNF("T1", "Trial", "inclusion", "main",
                         clauses=[GateClause(role=DEFERRED, atoms=(_folded(FEVER),))])
        assert not check_gate_entailment(count, single)


def _folded(name: str) -> GateAtom:
    predicate = CanonicalPredicate(parse_variable_name(name))
    relation, concept, quals = atom_parts(predicate.variable)
    return GateAtom(relation=relation, concept=concept, qualifiers=quals,
                    window=predicate.window(), cert=predicate.window(),
                    numeric=False, cmp=Cmp.EQ, bool_target=True)


# ---------------------------------------------------------------------------
# entailment property over randomized programs


_BOOL_NAMES = (FEVER, COUGH, APPENDICITIS_DX, COLONOSCOPY, FEVER_SEVERE)
_THRESHOLDS = (Fraction(18), Fraction(40), Fraction(65))


def _leaves():
    bools = st.sampled_from(_BOOL_NAMES).map(canon)
    numerics = st.builds(
        lambda cmp, t: canon(AGE, cmp, t),
        st.sampled_from([Cmp.LT, Cmp.LE, Cmp.GE, Cmp.GT, Cmp.EQ, Cmp.NE]),
        st.sampled_from(_THRESHOLDS),
    )
    opaques = st.sampled_from(
        ["patient_is_literate_now", "helper_flag"]).map(opaque)
    return st.one_of(bools, bools, numerics, opaques)


def _formulas():
    def extend(children):
        pair = st.tuples(children, children)
        return st.one_of(
            st.lists(children, min_size=2, max_size=3).map(lambda cs: And(tuple(cs))),
            st.lists(children, min_size=2, max_size=3).map(lambda cs: Or(tuple(cs))),
            children.map(Not),
            pair.map(lambda ab: Implies(*ab)),
            pair.map(lambda ab: Iff(*ab)),
            st.tuples(st.integers(0, 3), st.lists(children, min_size=2, max_size=3))
              .map(lambda kc: CountAtLeast(kc[0], tuple(kc[1]))),
        )
    return st.recursive(_leaves(), extend, max_leaves=6)


_CLASSES = st.sampled_from([ComponentClass.OTHER, ComponentClass.PRESCREEN,
                            ComponentClass.NOT_REQUIREMENT])
_POLICIES = st.sampled_from([
    "{}",
    '{"missingness": [{"pattern": "*cough*", "tag": "SupportsIfMissing"}]}',
    '{"missingness": [{"pattern": "*fever*", "tag": "RefutesIfMissing"}]}',
])


@settings(max_examples=150, deadline=None)
@given(
    formulas=st.lists(_formulas(), min_size=1, max_size=2),
    classes=st.lists(_CLASSES, min_size=2, max_size=2),
    side=st.sampled_from(["inclusion", "exclusion"]),
    policy_text=_POLICIES,
    with_target=st.booleans(),
)
def test_projection_always_entailed(formulas, classes, side, policy_text, with_target):
    o = Ontology()
    o.concepts |= {"fever", "cough", "appendicitis", "colonoscopy", "age"}
    o.rebuild()
    assertions = [component(f, req=i, cls=classes[i % 2])
                  for i, f in enumerate(formulas)]
    p = program(assertions, side=side, declarations=declare(FEVER_SEVERE))
    policy = load_policy(policy_text, o)
    targets = (TargetSpec("Treats", "appendicitis"),) if with_target else ()
    gate = project_trial(p, o, policy, targets=targets)
    tc = trial_constraint_formula(p, targets=targets)
    assert check_gate_entailment(tc, gate, max_atoms=20)
