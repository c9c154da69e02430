"""Retrieval engine tests: objective presets, atom compatibility, the
dual SQL/in-memory execution paths, knockouts, and explanations."""

import random
from fractions import Fraction
from pathlib import Path

import pytest

from trialgate.closure import ClosedFact
from trialgate.errors import UnitMismatch, UnknownEntity, UnknownObjective
from trialgate.model import CanonicalPredicate, Cmp
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
    project_patient,
    project_trial,
)
from trialgate.retrieval import (
    RELEVANT_TO_ANY,
    TREAT_ANY,
    TREAT_CHIEF,
    ObjectiveConfig,
    atoms_compatible,
    explain,
    knockout_contradicts,
    objective_named,
    retrieve,
)
from trialgate.smtparse import parse_trial_program
from trialgate.store import build_store, open_store
from trialgate.temporal import SENTINEL_HOURS, TimeWindow

FIXTURES = Path(__file__).parent / "fixtures"

NOW = TimeWindow.of(0, 0)
FULL = TimeWindow.full()
PAST_100 = TimeWindow.of(-100, 0)


def bool_atom(relation, concept, target=True, quals=(), window=NOW, cert=None):
    return GateAtom(
        relation=relation, concept=concept, qualifiers=tuple(sorted(quals)),
        window=window, cert=window if cert is None else cert,
        numeric=False, cmp=Cmp.EQ, bool_target=target,
    )


def num_atom(relation, concept, cmp, lower, upper, lower_incl=True,
             upper_incl=True, unit="years", window=NOW, cert=None):
    return GateAtom(
        relation=relation, concept=concept, qualifiers=(),
        window=window, cert=window if cert is None else cert,
        numeric=True, cmp=cmp, lower=Fraction(lower), upper=Fraction(upper),
        lower_incl=lower_incl, upper_incl=upper_incl, unit=unit,
    )


def point(relation, concept, value, unit="years", window=NOW, cert=None):
    return num_atom(relation, concept, Cmp.EQ, value, value,
                    unit=unit, window=window, cert=cert)


def trial_gate(trial_id, clauses, side="inclusion", subcohort="main"):
    return GateCNF(owner=trial_id, entity_kind="Trial", side=side,
                   subcohort=subcohort, clauses=list(clauses))


def patient_gate(patient_id, *atoms):
    return GateCNF(owner=patient_id, entity_kind="Patient", side="facts",
                   subcohort="main",
                   clauses=[GateClause(role=FACT, atoms=(a,)) for a in atoms])


def unit_clause(atom, role=RETRIEVAL_RELEVANT, tag=None):
    return GateClause(role=role, atoms=(atom,), source_tag=tag)


def pairs(results):
    return [(m.patient_id, m.trial_id, m.subcohort) for m in results]


# ---------------------------------------------------------------------------
# objectives


class TestObjectives:
    def test_treat_chief_map(self):
        assert TREAT_CHIEF.intent_map == {
            ("Treats", "ChiefComplaint"),
            ("Treats", "ChiefComplaintRelated"),
            ("Prevents", "PreventionTarget"),
        }
        assert not TREAT_CHIEF.enforce_knockouts

    def test_treat_any_adds_one_pair(self):
        assert TREAT_ANY.intent_map - TREAT_CHIEF.intent_map == {
            ("Treats", "AnyImportantComplaint"),
        }

    def test_relevant_to_any_excludes_only_not_relevant(self):
        trial_side = {t for t, _ in RELEVANT_TO_ANY.intent_map}
        assert "NotClinicallyRelevant" not in trial_side
        assert len(RELEVANT_TO_ANY.intent_map) == 8 * 4

    def test_named_spellings(self):
        assert objective_named("TreatChief") is TREAT_CHIEF
        assert objective_named("treat-chief") is TREAT_CHIEF
        assert objective_named("relevant_to_any") is RELEVANT_TO_ANY

    def test_named_knockout_variant(self):
        obj = objective_named("treat-any", enforce_knockouts=True)
        assert obj.enforce_knockouts
        assert obj.intent_map == TREAT_ANY.intent_map

    def test_unknown_name(self):
        with pytest.raises(UnknownObjective):
            objective_named("cure-everything")

    def test_custom_map_rejects_non_intent_trial_relation(self):
        with pytest.raises(UnknownObjective):
            ObjectiveConfig(name="bad", intent_map=frozenset(
                {("HasFindingOf", "ChiefComplaint")}))

    def test_custom_map_rejects_non_complaint_patient_relation(self):
        with pytest.raises(UnknownObjective):
            ObjectiveConfig(name="bad", intent_map=frozenset(
                {("Treats", "HasDiagnosisOf")}))


# ---------------------------------------------------------------------------
# atom compatibility


@pytest.fixture()
def onto():
    o = Ontology()
    o.concepts |= {
        "fever", "appendicitis", "acute_appendicitis", "abdominal_disease",
        "age", "hemoglobin", "acute_disease",
    }
    o.isa_edges |= {
        ("acute_appendicitis", "appendicitis"),
        ("appendicitis", "abdominal_disease"),
    }
    o.relation_sub.add(("HasDiagnosisOf", "HasFindingOf"))
    o.rebuild()
    return o


class TestAtomsCompatible:
    def test_target_matches_chief_complaint_after_subsumption(self, onto):
        trial = bool_atom("Treats", "appendicitis", window=FULL)
        patient = bool_atom("ChiefComplaint", "acute_appendicitis")
        assert atoms_compatible(trial, patient, onto, TREAT_CHIEF)

    def test_target_needs_map_pair(self, onto):
        trial = bool_atom("Prevents", "appendicitis", window=FULL)
        patient = bool_atom("ChiefComplaint", "appendicitis")
        assert not atoms_compatible(trial, patient, onto, TREAT_CHIEF)
        assert atoms_compatible(trial, patient, onto, RELEVANT_TO_ANY)

    def test_age_interval_intersection(self):
        trial = num_atom("AgeValueRecorded", "age", Cmp.GE, 18, SENTINEL_HOURS)
        patient = point("AgeValueRecorded", "age", 58)
        assert atoms_compatible(trial, patient, None, TREAT_CHIEF)

    def test_age_below_threshold(self):
        trial = num_atom("AgeValueRecorded", "age", Cmp.GE, 18, SENTINEL_HOURS)
        patient = point("AgeValueRecorded", "age", 12)
        assert not atoms_compatible(trial, patient, None, TREAT_CHIEF)

    def test_unit_mismatch_raises(self):
        trial = num_atom("ValueRecorded", "hemoglobin", Cmp.GE, 10,
                         SENTINEL_HOURS, unit="grams_per_deciliter")
        patient = point("ValueRecorded", "hemoglobin", 12, unit="years")
        with pytest.raises(UnitMismatch):
            atoms_compatible(trial, patient, None, TREAT_CHIEF)

    def test_disjoint_windows(self):
        trial = bool_atom("HasFindingOf", "fever",
                          window=TimeWindow.of(-10, -5))
        patient = bool_atom("HasFindingOf", "fever", window=TimeWindow.of(-2, 0))
        assert not atoms_compatible(trial, patient, None, TREAT_CHIEF)

    def test_qualifier_direction(self):
        demanding = bool_atom("HasFindingOf", "fever", quals=("severity_high",))
        plain = bool_atom("HasFindingOf", "fever")
        qualified = bool_atom("HasFindingOf", "fever", quals=("severity_high",))
        assert not atoms_compatible(demanding, plain, None, TREAT_CHIEF)
        assert atoms_compatible(plain, qualified, None, TREAT_CHIEF)
        assert atoms_compatible(demanding, qualified, None, TREAT_CHIEF)

    def test_negative_atom_matches_exact_key_only(self, onto):
        trial = bool_atom("HasFindingOf", "appendicitis", target=False)
        same = bool_atom("HasFindingOf", "appendicitis", target=False)
        narrower = bool_atom("HasFindingOf", "acute_appendicitis", target=False)
        positive = bool_atom("HasFindingOf", "appendicitis")
        assert atoms_compatible(trial, same, onto, TREAT_CHIEF)
        assert not atoms_compatible(trial, narrower, onto, TREAT_CHIEF)
        assert not atoms_compatible(trial, positive, onto, TREAT_CHIEF)

    def test_relation_generality_needs_ontology(self, onto):
        trial = bool_atom("HasFindingOf", "fever")
        patient = bool_atom("HasDiagnosisOf", "fever")
        assert atoms_compatible(trial, patient, onto, TREAT_CHIEF)
        assert not atoms_compatible(trial, patient, None, TREAT_CHIEF)

    def test_kind_mismatch(self):
        trial = bool_atom("HasFindingOf", "age")
        patient = point("AgeValueRecorded", "age", 58)
        assert not atoms_compatible(trial, patient, None, TREAT_CHIEF)

    def test_not_equal_excludes_exact_point(self):
        trial = num_atom("ValueRecorded", "hemoglobin", Cmp.NE, 10, 10)
        at_point = point("ValueRecorded", "hemoglobin", 10,
                         unit="grams_per_deciliter")
        off_point = point("ValueRecorded", "hemoglobin", 11,
                          unit="grams_per_deciliter")
        trial = GateAtom(
            relation="ValueRecorded", concept="hemoglobin", qualifiers=(),
            window=NOW, cert=NOW, numeric=True, cmp=Cmp.NE,
            lower=Fraction(10), upper=Fraction(10),
            unit="grams_per_deciliter",
        )
        assert not atoms_compatible(trial, at_point, None, TREAT_CHIEF)
        assert atoms_compatible(trial, off_point, None, TREAT_CHIEF)


class TestKnockoutContradicts:
    def test_bool_hit_requires_cert_containment(self, onto):
        knockout = bool_atom("HasFindingOf", "acute_disease", target=False,
                             window=PAST_100)
        inside = bool_atom("HasFindingOf", "acute_disease",
                           window=PAST_100, cert=TimeWindow.of(-10, 0))
        outside = bool_atom("HasFindingOf", "acute_disease",
                            window=PAST_100, cert=TimeWindow.of(-200, 0))
        assert knockout_contradicts(knockout, inside, onto)
        assert not knockout_contradicts(knockout, outside, onto)

    def test_bool_hit_uses_subsumption(self, onto):
        knockout = bool_atom("HasFindingOf", "abdominal_disease", target=False,
                             window=PAST_100)
        specific = bool_atom("HasFindingOf", "acute_appendicitis",
                             window=NOW, cert=NOW)
        assert knockout_contradicts(knockout, specific, onto)
        assert not knockout_contradicts(knockout, specific, None)

    def test_numeric_hit_outside_region(self):
        # folded form of "not (hemoglobin >= 10)": values below ten pass
        knockout = num_atom("ValueRecorded", "hemoglobin", Cmp.LT,
                            -SENTINEL_HOURS, 10, upper_incl=False,
                            unit="grams_per_deciliter", window=NOW)
        low = point("ValueRecorded", "hemoglobin", 9,
                    unit="grams_per_deciliter")
        high = point("ValueRecorded", "hemoglobin", 12,
                     unit="grams_per_deciliter")
        assert not knockout_contradicts(knockout, low, None)
        assert knockout_contradicts(knockout, high, None)

    def test_positive_fact_does_not_hit_absence_requirement(self):
        knockout = bool_atom("HasFindingOf", "acute_disease", target=False,
                             window=PAST_100)
        absent = bool_atom("HasFindingOf", "acute_disease", target=False,
                           window=NOW, cert=NOW)
        assert not knockout_contradicts(knockout, absent, None)


# ---------------------------------------------------------------------------
# the hand-enumerated fixture store


@pytest.fixture(scope="module")
def world_store(tmp_path_factory):
    ta = trial_gate("TA", [
        unit_clause(bool_atom("HasFindingOf", "fever")),
        unit_clause(num_atom("AgeValueRecorded", "age", Cmp.GE,
                             18, SENTINEL_HOURS)),
        unit_clause(bool_atom("HasFindingOf", "rash"), role=DEFERRED),
    ])
    ta_exclusion = trial_gate("TA", [
        unit_clause(bool_atom("HasFindingOf", "acute_disease", target=False,
                              window=PAST_100), role=KNOCKOUT),
        unit_clause(num_atom("ValueRecorded", "hemoglobin", Cmp.LT,
                             -SENTINEL_HOURS, 10, upper_incl=False,
                             unit="grams_per_deciliter", window=NOW),
                    role=KNOCKOUT),
    ], side="exclusion")
    tb = trial_gate("TB", [
        unit_clause(bool_atom("Treats", "appendicitis", window=FULL),
                    tag="target"),
        GateClause(role=RETRIEVAL_RELEVANT, atoms=(
            bool_atom("HasDiagnosisOf", "appendicitis"),
            bool_atom("HasFindingOf", "fever"),
        )),
    ])
    tb_arm2 = trial_gate("TB", [
        unit_clause(num_atom("AgeValueRecorded", "age", Cmp.GE,
                             65, SENTINEL_HOURS)),
    ], subcohort="arm2")
    tc = trial_gate("TC", [
        unit_clause(bool_atom("HasFindingOf", "cough"), role=DEFERRED),
    ])

    pa = patient_gate(
        "PA",
        bool_atom("HasFindingOf", "fever"),
        point("AgeValueRecorded", "age", 58),
        bool_atom("HasDiagnosisOf", "appendicitis"),
        bool_atom("ChiefComplaint", "appendicitis"),
        bool_atom("HasFindingOf", "acute_disease",
                  window=TimeWindow.of(-10, 0), cert=TimeWindow.of(-10, 0)),
        point("ValueRecorded", "hemoglobin", 12, unit="grams_per_deciliter"),
    )
    pb = patient_gate(
        "PB",
        point("AgeValueRecorded", "age", 70),
    )
    pc = patient_gate(
        "PC",
        bool_atom("HasFindingOf", "fever"),
    )

    path = tmp_path_factory.mktemp("retrieval") / "world.db"
    build_store([ta, ta_exclusion, tb, tb_arm2, tc, pa, pb, pc], path)
    handle = open_store(path)
    yield handle
    handle.close()


EXPECTED_OPEN = [
    ("PA", "TA", "main"),
    ("PA", "TB", "main"),
    ("PA", "TC", "main"),
    ("PB", "TB", "arm2"),
    ("PB", "TC", "main"),
    ("PC", "TC", "main"),
]

EXPECTED_KNOCKOUTS = [
    ("PA", "TB", "main"),
    ("PA", "TC", "main"),
    ("PB", "TB", "arm2"),
    ("PB", "TC", "main"),
    ("PC", "TC", "main"),
]


class TestRetrieve:
    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_hand_enumerated_pairs(self, world_store, engine):
        results = retrieve(world_store, TREAT_CHIEF, engine=engine)
        assert pairs(results) == EXPECTED_OPEN

    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_knockouts_remove_certain_exclusions(self, world_store, engine):
        obj = objective_named("treat-chief", enforce_knockouts=True)
        results = retrieve(world_store, obj, engine=engine)
        assert pairs(results) == EXPECTED_KNOCKOUTS

    def test_supported_equals_relevant(self, world_store):
        for result in retrieve(world_store, TREAT_CHIEF):
            assert result.supported_clause_count == result.relevant_clause_count

    def test_counts_reflect_clause_totals(self, world_store):
        by_pair = {(m.patient_id, m.trial_id, m.subcohort): m
                   for m in retrieve(world_store, TREAT_CHIEF)}
        assert by_pair[("PA", "TA", "main")].relevant_clause_count == 2
        assert by_pair[("PA", "TB", "main")].relevant_clause_count == 2
        assert by_pair[("PA", "TC", "main")].relevant_clause_count == 0

    def test_objective_accepts_name_string(self, world_store):
        assert retrieve(world_store, "treat-chief") == retrieve(
            world_store, TREAT_CHIEF)

    def test_unknown_objective_string(self, world_store):
        with pytest.raises(UnknownObjective):
            retrieve(world_store, "no-such-objective")

    def test_unknown_engine(self, world_store):
        with pytest.raises(ValueError):
            retrieve(world_store, TREAT_CHIEF, engine="quantum")

    def test_patient_filter(self, world_store):
        only_pb = retrieve(world_store, TREAT_CHIEF, patients=["PB"])
        assert pairs(only_pb) == [("PB", "TB", "arm2"), ("PB", "TC", "main")]
        assert retrieve(world_store, TREAT_CHIEF, patients=[]) == []

    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_per_patient_merge_equals_full_run(self, world_store, engine):
        full = retrieve(world_store, TREAT_CHIEF, engine=engine)
        merged = []
        for patient_id in ("PA", "PB", "PC"):
            merged.extend(retrieve(world_store, TREAT_CHIEF,
                                   patients=[patient_id], engine=engine))
        assert merged == full

    def test_repeated_runs_identical(self, world_store):
        first = retrieve(world_store, TREAT_CHIEF)
        assert all(retrieve(world_store, TREAT_CHIEF) == first
                   for _ in range(3))


class TestVacuousGate:
    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_trial_with_no_relevant_clauses_matches_everyone(
            self, tmp_path, engine):
        gates = [trial_gate("T0", [
            unit_clause(bool_atom("HasFindingOf", "cough"), role=DEFERRED),
        ])]
        for i in range(5):
            gates.append(patient_gate(f"P{i}", bool_atom("HasFindingOf", "fever")))
        path = tmp_path / "vacuous.db"
        build_store(gates, path)
        handle = open_store(path)
        try:
            results = retrieve(handle, TREAT_CHIEF, engine=engine)
        finally:
            handle.close()
        assert pairs(results) == [(f"P{i}", "T0", "main") for i in range(5)]
        assert all(m.relevant_clause_count == 0 for m in results)


class TestSubsumptionFallback:
    @pytest.fixture()
    def fallback_store(self, tmp_path):
        gates = [
            trial_gate("TD", [
                unit_clause(bool_atom("HasFindingOf", "abdominal_disease")),
            ]),
            patient_gate("PD", bool_atom("HasDiagnosisOf", "acute_appendicitis")),
        ]
        path = tmp_path / "fallback.db"
        build_store(gates, path)
        handle = open_store(path)
        yield handle
        handle.close()

    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_unclosed_fact_needs_ontology(self, fallback_store, onto, engine):
        closed_only = retrieve(fallback_store, TREAT_CHIEF, engine=engine)
        assert closed_only == []
        widened = retrieve(fallback_store, TREAT_CHIEF, engine=engine,
                           ontology=onto)
        assert pairs(widened) == [("PD", "TD", "main")]


class TestUnitMismatchInRetrieval:
    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_mismatched_units_are_a_plain_non_match(self, tmp_path, engine):
        gates = [
            trial_gate("TU", [
                unit_clause(num_atom("ValueRecorded", "hemoglobin", Cmp.GE,
                                     10, SENTINEL_HOURS,
                                     unit="grams_per_deciliter")),
            ]),
            patient_gate("PU", point("ValueRecorded", "hemoglobin", 12,
                                     unit="years")),
        ]
        path = tmp_path / "units.db"
        build_store(gates, path)
        handle = open_store(path)
        try:
            assert retrieve(handle, TREAT_CHIEF, engine=engine) == []
        finally:
            handle.close()


# ---------------------------------------------------------------------------
# randomized dual-path agreement


_RELATIONS = ("HasFindingOf", "HasDiagnosisOf", "HasUndergone")
_CONCEPTS = tuple(f"c{i}" for i in range(8))
_QUALS = ("severity_high", "left_side")
_UNITS = ("years", "grams_per_deciliter")


def _random_ontology(rng):
    o = Ontology()
    o.concepts |= set(_CONCEPTS)
    for child, parent in zip(_CONCEPTS[1:], _CONCEPTS):
        if rng.random() < 0.5:
            o.isa_edges.add((child, parent))
    if rng.random() < 0.5:
        o.relation_sub.add(("HasDiagnosisOf", "HasFindingOf"))
    o.rebuild()
    return o


def _random_window(rng):
    lo = rng.randint(-50, 0)
    hi = rng.randint(lo, 0)
    if lo == hi:
        return TimeWindow.of(lo, hi)
    return TimeWindow.of(lo, hi, rng.random() < 0.9, rng.random() < 0.9)


def _random_bool_atom(rng, target=None, relation=None):
    window = _random_window(rng)
    cert = window if rng.random() < 0.5 else _random_window(rng)
    return GateAtom(
        relation=relation or rng.choice(_RELATIONS),
        concept=rng.choice(_CONCEPTS),
        qualifiers=tuple(sorted(rng.sample(_QUALS, rng.randint(0, 2)))),
        window=window, cert=cert, numeric=False, cmp=Cmp.EQ,
        bool_target=rng.random() < 0.8 if target is None else target,
    )


def _random_numeric_atom(rng, fact=False):
    window = _random_window(rng)
    if fact:
        value = Fraction(rng.randint(0, 30))
        lower = upper = value
        cmp = Cmp.EQ
        lower_incl = upper_incl = True
    else:
        cmp = rng.choice([Cmp.GE, Cmp.GT, Cmp.LE, Cmp.LT, Cmp.EQ, Cmp.NE])
        threshold = Fraction(rng.randint(0, 30))
        if cmp in (Cmp.GE, Cmp.GT):
            lower, upper = threshold, SENTINEL_HOURS
            lower_incl, upper_incl = cmp is Cmp.GE, True
        elif cmp in (Cmp.LE, Cmp.LT):
            lower, upper = -SENTINEL_HOURS, threshold
            lower_incl, upper_incl = True, cmp is Cmp.LE
        else:
            lower = upper = threshold
            lower_incl = upper_incl = True
    return GateAtom(
        relation="ValueRecorded", concept=rng.choice(_CONCEPTS),
        qualifiers=(), window=window, cert=window, numeric=True, cmp=cmp,
        lower=lower, upper=upper, lower_incl=lower_incl,
        upper_incl=upper_incl, unit=rng.choice(_UNITS),
    )


def _random_world_gates(rng, n_trials=4, n_patients=4):
    gates = []
    for t in range(n_trials):
        clauses = []
        for _ in range(rng.randint(0, 4)):
            atoms = []
            for _ in range(rng.randint(1, 3)):
                if rng.random() < 0.25:
                    atoms.append(_random_numeric_atom(rng))
                else:
                    atoms.append(_random_bool_atom(rng))
            role = RETRIEVAL_RELEVANT if rng.random() < 0.7 else DEFERRED
            clauses.append(GateClause(role=role, atoms=tuple(atoms)))
        if rng.random() < 0.5:
            clauses.append(unit_clause(
                bool_atom("Treats", rng.choice(_CONCEPTS), window=FULL),
                tag="target"))
        gates.append(trial_gate(f"T{t}", clauses))
        if rng.random() < 0.6:
            knockouts = []
            for _ in range(rng.randint(1, 2)):
                if rng.random() < 0.3:
                    knockouts.append(unit_clause(
                        _random_numeric_atom(rng), role=KNOCKOUT))
                else:
                    knockouts.append(unit_clause(
                        _random_bool_atom(rng, target=False), role=KNOCKOUT))
            gates.append(trial_gate(f"T{t}", knockouts, side="exclusion"))
    for p in range(n_patients):
        atoms = []
        for _ in range(rng.randint(0, 8)):
            if rng.random() < 0.3:
                atoms.append(_random_numeric_atom(rng, fact=True))
            elif rng.random() < 0.15:
                atoms.append(_random_bool_atom(
                    rng, target=True,
                    relation=rng.choice(sorted(
                        {"ChiefComplaint", "AnyImportantComplaint"}))))
            else:
                atoms.append(_random_bool_atom(rng))
        gates.append(patient_gate(f"P{p}", *atoms))
    return gates


class TestDualPathAgreement:
    @pytest.mark.parametrize("seed", range(25))
    def test_sql_and_memory_paths_agree(self, tmp_path, seed):
        rng = random.Random(seed)
        gates = _random_world_gates(rng)
        path = tmp_path / f"fuzz{seed}.db"
        build_store(gates, path)
        handle = open_store(path)
        onto = _random_ontology(rng)
        try:
            for obj_name in ("treat-chief", "relevant-to-any"):
                for knock in (False, True):
                    obj = objective_named(obj_name, enforce_knockouts=knock)
                    for o in (None, onto):
                        sql = retrieve(handle, obj, ontology=o, engine="sql")
                        mem = retrieve(handle, obj, ontology=o, engine="memory")
                        assert sql == mem, (obj_name, knock, o is not None)
        finally:
            handle.close()


class TestMonotonicity:
    @pytest.mark.parametrize("seed", range(10))
    def test_adding_facts_never_removes_pairs(self, tmp_path, seed):
        rng = random.Random(1000 + seed)
        gates = _random_world_gates(rng, n_trials=3, n_patients=3)
        base_path = tmp_path / "base.db"
        build_store(gates, base_path)
        base = open_store(base_path)
        try:
            before = set(pairs(retrieve(base, RELEVANT_TO_ANY)))
        finally:
            base.close()

        richer = []
        for gate in gates:
            if gate.entity_kind != "Patient":
                richer.append(gate)
                continue
            extra = [GateClause(role=FACT, atoms=(_random_bool_atom(rng),))
                     for _ in range(rng.randint(1, 3))]
            richer.append(GateCNF(
                owner=gate.owner, entity_kind="Patient", side=gate.side,
                subcohort=gate.subcohort, clauses=list(gate.clauses) + extra))
        grown_path = tmp_path / "grown.db"
        build_store(richer, grown_path)
        grown = open_store(grown_path)
        try:
            after = set(pairs(retrieve(grown, RELEVANT_TO_ANY)))
        finally:
            grown.close()
        assert before <= after


# ---------------------------------------------------------------------------
# explanations


class TestExplain:
    def test_supported_pair_lists_support_for_every_clause(self, world_store):
        report = explain(world_store, "TA", "PA", TREAT_CHIEF)
        assert report.matched
        main = next(s for s in report.sections if s[0] == "main")
        relevant = [st for st in main[2] if st.role == RETRIEVAL_RELEVANT]
        assert relevant and all(st.pairs for st in relevant)

    def test_filtered_pair_identifies_first_unsupported(self, world_store):
        report = explain(world_store, "TA", "PC", TREAT_CHIEF)
        assert not report.matched
        main = next(s for s in report.sections if s[0] == "main")
        statuses = [st.status for st in main[2] if st.role == RETRIEVAL_RELEVANT]
        # fever is supported, the age clause is the first failure
        assert statuses == ["supported", "unsupported"]

    def test_deferred_clauses_are_not_evaluated(self, world_store):
        report = explain(world_store, "TA", "PA", TREAT_CHIEF)
        main = next(s for s in report.sections if s[0] == "main")
        deferred = [st for st in main[2] if st.role == DEFERRED]
        assert deferred and all(st.status == "deferred" for st in deferred)

    def test_knockout_hit_shows_contradicting_fact_with_windows(
            self, world_store):
        obj = objective_named("treat-chief", enforce_knockouts=True)
        report = explain(world_store, "TA", "PA", obj)
        assert not report.matched
        exclusion = next(s for s in report.sections if s[0] == "exclusion")
        hits = [st for st in exclusion[2] if st.status == "knockout-hit"]
        assert hits and all(st.pairs for st in hits)
        text = report.render()
        assert "knockout-hit" in text and "cert" in text

    def test_knockout_listed_but_not_enforced_by_default(self, world_store):
        report = explain(world_store, "TA", "PA", TREAT_CHIEF)
        assert report.matched
        exclusion = next(s for s in report.sections if s[0] == "exclusion")
        assert any(st.status == "knockout-hit" for st in exclusion[2])

    def test_render_shape(self, world_store):
        matched = explain(world_store, "TC", "PB", TREAT_CHIEF).render()
        assert "MATCH" in matched.splitlines()[0]
        filtered = explain(world_store, "TA", "PC", TREAT_CHIEF).render()
        assert "NO MATCH" in filtered.splitlines()[0]

    def test_unknown_ids(self, world_store):
        with pytest.raises(UnknownEntity):
            explain(world_store, "TA", "nobody", TREAT_CHIEF)
        with pytest.raises(UnknownEntity):
            explain(world_store, "ghost-trial", "PA", TREAT_CHIEF)


# ---------------------------------------------------------------------------
# end to end through parsing, projection, and the store


AGE = "patient_age_value_recorded_now_in_years"
ACUTE = "patient_has_finding_of_acute_disease_now"


def _closed_bool(name, value=True, window=NOW):
    predicate = CanonicalPredicate(parse_variable_name(name))
    return ClosedFact(predicate=predicate, sort="Bool", value=value,
                      cert=window, poss=window)


def _closed_age(years):
    predicate = CanonicalPredicate(parse_variable_name(AGE))
    return ClosedFact(predicate=predicate, sort="Real",
                      value=Fraction(years), cert=NOW, poss=NOW)


@pytest.fixture(scope="module")
def corpus_store(tmp_path_factory):
    inclusion = parse_trial_program(
        (FIXTURES / "NCT00362869_inclusion_program.smt2").read_text(),
        trial_id="NCT00362869", side="inclusion")
    exclusion = parse_trial_program(
        (FIXTURES / "NCT00362869_exclusion_program.smt2").read_text(),
        trial_id="NCT00362869", side="exclusion")
    o = Ontology()
    for prog in (inclusion, exclusion):
        for decl in prog.declarations:
            if decl.canonical:
                o.concepts.add(decl.predicate.variable.concept)
    o.rebuild()
    policy = SaliencePolicy()
    gates = [
        project_trial(inclusion, o, policy),
        project_trial(exclusion, o, policy),
        project_patient([_closed_age(30)], patient_id="young"),
        project_patient([_closed_age(50)], patient_id="older"),
        project_patient([_closed_age(30), _closed_bool(ACUTE)],
                        patient_id="excluded"),
    ]
    path = tmp_path_factory.mktemp("corpus") / "corpus.db"
    build_store(gates, path)
    handle = open_store(path)
    yield handle
    handle.close()



class TestEndToEnd:
    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_age_window_governs_matching(self, corpus_store, engine):
        results = retrieve(corpus_store, TREAT_CHIEF, engine=engine)
        matched = {m.patient_id for m in results}
        assert matched == {"young", "excluded"}

    @pytest.mark.parametrize("engine", ["sql", "memory"])
    def test_corpus_knockout_fires(self, corpus_store, engine):
        obj = objective_named("treat-chief", enforce_knockouts=True)
        results = retrieve(corpus_store, obj, engine=engine)
        assert {m.patient_id for m in results} == {"young"}

    def test_explained_corpus_pair(self, corpus_store):
        report = explain(corpus_store, "NCT00362869", "older", TREAT_CHIEF)
        assert not report.matched
        main = next(s for s in report.sections if s[0] == "main")
        unsupported = [st for st in main[2] if st.status == "unsupported"]
        assert unsupported
