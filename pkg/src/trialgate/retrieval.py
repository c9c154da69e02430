"""Objective-conditioned retrieval over a built gate store.

The engine joins trial gate atoms against patient fact atoms, lifts
compatible pairs to supported clauses, and returns every (trial,
patient) pair whose RetrievalRelevant clauses are all supported. It
never evaluates Deferred clauses, so the result set is a superset of
the truly matching pairs; precision is the caller's concern, recall is
ours.

Two execution paths implement the same plan: a single SQL statement
over the store schema and an in-memory hash join over dumped gates.
They must return identical results; the in-memory path exists to
cross-check the SQL and to power per-pair explanations. Both paths
default to equality joins on (relation, concept), which is complete
when patient facts were closed before projection. Passing an ontology
adds on-the-fly subsumption fallback for un-closed facts.

Unit handling differs by entry point: `atoms_compatible` raises
UnitMismatch when an otherwise-matching numeric pair disagrees on
unit, because at the atom level that is a data error worth surfacing.
Inside retrieval both paths treat it as a plain non-match, mirroring
the SQL join's silent behaviour, so a single sick atom cannot take
down a whole query.
"""

from dataclasses import dataclass, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

from .errors import UnitMismatch, UnknownObjective
from .model import Cmp
from .ontology import COMPLAINT_RELATIONS, INTENT_RELATIONS, Ontology
from .projection import FACT, KNOCKOUT, RETRIEVAL_RELEVANT, GateAtom, GateCNF
from .store import StoreHandle, dump_entity, entity_ids
from .temporal import TimeWindow, exclusion_time_match, inclusion_time_match

__all__ = [
    "ObjectiveConfig", "MatchResult", "ClauseStatus", "ExplainReport",
    "TREAT_CHIEF", "TREAT_ANY", "RELEVANT_TO_ANY",
    "objective_named", "atoms_compatible", "knockout_contradicts",
    "retrieve", "explain",
]


# ---------------------------------------------------------------------------
# objectives


@dataclass(frozen=True)
class ObjectiveConfig:
    """Which trial intents may consume which patient complaint labels.

    `intent_map` pairs are (trial intent relation, patient complaint
    relation). Eligibility atoms ignore the map; only target atoms are
    joined through it.
    """

    name: str
    intent_map: FrozenSet[Tuple[str, str]]
    enforce_knockouts: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "intent_map", frozenset(self.intent_map))
        for trial_rel, patient_rel in self.intent_map:
            if trial_rel not in INTENT_RELATIONS:
                raise UnknownObjective(
                    f"objective {self.name!r}: {trial_rel!r} is not an intent relation"
                )
            if patient_rel not in COMPLAINT_RELATIONS:
                raise UnknownObjective(
                    f"objective {self.name!r}: {patient_rel!r} is not a complaint label"
                )


TREAT_CHIEF = ObjectiveConfig(
    name="TreatChief",
    intent_map=frozenset({
        ("Treats", "ChiefComplaint"),
        ("Treats", "ChiefComplaintRelated"),
        ("Prevents", "PreventionTarget"),
    }),
)

TREAT_ANY = ObjectiveConfig(
    name="TreatAny",
    intent_map=TREAT_CHIEF.intent_map | {("Treats", "AnyImportantComplaint")},
)

RELEVANT_TO_ANY = ObjectiveConfig(
    name="RelevantToAny",
    intent_map=frozenset(
        (intent, label)
        for intent in sorted(INTENT_RELATIONS - {"NotClinicallyRelevant"})
        for label in sorted(COMPLAINT_RELATIONS)
    ),
)

_PRESETS = {
    "treatchief": TREAT_CHIEF,
    "treatany": TREAT_ANY,
    "relevanttoany": RELEVANT_TO_ANY,
}


def objective_named(name: str, enforce_knockouts: bool = False) -> ObjectiveConfig:
    """Resolve a preset by name; accepts TreatChief / treat-chief spellings."""
    key = name.replace("-", "").replace("_", "").lower()
    preset = _PRESETS.get(key)
    if preset is None:
        raise UnknownObjective(f"unknown objective {name!r}")
    if enforce_knockouts == preset.enforce_knockouts:
        return preset
    return replace(preset, enforce_knockouts=enforce_knockouts)


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class ClauseStatus:
    """Evaluation record for one stored clause of one pair."""

    index: int
    role: str
    source_tag: Optional[str]
    status: str  # supported | unsupported | deferred | knockout-hit | knockout-clear
    pairs: Tuple[Tuple[GateAtom, GateAtom], ...] = ()


@dataclass(frozen=True)
class MatchResult:
    trial_id: str
    subcohort: str
    patient_id: str
    supported_clause_count: int
    relevant_clause_count: int
    explanations: Tuple[ClauseStatus, ...] = ()

    def key(self) -> Tuple[str, str, str]:
        return (self.patient_id, self.trial_id, self.subcohort)


# ---------------------------------------------------------------------------
# atom-level compatibility (shared by both engine paths and the oracle)


def _relation_ok(trial: GateAtom, patient: GateAtom, o: Optional[Ontology]) -> bool:
    if trial.relation == patient.relation:
        return True
    return o is not None and o.relation_subsumes(trial.relation, patient.relation)


def _concept_ok(trial: GateAtom, patient: GateAtom, o: Optional[Ontology]) -> bool:
    if trial.concept == patient.concept:
        return True
    return o is not None and o.concept_subsumes(trial.concept, patient.concept)


def _qual_subset(trial: GateAtom, patient: GateAtom) -> bool:
    return set(trial.qualifiers) <= set(patient.qualifiers)


def _numeric_value_ok(trial: GateAtom, patient: GateAtom) -> bool:
    # non-equality excludes exactly one point, so only a known point can miss
    if trial.cmp is Cmp.NE:
        return not (patient.lower == patient.upper == trial.lower)
    probe = TimeWindow(patient.lower, patient.upper,
                       patient.lower_incl, patient.upper_incl)
    return trial.interval().intersects(probe)


def _supports(trial: GateAtom, patient: GateAtom, o: Optional[Ontology],
              obj: ObjectiveConfig, strict_units: bool = False) -> bool:
    if trial.numeric != patient.numeric:
        return False
    if trial.numeric:
        if trial.is_intent or patient.is_complaint or patient.is_intent:
            return False
        if not (_relation_ok(trial, patient, o) and _concept_ok(trial, patient, o)
                and _qual_subset(trial, patient)
                and inclusion_time_match(trial.window, patient.window)):
            return False
        if trial.unit != patient.unit:
            if strict_units:
                raise UnitMismatch(
                    f"{trial.relation}/{trial.concept}: trial unit "
                    f"{trial.unit!r} vs patient unit {patient.unit!r}"
                )
            return False
        return _numeric_value_ok(trial, patient)
    if trial.is_intent:
        return ((trial.relation, patient.relation) in obj.intent_map
                and trial.bool_target is True and patient.bool_target is True
                and _concept_ok(trial, patient, o)
                and _qual_subset(trial, patient)
                and inclusion_time_match(trial.window, patient.window))
    if patient.is_complaint or patient.is_intent:
        return False
    if trial.bool_target is True:
        return (patient.bool_target is True
                and _relation_ok(trial, patient, o)
                and _concept_ok(trial, patient, o)
                and _qual_subset(trial, patient)
                and inclusion_time_match(trial.window, patient.window))
    # required-absent atoms match only exact-key absence facts: generality
    # flips under negation, so subsumption in either direction is unsound
    return (patient.bool_target is False
            and trial.relation == patient.relation
            and trial.concept == patient.concept
            and trial.qualifiers == patient.qualifiers
            and inclusion_time_match(trial.window, patient.window))


def atoms_compatible(trial_atom: GateAtom, patient_atom: GateAtom,
                     o: Optional[Ontology], obj: ObjectiveConfig) -> bool:
    """True when the patient atom can support the trial atom.

    Checks, in order: relation admissibility (intent_map for target
    atoms, equality or relation generality for eligibility atoms),
    concept equality or subsumption, qualifier subset in the trial to
    patient direction, criterion window against the possible-holding
    window, and for numeric atoms unit equality plus interval overlap
    under the folded comparison. Raises UnitMismatch instead of
    returning False when only the unit disagrees.
    """
    return _supports(trial_atom, patient_atom, o, obj, strict_units=True)


def knockout_contradicts(trial_atom: GateAtom, patient_atom: GateAtom,
                         o: Optional[Ontology] = None) -> bool:
    """True when a patient fact certainly violates a knockout atom.

    Knockout atoms are single negated literals from exclusion
    programs. A boolean one is contradicted by a certainly-held
    positive fact about the same or a more specific concept; a numeric
    one by a value certainly outside the folded satisfaction region.
    Certainty means the criterion window contains the fact's
    must-hold window.
    """
    if trial_atom.numeric != patient_atom.numeric:
        return False
    if trial_atom.is_intent or patient_atom.is_complaint or patient_atom.is_intent:
        return False
    if not (_relation_ok(trial_atom, patient_atom, o)
            and _concept_ok(trial_atom, patient_atom, o)
            and _qual_subset(trial_atom, patient_atom)):
        return False
    if not exclusion_time_match(trial_atom.window, patient_atom.cert):
        return False
    if trial_atom.numeric:
        if trial_atom.unit != patient_atom.unit:
            return False
        return not _numeric_value_ok(trial_atom, patient_atom)
    return trial_atom.bool_target is False and patient_atom.bool_target is True


# ---------------------------------------------------------------------------
# SQL path


def _sql_overlap(a: str, b: str) -> str:
    # mirrors TimeWindow.intersects: boundary touch needs both ends closed
    return (
        f"({a}_lo < {b}_hi OR ({a}_lo = {b}_hi AND {a}_lo_incl AND {b}_hi_incl)) "
        f"AND ({b}_lo < {a}_hi OR ({b}_lo = {a}_hi AND {b}_lo_incl AND {a}_hi_incl))"
    )


def _sql_contains(outer: str, inner: str) -> str:
    # mirrors TimeWindow.contains
    return (
        f"({outer}_lo < {inner}_lo OR ({outer}_lo = {inner}_lo "
        f"AND ({outer}_lo_incl OR NOT {inner}_lo_incl))) "
        f"AND ({inner}_hi < {outer}_hi OR ({inner}_hi = {outer}_hi "
        f"AND ({outer}_hi_incl OR NOT {inner}_hi_incl)))"
    )


_SQL_QUAL_SUBSET = """(t.qualifiers_digest = p.qualifiers_digest OR NOT EXISTS (
    SELECT 1 FROM AQ tq
    WHERE tq.digest = t.qualifiers_digest
      AND tq.token NOT IN (SELECT pq.token FROM AQ pq
                           WHERE pq.digest = p.qualifiers_digest)))"""

_SQL_VALUE_OK = """CASE WHEN t.cmp = '!=' THEN
      NOT (p.lower = p.upper AND p.lower = t.lower)
    ELSE
      (t.lower < p.upper OR (t.lower = p.upper AND t.lower_incl AND p.upper_incl))
      AND (p.lower < t.upper OR (p.lower = t.upper AND p.lower_incl AND t.upper_incl))
    END"""


def _quoted(names) -> str:
    return ", ".join("'" + n + "'" for n in sorted(names))


_INTENTS_SQL = _quoted(INTENT_RELATIONS)
_COMPLAINTS_SQL = _quoted(COMPLAINT_RELATIONS)


def _seed_subsumption(conn, o: Optional[Ontology]) -> None:
    # Reflexive rows come from the strings actually stored, so equality
    # matches even for names the ontology never mentions; strict pairs
    # add the subsumption closure when an ontology is supplied.
    conn.execute("DROP TABLE IF EXISTS temp.concept_sub")
    conn.execute("DROP TABLE IF EXISTS temp.relation_sub")
    conn.execute("CREATE TEMP TABLE concept_sub (general TEXT, specific TEXT)")
    conn.execute("CREATE TEMP TABLE relation_sub (general TEXT, specific TEXT)")
    conn.execute("INSERT INTO temp.concept_sub "
                 "SELECT concept, concept FROM AB "
                 "UNION SELECT concept, concept FROM AN")
    conn.execute("INSERT INTO temp.relation_sub "
                 "SELECT relation, relation FROM AB "
                 "UNION SELECT relation, relation FROM AN")
    if o is not None:
        conn.executemany(
            "INSERT INTO temp.concept_sub VALUES (?, ?)",
            [(g, s) for g, s in o.concept_pairs() if g != s],
        )
        conn.executemany(
            "INSERT INTO temp.relation_sub VALUES (?, ?)",
            [(g, s) for g, s in o.relation_pairs() if g != s],
        )
    conn.execute("CREATE INDEX temp.idx_cs ON concept_sub(specific, general)")
    conn.execute("CREATE INDEX temp.idx_rs ON relation_sub(specific, general)")


def _seed_intent_map(conn, obj: ObjectiveConfig) -> None:
    conn.execute("DROP TABLE IF EXISTS temp.obj_map")
    conn.execute("CREATE TEMP TABLE obj_map (trial_rel TEXT, patient_rel TEXT)")
    conn.executemany("INSERT INTO temp.obj_map VALUES (?, ?)",
                     sorted(obj.intent_map))
    conn.execute("CREATE INDEX temp.idx_om ON obj_map(patient_rel, trial_rel)")


def _retrieve_sql(h: StoreHandle, obj: ObjectiveConfig,
                  patients: Optional[Sequence[str]],
                  o: Optional[Ontology]) -> List[MatchResult]:
    conn = h.conn
    _seed_subsumption(conn, o)
    _seed_intent_map(conn, obj)

    params: List[str] = []
    patient_filter = ""
    if patients is not None:
        ids = sorted(set(patients))
        if not ids:
            return []
        patient_filter = (" AND entity_id IN ("
                          + ", ".join("?" for _ in ids) + ")")
        params.extend(ids)

    win_overlap = _sql_overlap("t.win", "p.win")
    cert_contained = _sql_contains("t.win", "p.cert")

    # Every branch is driven from the patient's atoms outward: patient atom,
    # closure row, then an indexed probe into the trial atom table. CROSS
    # JOIN pins that order; the trial side is orders of magnitude larger.
    def trial_chain(role: str, side: str) -> str:
        return f"""d.atom_id = t.atom_id
          AND cd.clause_id = d.clause_id AND cd.clause_role = '{role}'
          AND eg.cnf_id = cd.cnf_id
          AND eg.entity_kind = 'Trial' AND eg.side = '{side}'"""

    relevant = trial_chain(RETRIEVAL_RELEVANT, "inclusion")
    knockout = trial_chain(KNOCKOUT, "exclusion")

    support_branches = f"""
        SELECT cd.cnf_id, d.clause_id, pa.patient_id
        FROM patom pa
        CROSS JOIN AB p
        CROSS JOIN temp.obj_map om
        CROSS JOIN temp.concept_sub cs
        CROSS JOIN AB t
        CROSS JOIN DA d
        CROSS JOIN CNFD cd
        CROSS JOIN ECNF eg
        WHERE p.atom_id = pa.atom_id AND p.bool_target = 1
          AND om.patient_rel = p.relation
          AND cs.specific = p.concept
          AND t.relation = om.trial_rel AND t.concept = cs.general
          AND t.relation IN ({_INTENTS_SQL})
          AND t.bool_target = 1
          AND {relevant}
          AND {_SQL_QUAL_SUBSET} AND {win_overlap}
      UNION ALL
        SELECT cd.cnf_id, d.clause_id, pa.patient_id
        FROM patom pa
        CROSS JOIN AB p
        CROSS JOIN temp.relation_sub rs
        CROSS JOIN temp.concept_sub cs
        CROSS JOIN AB t
        CROSS JOIN DA d
        CROSS JOIN CNFD cd
        CROSS JOIN ECNF eg
        WHERE p.atom_id = pa.atom_id AND p.bool_target = 1
          AND p.relation NOT IN ({_COMPLAINTS_SQL})
          AND rs.specific = p.relation
          AND cs.specific = p.concept
          AND t.relation = rs.general AND t.concept = cs.general
          AND t.relation NOT IN ({_INTENTS_SQL})
          AND t.bool_target = 1
          AND {relevant}
          AND {_SQL_QUAL_SUBSET} AND {win_overlap}
      UNION ALL
        SELECT cd.cnf_id, d.clause_id, pa.patient_id
        FROM patom pa
        CROSS JOIN AB p
        CROSS JOIN AB t
        CROSS JOIN DA d
        CROSS JOIN CNFD cd
        CROSS JOIN ECNF eg
        WHERE p.atom_id = pa.atom_id AND p.bool_target = 0
          AND p.relation NOT IN ({_COMPLAINTS_SQL})
          AND t.relation = p.relation AND t.concept = p.concept
          AND t.relation NOT IN ({_INTENTS_SQL})
          AND t.bool_target = 0
          AND t.qualifiers_digest = p.qualifiers_digest
          AND {relevant}
          AND {win_overlap}
      UNION ALL
        SELECT cd.cnf_id, d.clause_id, pa.patient_id
        FROM patom pa
        CROSS JOIN AN p
        CROSS JOIN temp.relation_sub rs
        CROSS JOIN temp.concept_sub cs
        CROSS JOIN AN t
        CROSS JOIN DA d
        CROSS JOIN CNFD cd
        CROSS JOIN ECNF eg
        WHERE p.atom_id = pa.atom_id
          AND p.relation NOT IN ({_COMPLAINTS_SQL})
          AND rs.specific = p.relation
          AND cs.specific = p.concept
          AND t.relation = rs.general AND t.concept = cs.general
          AND t.relation NOT IN ({_INTENTS_SQL})
          AND {relevant}
          AND {_SQL_QUAL_SUBSET} AND {win_overlap}
          AND t.unit IS p.unit
          AND {_SQL_VALUE_OK}
    """

    ko_cte = ""
    knockout_filter = ""
    if obj.enforce_knockouts:
        ko_cte = f""",
    ko AS (
        SELECT eg.entity_id AS trial_id, pa.patient_id
        FROM patom pa
        CROSS JOIN AB p
        CROSS JOIN temp.relation_sub rs
        CROSS JOIN temp.concept_sub cs
        CROSS JOIN AB t
        CROSS JOIN DA d
        CROSS JOIN CNFD cd
        CROSS JOIN ECNF eg
        WHERE p.atom_id = pa.atom_id AND p.bool_target = 1
          AND p.relation NOT IN ({_COMPLAINTS_SQL})
          AND rs.specific = p.relation
          AND cs.specific = p.concept
          AND t.relation = rs.general AND t.concept = cs.general
          AND t.relation NOT IN ({_INTENTS_SQL})
          AND t.bool_target = 0
          AND {knockout}
          AND {_SQL_QUAL_SUBSET}
          AND {cert_contained}
      UNION ALL
        SELECT eg.entity_id AS trial_id, pa.patient_id
        FROM patom pa
        CROSS JOIN AN p
        CROSS JOIN temp.relation_sub rs
        CROSS JOIN temp.concept_sub cs
        CROSS JOIN AN t
        CROSS JOIN DA d
        CROSS JOIN CNFD cd
        CROSS JOIN ECNF eg
        WHERE p.atom_id = pa.atom_id
          AND p.relation NOT IN ({_COMPLAINTS_SQL})
          AND rs.specific = p.relation
          AND cs.specific = p.concept
          AND t.relation = rs.general AND t.concept = cs.general
          AND t.relation NOT IN ({_INTENTS_SQL})
          AND {knockout}
          AND {_SQL_QUAL_SUBSET}
          AND {cert_contained}
          AND t.unit IS p.unit
          AND NOT ({_SQL_VALUE_OK})
    )"""
        knockout_filter = """
    WHERE (trial_id, patient_id) NOT IN (SELECT trial_id, patient_id FROM ko)"""

    sql = f"""
    WITH pat AS (
        SELECT cnf_id, entity_id AS patient_id FROM ECNF
        WHERE entity_kind = 'Patient'{patient_filter}
    ),
    patom AS (
        SELECT pat.patient_id, a.atom_id
        FROM pat
        JOIN CNFD cd ON cd.cnf_id = pat.cnf_id AND cd.clause_role = '{FACT}'
        JOIN DA a ON a.clause_id = cd.clause_id
    ),
    tgate AS (
        SELECT cnf_id, entity_id AS trial_id, subcohort FROM ECNF
        WHERE entity_kind = 'Trial' AND side = 'inclusion'
    ),
    tneed AS (
        SELECT tg.cnf_id, tg.trial_id, tg.subcohort,
               COUNT(DISTINCT cd.clause_id) AS need
        FROM tgate tg
        JOIN CNFD cd ON cd.cnf_id = tg.cnf_id
        WHERE cd.clause_role = '{RETRIEVAL_RELEVANT}'
        GROUP BY tg.cnf_id, tg.trial_id, tg.subcohort
    ),
    support AS ({support_branches}),
    hits AS (
        SELECT cnf_id, patient_id, COUNT(DISTINCT clause_id) AS got
        FROM support GROUP BY cnf_id, patient_id
    ),
    matched AS (
        SELECT n.trial_id, n.subcohort, s.patient_id, s.got, n.need
        FROM tneed n
        JOIN hits s ON s.cnf_id = n.cnf_id AND s.got = n.need
      UNION ALL
        SELECT tg.trial_id, tg.subcohort, pp.patient_id, 0, 0
        FROM tgate tg
        CROSS JOIN (SELECT DISTINCT patient_id FROM pat) pp
        WHERE tg.cnf_id NOT IN (SELECT cnf_id FROM tneed)
    ){ko_cte}
    SELECT trial_id, subcohort, patient_id, got, need
    FROM matched
    {knockout_filter}
    ORDER BY patient_id, trial_id, subcohort
    """
    rows = conn.execute(sql, params).fetchall()
    return [MatchResult(trial_id=r[0], subcohort=r[1], patient_id=r[2],
                        supported_clause_count=r[3], relevant_clause_count=r[4])
            for r in rows]


# ---------------------------------------------------------------------------
# in-memory path


@dataclass
class _World:
    inclusion: Dict[Tuple[str, str], GateCNF]  # (trial_id, subcohort) -> gate
    exclusion: Dict[str, List[GateCNF]]        # trial_id -> exclusion gates
    patients: Dict[str, List[GateAtom]]        # patient_id -> fact atoms


def _load_world(h: StoreHandle, patients: Optional[Sequence[str]]) -> _World:
    wanted = None if patients is None else set(patients)
    world = _World(inclusion={}, exclusion={}, patients={})
    for trial_id, side, subcohort in entity_ids(h, "Trial"):
        gate = dump_entity(h, trial_id, side=side, subcohort=subcohort)
        if side == "inclusion":
            world.inclusion[(trial_id, subcohort)] = gate
        elif side == "exclusion":
            world.exclusion.setdefault(trial_id, []).append(gate)
    for patient_id, side, subcohort in entity_ids(h, "Patient"):
        if wanted is not None and patient_id not in wanted:
            continue
        gate = dump_entity(h, patient_id, side=side, subcohort=subcohort)
        atoms = world.patients.setdefault(patient_id, [])
        for clause in gate.clauses:
            if clause.role == FACT:
                atoms.extend(clause.atoms)
    return world


def _clause_supported(clause_atoms: Sequence[GateAtom],
                      patient_atoms: Sequence[GateAtom],
                      o: Optional[Ontology], obj: ObjectiveConfig) -> bool:
    for trial_atom in clause_atoms:
        for patient_atom in patient_atoms:
            try:
                if _supports(trial_atom, patient_atom, o, obj):
                    return True
            except UnitMismatch:
                continue
    return False


def _knocked_out(gates: Sequence[GateCNF], patient_atoms: Sequence[GateAtom],
                 o: Optional[Ontology]) -> bool:
    for gate in gates:
        for clause in gate.knockouts():
            for trial_atom in clause.atoms:
                for patient_atom in patient_atoms:
                    if knockout_contradicts(trial_atom, patient_atom, o):
                        return True
    return False


def _retrieve_memory(h: StoreHandle, obj: ObjectiveConfig,
                     patients: Optional[Sequence[str]],
                     o: Optional[Ontology]) -> List[MatchResult]:
    world = _load_world(h, patients)
    results: List[MatchResult] = []
    for patient_id, atoms in world.patients.items():
        for (trial_id, subcohort), gate in world.inclusion.items():
            relevant = gate.relevant()
            if not all(_clause_supported(c.atoms, atoms, o, obj) for c in relevant):
                continue
            if obj.enforce_knockouts and _knocked_out(
                    world.exclusion.get(trial_id, ()), atoms, o):
                continue
            results.append(MatchResult(
                trial_id=trial_id, subcohort=subcohort, patient_id=patient_id,
                supported_clause_count=len(relevant),
                relevant_clause_count=len(relevant),
            ))
    results.sort(key=MatchResult.key)
    return results


# ---------------------------------------------------------------------------
# public entry points


def retrieve(h: StoreHandle, obj: Union[ObjectiveConfig, str],
             patients: Optional[Sequence[str]] = None, *,
             ontology: Optional[Ontology] = None,
             engine: str = "sql") -> List[MatchResult]:
    """All (trial, patient) pairs whose relevant clauses are supported.

    Trials with zero RetrievalRelevant clauses match every patient;
    with `obj.enforce_knockouts`, pairs where a knockout clause is
    certainly contradicted are removed. `patients` restricts the
    patient side; `ontology` enables subsumption fallback on top of
    the default equality joins. `engine` selects the SQL plan or the
    in-memory cross-check path; both return identical, deterministic
    results ordered by (patient_id, trial_id, subcohort).
    """
    if isinstance(obj, str):
        obj = objective_named(obj)
    if engine == "sql":
        return _retrieve_sql(h, obj, patients, ontology)
    if engine == "memory":
        return _retrieve_memory(h, obj, patients, ontology)
    raise ValueError(f"unknown engine {engine!r}")


@dataclass(frozen=True)
class ExplainReport:
    """Per-clause account of one trial-patient evaluation."""

    trial_id: str
    patient_id: str
    objective: str
    matched: bool
    sections: Tuple[Tuple[str, bool, Tuple[ClauseStatus, ...]], ...]
    # sections: (subcohort, subcohort_matched, clause statuses)

    def render(self) -> str:
        lines = [f"{self.trial_id} x {self.patient_id} under {self.objective}: "
                 + ("MATCH" if self.matched else "NO MATCH")]
        for subcohort, ok, statuses in self.sections:
            if subcohort == "exclusion":
                lines.append("  exclusion: " + ("clear" if ok else "knockout"))
            else:
                lines.append(f"  subcohort {subcohort}: "
                             + ("eligible" if ok else "filtered"))
            for st in statuses:
                tag = f" [{st.source_tag}]" if st.source_tag else ""
                lines.append(f"    clause {st.index} ({st.role}){tag}: {st.status}")
                for trial_atom, patient_atom in st.pairs:
                    lines.append(
                        f"      {trial_atom.relation}/{trial_atom.concept} "
                        f"{trial_atom.window.render()} <- "
                        f"{patient_atom.relation}/{patient_atom.concept} "
                        f"poss {patient_atom.window.render()} "
                        f"cert {patient_atom.cert.render()}")
        return "\n".join(lines)


def _status_for(clause, patient_atoms, o, obj) -> Tuple[str, Tuple]:
    pairs = []
    for trial_atom in clause.atoms:
        for patient_atom in patient_atoms:
            try:
                if _supports(trial_atom, patient_atom, o, obj):
                    pairs.append((trial_atom, patient_atom))
            except UnitMismatch:
                continue
    return ("supported" if pairs else "unsupported"), tuple(pairs)


def explain(h: StoreHandle, trial_id: str, patient_id: str,
            obj: Union[ObjectiveConfig, str], *,
            ontology: Optional[Ontology] = None) -> ExplainReport:
    """Why one pair was returned or filtered, clause by clause.

    Relevant clauses list their supporting atom pairs; the first
    unsupported one is the reason a pair was filtered. Knockout
    clauses always show contradicting facts when present, whether or
    not the objective enforces them; they affect the verdict only
    when it does. Raises UnknownEntity for ids absent from the store.
    """
    if isinstance(obj, str):
        obj = objective_named(obj)
    o = ontology
    patient_atoms: List[GateAtom] = []
    for pid, side, subcohort in entity_ids(h, "Patient"):
        if pid != patient_id:
            continue
        gate = dump_entity(h, patient_id, side=side, subcohort=subcohort)
        for clause in gate.clauses:
            if clause.role == FACT:
                patient_atoms.extend(clause.atoms)
    if not patient_atoms:
        # force UnknownEntity when the id is absent entirely
        dump_entity(h, patient_id)

    sections: List[Tuple[str, bool, Tuple[ClauseStatus, ...]]] = []
    knock_hit = False
    knock_statuses: List[ClauseStatus] = []
    inclusion_seen = False
    for tid, side, subcohort in entity_ids(h, "Trial"):
        if tid != trial_id:
            continue
        gate = dump_entity(h, trial_id, side=side, subcohort=subcohort)
        if side == "exclusion":
            for i, clause in enumerate(gate.clauses):
                if clause.role != KNOCKOUT:
                    continue
                hits = tuple(
                    (ta, pa) for ta in clause.atoms for pa in patient_atoms
                    if knockout_contradicts(ta, pa, o))
                if hits:
                    knock_hit = True
                knock_statuses.append(ClauseStatus(
                    index=i, role=clause.role, source_tag=clause.source_tag,
                    status="knockout-hit" if hits else "knockout-clear",
                    pairs=hits))
            continue
        inclusion_seen = True
        statuses: List[ClauseStatus] = []
        ok = True
        for i, clause in enumerate(gate.clauses):
            if clause.role != RETRIEVAL_RELEVANT:
                statuses.append(ClauseStatus(
                    index=i, role=clause.role, source_tag=clause.source_tag,
                    status="deferred"))
                continue
            status, pairs = _status_for(clause, patient_atoms, o, obj)
            if status == "unsupported":
                ok = False
            statuses.append(ClauseStatus(
                index=i, role=clause.role, source_tag=clause.source_tag,
                status=status, pairs=pairs))
        sections.append((subcohort, ok, tuple(statuses)))
    if not inclusion_seen and not knock_statuses:
        dump_entity(h, trial_id)

    matched = any(ok for _, ok, _ in sections)
    if obj.enforce_knockouts and knock_hit:
        matched = False
    if knock_statuses:
        sections.append(("exclusion", not knock_hit, tuple(knock_statuses)))
    return ExplainReport(
        trial_id=trial_id, patient_id=patient_id, objective=obj.name,
        matched=matched, sections=tuple(sections),
    )
