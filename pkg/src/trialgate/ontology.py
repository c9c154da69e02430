"""Ontology loading and subsumption queries.

Concepts and their is-a edges come from a JSONL file. Relations are a
fixed built-in vocabulary split into three families: medical relations
that link a patient to a concept, patient complaint labels, and trial
intent relations. The file may add generality edges between medical
relations and causal edges between (relation, concept) pairs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from .errors import CycleError, DanglingRefError, ParseError

FAMILY_MEDICAL = "medical"
FAMILY_COMPLAINT = "complaint"
FAMILY_INTENT = "intent"

OUTCOME_VALUES = ("positive", "negative", "normal", "abnormal")


@dataclass(frozen=True)
class RelationInfo:
    name: str
    family: str
    numeric: bool = False


_BUILTIN_RELATIONS = [
    RelationInfo("HasDiagnosisOf", FAMILY_MEDICAL),
    RelationInfo("HasFindingOf", FAMILY_MEDICAL),
    RelationInfo("HasSymptomsOf", FAMILY_MEDICAL),
    RelationInfo("HasClinicalSignsOf", FAMILY_MEDICAL),
    RelationInfo("HasSuspicionOf", FAMILY_MEDICAL),
    RelationInfo("HasUndergone", FAMILY_MEDICAL),
    RelationInfo("IsUndergoing", FAMILY_MEDICAL),
    RelationInfo("WillUndergo", FAMILY_MEDICAL),
    RelationInfo("CanUndergo", FAMILY_MEDICAL),
    RelationInfo("NeedsToUndergo", FAMILY_MEDICAL),
    RelationInfo("ValueRecorded", FAMILY_MEDICAL, numeric=True),
    RelationInfo("AgeValueRecorded", FAMILY_MEDICAL, numeric=True),
    RelationInfo("SexIs", FAMILY_MEDICAL),
    RelationInfo("HasChildbearingPotential", FAMILY_MEDICAL),
    RelationInfo("IsBreastfeeding", FAMILY_MEDICAL),
    RelationInfo("IsPregnant", FAMILY_MEDICAL),
    RelationInfo("IsLactating", FAMILY_MEDICAL),
    RelationInfo("IsTaking", FAMILY_MEDICAL),
    RelationInfo("HasTaken", FAMILY_MEDICAL),
    RelationInfo("HasHypersensitivityTo", FAMILY_MEDICAL),
    RelationInfo("HasIntoleranceTo", FAMILY_MEDICAL),
    RelationInfo("HasAllergyTo", FAMILY_MEDICAL),
    RelationInfo("HasNonimmuneHypersensitivityTo", FAMILY_MEDICAL),
    RelationInfo("IsExposedTo", FAMILY_MEDICAL),
    RelationInfo("HasBeenExposedTo", FAMILY_MEDICAL),
    RelationInfo("StatusIs", FAMILY_MEDICAL),
    RelationInfo("ChiefComplaint", FAMILY_COMPLAINT),
    RelationInfo("ChiefComplaintRelated", FAMILY_COMPLAINT),
    RelationInfo("AnyImportantComplaint", FAMILY_COMPLAINT),
    RelationInfo("PreventionTarget", FAMILY_COMPLAINT),
    RelationInfo("Treats", FAMILY_INTENT),
    RelationInfo("Prevents", FAMILY_INTENT),
    RelationInfo("ImprovesEffectiveness", FAMILY_INTENT),
    RelationInfo("ReducesProcedureRelatedHarms", FAMILY_INTENT),
    RelationInfo("ReducesExposureUse", FAMILY_INTENT),
    RelationInfo("MitigatesHarms", FAMILY_INTENT),
    RelationInfo("EnhancesBenefits", FAMILY_INTENT),
    RelationInfo("Other", FAMILY_INTENT),
    RelationInfo("NotClinicallyRelevant", FAMILY_INTENT),
]

RELATIONS: Dict[str, RelationInfo] = {r.name: r for r in _BUILTIN_RELATIONS}

MEDICAL_RELATIONS = frozenset(r.name for r in _BUILTIN_RELATIONS if r.family == FAMILY_MEDICAL)
COMPLAINT_RELATIONS = frozenset(r.name for r in _BUILTIN_RELATIONS if r.family == FAMILY_COMPLAINT)
INTENT_RELATIONS = frozenset(r.name for r in _BUILTIN_RELATIONS if r.family == FAMILY_INTENT)


@dataclass(frozen=True)
class CausalEdge:
    src_rel: str
    src_con: str
    dst_rel: str
    dst_con: str
    dst_outcome: Optional[str] = None


@dataclass
class Ontology:
    concepts: Set[str] = field(default_factory=set)
    isa_edges: Set[Tuple[str, str]] = field(default_factory=set)
    relation_sub: Set[Tuple[str, str]] = field(default_factory=set)
    causal_edges: List[CausalEdge] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._parents: Dict[str, List[str]] = {}
        self._children: Dict[str, List[str]] = {}
        self._rel_general: Dict[str, List[str]] = {}
        self._causal_by_src: Dict[Tuple[str, str], List[CausalEdge]] = {}
        self._ancestor_cache: Dict[str, FrozenSet[str]] = {}
        self.rebuild()

    def rebuild(self) -> None:
        """Revalidate edges and refresh adjacency maps and caches."""
        self._check_refs()
        self._parents = {}
        self._children = {}
        for child, parent in self.isa_edges:
            self._parents.setdefault(child, []).append(parent)
            self._children.setdefault(parent, []).append(child)
        for adjacency in (self._parents, self._children):
            for node in adjacency:
                adjacency[node].sort()
        self._rel_general = {}
        for specific, general in self.relation_sub:
            self._rel_general.setdefault(specific, []).append(general)
        self._causal_by_src = {}
        for edge in self.causal_edges:
            self._causal_by_src.setdefault((edge.src_rel, edge.src_con), []).append(edge)
        self._ancestor_cache = {}
        self._check_acyclic(self._parents, "concept hierarchy")
        self._check_acyclic(self._rel_general, "relation generality graph")

    def _check_refs(self) -> None:
        for child, parent in self.isa_edges:
            for node in (child, parent):
                if node not in self.concepts:
                    raise DanglingRefError(f"isa edge references undeclared concept {node!r}")
        for specific, general in self.relation_sub:
            for rel in (specific, general):
                if rel not in RELATIONS:
                    raise DanglingRefError(f"relsub edge references unknown relation {rel!r}")
        for edge in self.causal_edges:
            for rel in (edge.src_rel, edge.dst_rel):
                if rel not in RELATIONS:
                    raise DanglingRefError(f"causal edge references unknown relation {rel!r}")
            for con in (edge.src_con, edge.dst_con):
                if con not in self.concepts:
                    raise DanglingRefError(f"causal edge references undeclared concept {con!r}")
            if edge.dst_outcome is not None and edge.dst_outcome not in OUTCOME_VALUES:
                raise ParseError(f"bad causal outcome {edge.dst_outcome!r}")

    @staticmethod
    def _check_acyclic(adjacency: Dict[str, List[str]], label: str) -> None:
        WHITE, GRAY, BLACK = 0, 1, 2
        color: Dict[str, int] = {}
        for start in adjacency:
            if color.get(start, WHITE) != WHITE:
                continue
            stack: List[Tuple[str, int]] = [(start, 0)]
            color[start] = GRAY
            while stack:
                node, idx = stack[-1]
                succ = adjacency.get(node, [])
                if idx < len(succ):
                    stack[-1] = (node, idx + 1)
                    nxt = succ[idx]
                    state = color.get(nxt, WHITE)
                    if state == GRAY:
                        raise CycleError(f"{label} contains a cycle through {nxt!r}")
                    if state == WHITE:
                        color[nxt] = GRAY
                        stack.append((nxt, 0))
                else:
                    color[node] = BLACK
                    stack.pop()

    def has_concept(self, concept: str) -> bool:
        return concept in self.concepts

    def ancestors(self, concept: str, max_hops: Optional[int] = None) -> Dict[str, int]:
        """Proper ancestors of concept with their minimum hop distance."""
        out: Dict[str, int] = {}
        frontier = [concept]
        hops = 0
        seen = {concept}
        while frontier and (max_hops is None or hops < max_hops):
            hops += 1
            nxt: List[str] = []
            for node in frontier:
                for parent in self._parents.get(node, []):
                    if parent not in seen:
                        seen.add(parent)
                        out[parent] = hops
                        nxt.append(parent)
            frontier = nxt
        return out

    def descendants(self, concept: str, max_hops: Optional[int] = None) -> Dict[str, int]:
        out: Dict[str, int] = {}
        frontier = [concept]
        hops = 0
        seen = {concept}
        while frontier and (max_hops is None or hops < max_hops):
            hops += 1
            nxt: List[str] = []
            for node in frontier:
                for child in self._children.get(node, []):
                    if child not in seen:
                        seen.add(child)
                        out[child] = hops
                        nxt.append(child)
            frontier = nxt
        return out

    def _ancestor_set(self, concept: str) -> FrozenSet[str]:
        cached = self._ancestor_cache.get(concept)
        if cached is None:
            cached = frozenset(self.ancestors(concept))
            self._ancestor_cache[concept] = cached
        return cached

    def concept_subsumes(self, general: str, specific: str) -> bool:
        """True when every instance of specific is an instance of general."""
        if general == specific:
            return True
        return general in self._ancestor_set(specific)

    def relation_subsumes(self, general: str, specific: str) -> bool:
        if general == specific:
            return True
        seen = {specific}
        frontier = [specific]
        while frontier:
            nxt: List[str] = []
            for rel in frontier:
                for up in self._rel_general.get(rel, []):
                    if up == general:
                        return True
                    if up not in seen:
                        seen.add(up)
                        nxt.append(up)
            frontier = nxt
        return False

    def causal_supports(self, source: Tuple[str, str], target: Tuple[str, str]) -> bool:
        """True when source == target or a loaded edge links them directly."""
        if source == target:
            return True
        for edge in self._causal_by_src.get(source, []):
            if (edge.dst_rel, edge.dst_con) == target:
                return True
        return False

    def causal_from(self, source: Tuple[str, str]) -> List[CausalEdge]:
        return list(self._causal_by_src.get(source, []))

    def concept_pairs(self) -> Iterable[Tuple[str, str]]:
        """All (general, specific) pairs under reflexive-transitive is-a."""
        for concept in sorted(self.concepts):
            yield (concept, concept)
            for general in sorted(self._ancestor_set(concept)):
                yield (general, concept)

    def relation_pairs(self) -> Iterable[Tuple[str, str]]:
        """All (general, specific) pairs under reflexive-transitive generality."""
        for rel in sorted(RELATIONS):
            yield (rel, rel)
        for specific in sorted(self._rel_general):
            stack = list(self._rel_general[specific])
            seen: Set[str] = set()
            while stack:
                general = stack.pop()
                if general in seen:
                    continue
                seen.add(general)
                stack.extend(self._rel_general.get(general, []))
            for general in sorted(seen):
                if general != specific:
                    yield (general, specific)

    def canonical_digest(self) -> str:
        payload = {
            "concepts": sorted(self.concepts),
            "isa": sorted(self.isa_edges),
            "relsub": sorted(self.relation_sub),
            "causal": sorted(
                (e.src_rel, e.src_con, e.dst_rel, e.dst_con, e.dst_outcome or "")
                for e in self.causal_edges
            ),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_ontology(text: str) -> Ontology:
    """Parse JSONL ontology records into a validated Ontology."""
    concepts: Set[str] = set()
    isa: Set[Tuple[str, str]] = set()
    relsub: Set[Tuple[str, str]] = set()
    causal: List[CausalEdge] = []
    seen_causal: Set[Tuple[str, str, str, str, Optional[str]]] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line {lineno}: bad JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise ParseError(f"line {lineno}: record must be an object")
        kind = record.get("type")
        if kind == "concept":
            concept = _req_str(record, "id", lineno)
            concepts.add(concept)
        elif kind == "isa":
            isa.add((_req_str(record, "child", lineno), _req_str(record, "parent", lineno)))
        elif kind == "relsub":
            relsub.add((_req_str(record, "specific", lineno), _req_str(record, "general", lineno)))
        elif kind == "causal":
            edge = CausalEdge(
                src_rel=_req_str(record, "src_rel", lineno),
                src_con=_req_str(record, "src_con", lineno),
                dst_rel=_req_str(record, "dst_rel", lineno),
                dst_con=_req_str(record, "dst_con", lineno),
                dst_outcome=record.get("dst_outcome"),
            )
            key = (edge.src_rel, edge.src_con, edge.dst_rel, edge.dst_con, edge.dst_outcome)
            if key not in seen_causal:
                seen_causal.add(key)
                causal.append(edge)
        else:
            raise ParseError(f"line {lineno}: unknown record type {kind!r}")
    return Ontology(concepts=concepts, isa_edges=isa, relation_sub=relsub, causal_edges=causal)


def _req_str(record: dict, key: str, lineno: int) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value:
        raise ParseError(f"line {lineno}: field {key!r} must be a nonempty string")
    return value
