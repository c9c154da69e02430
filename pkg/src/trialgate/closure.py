"""Materialization of ontology-entailed patient facts.

Three unary derivation stages run over a patient's extracted facts:
concept generalization up the is-a hierarchy, relation rewrite rules
from a JSON inventory, and causal edges between (relation, concept)
pairs. A multi-pass driver iterates the stages to a fixpoint under
caps, deduplicating on rendered name plus the possible-holding window.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .errors import ParseError, TemplateBindError
from .model import CanonicalPredicate, NonCanonicalPredicate, Predicate
from .naming import TEMPLATES, TimeframeToken, VariableName, parse_variable_name
from .ontology import Ontology
from .smtparse import PatientFactRecord
from .temporal import TimeWindow

_TEMPLATE_BY_RELATION = {t.relation: t for t in TEMPLATES}
_TEMPLATE_BY_ID = {t.template_id: t for t in TEMPLATES}

_HOLE_CONCEPT = "zzconceptholezz"
_HOLE_TIMEFRAME = "now"


@dataclass(frozen=True)
class Provenance:
    """Where a materialized fact came from, replayable by stage + detail."""

    stage: str  # input | concept | rule | causal
    detail: str = ""
    source: Optional[str] = None  # rendered name of the parent fact
    hop: int = 0


@dataclass(frozen=True)
class ClosedFact:
    predicate: Predicate
    sort: str
    value: Union[bool, Fraction]
    cert: TimeWindow
    poss: TimeWindow
    complaint_labels: Tuple[str, ...] = ()
    provenance: Provenance = Provenance("input")

    @property
    def canonical(self) -> bool:
        return isinstance(self.predicate, CanonicalPredicate)

    @property
    def positive_bool(self) -> bool:
        return self.sort == "Bool" and self.value is True

    def name(self) -> str:
        return self.predicate.render()


def from_patient_record(record: PatientFactRecord) -> ClosedFact:
    return ClosedFact(
        predicate=record.predicate, sort=record.sort, value=record.value,
        cert=record.cert, poss=record.poss,
        complaint_labels=record.complaint_labels,
    )


@dataclass(frozen=True, order=True)
class DedupKey:
    name: str
    start_h: Fraction
    end_h: Fraction
    start_incl: bool
    end_incl: bool


def dedup_key(fact: ClosedFact) -> DedupKey:
    return DedupKey(fact.name(), fact.poss.lower, fact.poss.upper,
                    fact.poss.lower_inclusive, fact.poss.upper_inclusive)


@dataclass
class ClosureConfig:
    max_passes: int = 8
    max_hops_concept: int = 16
    max_derived_per_pass: int = 100_000
    enable_negative_descendants: bool = False

    def __post_init__(self) -> None:
        if min(self.max_passes, self.max_hops_concept,
               self.max_derived_per_pass) <= 0:
            raise ValueError("closure caps must be positive")


# ---------------------------------------------------------------------------
# relation rules


@dataclass(frozen=True)
class _Pattern:
    """A rule template with {e}/{t} holes resolved against the stem grammar."""

    template_id: str
    concept: Optional[str]  # None when {e} is a hole
    outcome: Optional[str]
    unit: Optional[str]
    timeframe: Optional[TimeframeToken]  # None when {t} is a hole

    @staticmethod
    def compile(template: str) -> "_Pattern":
        has_e = "{e}" in template
        has_t = "{t}" in template
        probe = template.replace("{e}", _HOLE_CONCEPT).replace("{t}", _HOLE_TIMEFRAME)
        try:
            v = parse_variable_name(probe)
        except ParseError as exc:
            raise TemplateBindError(f"rule template {template!r} does not parse") from exc
        if has_e and v.concept != _HOLE_CONCEPT:
            raise TemplateBindError(f"rule template {template!r} binds {{e}} inconsistently")
        if not has_e and _HOLE_CONCEPT in probe:
            raise TemplateBindError(f"rule template {template!r} binds {{e}} inconsistently")
        return _Pattern(
            template_id=v.template_id,
            concept=None if has_e else v.concept,
            outcome=v.outcome,
            unit=v.unit,
            timeframe=None if has_t else v.timeframe,
        )

    def match(self, v: VariableName) -> Optional[Tuple[str, TimeframeToken]]:
        """Return the (concept, timeframe) bindings or None."""
        if v.template_id != self.template_id:
            return None
        if self.concept is not None and v.concept != self.concept:
            return None
        if v.outcome != self.outcome or v.unit != self.unit:
            return None
        if self.timeframe is not None and v.timeframe != self.timeframe:
            return None
        return v.concept, v.timeframe

    def bind(self, concept: str, timeframe: TimeframeToken,
             qualifiers: Tuple[str, ...]) -> VariableName:
        return VariableName(
            template_id=self.template_id,
            concept=self.concept if self.concept is not None else concept,
            timeframe=self.timeframe if self.timeframe is not None else timeframe,
            outcome=self.outcome,
            unit=self.unit,
            free_qualifiers=qualifiers,
        )


@dataclass(frozen=True)
class Production:
    template: str
    sort: str
    value: bool
    preserve_qualifiers: bool
    pattern: _Pattern


@dataclass(frozen=True)
class RelationRule:
    id: str
    match_template: str
    require_bool: bool  # the source truth value the rule fires on
    produce: Tuple[Production, ...]
    pattern: _Pattern


def _compile_rule(raw: Dict[str, object]) -> RelationRule:
    match_template = raw["match_template"]
    pattern = _Pattern.compile(match_template)
    productions = []
    for p in raw["produce"]:
        prod_pattern = _Pattern.compile(p["template"])
        if prod_pattern.concept is None and pattern.concept is not None:
            raise TemplateBindError(
                f"rule {raw['id']}: produce template uses {{e}} but match does not bind it"
            )
        if prod_pattern.timeframe is None and pattern.timeframe is not None:
            raise TemplateBindError(
                f"rule {raw['id']}: produce template uses {{t}} but match does not bind it"
            )
        productions.append(Production(
            template=p["template"], sort=p.get("type", "Bool"),
            value=bool(p["value"]),
            preserve_qualifiers=bool(p.get("preserve_qualifiers", True)),
            pattern=prod_pattern,
        ))
    return RelationRule(
        id=raw["id"], match_template=match_template,
        require_bool=bool(raw["require_bool"]),
        produce=tuple(productions), pattern=pattern,
    )


@dataclass(frozen=True)
class RuleSet:
    rules: Tuple[RelationRule, ...]
    collapse_timeframes: bool = False


def load_rules(text: str) -> RuleSet:
    data = json.loads(text)
    if not isinstance(data, dict) or "rules" not in data:
        raise ParseError("rules file must be an object with a 'rules' array")
    rules = tuple(_compile_rule(raw) for raw in data["rules"])
    ids = [r.id for r in rules]
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate rule ids")
    collapse = bool(data.get("timeframe_implication", {}).get("collapse_timeframes", False))
    return RuleSet(rules=rules, collapse_timeframes=collapse)


def default_rules() -> RuleSet:
    text = resources.files("trialgate").joinpath("assets/relation_rules.json").read_text()
    return load_rules(text)


# ---------------------------------------------------------------------------
# stages


def _derive(source: ClosedFact, variable: VariableName, value: Union[bool, Fraction],
            sort: str, provenance: Provenance) -> Optional[ClosedFact]:
    try:
        variable.render()
    except TemplateBindError:
        return None
    return ClosedFact(
        predicate=CanonicalPredicate(variable), sort=sort, value=value,
        cert=source.cert, poss=source.poss,
        complaint_labels=source.complaint_labels, provenance=provenance,
    )


def concept_closure(facts: Sequence[ClosedFact], o: Ontology,
                    cfg: ClosureConfig) -> List[ClosedFact]:
    """Generalize facts up the is-a hierarchy.

    Positive boolean facts walk to ancestors. With negative-descendant
    materialization enabled, false facts walk down to descendants
    instead: absence at a general concept entails absence at every
    specialization.
    """
    derived: List[ClosedFact] = []
    for fact in facts:
        if not fact.canonical or fact.sort != "Bool":
            continue
        if fact.value is True:
            walk = o.ancestors
        elif cfg.enable_negative_descendants:
            walk = o.descendants
        else:
            continue
        v = fact.predicate.variable
        if v.concept not in o.concepts:
            continue
        for concept, hop in sorted(walk(v.concept, max_hops=cfg.max_hops_concept).items()):
            if len(derived) >= cfg.max_derived_per_pass:
                return derived
            out = _derive(
                fact, dataclasses.replace(v, concept=concept), fact.value, "Bool",
                Provenance("concept", concept, fact.name(), hop),
            )
            if out is not None:
                derived.append(out)
    return derived


def rule_closure(facts: Sequence[ClosedFact],
                 rules: Union[RuleSet, Sequence[RelationRule]]) -> List[ClosedFact]:
    """Apply every relation rule whose template and truth value match."""
    rule_seq = rules.rules if isinstance(rules, RuleSet) else rules
    derived: List[ClosedFact] = []
    for fact in facts:
        if not fact.canonical or fact.sort != "Bool":
            continue
        v = fact.predicate.variable
        for rule in rule_seq:
            if fact.value is not rule.require_bool:
                continue
            binding = rule.pattern.match(v)
            if binding is None:
                continue
            concept, timeframe = binding
            for prod in rule.produce:
                quals = v.free_qualifiers if prod.preserve_qualifiers else ()
                out = _derive(
                    fact, prod.pattern.bind(concept, timeframe, quals),
                    prod.value, prod.sort,
                    Provenance("rule", rule.id, fact.name()),
                )
                if out is not None:
                    derived.append(out)
    return derived


def causal_closure(facts: Sequence[ClosedFact], o: Ontology) -> List[ClosedFact]:
    """Follow causal (relation, concept) edges, single hop each."""
    derived: List[ClosedFact] = []
    for fact in facts:
        if not fact.positive_bool or not fact.canonical:
            continue
        v = fact.predicate.variable
        template = _TEMPLATE_BY_ID[v.template_id]
        for edge in o.causal_from((template.relation, v.concept)):
            dst_template = _TEMPLATE_BY_RELATION.get(edge.dst_rel)
            if dst_template is None:
                continue
            variable = VariableName(
                template_id=dst_template.template_id,
                concept=edge.dst_con,
                timeframe=v.timeframe,
                outcome=edge.dst_outcome,
                unit=None,
                free_qualifiers=v.free_qualifiers,
            )
            out = _derive(
                fact, variable, True, "Bool",
                Provenance("causal",
                           f"{edge.src_rel}({edge.src_con})->{edge.dst_rel}({edge.dst_con})",
                           fact.name()),
            )
            if out is not None:
                derived.append(out)
    return derived


# ---------------------------------------------------------------------------
# driver


@dataclass
class ClosureResult:
    facts: List[ClosedFact]
    passes: int
    fixpoint: bool
    truncated: int
    derived_by_stage: Dict[str, int] = field(default_factory=dict)

    def keys(self) -> List[DedupKey]:
        return [dedup_key(f) for f in self.facts]


def run_closure(facts: Sequence[ClosedFact], o: Ontology,
                rules: Union[RuleSet, Sequence[RelationRule], None] = None,
                cfg: Optional[ClosureConfig] = None) -> ClosureResult:
    """Iterate all stages to a fixpoint under caps.

    Each pass derives only from facts accepted before it started, so
    stage order inside a pass cannot change the fixpoint. Output order
    is input order, then first-derivation order; duplicates on
    (name, possible window) are dropped, first occurrence wins.
    """
    if rules is None:
        rules = default_rules()
    if cfg is None:
        cfg = ClosureConfig()
    seen: Dict[DedupKey, int] = {}
    out: List[ClosedFact] = []
    for fact in facts:
        key = dedup_key(fact)
        if key not in seen:
            seen[key] = len(out)
            out.append(fact)
    frontier: List[ClosedFact] = list(out)
    passes = 0
    truncated = 0
    by_stage: Dict[str, int] = {"concept": 0, "rule": 0, "causal": 0}
    while frontier and passes < cfg.max_passes:
        passes += 1
        produced: List[ClosedFact] = []
        concept_out = concept_closure(frontier, o, cfg)
        if len(concept_out) >= cfg.max_derived_per_pass:
            truncated += 1
        produced.extend(concept_out)
        produced.extend(rule_closure(frontier, rules))
        produced.extend(causal_closure(frontier, o))
        if len(produced) > cfg.max_derived_per_pass:
            truncated += 1
            produced = produced[:cfg.max_derived_per_pass]
        frontier = []
        for fact in produced:
            key = dedup_key(fact)
            if key not in seen:
                seen[key] = len(out)
                out.append(fact)
                frontier.append(fact)
                by_stage[fact.provenance.stage] += 1
    return ClosureResult(facts=out, passes=passes, fixpoint=not frontier,
                         truncated=truncated, derived_by_stage=by_stage)
