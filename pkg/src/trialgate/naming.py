"""Variable-name grammar for canonical patient predicates.

A canonical name is a stem template instantiated with a concept token
and a fused timeframe, optionally followed by free-text qualifiers
attached with ``@@``. Parsing and rendering are exact inverses on the
template inventory, byte for byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .errors import MalformedTimeframe, ParseError, TemplateBindError, UnrecognizedStem
from .temporal import HOURS_PER_UNIT, TimeWindow, window_for_timeframe

TIME_UNITS = ("minutes", "hours", "days", "weeks", "months", "years")
OUTCOMES = ("positive", "negative", "normal", "abnormal")
SEX_VALUES = ("male", "female", "other")
AGE_UNITS = ("years", "months", "days")

_UNIT_ALT = "|".join(TIME_UNITS)
_TF_EXACT = (
    r"(?:inthepast[1-9]\d*(?:%(u)s)|inthefuture[1-9]\d*(?:%(u)s)|"
    r"foradurationof[1-9]\d*(?:%(u)s)|inthehistory|inthefuture|now)"
) % {"u": _UNIT_ALT}
_TF_PIECES = re.compile(
    r"^(?:(now)|(inthehistory)|(inthepast)([1-9]\d*)(%(u)s)|"
    r"(inthefuture)([1-9]\d*)(%(u)s)|(inthefuture)|(foradurationof)([1-9]\d*)(%(u)s))$"
    % {"u": _UNIT_ALT}
)

_TOKEN_RE = re.compile(r"^[a-z0-9][a-z0-9_]*$")


@dataclass(frozen=True)
class TimeframeToken:
    """A fused timeframe qualifier as it appears inside variable names."""

    kind: str
    n: Optional[int] = None
    unit: Optional[str] = None

    def render(self) -> str:
        if self.kind == "now":
            return "now"
        if self.kind == "inthehistory":
            return "inthehistory"
        if self.kind == "inthefuture":
            return "inthefuture"
        if self.kind == "inthepast_n":
            return f"inthepast{self.n}{self.unit}"
        if self.kind == "inthefuture_n":
            return f"inthefuture{self.n}{self.unit}"
        if self.kind == "foraduration":
            return f"foradurationof{self.n}{self.unit}"
        raise TemplateBindError(f"unknown timeframe kind {self.kind!r}")

    def window(self) -> TimeWindow:
        return window_for_timeframe(self.kind, self.n, self.unit)

    @staticmethod
    def now() -> "TimeframeToken":
        return TimeframeToken("now")

    @staticmethod
    def parse(text: str) -> "TimeframeToken":
        m = _TF_PIECES.match(text)
        if m is None:
            raise MalformedTimeframe(f"bad timeframe {text!r}")
        g = m.groups()
        if g[0]:
            return TimeframeToken("now")
        if g[1]:
            return TimeframeToken("inthehistory")
        if g[2]:
            return TimeframeToken("inthepast_n", int(g[3]), g[4])
        if g[5]:
            return TimeframeToken("inthefuture_n", int(g[6]), g[7])
        if g[8]:
            return TimeframeToken("inthefuture")
        return TimeframeToken("foraduration", int(g[10]), g[11])


def _validate_timeframe_fields(tok: TimeframeToken) -> None:
    bounded = tok.kind in ("inthepast_n", "inthefuture_n", "foraduration")
    if bounded:
        if not isinstance(tok.n, int) or tok.n <= 0:
            raise TemplateBindError(f"timeframe magnitude must be a positive int, got {tok.n!r}")
        if tok.unit not in TIME_UNITS:
            raise TemplateBindError(f"bad timeframe unit {tok.unit!r}")
    elif tok.n is not None or tok.unit is not None:
        raise TemplateBindError(f"timeframe {tok.kind} takes no magnitude")


@dataclass(frozen=True)
class StemTemplate:
    """One naming pattern: fixed text around concept and timeframe holes."""

    template_id: str
    relation: str
    prefix: str
    numeric: bool = False
    has_concept: bool = True
    fixed_concept: Optional[str] = None
    infix: str = "_"                # literal between concept hole and timeframe
    outcome_hole: bool = False      # trailing _outcome_is_{o}, optional on parse
    status_hole: bool = False       # _is_{status}_ between concept and timeframe
    sex_hole: bool = False          # concept drawn from the sex value enum
    age_unit_hole: bool = False     # trailing _in_{unit} from the age unit enum
    measure_unit_hole: bool = False  # trailing _withunit_{unit}, free token

    def __post_init__(self) -> None:
        object.__setattr__(self, "_exact", self._compile(_TF_EXACT))
        object.__setattr__(self, "_relaxed", self._compile(r"[a-z0-9_]+?"))

    def _compile(self, tf_pattern: str):
        parts = [re.escape(self.prefix)]
        if self.has_concept:
            parts.append(r"(?P<e>.+)")
        if self.sex_hole:
            parts.append("(?P<sex>%s)" % "|".join(SEX_VALUES))
        if self.status_hole:
            parts.append("_is_(?P<status>%s)" % "|".join(OUTCOMES))
        if self.has_concept or self.sex_hole:
            parts.append(re.escape(self.infix))
        parts.append(f"(?P<tf>{tf_pattern})")
        if self.outcome_hole:
            parts.append("(?:_outcome_is_(?P<o>%s))?" % "|".join(OUTCOMES))
        if self.age_unit_hole:
            parts.append("_in_(?P<au>%s)" % "|".join(AGE_UNITS))
        if self.measure_unit_hole:
            parts.append(r"_withunit_(?P<mu>[a-z0-9_]+)")
        return re.compile("^" + "".join(parts) + "$")

    def match(self, base: str, exact: bool):
        return (self._exact if exact else self._relaxed).match(base)


# Order matters only for diagnostics; the exact patterns are mutually
# exclusive because each prefix plus hole structure is distinct.
TEMPLATES: List[StemTemplate] = [
    StemTemplate("diagnosis", "HasDiagnosisOf", "patient_has_diagnosis_of_"),
    StemTemplate("finding", "HasFindingOf", "patient_has_finding_of_"),
    StemTemplate("symptoms", "HasSymptomsOf", "patient_has_symptoms_of_"),
    StemTemplate("clinical_signs", "HasClinicalSignsOf", "patient_has_clinical_signs_of_"),
    StemTemplate("suspicion", "HasSuspicionOf", "patient_has_suspicion_of_"),
    StemTemplate("undergone", "HasUndergone", "patient_has_undergone_", outcome_hole=True),
    StemTemplate("undergoing", "IsUndergoing", "patient_is_undergoing_"),
    StemTemplate("will_undergo", "WillUndergo", "patient_will_undergo_"),
    StemTemplate("can_undergo", "CanUndergo", "patient_can_undergo_"),
    StemTemplate("needs_to_undergo", "NeedsToUndergo", "patient_needs_to_undergo_"),
    StemTemplate("numeric", "ValueRecorded", "patient_", numeric=True,
                 infix="_value_recorded_", measure_unit_hole=True),
    StemTemplate("age", "AgeValueRecorded", "patient_age_value_recorded_", numeric=True,
                 has_concept=False, fixed_concept="age", age_unit_hole=True),
    StemTemplate("sex", "SexIs", "patient_sex_is_", has_concept=False, sex_hole=True),
    StemTemplate("childbearing", "HasChildbearingPotential",
                 "patient_has_childbearing_potential_", has_concept=False,
                 fixed_concept="childbearing_potential"),
    StemTemplate("breastfeeding", "IsBreastfeeding", "patient_is_breastfeeding_",
                 has_concept=False, fixed_concept="breastfeeding"),
    StemTemplate("pregnant", "IsPregnant", "patient_is_pregnant_",
                 has_concept=False, fixed_concept="pregnancy"),
    StemTemplate("lactating", "IsLactating", "patient_is_lactating_",
                 has_concept=False, fixed_concept="lactation"),
    StemTemplate("taking", "IsTaking", "patient_is_taking_"),
    StemTemplate("taken", "HasTaken", "patient_has_taken_"),
    StemTemplate("hypersensitivity", "HasHypersensitivityTo",
                 "patient_has_hypersensitivity_to_"),
    StemTemplate("intolerance", "HasIntoleranceTo", "patient_has_intolerance_to_"),
    StemTemplate("allergy", "HasAllergyTo", "patient_has_allergy_to_"),
    StemTemplate("nonimmune_hypersensitivity", "HasNonimmuneHypersensitivityTo",
                 "patient_has_nonimmune_hypersensitivity_to_"),
    StemTemplate("exposed", "IsExposedTo", "patient_is_exposed_to_"),
    StemTemplate("been_exposed", "HasBeenExposedTo", "patient_has_been_exposed_to_"),
    StemTemplate("status", "StatusIs", "patients_", status_hole=True),
]

TEMPLATES_BY_ID: Dict[str, StemTemplate] = {t.template_id: t for t in TEMPLATES}


@dataclass(frozen=True)
class VariableName:
    """Parsed form of a canonical variable symbol."""

    template_id: str
    concept: str
    timeframe: TimeframeToken
    outcome: Optional[str] = None
    unit: Optional[str] = None
    free_qualifiers: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def template(self) -> StemTemplate:
        return TEMPLATES_BY_ID[self.template_id]

    @property
    def relation(self) -> str:
        return self.template.relation

    @property
    def numeric(self) -> bool:
        return self.template.numeric

    def render(self) -> str:
        return render_variable_name(self)


def _split_qualifiers(symbol: str) -> Tuple[str, Tuple[str, ...]]:
    parts = symbol.split("@@")
    base = parts[0]
    quals = tuple(parts[1:])
    for q in quals:
        if not _TOKEN_RE.match(q):
            raise ParseError(f"bad free qualifier {q!r} in {symbol!r}")
    return base, quals


def parse_variable_name(symbol: str) -> VariableName:
    """Parse a symbol into its canonical fields.

    Raises UnrecognizedStem when no template matches and
    MalformedTimeframe when a template matches except for its
    timeframe segment.
    """
    if not symbol or symbol != symbol.strip():
        raise ParseError(f"bad variable symbol {symbol!r}")
    base, quals = _split_qualifiers(symbol)
    for template in TEMPLATES:
        m = template.match(base, exact=True)
        if m is None:
            continue
        fields = m.groupdict()
        concept = template.fixed_concept or fields.get("e") or fields.get("sex") or ""
        if template.has_concept and not _TOKEN_RE.match(concept):
            continue
        tf = TimeframeToken.parse(fields["tf"])
        outcome = fields.get("o") or fields.get("status")
        unit = fields.get("au") or fields.get("mu")
        return VariableName(
            template_id=template.template_id,
            concept=concept,
            timeframe=tf,
            outcome=outcome,
            unit=unit,
            free_qualifiers=quals,
        )
    # diagnostics: a stem that matches with a relaxed timeframe means the
    # timeframe segment itself is the problem
    for template in TEMPLATES:
        if template.match(base, exact=False):
            raise MalformedTimeframe(f"bad timeframe in {symbol!r}")
    raise UnrecognizedStem(f"no canonical stem matches {symbol!r}")


def render_variable_name(v: VariableName) -> str:
    """Inverse of parse_variable_name; validates the field combination."""
    template = TEMPLATES_BY_ID.get(v.template_id)
    if template is None:
        raise TemplateBindError(f"unknown template {v.template_id!r}")
    _validate_timeframe_fields(v.timeframe)
    parts = [template.prefix]
    if template.sex_hole:
        if v.concept not in SEX_VALUES:
            raise TemplateBindError(f"bad sex value {v.concept!r}")
        parts.append(v.concept + "_")
    elif template.status_hole:
        _require_token(v.concept)
        if v.outcome not in OUTCOMES:
            raise TemplateBindError(f"status template needs an outcome, got {v.outcome!r}")
        parts.append(f"{v.concept}_is_{v.outcome}_")
    elif template.has_concept:
        _require_token(v.concept)
        parts.append(v.concept + template.infix)
    else:
        if template.fixed_concept and v.concept != template.fixed_concept:
            raise TemplateBindError(
                f"template {template.template_id} implies concept "
                f"{template.fixed_concept!r}, got {v.concept!r}"
            )
    parts.append(v.timeframe.render())
    if template.outcome_hole and v.outcome is not None:
        if v.outcome not in OUTCOMES:
            raise TemplateBindError(f"bad outcome {v.outcome!r}")
        parts.append(f"_outcome_is_{v.outcome}")
    if not template.outcome_hole and not template.status_hole and v.outcome is not None:
        raise TemplateBindError(f"template {template.template_id} takes no outcome")
    if template.age_unit_hole:
        if v.unit not in AGE_UNITS:
            raise TemplateBindError(f"bad age unit {v.unit!r}")
        parts.append(f"_in_{v.unit}")
    elif template.measure_unit_hole:
        if not v.unit or not re.match(r"^[a-z0-9_]+$", v.unit):
            raise TemplateBindError(f"bad measurement unit {v.unit!r}")
        parts.append(f"_withunit_{v.unit}")
    elif v.unit is not None:
        raise TemplateBindError(f"template {template.template_id} takes no unit")
    base = "".join(parts)
    for q in v.free_qualifiers:
        if not _TOKEN_RE.match(q):
            raise TemplateBindError(f"bad free qualifier {q!r}")
        base += "@@" + q
    return base


def _require_token(concept: str) -> None:
    if not concept or not _TOKEN_RE.match(concept):
        raise TemplateBindError(f"bad concept token {concept!r}")


def is_canonical(symbol: str) -> bool:
    try:
        parse_variable_name(symbol)
        return True
    except ParseError:
        return False
