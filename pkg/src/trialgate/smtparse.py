"""Reader and writer for trial constraint programs and patient fact sheets.

Trial programs are a small SMT-LIB subset: constant declarations with
same-line documentation comments, optional integer counting helpers,
and named assertions. The reader keeps declaration comments because
they carry the per-variable annotation objects; all other comments are
dropped. The writer emits a normalized form that parses back to a
structurally equal program.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .errors import (
    BadNamedTag,
    CertNotSubsetError,
    MalformedWindow,
    MissingAnnotation,
    ParseError,
    UnbalancedParens,
    UndeclaredSymbol,
)
from .model import (
    And,
    Annotation,
    Atom,
    AtomicConstraint,
    CanonicalPredicate,
    Cmp,
    CountAtLeast,
    CountHelper,
    Declaration,
    Formula,
    Iff,
    Implies,
    NonCanonicalPredicate,
    Not,
    Or,
    Predicate,
    TrialAssertion,
    TrialProgram,
    parse_provenance_tag,
    validate_annotation,
)
from .naming import parse_variable_name
from .temporal import TimeWindow, normalize_endpoint

SORTS = ("Bool", "Real", "Int")

Sexpr = Union[str, List["Sexpr"]]


# ---------------------------------------------------------------------------
# low-level command scanning


@dataclass
class Command:
    """One toplevel parenthesized form plus its trailing same-line comment."""

    text: str
    line: int
    trailing_comment: Optional[str]


def scan_commands(text: str) -> List[Command]:
    """Split source text into balanced toplevel forms.

    Comments run from ;; to end of line. A comment that follows a
    command's closing paren on the same line is attached to it.
    """
    commands: List[Command] = []
    i, n = 0, len(text)
    line = 1
    depth = 0
    start = -1
    start_line = -1
    pending: Optional[int] = None  # index of command awaiting a trailing comment
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            pending = None
            i += 1
            continue
        if ch == ";":
            comment_start = i
            while i < n and text[i] != "\n":
                i += 1
            if depth > 0:
                continue
            body = text[comment_start:i].lstrip(";").strip()
            if pending is not None and commands[pending].trailing_comment is None:
                commands[pending].trailing_comment = text[comment_start:i]
            elif not commands and body:
                pass  # leading banner comment, dropped
            continue
        if ch == "(":
            if depth == 0:
                start = i
                start_line = line
                pending = None
            depth += 1
        elif ch == ")":
            if depth == 0:
                raise UnbalancedParens(f"line {line}: unmatched ')'")
            depth -= 1
            if depth == 0:
                commands.append(Command(text[start:i + 1], start_line, None))
                pending = len(commands) - 1
        elif not ch.isspace():
            if depth == 0:
                raise ParseError(f"line {line}: stray text outside any form")
        i += 1
    if depth != 0:
        raise UnbalancedParens(f"line {start_line}: unclosed '(' at end of input")
    return commands


_SYMBOL_RE = re.compile(r"[^()\s;]+")


def read_sexpr(text: str) -> Sexpr:
    """Parse one balanced form into nested lists of token strings."""
    tokens: List[str] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            tokens.append(ch)
            i += 1
        elif ch.isspace():
            i += 1
        else:
            m = _SYMBOL_RE.match(text, i)
            tokens.append(m.group(0))
            i = m.end()
    pos = 0

    def parse() -> Sexpr:
        nonlocal pos
        if pos >= len(tokens):
            raise UnbalancedParens("unexpected end of form")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            items: List[Sexpr] = []
            while pos < len(tokens) and tokens[pos] != ")":
                items.append(parse())
            if pos >= len(tokens):
                raise UnbalancedParens("missing ')'")
            pos += 1
            return items
        if tok == ")":
            raise UnbalancedParens("unexpected ')'")
        return tok

    out = parse()
    if pos != len(tokens):
        raise ParseError("trailing tokens after form")
    return out


# ---------------------------------------------------------------------------
# annotation comments

_QUOTED_RE = re.compile(r'^"((?:[^"\\]|\\.)*)"\s*(.*)$', re.S)


def parse_annotation_comment(comment: str) -> Annotation:
    """Decode a declaration's trailing comment into an Annotation."""
    body = comment.lstrip(";").strip()
    if not body:
        return Annotation()
    free_text: Optional[str] = None
    rest = body
    m = _QUOTED_RE.match(body)
    if m:
        free_text = m.group(1).replace('\\"', '"')
        rest = m.group(2).strip()
    fields = None
    problems: Tuple[str, ...] = ()
    if rest.startswith("{"):
        try:
            decoded = json.loads(rest)
            if isinstance(decoded, dict):
                fields = decoded
            else:
                problems = ("annotation JSON is not an object",)
        except json.JSONDecodeError:
            problems = ("annotation JSON does not parse",)
    elif rest and m:
        problems = ("unrecognized text after quoted annotation",)
    elif rest and not m:
        free_text = rest
    return Annotation(free_text=free_text, fields=fields, problems=problems)


def render_annotation_comment(annotation: Annotation) -> str:
    parts = []
    if annotation.free_text is not None:
        escaped = annotation.free_text.replace('"', '\\"')
        parts.append(f'"{escaped}"')
    if annotation.fields is not None:
        parts.append(json.dumps(annotation.fields, ensure_ascii=False))
    return " ;; " + " ".join(parts) if parts else ""


# ---------------------------------------------------------------------------
# trial programs

_NUM_RE = re.compile(r"^\d+(?:\.\d+)?$")


def _is_literal(token: str) -> bool:
    return bool(_NUM_RE.match(token))


def _literal(token: str) -> Fraction:
    return Fraction(token)


class _ProgramReader:
    def __init__(self, trial_id: str, subcohort: str, side: str,
                 strict_annotations: bool) -> None:
        self.program = TrialProgram(trial_id=trial_id, subcohort=subcohort, side=side)
        self.strict_annotations = strict_annotations
        self.decls: Dict[str, Declaration] = {}
        self.helpers: Dict[str, CountHelper] = {}

    def read(self, text: str) -> TrialProgram:
        for command in scan_commands(text):
            form = read_sexpr(command.text)
            if not isinstance(form, list) or not form:
                raise ParseError(f"line {command.line}: empty form")
            head = form[0]
            if head == "declare-const":
                self._declare(form, command)
            elif head == "define-fun":
                self._define(form, command)
            elif head == "assert":
                self._assert(form, command)
            else:
                raise ParseError(f"line {command.line}: unsupported command {head!r}")
        return self.program

    def _declare(self, form: Sexpr, command: Command) -> None:
        if len(form) != 3 or not isinstance(form[1], str) or not isinstance(form[2], str):
            raise ParseError(f"line {command.line}: malformed declare-const")
        symbol, sort = form[1], form[2]
        if sort not in SORTS:
            raise ParseError(f"line {command.line}: unsupported sort {sort!r}")
        if symbol in self.decls:
            raise ParseError(f"line {command.line}: duplicate declaration {symbol!r}")
        predicate = self._predicate_for(symbol, sort)
        annotation: Optional[Annotation] = None
        if command.trailing_comment is not None:
            annotation = parse_annotation_comment(command.trailing_comment)
            key_problems = validate_annotation(annotation, numeric=sort != "Bool")
            if key_problems:
                annotation.problems = annotation.problems + key_problems
                self.program.warnings.append(
                    f"{symbol}: " + "; ".join(annotation.problems)
                )
        elif self.strict_annotations:
            raise MissingAnnotation(f"line {command.line}: {symbol} has no annotation")
        decl = Declaration(symbol=symbol, sort=sort, predicate=predicate,
                           annotation=annotation)
        self.decls[symbol] = decl
        self.program.declarations.append(decl)

    def _predicate_for(self, symbol: str, sort: str) -> Predicate:
        try:
            variable = parse_variable_name(symbol)
        except ParseError:
            return NonCanonicalPredicate(symbol)
        if variable.numeric != (sort != "Bool"):
            self.program.warnings.append(
                f"{symbol}: sort {sort} does not fit its stem; treated as opaque"
            )
            return NonCanonicalPredicate(symbol)
        return CanonicalPredicate(variable)

    def _define(self, form: Sexpr, command: Command) -> None:
        if (len(form) != 5 or not isinstance(form[1], str) or form[2] != []
                or form[3] != "Int"):
            raise ParseError(f"line {command.line}: unsupported define-fun shape")
        name, body = form[1], form[4]
        if name in self.decls or name in self.helpers:
            raise ParseError(f"line {command.line}: duplicate symbol {name!r}")
        terms: Sequence[Sexpr]
        if isinstance(body, list) and body and body[0] == "+":
            terms = body[1:]
        else:
            terms = [body]
        conditions: List[Formula] = []
        for term in terms:
            if (not isinstance(term, list) or len(term) != 4 or term[0] != "ite"
                    or term[2] != "1" or term[3] != "0"):
                raise ParseError(
                    f"line {command.line}: define-fun body must sum (ite cond 1 0) terms"
                )
            conditions.append(self._formula(term[1], command))
        helper = CountHelper(name=name, conditions=tuple(conditions))
        self.helpers[name] = helper
        self.program.count_helpers.append(helper)

    def _assert(self, form: Sexpr, command: Command) -> None:
        if len(form) != 2:
            raise ParseError(f"line {command.line}: malformed assert")
        body = form[1]
        if (not isinstance(body, list) or len(body) != 4 or body[0] != "!"
                or body[2] != ":named" or not isinstance(body[3], str)):
            raise BadNamedTag(f"line {command.line}: assert body must be (! formula :named TAG)")
        tag = parse_provenance_tag(body[3])
        formula = self._formula(body[1], command)
        self.program.assertions.append(TrialAssertion(formula=formula, tag=tag))

    def _formula(self, form: Sexpr, command: Command) -> Formula:
        if isinstance(form, str):
            return self._symbol_atom(form, command)
        if not form:
            raise ParseError(f"line {command.line}: empty subformula")
        head = form[0]
        if not isinstance(head, str):
            raise ParseError(f"line {command.line}: bad operator position")
        args = form[1:]
        if head == "and":
            return And(tuple(self._formula(a, command) for a in args))
        if head == "or":
            return Or(tuple(self._formula(a, command) for a in args))
        if head == "not":
            if len(args) != 1:
                raise ParseError(f"line {command.line}: not takes one argument")
            return Not(self._formula(args[0], command))
        if head == "=>":
            if len(args) < 2:
                raise ParseError(f"line {command.line}: => takes two arguments")
            out = self._formula(args[-1], command)
            for lhs in reversed(args[:-1]):
                out = Implies(self._formula(lhs, command), out)
            return out
        if head in ("<", "<=", ">", ">=") or (head == "=" and self._numeric_pair(args)):
            return self._comparison(head, args, command)
        if head == "=":
            if len(args) != 2:
                raise ParseError(f"line {command.line}: = takes two arguments")
            return Iff(self._formula(args[0], command), self._formula(args[1], command))
        raise ParseError(f"line {command.line}: unsupported operator {head!r}")

    def _numeric_pair(self, args: Sequence[Sexpr]) -> bool:
        if len(args) != 2:
            return False
        return any(
            isinstance(a, str) and (_is_literal(a) or self._is_numeric_symbol(a))
            for a in args
        )

    def _is_numeric_symbol(self, token: str) -> bool:
        if token in self.helpers:
            return True
        decl = self.decls.get(token)
        return decl is not None and decl.numeric

    def _symbol_atom(self, token: str, command: Command) -> Formula:
        if token in ("true", "false"):
            # constants appear only inside generated programs; model them
            # as a vacuous count so no predicate is involved
            return CountAtLeast(0 if token == "true" else 1, ())
        decl = self.decls.get(token)
        if decl is None:
            raise UndeclaredSymbol(f"line {command.line}: {token!r} is not declared")
        if decl.numeric:
            raise ParseError(f"line {command.line}: numeric symbol {token!r} used as boolean")
        return Atom(AtomicConstraint(decl.predicate, Cmp.EQ, True))

    def _comparison(self, head: str, args: Sequence[Sexpr], command: Command) -> Formula:
        if len(args) != 2:
            raise ParseError(f"line {command.line}: {head} takes two arguments")
        left, right = args
        if isinstance(left, str) and isinstance(right, str) and _is_literal(right):
            symbol, literal, cmp = left, _literal(right), Cmp(head)
        elif isinstance(left, str) and isinstance(right, str) and _is_literal(left):
            symbol, literal = right, _literal(left)
            cmp = Cmp(head).mirrored()
        else:
            raise ParseError(f"line {command.line}: comparison must pit a symbol against a literal")
        if not isinstance(symbol, str) or _is_literal(symbol):
            raise ParseError(f"line {command.line}: comparison needs a symbol operand")
        helper = self.helpers.get(symbol)
        if helper is not None:
            if cmp is Cmp.GE and literal.denominator == 1:
                return CountAtLeast(int(literal), helper.conditions)
            # other uses of the helper stay opaque numeric comparisons
            return Atom(AtomicConstraint(NonCanonicalPredicate(symbol), cmp, literal))
        decl = self.decls.get(symbol)
        if decl is None:
            raise UndeclaredSymbol(f"line {command.line}: {symbol!r} is not declared")
        if not decl.numeric:
            raise ParseError(f"line {command.line}: boolean symbol {symbol!r} in comparison")
        return Atom(AtomicConstraint(decl.predicate, cmp, literal))


def parse_trial_program(text: str, trial_id: str = "unknown", subcohort: str = "main",
                        side: str = "inclusion",
                        strict_annotations: bool = False) -> TrialProgram:
    """Parse program text into a TrialProgram."""
    reader = _ProgramReader(trial_id, subcohort, side, strict_annotations)
    return reader.read(text)


# ---------------------------------------------------------------------------
# serialization


def _render_literal(value: Fraction) -> str:
    if value.denominator == 1:
        return f"{value.numerator}.0"
    for places in range(1, 31):
        scaled = value * 10 ** places
        if scaled.denominator == 1:
            digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
            sign = "-" if value < 0 else ""
            return f"{sign}{digits[:-places]}.{digits[-places:]}"
    raise ParseError(f"literal {value} has no finite decimal rendering")


def render_formula(formula: Formula, helper_names: Dict[Tuple[Formula, ...], str]) -> str:
    if isinstance(formula, Atom):
        a = formula.constraint
        symbol = a.predicate.render()
        if a.boolean:
            if a.cmp is Cmp.EQ:
                return symbol if a.target else f"(not {symbol})"
            return f"(not {symbol})" if a.target else symbol
        body = f"(= {symbol} {_render_literal(a.target)})" if a.cmp in (Cmp.EQ, Cmp.NE) \
            else f"({a.cmp.value} {symbol} {_render_literal(a.target)})"
        if a.cmp is Cmp.NE:
            return f"(not {body})"
        return body
    if isinstance(formula, And):
        return "(and " + " ".join(render_formula(c, helper_names) for c in formula.children) + ")"
    if isinstance(formula, Or):
        return "(or " + " ".join(render_formula(c, helper_names) for c in formula.children) + ")"
    if isinstance(formula, Not):
        return f"(not {render_formula(formula.child, helper_names)})"
    if isinstance(formula, Implies):
        return (f"(=> {render_formula(formula.lhs, helper_names)} "
                f"{render_formula(formula.rhs, helper_names)})")
    if isinstance(formula, Iff):
        return (f"(= {render_formula(formula.lhs, helper_names)} "
                f"{render_formula(formula.rhs, helper_names)})")
    if isinstance(formula, CountAtLeast):
        if not formula.children:
            return "true" if formula.k <= 0 else "false"
        name = helper_names[formula.children]
        return f"(>= {name} {formula.k})"
    raise ParseError(f"cannot render node {formula!r}")


def serialize_trial_program(program: TrialProgram) -> str:
    """Emit normalized program text that parses back structurally equal."""
    helper_names: Dict[Tuple[Formula, ...], str] = {}
    helpers: List[CountHelper] = []
    for helper in program.count_helpers:
        helper_names[helper.conditions] = helper.name
        helpers.append(helper)
    fresh = 0
    for assertion in program.assertions:
        for node in _walk(assertion.formula):
            if isinstance(node, CountAtLeast) and node.children \
                    and node.children not in helper_names:
                while True:
                    name = f"count_helper_{fresh}"
                    fresh += 1
                    if all(h.name != name for h in helpers):
                        break
                helper = CountHelper(name=name, conditions=node.children)
                helper_names[node.children] = name
                helpers.append(helper)
    lines: List[str] = []
    for decl in program.declarations:
        line = f"(declare-const {decl.symbol} {decl.sort})"
        if decl.annotation is not None:
            line += render_annotation_comment(decl.annotation)
        lines.append(line)
    if lines:
        lines.append("")
    for helper in helpers:
        terms = " ".join(
            f"(ite {render_formula(c, helper_names)} 1 0)" for c in helper.conditions
        )
        body = f"(+ {terms})" if len(helper.conditions) != 1 else terms
        lines.append(f"(define-fun {helper.name} () Int {body})")
    if helpers:
        lines.append("")
    for assertion in program.assertions:
        lines.append(
            f"(assert (! {render_formula(assertion.formula, helper_names)} "
            f":named {assertion.tag.render()}))"
        )
    return "\n".join(lines) + "\n"


def _walk(formula: Formula):
    stack = [formula]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, (And, Or, CountAtLeast)):
            stack.extend(node.children)
        elif isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, (Implies, Iff)):
            stack.append(node.lhs)
            stack.append(node.rhs)


# ---------------------------------------------------------------------------
# patient fact sheets


@dataclass
class PatientFactRecord:
    """One extracted patient fact with its two time windows."""

    symbol: str
    predicate: Predicate
    sort: str
    value: Union[bool, Fraction]
    cert: TimeWindow
    poss: TimeWindow
    complaint_labels: Tuple[str, ...] = ()
    meta: Optional[Dict[str, object]] = None

    @property
    def numeric(self) -> bool:
        return self.sort != "Bool"

    @property
    def canonical(self) -> bool:
        return isinstance(self.predicate, CanonicalPredicate)


_CERT_KEY = "timewindow_this_patient_fact_certainly_holds"
_POSS_KEY = "largest_timewindow_this_patient_fact_may_hold"
_COMPLAINT_LABELS = ("ChiefComplaint", "ChiefComplaintRelated",
                     "AnyImportantComplaint", "PreventionTarget")


def _endpoint_hours(obj: object, what: str) -> Tuple[Fraction, bool]:
    if not isinstance(obj, dict):
        raise MalformedWindow(f"{what} endpoint must be an object")
    if "temporal_direction" not in obj:
        raise MalformedWindow(f"{what} endpoint missing temporal_direction")
    direction = obj["temporal_direction"]
    inclusive = obj.get("inclusive", True)
    if not isinstance(inclusive, bool):
        raise MalformedWindow(f"{what} endpoint inclusive flag must be boolean")
    if direction == "now":
        return Fraction(0), inclusive
    if "temporal_magnitude" not in obj or "units" not in obj:
        raise MalformedWindow(f"{what} endpoint missing magnitude or units")
    return normalize_endpoint(direction, obj["temporal_magnitude"], obj["units"]), inclusive


def _window_from(obj: object, what: str) -> TimeWindow:
    if not isinstance(obj, dict):
        raise MalformedWindow(f"{what} must be an object")
    if "start_time" not in obj or "end_time" not in obj:
        raise MalformedWindow(f"{what} needs start_time and end_time")
    lo, lo_inc = _endpoint_hours(obj["start_time"], what)
    hi, hi_inc = _endpoint_hours(obj["end_time"], what)
    return TimeWindow(lo, hi, lo_inc, hi_inc)


def parse_patient_facts(text: str) -> List[PatientFactRecord]:
    """Parse a JSON array of patient fact records.

    Decimal magnitudes parse exactly: the text "0.1" becomes 1/10, not
    the nearest binary double.
    """
    try:
        data = json.loads(text, parse_float=Fraction)
    except json.JSONDecodeError as exc:
        raise ParseError(f"patient facts are not valid JSON: {exc.msg}") from exc
    if not isinstance(data, list):
        raise ParseError("patient facts must be a JSON array")
    out: List[PatientFactRecord] = []
    for idx, record in enumerate(data):
        if not isinstance(record, dict):
            raise ParseError(f"fact {idx}: record must be an object")
        symbol = record.get("entity_variable_name")
        if not isinstance(symbol, str) or not symbol:
            raise ParseError(f"fact {idx}: entity_variable_name missing")
        sort = record.get("type", "Bool")
        if sort not in SORTS:
            raise ParseError(f"fact {idx}: bad type {sort!r}")
        raw_value = record.get("extracted_value")
        value: Union[bool, Fraction]
        if sort == "Bool":
            if isinstance(raw_value, bool):
                value = raw_value
            elif raw_value in ("true", "false"):
                value = raw_value == "true"
            else:
                raise ParseError(f"fact {idx}: boolean fact needs a boolean value")
        else:
            if isinstance(raw_value, bool) or not isinstance(raw_value, (int, Fraction)):
                raise ParseError(f"fact {idx}: numeric fact needs a numeric value")
            value = Fraction(raw_value)
        if _CERT_KEY not in record or _POSS_KEY not in record:
            raise MalformedWindow(f"fact {idx}: both time windows are required")
        cert = _window_from(record[_CERT_KEY], f"fact {idx} certain window")
        poss = _window_from(record[_POSS_KEY], f"fact {idx} possible window")
        if not poss.contains(cert):
            raise CertNotSubsetError(
                f"fact {idx}: certain window {cert.render()} outside possible {poss.render()}"
            )
        labels = record.get("complaint_labels", [])
        if not isinstance(labels, list) or any(l not in _COMPLAINT_LABELS for l in labels):
            raise ParseError(f"fact {idx}: bad complaint_labels")
        try:
            predicate: Predicate = CanonicalPredicate(parse_variable_name(symbol))
            if predicate.variable.numeric != (sort != "Bool"):
                predicate = NonCanonicalPredicate(symbol)
        except ParseError:
            predicate = NonCanonicalPredicate(symbol)
        meta = {k: record[k] for k in ("span", "template", "usage") if k in record}
        out.append(PatientFactRecord(
            symbol=symbol, predicate=predicate, sort=sort, value=value,
            cert=cert, poss=poss, complaint_labels=tuple(labels),
            meta=meta or None,
        ))
    return out
