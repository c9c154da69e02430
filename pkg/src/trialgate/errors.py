"""Exception types raised across the package.

Every error class carries a short machine-readable ``code`` so CLI output
and logs can name failures without string matching on messages.
"""

from __future__ import annotations


class TrialGateError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"

    def __init__(self, message: str, *, context: object = None) -> None:
        super().__init__(message)
        self.message = message
        self.context = context

    def __str__(self) -> str:
        if self.context is None:
            return self.message
        return f"{self.message} ({self.context!r})"


class ParseError(TrialGateError):
    """Input text does not conform to the expected syntax."""

    code = "parse"


class UnbalancedParens(ParseError):
    code = "unbalanced_parens"


class UndeclaredSymbol(ParseError):
    """An assertion references a symbol with no prior declaration."""

    code = "undeclared_symbol"


class BadNamedTag(ParseError):
    """A :named annotation does not follow the requirement tag grammar."""

    code = "bad_named_tag"


class MissingAnnotation(ParseError):
    """A declaration lacks its side comment in strict annotation mode."""

    code = "missing_annotation"


class UnrecognizedStem(ParseError):
    """A variable name does not match any canonical stem template."""

    code = "unrecognized_stem"


class MalformedTimeframe(ParseError):
    """A stem matched but its timeframe segment is invalid."""

    code = "malformed_timeframe"


class TemplateBindError(ParseError):
    """A stem template was instantiated with incompatible arguments."""

    code = "template_bind"


class MalformedWindow(ParseError):
    """A time window record is structurally invalid."""

    code = "malformed_window"


class WindowOrderError(MalformedWindow):
    """Window start lies after its end."""

    code = "window_order"


class CertNotSubsetError(MalformedWindow):
    """A fact's certain window is not contained in its possible window."""

    code = "cert_not_subset"


class NegativeMagnitude(MalformedWindow):
    """A temporal magnitude is negative."""

    code = "negative_magnitude"


class UnitMismatch(TrialGateError):
    """Two numeric quantities use different units where one is required."""

    code = "unit_mismatch"


class CycleError(TrialGateError):
    """The concept hierarchy contains a cycle."""

    code = "cycle"


class DanglingRefError(TrialGateError):
    """An ontology edge references an undeclared node."""

    code = "dangling_ref"


class DuplicateEntity(TrialGateError):
    """An entity id was inserted twice into the same store."""

    code = "duplicate_entity"


class OntologyMissError(TrialGateError):
    """A canonical atom references a concept the ontology does not declare."""

    code = "ontology_miss"


class TooLarge(TrialGateError):
    """An input exceeds a configured processing cap."""

    code = "too_large"


class TooLargeToVerify(TooLarge):
    """A formula has too many distinct atoms for exhaustive checking."""

    code = "too_large_to_verify"


class IoError(TrialGateError):
    """A file or directory could not be read or written."""

    code = "io"


class CorruptStore(TrialGateError):
    """A store file is missing tables or fails schema checks."""

    code = "corrupt_store"


class UnknownEntity(TrialGateError):
    """A requested trial or patient id is absent from the store."""

    code = "unknown_entity"


class UnknownObjective(TrialGateError):
    """A retrieval objective name is not recognized."""

    code = "unknown_objective"
