"""Time windows in hours relative to the note timestamp.

All window endpoints are exact rationals, negative toward the past and
positive toward the future. Unbounded directions are clipped to a large
sentinel so every window has finite numeric bounds. Comparisons honor
endpoint inclusivity, so they never depend on float rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Tuple, Union

from .errors import MalformedWindow, NegativeMagnitude, WindowOrderError

Rational = Union[int, float, str, Fraction]

SENTINEL_HOURS = Fraction(10**9)

# Calendar units use the study-wide fixed conversions: a month is 730
# hours and a year 8760 hours, regardless of calendar context.
HOURS_PER_UNIT = {
    "minutes": Fraction(1, 60),
    "hours": Fraction(1),
    "days": Fraction(24),
    "weeks": Fraction(168),
    "months": Fraction(730),
    "years": Fraction(8760),
}

_DIRECTIONS = ("past", "now", "future")


def to_fraction(value: Rational) -> Fraction:
    """Convert supported numeric spellings to an exact Fraction.

    Strings go through Fraction's decimal parser so "0.1" means 1/10,
    not the nearest IEEE double.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise MalformedWindow("boolean is not a numeric bound", context=value)
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**9)
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise MalformedWindow(f"bad numeric bound {value!r}") from exc
    raise MalformedWindow(f"unsupported bound type {type(value).__name__}")


def format_hours(value: Fraction) -> str:
    """Render a bound the way window debug strings spell it, e.g. -168.0."""
    if value.denominator == 1:
        return f"{value.numerator}.0"
    return repr(float(value))


def normalize_endpoint(direction: str, magnitude: Rational, unit: str) -> Fraction:
    """Map (direction, magnitude, unit) to signed hours.

    "now" ignores magnitude and yields zero. An infinite magnitude is
    clipped to the sentinel. Negative magnitudes are rejected.
    """
    if direction not in _DIRECTIONS:
        raise MalformedWindow(f"unknown temporal direction {direction!r}")
    if direction == "now":
        return Fraction(0)
    if isinstance(magnitude, str) and magnitude.strip().lower() in ("inf", "+inf", "infinity"):
        hours = SENTINEL_HOURS
    elif isinstance(magnitude, float) and magnitude == float("inf"):
        hours = SENTINEL_HOURS
    else:
        mag = to_fraction(magnitude)
        if mag < 0:
            raise NegativeMagnitude(f"negative magnitude {magnitude!r}")
        if unit not in HOURS_PER_UNIT:
            raise MalformedWindow(f"unknown unit {unit!r}")
        hours = mag * HOURS_PER_UNIT[unit]
        if hours > SENTINEL_HOURS:
            hours = SENTINEL_HOURS
    return -hours if direction == "past" else hours


@dataclass(frozen=True)
class TimeWindow:
    """A nonempty interval of hours with per-endpoint inclusivity."""

    lower: Fraction
    upper: Fraction
    lower_inclusive: bool = True
    upper_inclusive: bool = True

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise WindowOrderError(
                f"window start {format_hours(self.lower)} after end {format_hours(self.upper)}"
            )
        if self.lower == self.upper and not (self.lower_inclusive and self.upper_inclusive):
            raise MalformedWindow("degenerate window with an open endpoint is empty")

    @staticmethod
    def of(lower: Rational, upper: Rational, lower_inclusive: bool = True,
           upper_inclusive: bool = True) -> "TimeWindow":
        return TimeWindow(to_fraction(lower), to_fraction(upper),
                          lower_inclusive, upper_inclusive)

    @staticmethod
    def full() -> "TimeWindow":
        return TimeWindow(-SENTINEL_HOURS, SENTINEL_HOURS)

    @property
    def is_point(self) -> bool:
        return self.lower == self.upper

    def intersects(self, other: "TimeWindow") -> bool:
        return (_start_before_end(self.lower, self.lower_inclusive,
                                  other.upper, other.upper_inclusive)
                and _start_before_end(other.lower, other.lower_inclusive,
                                      self.upper, self.upper_inclusive))

    def contains(self, other: "TimeWindow") -> bool:
        """Set containment: every instant of other lies in self."""
        lower_ok = (self.lower < other.lower
                    or (self.lower == other.lower
                        and (self.lower_inclusive or not other.lower_inclusive)))
        upper_ok = (other.upper < self.upper
                    or (other.upper == self.upper
                        and (self.upper_inclusive or not other.upper_inclusive)))
        return lower_ok and upper_ok

    def intersection(self, other: "TimeWindow") -> Optional["TimeWindow"]:
        if not self.intersects(other):
            return None
        if (self.lower, not self.lower_inclusive) >= (other.lower, not other.lower_inclusive):
            lo, lo_inc = self.lower, self.lower_inclusive
        else:
            lo, lo_inc = other.lower, other.lower_inclusive
        if (self.upper, self.upper_inclusive) <= (other.upper, other.upper_inclusive):
            hi, hi_inc = self.upper, self.upper_inclusive
        else:
            hi, hi_inc = other.upper, other.upper_inclusive
        return TimeWindow(lo, hi, lo_inc, hi_inc)

    def render(self) -> str:
        return f"[{format_hours(self.lower)}h→{format_hours(self.upper)}h]"

    def key(self) -> Tuple[Fraction, Fraction, bool, bool]:
        return (self.lower, self.upper, self.lower_inclusive, self.upper_inclusive)


def _start_before_end(start: Fraction, start_incl: bool,
                      end: Fraction, end_incl: bool) -> bool:
    # A shared instant exists at the boundary only when both ends are closed.
    if start < end:
        return True
    return start == end and start_incl and end_incl


def window_for_timeframe(kind: str, n: Optional[Rational] = None,
                         unit: Optional[str] = None) -> TimeWindow:
    """Window denoted by a timeframe qualifier.

    kind is one of now, inthehistory, inthefuture, inthepast_n,
    inthefuture_n, foraduration. Bounded forms need n and unit.
    """
    zero = Fraction(0)
    if kind == "now":
        return TimeWindow(zero, zero)
    if kind == "inthehistory":
        return TimeWindow(-SENTINEL_HOURS, zero)
    if kind == "inthefuture":
        return TimeWindow(zero, SENTINEL_HOURS)
    if kind == "foraduration":
        # Duration qualifiers scope how long a state persists, not when;
        # the maximal window keeps them from constraining match time.
        return TimeWindow.full()
    if kind in ("inthepast_n", "inthefuture_n"):
        if n is None or unit is None:
            raise MalformedWindow(f"timeframe {kind} needs a magnitude and unit")
        mag = to_fraction(n)
        if mag <= 0:
            raise NegativeMagnitude(f"timeframe magnitude must be positive, got {n!r}")
        if unit not in HOURS_PER_UNIT:
            raise MalformedWindow(f"unknown unit {unit!r}")
        span = mag * HOURS_PER_UNIT[unit]
        if span > SENTINEL_HOURS:
            span = SENTINEL_HOURS
        if kind == "inthepast_n":
            return TimeWindow(-span, zero)
        return TimeWindow(zero, span)
    raise MalformedWindow(f"unknown timeframe kind {kind!r}")


def inclusion_time_match(criterion: TimeWindow, patient_poss: TimeWindow) -> bool:
    """Inclusion-side test: any overlap with the may-hold window."""
    return criterion.intersects(patient_poss)


def exclusion_time_match(criterion: TimeWindow, patient_cert: TimeWindow,
                         require_proper: bool = False) -> bool:
    """Exclusion-side test: the criterion covers the whole must-hold window.

    Equal closed windows count as contained. require_proper additionally
    demands the windows differ.
    """
    if not criterion.contains(patient_cert):
        return False
    if require_proper and criterion.key() == patient_cert.key():
        return False
    return True
