"""
Pass/fail rows shared by the golden table, the CLI manifest and the tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List


class CheckMode(Enum):
    ABSOLUTE = 'abs'
    RELATIVE = 'rel'
    UPPER = 'upper'     # computed <= reference + tolerance
    LOWER = 'lower'     # computed >= reference - tolerance


@dataclass(frozen=True)
class GoldenRow:
    check: str
    reference: float
    computed: float
    tolerance: float
    mode: CheckMode = CheckMode.ABSOLUTE

    def __post_init__(self):
        object.__setattr__(self, 'mode', CheckMode(self.mode))
        object.__setattr__(self, 'reference', float(self.reference))
        object.__setattr__(self, 'computed', float(self.computed))

    @property
    def error(self) -> float:
        if self.mode is CheckMode.ABSOLUTE:
            return abs(self.computed - self.reference)
        if self.mode is CheckMode.RELATIVE:
            return abs(self.computed - self.reference) / abs(self.reference)
        if self.mode is CheckMode.UPPER:
            return max(self.computed - self.reference, 0.0)
        return max(self.reference - self.computed, 0.0)

    @property
    def passed(self) -> bool:
        # NaN never passes
        return bool(self.error <= self.tolerance)

    def as_row(self) -> list:
        return [self.check, self.reference, self.computed, self.tolerance, 'pass' if self.passed else 'FAIL']

    def to_dict(self) -> dict:
        return {
            'check': self.check,
            'reference': self.reference,
            'computed': self.computed,
            'tolerance': self.tolerance,
            'mode': self.mode.value,
            'pass': self.passed,
        }


GOLDEN_HEADER = ['check', 'reference', 'computed', 'tolerance', 'status']


def at_most(check: str, computed: float, limit: float) -> GoldenRow:
    return GoldenRow(check, limit, computed, 0.0, CheckMode.UPPER)


def at_least(check: str, computed: float, limit: float) -> GoldenRow:
    return GoldenRow(check, limit, computed, 0.0, CheckMode.LOWER)


def within(check: str, computed: float, lo: float, hi: float) -> GoldenRow:
    """lo <= computed <= hi as a centred absolute check."""
    return GoldenRow(check, 0.5 * (lo + hi), computed, 0.5 * (hi - lo))


def failures(rows: Iterable[GoldenRow]) -> List[GoldenRow]:
    return [row for row in rows if not row.passed]
