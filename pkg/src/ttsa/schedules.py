"""Step-size schedules and their summability validation.

A two-timescale run consumes a pair of positive step sequences (fast, slow).
Power-law families get exact validation through p-series facts; finite
table schedules only admit a labeled numeric heuristic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

POWER_LAW = "power-law"
TABLE = "table"

# condition tags reported by validate_pair
SUM_DIVERGENCE_A = "sum-divergence-a"
SUM_DIVERGENCE_B = "sum-divergence-b"
SQUARE_SUMMABILITY_A = "square-summability-a"
SQUARE_SUMMABILITY_B = "square-summability-b"
RATIO_TO_ZERO = "ratio-to-zero"
POSITIVITY = "positivity"
NORMALIZATION = "normalization"


class ScheduleError(ValueError):
    """Invalid schedule construction or out-of-range evaluation."""


@dataclass(frozen=True)
class StepSchedule:
    """A deterministic positive step sequence a(n) with sup_n a(n) <= 1.

    Power-law schedules emit a(n) = gain / (n + offset + 1)**exponent for
    every n >= 0. Table schedules emit the stored finite prefix and refuse
    evaluation past its end.
    """

    family: str
    gain: float = 1.0
    exponent: float = 0.0
    offset: int = 0
    table: tuple[float, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.family not in (POWER_LAW, TABLE):
            raise ScheduleError(f"unknown schedule family {self.family!r}")
        if self.family == POWER_LAW:
            if not (self.gain > 0.0 and np.isfinite(self.gain)):
                raise ScheduleError("gain must be a positive finite real")
            if self.offset < 0 or int(self.offset) != self.offset:
                raise ScheduleError("offset must be a non-negative integer")
            if self.exponent < 0.0:
                raise ScheduleError(
                    "negative exponent makes the sequence unbounded; "
                    "sup_n a(n) <= 1 cannot hold"
                )
            a0 = self.gain / (self.offset + 1.0) ** self.exponent
            if a0 > 1.0:
                raise ScheduleError(
                    f"a(0) = {a0:g} violates the normalization sup_n a(n) <= 1"
                )
        else:
            if self.table is None or len(self.table) == 0:
                raise ScheduleError("table schedule needs a non-empty value list")
            vals = np.asarray(self.table, dtype=float)
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
                raise ScheduleError("table values must be positive finite reals")
            if vals.max() > 1.0:
                raise ScheduleError("table values violate sup_n a(n) <= 1")

    # ---- evaluation ------------------------------------------------------

    @property
    def n_available(self) -> float:
        """Number of defined terms (inf for power-law)."""
        return float("inf") if self.family == POWER_LAW else float(len(self.table))

    def value(self, n: int) -> float:
        if n < 0:
            raise ScheduleError("n must be non-negative")
        if self.family == POWER_LAW:
            return self.gain / (n + self.offset + 1.0) ** self.exponent
        if n >= len(self.table):
            raise ScheduleError(
                f"table schedule has {len(self.table)} terms, index {n} requested"
            )
        return self.table[n]

    def values(self, n0: int, n1: int) -> np.ndarray:
        """Vector of a(n) for n in [n0, n1)."""
        if n0 < 0 or n1 < n0:
            raise ScheduleError("bad index range")
        if self.family == POWER_LAW:
            idx = np.arange(n0, n1, dtype=float)
            return self.gain / (idx + self.offset + 1.0) ** self.exponent
        if n1 > len(self.table):
            raise ScheduleError(
                f"table schedule has {len(self.table)} terms, {n1} requested"
            )
        return np.asarray(self.table[n0:n1], dtype=float)

    def clock_array(self, n: int) -> np.ndarray:
        """Partial-sum clock [t(0), ..., t(n)] with t(0) = 0, cached."""
        cum = self._cache.get("cum")
        if cum is None or len(cum) < n + 1:
            grow = max(n + 1, 2 * len(cum) if cum is not None else 1024)
            if self.family == TABLE:
                grow = min(grow, len(self.table) + 1)
                if n + 1 > grow:
                    raise ScheduleError("clock requested past table end")
            cum = np.concatenate([[0.0], np.cumsum(self.values(0, grow - 1))])
            self._cache["cum"] = cum
        return cum[: n + 1]

    def clock(self, n: int) -> float:
        """t(n) = sum of a(i) for i < n; t(0) = 0."""
        return float(self.clock_array(n)[n])

    def describe(self) -> dict:
        """JSON-ready description used in configs and trace metadata."""
        if self.family == POWER_LAW:
            return {
                "family": self.family,
                "gain": self.gain,
                "exponent": self.exponent,
                "offset": self.offset,
            }
        return {"family": self.family, "values": list(self.table)}


def make_power_schedule(gain: float, exponent: float, offset: int = 0) -> StepSchedule:
    """a(n) = gain / (n + offset + 1)**exponent, rejected when a(0) > 1."""
    return StepSchedule(family=POWER_LAW, gain=gain, exponent=exponent, offset=offset)


def make_table_schedule(values: Sequence[float]) -> StepSchedule:
    return StepSchedule(family=TABLE, table=tuple(float(v) for v in values))


def schedule_from_dict(spec: dict) -> StepSchedule:
    family = spec.get("family")
    if family == POWER_LAW:
        allowed = {"family", "gain", "exponent", "offset"}
        unknown = set(spec) - allowed
        if unknown:
            raise ScheduleError(f"unknown schedule keys {sorted(unknown)}")
        return make_power_schedule(
            float(spec.get("gain", 1.0)),
            float(spec.get("exponent", 0.0)),
            int(spec.get("offset", 0)),
        )
    if family == TABLE:
        unknown = set(spec) - {"family", "values"}
        if unknown:
            raise ScheduleError(f"unknown schedule keys {sorted(unknown)}")
        return make_table_schedule(spec["values"])
    raise ScheduleError(f"unknown schedule family {family!r}")


@dataclass(frozen=True)
class SchedulePair:
    """fast = a(n), slow = b(n)."""

    fast: StepSchedule
    slow: StepSchedule


def default_pair() -> SchedulePair:
    """a(n) = (n+1)^-0.6, b(n) = (n+1)^-0.9; analytically valid."""
    return SchedulePair(
        fast=make_power_schedule(1.0, 0.6),
        slow=make_power_schedule(1.0, 0.9),
    )


@dataclass(frozen=True)
class ValidationReport:
    verdict: str  # "valid" | "invalid"
    violated_conditions: tuple[str, ...]
    method: str  # "analytic" | "numeric-heuristic"

    @property
    def ok(self) -> bool:
        return self.verdict == "valid"


def _power_violations(fast: StepSchedule, slow: StepSchedule) -> list[str]:
    # p-series: sum n^-p diverges iff p <= 1; sum n^-2p converges iff p > 1/2;
    # b/a -> 0 iff the slow exponent strictly exceeds the fast one.
    out = []
    if fast.exponent > 1.0:
        out.append(SUM_DIVERGENCE_A)
    if slow.exponent > 1.0:
        out.append(SUM_DIVERGENCE_B)
    if 2.0 * fast.exponent <= 1.0:
        out.append(SQUARE_SUMMABILITY_A)
    if 2.0 * slow.exponent <= 1.0:
        out.append(SQUARE_SUMMABILITY_B)
    if slow.exponent <= fast.exponent:
        out.append(RATIO_TO_ZERO)
    return out


def _heuristic_violations(fast: StepSchedule, slow: StepSchedule) -> list[str]:
    # Finite-prefix trends only; summability of a table is undecidable.
    horizon = int(min(fast.n_available, slow.n_available, 10**6))
    a = fast.values(0, horizon)
    b = slow.values(0, horizon)
    out = []
    if np.any(a <= 0.0) or np.any(b <= 0.0):
        out.append(POSITIVITY)
    if a.max() > 1.0 or b.max() > 1.0:
        out.append(NORMALIZATION)
    half = horizon // 2
    if half >= 8:
        for tag_div, tag_sq, v in (
            (SUM_DIVERGENCE_A, SQUARE_SUMMABILITY_A, a),
            (SUM_DIVERGENCE_B, SQUARE_SUMMABILITY_B, b),
        ):
            total = v.sum()
            if v[half:].sum() < 0.01 * total:
                out.append(tag_div)  # partial sums look plateaued
            sq = v * v
            if sq[half:].sum() > 0.05 * sq.sum():
                out.append(tag_sq)  # squared tail not shrinking
        ratio = b / a
        head = np.median(ratio[: max(horizon // 10, 1)])
        tail = np.median(ratio[-max(horizon // 10, 1):])
        if not (tail <= 0.5 * head):
            out.append(RATIO_TO_ZERO)
    return out


def validate_pair(pair: SchedulePair) -> ValidationReport:
    """Check sum divergence, square summability, and b(n)/a(n) -> 0.

    Power-law/power-law pairs are decided exactly; anything involving a
    table is judged by finite-prefix trends and labeled numeric-heuristic.
    """
    if pair.fast.family == POWER_LAW and pair.slow.family == POWER_LAW:
        violated = _power_violations(pair.fast, pair.slow)
        method = "analytic"
    else:
        violated = _heuristic_violations(pair.fast, pair.slow)
        method = "numeric-heuristic"
    verdict = "valid" if not violated else "invalid"
    return ValidationReport(verdict, tuple(violated), method)


def clock(schedule: StepSchedule, n: int) -> float:
    """Partial sum of the first n steps; strictly increasing in n."""
    return schedule.clock(n)
