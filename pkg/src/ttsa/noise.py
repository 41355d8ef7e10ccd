"""Martingale-difference noise: models, reproducible streams, and the
weighted-sum convergence diagnostic.

All models have conditional mean zero given the past. Streams are
counter-based (Philox) so a (model, seed) pair pins the sample sequence
bit for bit, independent of how calls interleave across streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .schedules import StepSchedule

ZERO = "zero"
IID_GAUSSIAN = "iid-gaussian"
STATE_SCALED_GAUSSIAN = "state-scaled-gaussian"
KINDS = (ZERO, IID_GAUSSIAN, STATE_SCALED_GAUSSIAN)


@dataclass(frozen=True)
class NoiseModel:
    kind: str
    sigma: float
    dimension: int

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0 or not np.isfinite(self.sigma):
            raise ValueError("sigma must be a non-negative real")
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")

    @property
    def is_degenerate(self) -> bool:
        return self.kind == ZERO or self.sigma == 0.0

    def second_moment_constant(self) -> float:
        """Documented K with E[||M||^2 | state] <= K (1 + (||x||+||y||)^2).

        zero: 0. iid: dimension * sigma^2. state-scaled draws
        sigma (1 + ||x|| + ||y||) xi per coordinate, and (1+r)^2 <= 2(1+r^2)
        gives K = 2 * dimension * sigma^2.
        """
        if self.is_degenerate:
            return 0.0
        if self.kind == IID_GAUSSIAN:
            return self.dimension * self.sigma**2
        return 2.0 * self.dimension * self.sigma**2

    def scale_factor(self, x=None, y=None) -> float:
        """Multiplier applied to a standard normal draw at the given state."""
        if self.is_degenerate:
            return 0.0
        if self.kind == IID_GAUSSIAN:
            return self.sigma
        nx = 0.0 if x is None else float(np.linalg.norm(np.atleast_1d(x)))
        ny = 0.0 if y is None else float(np.linalg.norm(np.atleast_1d(y)))
        return self.sigma * (1.0 + nx + ny)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "dimension": self.dimension}


class NoiseStream:
    """Single-owner sampling stream; replay from an equal seed is bit-identical.

    The counter records how many sample() calls (equivalently, vector draws)
    have been consumed. Batch draws through standard_block() advance the
    counter exactly as the same number of sample() calls would.
    """

    def __init__(self, model: NoiseModel, seed: int):
        self.model = model
        self.seed = int(seed)
        self.counter = 0
        self._rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed))
        )

    def reset(self) -> None:
        self.counter = 0
        self._rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed))
        )

    def standard_block(self, count: int) -> np.ndarray:
        """(count, dimension) of standard normals; degenerate models draw none."""
        self.counter += count
        if self.model.is_degenerate:
            return np.zeros((count, self.model.dimension))
        return self._rng.standard_normal((count, self.model.dimension))

    def sample(self, x=None, y=None) -> np.ndarray:
        """One noise vector at the given state; conditional mean zero."""
        xi = self.standard_block(1)[0]
        if self.model.is_degenerate:
            return xi  # already zeros
        return self.model.scale_factor(x, y) * xi


@dataclass(frozen=True)
class WeightedSumDiagnostic:
    """Cauchy statistics of zeta_n = sum_{m<n} a(m) M_{m+1}.

    The fluctuation of a window is the Euclidean norm of the vector of
    per-coordinate ranges (exact diameter in one dimension). Windows are the
    two halves of the step-size clock t(n), not of the raw index range: on
    the clock every unit of algorithmic time weighs the same, which is what
    makes a square-summable tail visibly quieter than a divergent one.
    """

    n_terms: int
    zeta: np.ndarray            # (n+1, dim) partial sums, zeta[0] = 0
    split_index: int            # first partial-sum index of the late window
    fluctuation_first: float
    fluctuation_last: float
    ratio: float
    ratio_threshold: float
    consistent: bool

    @property
    def verdict(self) -> str:
        return "consistent with convergence" if self.consistent else "no decision"


def _window_fluctuation(zeta: np.ndarray) -> float:
    spread = zeta.max(axis=0) - zeta.min(axis=0)
    return float(np.linalg.norm(spread))


def weighted_sum_diagnostic(
    noise_trace: Sequence | np.ndarray,
    schedule: StepSchedule,
    ratio_threshold: float = 0.5,
) -> WeightedSumDiagnostic:
    """Partial sums of step-weighted noise and a fluctuation-halving verdict.

    "Consistent with convergence" means the late-clock-half fluctuation is at
    most ratio_threshold times the early-half fluctuation. A statistical
    statement about one finite path, never a proof.
    """
    m = np.atleast_2d(np.asarray(noise_trace, dtype=float))
    if m.shape[0] == 1 and m.shape[1] > 1 and m.ndim == 2:
        # a flat list of scalars arrived as one row
        m = m.T
    n = m.shape[0]
    if n == 0:
        raise ValueError("noise trace must be non-empty")
    a = schedule.values(0, n)
    zeta = np.vstack([np.zeros((1, m.shape[1])), np.cumsum(a[:, None] * m, axis=0)])
    t = schedule.clock_array(n)
    split = int(np.searchsorted(t, t[-1] / 2.0))
    split = min(max(split, 1), n)
    f_first = _window_fluctuation(zeta[: split + 1])
    f_last = _window_fluctuation(zeta[split:])
    ratio = f_last / f_first if f_first > 0 else (0.0 if f_last == 0 else np.inf)
    return WeightedSumDiagnostic(
        n_terms=n,
        zeta=zeta,
        split_index=split,
        fluctuation_first=f_first,
        fluctuation_last=f_last,
        ratio=float(ratio),
        ratio_threshold=ratio_threshold,
        consistent=bool(f_last <= ratio_threshold * f_first),
    )
