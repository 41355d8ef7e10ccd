"""Compact convex sets as vertex-list polytopes, set-valued maps, and the
sampled regularity checks (pointwise growth bound, upper semi-continuity).

Every set value handled here is the convex hull of finitely many vertices,
which keeps support functions and Hausdorff distances exact and makes
membership a projection problem.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

MEMBERSHIP_TOL = 1e-8  # real-arithmetic containment tolerance used throughout


class DimensionMismatchError(ValueError):
    pass


class NonCompactSetError(ValueError):
    """An operation that needs compactness was handed an affine set."""


class SelectionMembershipError(ValueError):
    """A claimed selection does not lie in the corresponding set value."""


# ---------------------------------------------------------------------------
# set types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConvexCompactSet:
    """Convex hull of a non-empty finite vertex list; rows are vertices."""

    vertices: np.ndarray

    def __post_init__(self) -> None:
        v = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError("vertices must form a non-empty (m, dim) array")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)

    @property
    def dimension(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def is_singleton(self) -> bool:
        return self.n_vertices == 1

    @classmethod
    def singleton(cls, point) -> "ConvexCompactSet":
        return cls(np.atleast_1d(np.asarray(point, dtype=float))[None, :])

    @classmethod
    def interval(cls, lo: float, hi: float) -> "ConvexCompactSet":
        if hi < lo:
            raise ValueError("interval needs lo <= hi")
        return cls(np.array([[float(lo)], [float(hi)]]))

    @classmethod
    def box(cls, lows, highs) -> "ConvexCompactSet":
        lows = np.atleast_1d(np.asarray(lows, dtype=float))
        highs = np.atleast_1d(np.asarray(highs, dtype=float))
        if lows.shape != highs.shape or np.any(highs < lows):
            raise ValueError("box needs matching lows <= highs")
        d = lows.size
        if d > 12:
            raise ValueError("box with more than 2^12 corners; use another rep")
        corners = np.stack(
            np.meshgrid(*[[lows[j], highs[j]] for j in range(d)], indexing="ij"),
            axis=-1,
        ).reshape(-1, d)
        return cls(corners)

    def bounds_1d(self) -> tuple[float, float]:
        if self.dimension != 1:
            raise DimensionMismatchError("bounds_1d needs a 1-D set")
        col = self.vertices[:, 0]
        return float(col.min()), float(col.max())

    def max_vertex_norm(self) -> float:
        return float(np.sqrt((self.vertices**2).sum(axis=1)).max())

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "vertices": self.vertices.tolist()}


@dataclass(frozen=True, eq=False)
class AffineSetRep:
    """anchor + span(basis); empty basis means a single point.

    Used where a minimum set is an unbounded affine flat. Operations that
    need compactness refuse this type.
    """

    anchor: np.ndarray
    basis: np.ndarray  # (r, dim) orthonormal rows, possibly r = 0

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.anchor, dtype=float))
        b = np.asarray(self.basis, dtype=float)
        if b.size == 0:
            b = np.zeros((0, a.size))
        b = np.atleast_2d(b)
        if b.shape[1] != a.size:
            raise DimensionMismatchError("basis and anchor dimensions differ")
        if b.shape[0] > 0:
            gram = b @ b.T
            if not np.allclose(gram, np.eye(b.shape[0]), atol=1e-10):
                raise ValueError("basis rows must be orthonormal")
        a = a.copy()
        a.flags.writeable = False
        b = b.copy()
        b.flags.writeable = False
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "basis", b)

    @property
    def dimension(self) -> int:
        return self.anchor.size

    @property
    def is_point(self) -> bool:
        return self.basis.shape[0] == 0

    def distance(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.size != self.dimension:
            raise DimensionMismatchError("point dimension mismatch")
        r = x - self.anchor
        if self.basis.shape[0]:
            r = r - self.basis.T @ (self.basis @ r)
        return float(np.linalg.norm(r))


# ---------------------------------------------------------------------------
# projection machinery (exact fast paths + away-step Frank-Wolfe fallback)
# ---------------------------------------------------------------------------


def _as_box(v: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    """Detect a full corner set of an axis-aligned box."""
    m, d = v.shape
    if d > 16 or m != 2**d:
        return None
    lows, highs = v.min(axis=0), v.max(axis=0)
    if np.any(lows == highs):
        return None
    onbounds = (v == lows) | (v == highs)
    if not onbounds.all():
        return None
    if np.unique(v, axis=0).shape[0] != 2**d:
        return None
    return lows, highs


def _project_segment(x: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = q - p
    dd = float(d @ d)
    if dd == 0.0:
        return p.copy()
    s = float((x - p) @ d) / dd
    s = min(max(s, 0.0), 1.0)
    return p + s * d


def _project_fw(x: np.ndarray, v: np.ndarray, max_iter: int = 4000) -> np.ndarray:
    """Min ||z - x|| over hull(v) by away-step Frank-Wolfe plus a face polish.

    Linear convergence on polytopes; the polish solves the affine projection
    on the identified active face exactly, so results are accurate well past
    the 1e-10 contract.
    """
    m = v.shape[0]
    scale2 = max(1.0, float((v * v).sum(axis=1).max()), float(x @ x))
    w = np.zeros(m)
    i0 = int(np.argmin(((v - x) ** 2).sum(axis=1)))
    w[i0] = 1.0
    z = v[i0].copy()
    for _ in range(max_iter):
        grad = z - x
        scores = v @ grad
        i_fw = int(np.argmin(scores))
        gap = float(z @ grad) - float(scores[i_fw])
        if gap <= 1e-15 * scale2:
            break
        active = np.flatnonzero(w > 1e-15)
        i_aw = int(active[np.argmax(scores[active])])
        d_fw = v[i_fw] - z
        d_aw = z - v[i_aw]
        if -(grad @ d_fw) >= -(grad @ d_aw):
            d, gamma_max, away = d_fw, 1.0, None
        else:
            wa = w[i_aw]
            if wa >= 1.0 - 1e-15:
                d, gamma_max, away = d_fw, 1.0, None
            else:
                d, gamma_max, away = d_aw, wa / (1.0 - wa), i_aw
        dd = float(d @ d)
        if dd <= 0.0:
            break
        gamma = min(max(-(float(grad @ d)) / dd, 0.0), gamma_max)
        if gamma <= 0.0:
            break
        if away is None:
            w *= 1.0 - gamma
            w[i_fw] += gamma
        else:
            w *= 1.0 + gamma
            w[away] -= gamma
        w[w < 1e-17] = 0.0
        w /= w.sum()
        z = w @ v
    # polish: exact affine projection on the active face, kept when convex
    act = np.flatnonzero(w > 1e-12)
    if act.size > 1:
        va = v[act]
        base = va[0]
        B = (va[1:] - base).T
        coef, *_ = np.linalg.lstsq(B, x - base, rcond=None)
        lam = np.concatenate([[1.0 - coef.sum()], coef])
        if np.all(lam >= -1e-10):
            lam = np.clip(lam, 0.0, None)
            ssum = lam.sum()
            if ssum > 0:
                z2 = (lam / ssum) @ va
                if (x - z2) @ (x - z2) <= (x - z) @ (x - z) + 1e-12 * scale2:
                    z = z2
    return z


def project(x, c: ConvexCompactSet) -> np.ndarray:
    """Euclidean projection of x onto the hull."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != c.dimension:
        raise DimensionMismatchError(
            f"point has dimension {x.size}, set has {c.dimension}"
        )
    v = c.vertices
    if v.shape[0] == 1:
        return v[0].copy()
    if c.dimension == 1:
        lo, hi = c.bounds_1d()
        return np.array([min(max(x[0], lo), hi)])
    if v.shape[0] == 2:
        return _project_segment(x, v[0], v[1])
    box = _as_box(v)
    if box is not None:
        return np.clip(x, box[0], box[1])
    uniq = np.unique(v, axis=0)
    if uniq.shape[0] == 1:
        return uniq[0].copy()
    return _project_fw(x, uniq)


# ---------------------------------------------------------------------------
# spec operations
# ---------------------------------------------------------------------------


def support(c: ConvexCompactSet, direction) -> float:
    """max over the hull of <., direction>, attained at a vertex."""
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    if direction.size != c.dimension:
        raise DimensionMismatchError("direction dimension mismatch")
    return float((c.vertices @ direction).max())


def least_norm(c: ConvexCompactSet) -> np.ndarray:
    """Minimum-norm element of the hull (the default measurable selection)."""
    return project(np.zeros(c.dimension), c)


def distance(x, c: ConvexCompactSet) -> float:
    """d(x, C) = inf over the hull of ||x - y||; zero inside."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = project(x, c)
    return float(np.linalg.norm(x - p))


def hausdorff(c1: ConvexCompactSet, c2: ConvexCompactSet) -> float:
    """Max of the two directed vertex-to-hull distances; exact for polytopes."""
    if c1.dimension != c2.dimension:
        raise DimensionMismatchError("sets have different dimensions")
    if c1.dimension == 1:
        lo1, hi1 = c1.bounds_1d()
        lo2, hi2 = c2.bounds_1d()
        return max(abs(lo1 - lo2), abs(hi1 - hi2))
    d12 = max(distance(v, c2) for v in c1.vertices)
    d21 = max(distance(v, c1) for v in c2.vertices)
    return max(d12, d21)


def convex_hull_union(sets: Sequence[ConvexCompactSet]) -> ConvexCompactSet:
    """Hull of the union; closure is automatic for finitely many polytopes."""
    if len(sets) == 0:
        raise ValueError("convex_hull_union needs at least one set")
    dim = sets[0].dimension
    for s in sets:
        if s.dimension != dim:
            raise DimensionMismatchError("sets have different dimensions")
    stacked = np.vstack([s.vertices for s in sets])
    if dim == 1:
        col = stacked[:, 0]
        return ConvexCompactSet.interval(col.min(), col.max())
    return ConvexCompactSet(np.unique(stacked, axis=0))


# ---------------------------------------------------------------------------
# set-valued maps and checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SetValuedMap:
    """z -> compact convex subset of R^codomain_dim.

    growth_constant is the claimed K of the pointwise bound
    sup_{w in h(z)} ||w|| < K (1 + ||z||); it is checked, never trusted.
    least_norm_selection, when provided, must agree with least_norm of the
    evaluated set and exists so hot loops can skip building set objects.
    """

    domain_dim: int
    codomain_dim: int
    evaluator: Callable[[np.ndarray], ConvexCompactSet]
    growth_constant: float = 1.0
    least_norm_selection: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def evaluate(self, z) -> ConvexCompactSet:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.size != self.domain_dim:
            raise DimensionMismatchError(
                f"map domain is {self.domain_dim}-dimensional, got {z.size}"
            )
        out = self.evaluator(z)
        if out.dimension != self.codomain_dim:
            raise DimensionMismatchError(
                f"evaluator returned dimension {out.dimension}, "
                f"declared {self.codomain_dim}"
            )
        return out

    def select(self, z, policy: str = "least-norm", rng=None) -> np.ndarray:
        if policy == "least-norm" and self.least_norm_selection is not None:
            return np.atleast_1d(
                np.asarray(self.least_norm_selection(np.asarray(z, dtype=float)),
                           dtype=float)
            )
        c = self.evaluate(z)
        if policy == "least-norm":
            return least_norm(c)
        if policy == "random-vertex":
            if rng is None:
                raise ValueError("random-vertex selection needs an rng")
            return c.vertices[int(rng.integers(c.n_vertices))].copy()
        raise ValueError(f"unknown selection policy {policy!r}")


@dataclass(frozen=True)
class BoundViolation:
    point: np.ndarray
    value_norm: float
    bound: float


@dataclass(frozen=True)
class PointwiseBoundReport:
    passed: bool
    checked: int
    claimed_constant: float
    violations: tuple[BoundViolation, ...]


def check_pointwise_bound(
    svmap: SetValuedMap, samples: Sequence, K: float
) -> PointwiseBoundReport:
    """Check sup_{w in map(z)} ||w|| < K (1 + ||z||) on every sample."""
    if K <= 0:
        raise ValueError("K must be positive")
    violations = []
    for z in samples:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        c = svmap.evaluate(z)
        vn = c.max_vertex_norm()
        bound = K * (1.0 + float(np.linalg.norm(z)))
        if vn >= bound:
            violations.append(BoundViolation(z, vn, bound))
    return PointwiseBoundReport(
        passed=not violations,
        checked=len(samples),
        claimed_constant=K,
        violations=tuple(violations),
    )


@dataclass(frozen=True)
class UscSequence:
    """A convergent argument sequence with a selection at every term."""

    points: np.ndarray      # (n, domain_dim), converging to `limit`
    limit: np.ndarray       # declared limit point
    selections: np.ndarray  # (n, codomain_dim), selections[i] in map(points[i])


@dataclass(frozen=True)
class UscRecord:
    tail_max_distance: float
    tail_mean_distance: float
    passed: bool


@dataclass(frozen=True)
class UscReport:
    """Sampled necessary-condition check; a pass is evidence, not a proof."""

    passed: bool
    records: tuple[UscRecord, ...]


def check_usc(
    svmap: SetValuedMap,
    sequences: Sequence[UscSequence],
    membership_tol: float = MEMBERSHIP_TOL,
    limit_tol: float = 1e-6,
    tail_fraction: float = 0.25,
) -> UscReport:
    """Every selection cluster point must land in the map value at the limit.

    Numerically: over the tail of each sequence, both each selection and the
    tail average must be within limit_tol of map(limit). Selections that are
    not in their own set value (within membership_tol) are input corruption.
    """
    records = []
    for seq in sequences:
        pts = np.atleast_2d(np.asarray(seq.points, dtype=float))
        sels = np.atleast_2d(np.asarray(seq.selections, dtype=float))
        if len(pts) != len(sels) or len(pts) == 0:
            raise ValueError("points and selections must align and be non-empty")
        for i in range(len(pts)):
            err = distance(sels[i], svmap.evaluate(pts[i]))
            if err > membership_tol:
                raise SelectionMembershipError(
                    f"selection {i} is {err:.3e} away from its set value"
                )
        target = svmap.evaluate(seq.limit)
        tail_len = max(1, int(np.ceil(tail_fraction * len(pts))))
        tail = sels[-tail_len:]
        dists = [distance(w, target) for w in tail]
        d_max = float(max(dists))
        d_mean = distance(tail.mean(axis=0), target)
        records.append(
            UscRecord(
                tail_max_distance=d_max,
                tail_mean_distance=d_mean,
                passed=d_max <= limit_tol and d_mean <= limit_tol,
            )
        )
    return UscReport(passed=all(r.passed for r in records), records=tuple(records))
