"""The coupled two-timescale recursion.

    x_{n+1} = x_n + a(n) [u_n + M1_{n+1}],   u_n in h(x_n, y_n)
    y_{n+1} = P(y_n + b(n) [v_n + M2_{n+1}]), v_n in g(x_n, y_n)

with pluggable set-valued maps, selection policies, schedules, noise, an
optional projection P on the slow iterate, boundedness monitoring, and full
trace logging. Runs are deterministic functions of (system, config).

run() dispatches over three arithmetically identical loops: a plain-float
loop for 1-D/1-D systems with closed-form selections, a small-vector loop
for systems with single-valued drift callables, and a generic loop that
evaluates set values and applies the selection policy at every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .noise import NoiseModel, NoiseStream
from .schedules import SchedulePair, validate_pair
from .setvalued import SetValuedMap, least_norm

LEAST_NORM = "least-norm"
RANDOM_VERTEX = "random-vertex"

COMPLETED = "completed"
DIVERGED = "diverged"


class InvalidScheduleError(ValueError):
    pass


class NonFiniteIterateError(ArithmeticError):
    """The recursion produced NaN or infinity; carries the step index."""

    def __init__(self, step: int):
        super().__init__(f"non-finite iterate at step {step}")
        self.step = step


@dataclass(frozen=True)
class CoupledSystem:
    """The pair (h, g) plus selection policy and optional slow projection.

    drift, when given, must return the least-norm selections of h and g as a
    (u, v) pair of vectors; scalar_drift is the same contract on plain floats
    for 1-D/1-D systems. Both exist so production-size runs avoid building
    polytope objects every step; consistency with the set values is a tested
    invariant, not an assumption.
    """

    h: SetValuedMap
    g: SetValuedMap
    dim_fast: int
    dim_slow: int
    selection_policy: str = LEAST_NORM
    y_projection: str | Callable[[np.ndarray], np.ndarray] | None = None
    drift: Callable[[np.ndarray, np.ndarray], tuple] | None = None
    scalar_drift: Callable[[float, float], tuple] | None = None
    name: str = ""

    def __post_init__(self) -> None:
        d, k = self.dim_fast, self.dim_slow
        if self.h.domain_dim != d + k or self.g.domain_dim != d + k:
            raise ValueError("map domains must equal dim_fast + dim_slow")
        if self.h.codomain_dim != d or self.g.codomain_dim != k:
            raise ValueError("map codomains inconsistent with (dim_fast, dim_slow)")
        if self.selection_policy not in (LEAST_NORM, RANDOM_VERTEX):
            raise ValueError(f"unknown selection policy {self.selection_policy!r}")
        if isinstance(self.y_projection, str) and self.y_projection != "nonneg":
            raise ValueError("string projections: only 'nonneg'")


@dataclass(frozen=True)
class RunConfig:
    schedules: SchedulePair
    noise_fast: NoiseModel
    noise_slow: NoiseModel
    seed_fast: int
    seed_slow: int
    x0: np.ndarray
    y0: np.ndarray
    steps: int
    divergence_bound: float = 1e6
    log_stride: int = 1
    allow_invalid_schedules: bool = False
    selection_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, float)))
        object.__setattr__(self, "y0", np.atleast_1d(np.asarray(self.y0, float)))
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.log_stride < 1:
            raise ValueError("log_stride must be >= 1")
        init_norm = float(np.linalg.norm(self.x0) + np.linalg.norm(self.y0))
        if not self.divergence_bound > init_norm:
            raise ValueError("divergence_bound must exceed the initial state norm")


@dataclass
class Trace:
    """Logged history of one run.

    Rows 0..L-1 are the strided logged steps; the last row is the final
    state, which has no selection or noise attached (u, v, m1, m2 align with
    n[:-1]).
    """

    n: np.ndarray
    t: np.ndarray
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    verdict: str
    diverged_step: int | None
    dim_fast: int
    dim_slow: int
    steps_run: int
    log_stride: int
    schedules: SchedulePair
    divergence_bound: float
    meta: dict = field(default_factory=dict)

    @property
    def final_x(self) -> np.ndarray:
        return self.x[-1]

    @property
    def final_y(self) -> np.ndarray:
        return self.y[-1]

    @property
    def is_dense(self) -> bool:
        return self.log_stride == 1

    def row_index_of(self, n: int) -> int:
        j = int(np.searchsorted(self.n, n))
        if j >= len(self.n) or self.n[j] != n:
            raise KeyError(f"step {n} is not logged")
        return j

    def to_csv(self, path) -> None:
        trace_to_csv(self, path)

    def to_json_dict(self) -> dict:
        return trace_to_json_dict(self)


@dataclass(frozen=True)
class StepResult:
    x_next: np.ndarray
    y_next: np.ndarray
    u: np.ndarray
    v: np.ndarray
    m1: np.ndarray
    m2: np.ndarray


def step(
    system: CoupledSystem,
    state: tuple,
    n: int,
    pair: SchedulePair,
    stream_fast: NoiseStream,
    stream_slow: NoiseStream,
    selection_rng=None,
) -> StepResult:
    """One update of the coupled recursion; selections and noise returned."""
    x = np.atleast_1d(np.asarray(state[0], dtype=float))
    y = np.atleast_1d(np.asarray(state[1], dtype=float))
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteIterateError(n)
    z = np.concatenate([x, y])
    u = system.h.select(z, system.selection_policy, selection_rng)
    v = system.g.select(z, system.selection_policy, selection_rng)
    m1 = stream_fast.sample(x, y)
    m2 = stream_slow.sample(x, y)
    a_n = pair.fast.value(n)
    b_n = pair.slow.value(n)
    x_next = x + a_n * (u + m1)
    y_next = y + b_n * (v + m2)
    y_next = _apply_projection(system.y_projection, y_next)
    if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(y_next))):
        raise NonFiniteIterateError(n + 1)
    return StepResult(x_next, y_next, u, v, m1, m2)


def _apply_projection(proj, y: np.ndarray) -> np.ndarray:
    if proj is None:
        return y
    if proj == "nonneg":
        return np.maximum(y, 0.0)
    return np.atleast_1d(np.asarray(proj(y), dtype=float))


class _TraceLog:
    """Preallocated strided logging shared by all run loops."""

    def __init__(self, steps: int, stride: int, d: int, k: int):
        cap = (steps + stride - 1) // stride + 1
        self.stride = stride
        self.n = np.zeros(cap + 1, dtype=np.int64)
        self.x = np.zeros((cap + 1, d))
        self.y = np.zeros((cap + 1, k))
        self.u = np.zeros((cap, d))
        self.v = np.zeros((cap, k))
        self.m1 = np.zeros((cap, d))
        self.m2 = np.zeros((cap, k))
        self.rows = 0

    def log_step(self, n, x, y, u, v, m1, m2):
        j = self.rows
        self.n[j] = n
        self.x[j] = x
        self.y[j] = y
        self.u[j] = u
        self.v[j] = v
        self.m1[j] = m1
        self.m2[j] = m2
        self.rows += 1

    def finish(self, n_final, x_final, y_final):
        j = self.rows
        self.n[j] = n_final
        self.x[j] = x_final
        self.y[j] = y_final
        self.rows += 1


def _pre_noise(model: NoiseModel, seed: int, steps: int):
    """Pregenerate the standard-normal block a stream would consume.

    Returns (block, mode, sigma): mode is 'zero' | 'iid' | 'scaled'; for iid
    the block is already multiplied by sigma, matching sample() arithmetic.
    """
    stream = NoiseStream(model, seed)
    if model.is_degenerate:
        return None, "zero", 0.0
    block = stream.standard_block(steps)
    if model.kind == "iid-gaussian":
        return model.sigma * block, "iid", model.sigma
    return block, "scaled", model.sigma


def run(system: CoupledSystem, config: RunConfig) -> Trace:
    """Iterate the recursion for config.steps or until the bound is crossed.

    Aborts with a 'diverged' verdict at the first state whose norm sum
    ||x_n|| + ||y_n|| exceeds config.divergence_bound. Requires a valid
    schedule pair unless allow_invalid_schedules is set (instability
    demonstrations need the override).
    """
    report = validate_pair(config.schedules)
    if not report.ok and not config.allow_invalid_schedules:
        raise InvalidScheduleError(
            f"schedule pair invalid: {', '.join(report.violated_conditions)}"
        )
    d, k = system.dim_fast, system.dim_slow
    if config.x0.size != d or config.y0.size != k:
        raise ValueError("initial state dimensions do not match the system")
    if config.noise_fast.dimension != d or config.noise_slow.dimension != k:
        raise ValueError("noise dimensions do not match the system")

    steps = config.steps
    a_arr = config.schedules.fast.values(0, steps)
    b_arr = config.schedules.slow.values(0, steps)
    xi1, mode1, sig1 = _pre_noise(config.noise_fast, config.seed_fast, steps)
    xi2, mode2, sig2 = _pre_noise(config.noise_slow, config.seed_slow, steps)
    log = _TraceLog(steps, config.log_stride, d, k)

    scalar_ok = (
        d == 1
        and k == 1
        and system.scalar_drift is not None
        and system.selection_policy == LEAST_NORM
        and not callable(system.y_projection)
    )
    vector_ok = (
        system.drift is not None and system.selection_policy == LEAST_NORM
    )
    if scalar_ok:
        runner = _run_scalar
    elif vector_ok:
        runner = _run_vector
    else:
        runner = _run_generic
    steps_run, diverged_step = runner(
        system, config, a_arr, b_arr, xi1, mode1, sig1, xi2, mode2, sig2, log
    )

    rows = log.rows
    verdict = COMPLETED if diverged_step is None else DIVERGED
    t_full = config.schedules.fast.clock_array(steps)
    s_full = config.schedules.slow.clock_array(steps)
    n_log = log.n[:rows]
    trace = Trace(
        n=n_log.copy(),
        t=t_full[n_log],
        s=s_full[n_log],
        x=log.x[:rows].copy(),
        y=log.y[:rows].copy(),
        u=log.u[: rows - 1].copy(),
        v=log.v[: rows - 1].copy(),
        m1=log.m1[: rows - 1].copy(),
        m2=log.m2[: rows - 1].copy(),
        verdict=verdict,
        diverged_step=diverged_step,
        dim_fast=d,
        dim_slow=k,
        steps_run=steps_run,
        log_stride=config.log_stride,
        schedules=config.schedules,
        divergence_bound=config.divergence_bound,
        meta={
            "system": system.name,
            "noise_fast": config.noise_fast.to_dict(),
            "noise_slow": config.noise_slow.to_dict(),
            "seed_fast": config.seed_fast,
            "seed_slow": config.seed_slow,
            "selection_policy": system.selection_policy,
            "steps": steps,
        },
    )
    return trace


def _run_scalar(system, config, a_arr, b_arr, xi1, mode1, sig1, xi2, mode2, sig2, log):
    # plain-float hot loop; arithmetic mirrors _run_vector exactly
    drift = system.scalar_drift
    nonneg = system.y_projection == "nonneg"
    x = float(config.x0[0])
    y = float(config.y0[0])
    bound = config.divergence_bound
    stride = config.log_stride
    a_l = a_arr.tolist()
    b_l = b_arr.tolist()
    z1 = xi1[:, 0].tolist() if xi1 is not None else None
    z2 = xi2[:, 0].tolist() if xi2 is not None else None
    steps = config.steps
    diverged_step = None
    n = 0
    for n in range(steps):
        u, v = drift(x, y)
        ax, ay = abs(x), abs(y)
        if mode1 == "zero":
            m1 = 0.0
        elif mode1 == "iid":
            m1 = z1[n]
        else:
            m1 = (sig1 * (1.0 + ax + ay)) * z1[n]
        if mode2 == "zero":
            m2 = 0.0
        elif mode2 == "iid":
            m2 = z2[n]
        else:
            m2 = (sig2 * (1.0 + ax + ay)) * z2[n]
        if n % stride == 0:
            log.log_step(n, x, y, u, v, m1, m2)
        x = x + a_l[n] * (u + m1)
        yn = y + b_l[n] * (v + m2)
        y = 0.0 if (nonneg and yn < 0.0) else yn
        joint = abs(x) + abs(y)
        if not joint <= bound:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise NonFiniteIterateError(n + 1)
            diverged_step = n + 1
            break
    steps_run = n + 1 if diverged_step is not None else steps
    log.finish(steps_run, x, y)
    return steps_run, diverged_step


def _run_vector(system, config, a_arr, b_arr, xi1, mode1, sig1, xi2, mode2, sig2, log):
    drift = system.drift
    proj = system.y_projection
    x = config.x0.astype(float).copy()
    y = config.y0.astype(float).copy()
    bound = config.divergence_bound
    # ||x||^2 + ||y||^2 <= bound^2 / 2 certifies ||x|| + ||y|| <= bound,
    # so the cheap quadratic screen never misses a crossing
    qthresh = 0.5 * bound * bound
    stride = config.log_stride
    a_l = a_arr.tolist()
    b_l = b_arr.tolist()
    steps = config.steps
    diverged_step = None
    dot = np.dot
    n = 0
    for n in range(steps):
        u, v = drift(x, y)
        if mode1 == "zero":
            m1 = 0.0
        elif mode1 == "iid":
            m1 = xi1[n]
        else:
            m1 = (sig1 * (1.0 + math.sqrt(dot(x, x)) + math.sqrt(dot(y, y)))) * xi1[n]
        if mode2 == "zero":
            m2 = 0.0
        elif mode2 == "iid":
            m2 = xi2[n]
        else:
            m2 = (sig2 * (1.0 + math.sqrt(dot(x, x)) + math.sqrt(dot(y, y)))) * xi2[n]
        if n % stride == 0:
            log.log_step(n, x, y, u, v, m1 if mode1 != "zero" else 0.0,
                         m2 if mode2 != "zero" else 0.0)
        x = x + a_l[n] * (u + m1)
        y = y + b_l[n] * (v + m2)
        if proj is not None:
            y = np.maximum(y, 0.0) if proj == "nonneg" else _apply_projection(proj, y)
        q = dot(x, x) + dot(y, y)
        if not q <= qthresh:
            joint = math.sqrt(dot(x, x)) + math.sqrt(dot(y, y))
            if not joint <= bound:
                if not math.isfinite(joint):
                    raise NonFiniteIterateError(n + 1)
                diverged_step = n + 1
                break
    steps_run = n + 1 if diverged_step is not None else steps
    log.finish(steps_run, x, y)
    return steps_run, diverged_step


def _run_generic(system, config, a_arr, b_arr, xi1, mode1, sig1, xi2, mode2, sig2, log):
    policy = system.selection_policy
    sel_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(config.selection_seed))
    )
    proj = system.y_projection
    x = config.x0.astype(float).copy()
    y = config.y0.astype(float).copy()
    bound = config.divergence_bound
    stride = config.log_stride
    steps = config.steps
    diverged_step = None
    n = 0
    for n in range(steps):
        z = np.concatenate([x, y])
        u = system.h.select(z, policy, sel_rng)
        v = system.g.select(z, policy, sel_rng)
        if mode1 == "zero":
            m1 = 0.0
        elif mode1 == "iid":
            m1 = xi1[n]
        else:
            m1 = (sig1 * (1.0 + np.linalg.norm(x) + np.linalg.norm(y))) * xi1[n]
        if mode2 == "zero":
            m2 = 0.0
        elif mode2 == "iid":
            m2 = xi2[n]
        else:
            m2 = (sig2 * (1.0 + np.linalg.norm(x) + np.linalg.norm(y))) * xi2[n]
        if n % stride == 0:
            log.log_step(n, x, y, u, v, m1 if mode1 != "zero" else 0.0,
                         m2 if mode2 != "zero" else 0.0)
        x = x + a_arr[n] * (u + m1)
        y = y + b_arr[n] * (v + m2)
        y = _apply_projection(proj, y)
        joint = float(np.linalg.norm(x) + np.linalg.norm(y))
        if not joint <= bound:
            if not math.isfinite(joint):
                raise NonFiniteIterateError(n + 1)
            diverged_step = n + 1
            break
    steps_run = n + 1 if diverged_step is not None else steps
    log.finish(steps_run, x, y)
    return steps_run, diverged_step


# ---------------------------------------------------------------------------
# stability monitor and trace export
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    sup_norm: float
    running_sup: np.ndarray  # over logged rows
    verdict: str
    crossed_step: int | None


def monitor_stability(trace: Trace) -> StabilityReport:
    """Running supremum of ||x_n|| + ||y_n|| over the logged rows.

    With dense logging this is the exact path supremum; the run itself
    checks the bound at every step regardless of the stride.
    """
    norms = np.linalg.norm(trace.x, axis=1) + np.linalg.norm(trace.y, axis=1)
    running = np.maximum.accumulate(norms)
    return StabilityReport(
        sup_norm=float(running[-1]),
        running_sup=running,
        verdict=trace.verdict,
        crossed_step=trace.diverged_step,
    )


def trace_to_csv(trace: Trace, path) -> None:
    """Schema: n,t,s,x_*,y_*,ux_*,vy_*,verdict. Final row has empty u/v."""
    d, k = trace.dim_fast, trace.dim_slow
    cols = (
        ["n", "t", "s"]
        + [f"x_{i}" for i in range(d)]
        + [f"y_{i}" for i in range(k)]
        + [f"ux_{i}" for i in range(d)]
        + [f"vy_{i}" for i in range(k)]
        + ["verdict"]
    )
    lines = [",".join(cols)]
    rows = len(trace.n)
    for j in range(rows):
        cells = [str(int(trace.n[j])), repr(float(trace.t[j])), repr(float(trace.s[j]))]
        cells += [repr(float(val)) for val in trace.x[j]]
        cells += [repr(float(val)) for val in trace.y[j]]
        if j < rows - 1:
            cells += [repr(float(val)) for val in trace.u[j]]
            cells += [repr(float(val)) for val in trace.v[j]]
        else:
            cells += [""] * (d + k)
        cells.append(trace.verdict)
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def trace_to_json_dict(trace: Trace) -> dict:
    return {
        "meta": {
            "dim_fast": trace.dim_fast,
            "dim_slow": trace.dim_slow,
            "verdict": trace.verdict,
            "diverged_step": trace.diverged_step,
            "steps_run": trace.steps_run,
            "log_stride": trace.log_stride,
            "divergence_bound": trace.divergence_bound,
            "schedules": {
                "fast": trace.schedules.fast.describe(),
                "slow": trace.schedules.slow.describe(),
            },
            **trace.meta,
        },
        "rows": {
            "n": trace.n.tolist(),
            "t": trace.t.tolist(),
            "s": trace.s.tolist(),
            "x": trace.x.tolist(),
            "y": trace.y.tolist(),
            "u": trace.u.tolist(),
            "v": trace.v.tolist(),
            "m1": trace.m1.tolist(),
            "m2": trace.m2.tolist(),
        },
    }


def trace_from_json_dict(payload: dict) -> Trace:
    from .schedules import SchedulePair, schedule_from_dict

    meta = payload["meta"]
    rows = payload["rows"]
    pair = SchedulePair(
        fast=schedule_from_dict(meta["schedules"]["fast"]),
        slow=schedule_from_dict(meta["schedules"]["slow"]),
    )
    extra = {
        key: meta[key]
        for key in meta
        if key
        not in {
            "dim_fast", "dim_slow", "verdict", "diverged_step", "steps_run",
            "log_stride", "divergence_bound", "schedules",
        }
    }
    return Trace(
        n=np.asarray(rows["n"], dtype=np.int64),
        t=np.asarray(rows["t"], dtype=float),
        s=np.asarray(rows["s"], dtype=float),
        x=np.asarray(rows["x"], dtype=float),
        y=np.asarray(rows["y"], dtype=float),
        u=np.asarray(rows["u"], dtype=float),
        v=np.asarray(rows["v"], dtype=float),
        m1=np.asarray(rows["m1"], dtype=float),
        m2=np.asarray(rows["m2"], dtype=float),
        verdict=meta["verdict"],
        diverged_step=meta["diverged_step"],
        dim_fast=meta["dim_fast"],
        dim_slow=meta["dim_slow"],
        steps_run=meta["steps_run"],
        log_stride=meta["log_stride"],
        schedules=pair,
        divergence_bound=meta["divergence_bound"],
        meta=extra,
    )
