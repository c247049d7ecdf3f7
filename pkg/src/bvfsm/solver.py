"""Value-function-based sequential minimization solver for bi-level problems.

Each outer stage freezes the current penalty/barrier parameters, approximates
the regularized LL value function by a short gradient descent (the z-solve),
then descends (or ascends, pessimistic mode) a penalized single-level
objective in y, and finally takes one projected gradient step in x using the
value-function chain rule.  Modified-barrier shifts are frozen per stage and
padded just enough to keep the incoming iterate strictly inside the wall;
descent steps that would cross a wall or increase the frozen stage objective
are halved a bounded number of times.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .auxfun import (
    AuxiliaryFunction,
    BarrierWall,
    DynamicShift,
    ScheduleState,
    StaticShift,
    TruncatedLogBarrier,
    _rho,
    _rho_deriv,
    schedule_step,
)
from .core import (
    BilevelProblem,
    InvalidParameter,
    Mode,
    NonFiniteEvaluation,
    project,
)


class SolveTimeout(RuntimeError):
    """Wall-clock budget exceeded; carries the partial trace."""

    def __init__(self, message: str, trace: "SolveTrace"):
        super().__init__(message)
        self.trace = trace


class SolveError(RuntimeError):
    """Inner-solve failure wrapped with (k, l) context and the partial trace."""

    def __init__(self, message: str, k: int, l: int, trace: "SolveTrace"):
        super().__init__(f"{message} (stage k={k}, ul step l={l})")
        self.k = k
        self.l = l
        self.trace = trace


def _default_aux_f() -> AuxiliaryFunction:
    return AuxiliaryFunction(TruncatedLogBarrier(1.0), modified=True)


def _default_aux_B() -> AuxiliaryFunction:
    return AuxiliaryFunction(TruncatedLogBarrier(1.0), modified=False)


@dataclass(frozen=True)
class SolverConfig:
    """Iteration budgets, step sizes, schedule seed and auxiliary functions.

    Defaults follow the reference benchmark settings: alpha = step_z = step_y
    = 0.01, T_z = 50, T_y = 25, L = 1, geometric schedule decay 1/1.01.
    """

    K: int = 3000
    L: int = 1
    T_z: int = 50
    T_y: int = 25
    alpha: float = 0.01
    step_z: float = 0.01
    step_y: float = 0.01
    schedule: ScheduleState = field(default_factory=ScheduleState)
    aux_f: AuxiliaryFunction = field(default_factory=_default_aux_f)
    aux_H: AuxiliaryFunction = field(default_factory=_default_aux_f)
    aux_h: AuxiliaryFunction = field(default_factory=_default_aux_f)
    aux_B: AuxiliaryFunction = field(default_factory=_default_aux_B)
    warm_start: bool = True
    monotone_guard: bool = True
    max_halvings: int = 30
    wall_clock_cap_s: float | None = None
    polish_final: bool = True

    def __post_init__(self):
        if self.K < 0:
            raise InvalidParameter("K must be >= 0")
        if min(self.L, self.T_z, self.T_y) < 1:
            raise InvalidParameter("L, T_z, T_y must be >= 1")
        if min(self.alpha, self.step_z, self.step_y) <= 0:
            raise InvalidParameter("step sizes must be positive")
        if not (self.aux_B.is_barrier and not self.aux_B.modified):
            raise InvalidParameter("aux_B must be a standard (unmodified) barrier")


@dataclass
class InnerState:
    """Outputs of one stage's inner solves, with the stage-frozen shifts."""

    z: np.ndarray
    f_star_approx: float
    y: np.ndarray
    shift_f: float = 0.0
    shifts_H: np.ndarray | None = None
    shifts_h: np.ndarray | None = None


@dataclass(frozen=True)
class TraceRecord:
    k: int
    l: int
    x: np.ndarray
    F_value: float
    f_value: float
    ul_grad_norm: float
    rel_err_x: float
    rel_err_F: float
    wall_time_s: float
    mu: float
    theta: float
    sigma1: float
    y: np.ndarray | None = None


@dataclass
class SolveTrace:
    """Per-(k, l) records, strictly ordered, wall time non-decreasing."""

    records: list[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord):
        self.records.append(rec)

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]


@dataclass(frozen=True)
class Reference:
    """A known solution used to fill rel_err columns in the trace."""

    x_star: np.ndarray
    y_star: np.ndarray | None = None
    F_star: float | None = None


# ---------------------------------------------------------------------------
# stage-frozen shifts
# ---------------------------------------------------------------------------


def _stage_shift_f(problem, x, y_init, f_star, sched, aux_f: AuxiliaryFunction) -> float:
    """Frozen modified-barrier shift for the value-function term.

    Dynamic rule: f(x, y) + offset at the stage's incoming iterate.  Static
    rule: the scheduled sigma2 value, padded by the incoming constraint
    violation so the stage never starts on the wrong side of its own wall.
    """
    if not aux_f.modified:
        return 0.0
    if isinstance(sched.sigma2, DynamicShift):
        return problem.f(x, y_init) + sched.sigma2.offset
    # Scheduled shift plus the incoming violation: the stage always starts a
    # full sigma2 inside its wall, so outer x-moves can never strand the
    # iterate on the infeasible side.
    omega0 = problem.f(x, y_init) - f_star
    return sched.sigma2.value + max(0.0, omega0)

def _stage_shifts_constraints(fields, x, y_init, sched, aux: AuxiliaryFunction,
                              role: str) -> np.ndarray:
    """Frozen shifts for modified barriers on H or h constraint terms."""
    if not fields:
        return np.zeros(0)
    if not aux.modified:
        return np.zeros(len(fields))
    role_shift = getattr(sched, f"sigma2_{role}", None)
    if role_shift is not None:
        base = role_shift.value
    elif isinstance(sched.sigma2, StaticShift):
        base = sched.sigma2.value
    else:
        base = sched.sigma1
    return np.array([base + max(0.0, fld(x, y_init)) for fld in fields])


# ---------------------------------------------------------------------------
# inner solves
# ---------------------------------------------------------------------------


def solve_regularized_ll(
    problem: BilevelProblem,
    x: np.ndarray,
    sched: ScheduleState,
    cfg: SolverConfig,
    z0: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """T_z gradient steps on f(x, .) + mu/2 |y|^2 (+ LL-constraint barriers).

    Returns (z, f_star_approx) with f_star_approx evaluated at the returned z,
    including the barrier terms in the constrained case.
    """
    f = problem.f
    hs = problem.ll_constraints
    mu = sched.mu
    sB = sched.role_sigma("B")
    z = np.zeros(problem.n) if z0 is None else np.array(z0, dtype=float)

    if not hs:
        for _ in range(cfg.T_z):
            g = f.gy(x, z) + mu * z
            if not np.all(np.isfinite(g)):
                raise NonFiniteEvaluation("LL gradient non-finite during z-solve")
            z = z - cfg.step_z * g
        f_star = f(x, z) + 0.5 * mu * float(z @ z)
        if not math.isfinite(f_star):
            raise NonFiniteEvaluation("regularized LL value non-finite")
        return z, f_star

    kindB = cfg.aux_B.kind

    def value(zv):
        total = f(x, zv) + 0.5 * mu * float(zv @ zv)
        for h in hs:
            total += _rho(kindB, h(x, zv), sB)
            if total == math.inf:
                return math.inf
        return total

    cur = value(z)
    if not cur < math.inf:
        # restoration phase: descend the squared constraint violation until
        # the point re-enters the barrier domain (outer x-steps routinely
        # strand a wall-hugging warm start by a small margin)
        for _ in range(cfg.T_z * 4):
            viol = np.array([max(h(x, z), 0.0) for h in hs])
            if not np.any(viol > 0.0):
                break
            g = np.zeros_like(z)
            for v_j, h in zip(viol, hs):
                if v_j > 0.0:
                    g += 2.0 * v_j * h.gy(x, z)
            z = z - cfg.step_z * g
        # step slightly past the boundary toward the interior if still walled
        for _ in range(cfg.max_halvings):
            cur = value(z)
            if cur < math.inf:
                break
            g = np.zeros_like(z)
            for h in hs:
                if h(x, z) >= 0.0:
                    g += h.gy(x, z)
            z = z - cfg.step_z * g
        if not cur < math.inf:
            raise BarrierWall("initial point infeasible for LL constraint barriers")
    for _ in range(cfg.T_z):
        g = f.gy(x, z) + mu * z
        for h in hs:
            g = g + _rho_deriv(kindB, h(x, z), sB) * h.gy(x, z)
        if not np.all(np.isfinite(g)):
            raise NonFiniteEvaluation("LL gradient non-finite during z-solve")
        step = cfg.step_z
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            z_new = z - step * g
            v_new = value(z_new)
            if v_new <= cur if cfg.monotone_guard else v_new < math.inf:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # wall-pinned; z stays
        z, cur = z_new, v_new
    f_star = f(x, z) + 0.5 * mu * float(z @ z)
    for h in hs:
        f_star += _rho(kindB, h(x, z), sB)
    if not math.isfinite(f_star):
        raise NonFiniteEvaluation("regularized LL value non-finite")
    return z, f_star


def _inner_sign(problem: BilevelProblem) -> float:
    return -1.0 if problem.mode is Mode.PESSIMISTIC else 1.0


def solve_penalized_inner(
    problem: BilevelProblem,
    x: np.ndarray,
    f_star_approx: float,
    sched: ScheduleState,
    cfg: SolverConfig,
    y0: np.ndarray,
) -> InnerState:
    """T_y guarded gradient steps on the stage-frozen penalized objective.

    Optimistic mode minimizes F + P-terms + theta/2 |y|^2; pessimistic mode
    ascends F - P-terms - theta/2 |y|^2 (implemented as descent on the
    negated objective).  Shifts for modified barriers are frozen per stage.
    Returns the full InnerState (z is filled in by the caller).
    """
    F, f = problem.F, problem.f
    Hs, hs = problem.ul_constraints, problem.ll_constraints
    theta = sched.theta
    sgn = _inner_sign(problem)
    s_f = sched.role_sigma("f")
    s_H = sched.role_sigma("H")
    s_h = sched.role_sigma("h")
    kf, kH, kh = cfg.aux_f.kind, cfg.aux_H.kind, cfg.aux_h.kind

    y = np.array(y0, dtype=float)
    shift_f = _stage_shift_f(problem, x, y, f_star_approx, sched, cfg.aux_f)
    shifts_H = _stage_shifts_constraints(Hs, x, y, sched, cfg.aux_H, "H")
    shifts_h = _stage_shifts_constraints(hs, x, y, sched, cfg.aux_h, "h")

    def evaluate(yv):
        """(objective, f_value) for the stage-frozen problem; inf at walls."""
        fv = f(x, yv)
        total = sgn * F(x, yv) + 0.5 * theta * float(yv @ yv)
        total += _rho(kf, fv - f_star_approx - shift_f, s_f)
        if total == math.inf:
            return math.inf, fv
        for j, H in enumerate(Hs):
            total += _rho(kH, H(x, yv) - shifts_H[j], s_H)
            if total == math.inf:
                return math.inf, fv
        for j, h in enumerate(hs):
            total += _rho(kh, h(x, yv) - shifts_h[j], s_h)
            if total == math.inf:
                return math.inf, fv
        return total, fv

    cur, f_val = evaluate(y)
    if not cur < math.inf:
        raise BarrierWall("stage started outside a constraint barrier wall")
    if not math.isfinite(cur):
        raise NonFiniteEvaluation("inner objective non-finite at stage start")

    for _ in range(cfg.T_y):
        lam_f = _rho_deriv(kf, f_val - f_star_approx - shift_f, s_f)
        g = sgn * F.gy(x, y) + lam_f * f.gy(x, y) + theta * y
        for j, H in enumerate(Hs):
            g = g + _rho_deriv(kH, H(x, y) - shifts_H[j], s_H) * H.gy(x, y)
        for j, h in enumerate(hs):
            g = g + _rho_deriv(kh, h(x, y) - shifts_h[j], s_h) * h.gy(x, y)
        if not np.all(np.isfinite(g)):
            raise NonFiniteEvaluation("inner gradient non-finite during y-solve")
        step = cfg.step_y
        accepted = False
        for _ in range(cfg.max_halvings + 1):
            y_new = y - step * g
            v_new, f_new = evaluate(y_new)
            if v_new <= cur if cfg.monotone_guard else v_new < math.inf:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # step fully damped; y is pinned for this stage
        y, cur, f_val = y_new, v_new, f_new

    return InnerState(
        z=np.empty(0),
        f_star_approx=f_star_approx,
        y=y,
        shift_f=shift_f,
        shifts_H=shifts_H,
        shifts_h=shifts_h,
    )


def solve_inner(
    problem: BilevelProblem,
    x: np.ndarray,
    sched: ScheduleState,
    cfg: SolverConfig,
    z0: np.ndarray | None = None,
    y0: np.ndarray | None = None,
) -> InnerState:
    """Run both inner solves for one (k, l) step and bundle the results."""
    z, f_star = solve_regularized_ll(problem, x, sched, cfg, z0)
    start = np.array(z if y0 is None else y0, dtype=float)
    inner = solve_penalized_inner(problem, x, f_star, sched, cfg, start)
    inner.z = z
    return inner


# ---------------------------------------------------------------------------
# UL gradients (value-function chain rule)
# ---------------------------------------------------------------------------


def _lam_f(problem, x, inner, sched, cfg) -> float:
    omega = problem.f(x, inner.y) - inner.f_star_approx - inner.shift_f
    return _rho_deriv(cfg.aux_f.kind, omega, sched.role_sigma("f"))


def ul_gradient(
    problem: BilevelProblem,
    x: np.ndarray,
    inner: InnerState,
    sched: ScheduleState,
    cfg: SolverConfig,
) -> np.ndarray:
    """dF/dx + P'(f - f*) * (df/dx at y minus df/dx at z), all at the stage iterates."""
    lam = _lam_f(problem, x, inner, sched, cfg)
    g = problem.F.gx(x, inner.y)
    if lam != 0.0:
        g = g + lam * (problem.f.gx(x, inner.y) - problem.f.gx(x, inner.z))
    return g


def ul_gradient_constrained(
    problem: BilevelProblem,
    x: np.ndarray,
    inner: InnerState,
    sched: ScheduleState,
    cfg: SolverConfig,
) -> np.ndarray:
    """Constrained chain rule: constraint penalty terms plus barrier terms at z.

    With empty constraint lists this reduces exactly to :func:`ul_gradient`.
    """
    s_H = sched.role_sigma("H")
    s_h = sched.role_sigma("h")
    s_B = sched.role_sigma("B")
    y, z = inner.y, inner.z
    lam = _lam_f(problem, x, inner, sched, cfg)
    g = problem.F.gx(x, y)
    if lam != 0.0:
        dfstar_dx = problem.f.gx(x, z)
        for h in problem.ll_constraints:
            dfstar_dx = dfstar_dx + _rho_deriv(cfg.aux_B.kind, h(x, z), s_B) * h.gx(x, z)
        g = g + lam * (problem.f.gx(x, y) - dfstar_dx)
    for j, H in enumerate(problem.ul_constraints):
        lam_H = _rho_deriv(cfg.aux_H.kind, H(x, y) - inner.shifts_H[j], s_H)
        if lam_H != 0.0:
            g = g + lam_H * H.gx(x, y)
    for j, h in enumerate(problem.ll_constraints):
        lam_h = _rho_deriv(cfg.aux_h.kind, h(x, y) - inner.shifts_h[j], s_h)
        if lam_h != 0.0:
            g = g + lam_h * h.gx(x, y)
    return g


def ul_gradient_pessimistic(
    problem: BilevelProblem,
    x: np.ndarray,
    inner: InnerState,
    sched: ScheduleState,
    cfg: SolverConfig,
) -> np.ndarray:
    """Pessimistic chain rule: the penalty contribution enters with a minus sign."""
    lam = _lam_f(problem, x, inner, sched, cfg)
    g = problem.F.gx(x, inner.y)
    if lam != 0.0:
        g = g - lam * (problem.f.gx(x, inner.y) - problem.f.gx(x, inner.z))
    return g


def ul_gradient_for(problem, x, inner, sched, cfg) -> np.ndarray:
    if problem.mode is Mode.PESSIMISTIC:
        return ul_gradient_pessimistic(problem, x, inner, sched, cfg)
    if problem.constrained:
        return ul_gradient_constrained(problem, x, inner, sched, cfg)
    return ul_gradient(problem, x, inner, sched, cfg)


# ---------------------------------------------------------------------------
# outer loop
# ---------------------------------------------------------------------------


def _errors(problem, x, y, reference: Reference | None) -> tuple[float, float, float, float]:
    F_val = problem.F(x, y)
    f_val = problem.f(x, y)
    rel_x = float("nan")
    rel_F = float("nan")
    if reference is not None:
        nx = np.linalg.norm(reference.x_star)
        rel_x = float(np.linalg.norm(x - reference.x_star)) / (nx if nx > 0 else 1.0)
        if reference.F_star is not None:
            den = abs(reference.F_star)
            rel_F = abs(F_val - reference.F_star) / (den if den > 0 else 1.0)
    return F_val, f_val, rel_x, rel_F


def solve(
    problem: BilevelProblem,
    cfg: SolverConfig,
    x0,
    y0=None,
    reference: Reference | None = None,
) -> SolveTrace:
    """Run K stages of L projected UL steps with schedule-aware inner solves.

    Warm starts persist z and y across (k, l) steps (and across stages) when
    cfg.warm_start; otherwise each step restarts the inner iterates from y0.
    An infeasible constrained stage triggers UL step halving, mirroring the
    inner wall handling.  Returns the full trace; raises SolveTimeout past
    cfg.wall_clock_cap_s and SolveError on unrecoverable inner failures, both
    carrying the partial trace.
    """
    t0 = time.perf_counter()
    x = project(problem.ul_set, np.atleast_1d(np.asarray(x0, dtype=float)))
    y_init = np.zeros(problem.n) if y0 is None else np.atleast_1d(np.asarray(y0, dtype=float))
    if y_init.shape[0] != problem.n:
        raise InvalidParameter(f"y0 must have dimension {problem.n}")
    sched = cfg.schedule
    trace = SolveTrace()

    F_val, f_val, rel_x, rel_F = _errors(problem, x, y_init, reference)
    trace.append(
        TraceRecord(0, 0, x.copy(), F_val, f_val, float("nan"), rel_x, rel_F,
                    time.perf_counter() - t0, sched.mu, sched.theta, sched.sigma1,
                    y=y_init.copy())
    )

    z_warm: np.ndarray | None = y_init.copy()
    y_warm: np.ndarray | None = None  # first stage: y starts from the z result

    for k in range(cfg.K):
        for l in range(cfg.L):
            if cfg.wall_clock_cap_s is not None and time.perf_counter() - t0 > cfg.wall_clock_cap_s:
                raise SolveTimeout(
                    f"wall clock cap {cfg.wall_clock_cap_s}s exceeded at k={k}", trace
                )
            z0 = z_warm if cfg.warm_start or k == l == 0 else y_init.copy()
            ys = y_warm if cfg.warm_start else None
            try:
                inner = solve_inner(problem, x, sched, cfg, z0=z0, y0=ys)
                grad = ul_gradient_for(problem, x, inner, sched, cfg)
            except BarrierWall as exc:
                # UL-level recovery: retry the previous step with halved moves.
                recovered = False
                if trace.records[-1].l != 0 or trace.records[-1].k != 0:
                    x_prev = trace.records[-2].x if len(trace.records) >= 2 else None
                    if x_prev is not None:
                        step = 0.5
                        for _ in range(cfg.max_halvings):
                            x_try = x_prev + step * (x - x_prev)
                            try:
                                inner = solve_inner(problem, x_try, sched, cfg, z0=z0, y0=ys)
                                grad = ul_gradient_for(problem, x_try, inner, sched, cfg)
                                x = x_try
                                recovered = True
                                break
                            except BarrierWall:
                                step *= 0.5
                if not recovered:
                    raise SolveError(str(exc), k, l, trace) from exc
            except NonFiniteEvaluation as exc:
                raise SolveError(str(exc), k, l, trace) from exc
            if not np.all(np.isfinite(grad)):
                raise SolveError("UL gradient non-finite", k, l, trace)
            x = project(problem.ul_set, x - cfg.alpha * grad)
            z_warm, y_warm = inner.z, inner.y

            F_val, f_val, rel_x, rel_F = _errors(problem, x, inner.y, reference)
            trace.append(
                TraceRecord(k, l + 1, x.copy(), F_val, f_val,
                            float(np.linalg.norm(grad)), rel_x, rel_F,
                            time.perf_counter() - t0, sched.mu, sched.theta, sched.sigma1,
                            y=inner.y.copy())
            )
        sched = schedule_step(sched)

    # Feasibility polish: penalty/barrier iterates end a vanishing distance on
    # the relaxed side of LL optimality, so finish with a plain LL descent
    # from y.  Optimistic mode only: a pessimistic iterate encodes the
    # worst-case selection, which an unguided descent would abandon.
    if cfg.polish_final and cfg.K > 0 and problem.mode is Mode.OPTIMISTIC and y_warm is not None:
        try:
            y_pol, _ = solve_regularized_ll(problem, x, sched, cfg, z0=y_warm)
            F_val, f_val, rel_x, rel_F = _errors(problem, x, y_pol, reference)
            trace.append(
                TraceRecord(cfg.K, 0, x.copy(), F_val, f_val, float("nan"),
                            rel_x, rel_F, time.perf_counter() - t0,
                            sched.mu, sched.theta, sched.sigma1, y=y_pol.copy())
            )
        except (BarrierWall, NonFiniteEvaluation):
            pass  # keep the raw final record
    return trace
