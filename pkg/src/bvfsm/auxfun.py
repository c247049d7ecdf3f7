"""Penalty and barrier auxiliary functions and their parameter schedules.

A catalog of smooth penalty/barrier members (quadratic penalty, polynomial
penalty, inverse barrier, truncated-log barrier), an optional modified-barrier
wrapper that shifts the wall, and the geometric decay schedule that drives
sequential minimization.  Values are extended reals: the barrier wall is
returned as ``math.inf`` and flows through comparisons without NaN.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .core import InvalidParameter


class BarrierWall(RuntimeError):
    """A value or derivative was requested at or beyond a barrier wall."""


# ---------------------------------------------------------------------------
# catalog members
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticPenalty:
    """rho(w; s) = (w+)^2 / (2 s), zero for w <= 0."""


@dataclass(frozen=True)
class PolynomialPenalty:
    """rho(w; s) = (w+)^q / (q s); q >= 2 keeps it differentiable."""

    q: int = 3

    def __post_init__(self):
        if self.q < 2:
            raise InvalidParameter("polynomial penalty needs q >= 2")


@dataclass(frozen=True)
class InverseBarrier:
    """rho(w; s) = -s / w for w < 0, infinite at the wall w >= 0."""


def truncated_log_coeffs(kappa: float) -> tuple[float, float, float, float]:
    """Coefficients (b1, b2, b3, b4) for the truncated-log barrier.

    b1 = -log(kappa) pins rho(-kappa) = 0 and keeps rho >= 0 on [-kappa, 0).
    b2, b3, b4 solve the 3x3 linear system matching value, first and second
    derivative of the log and rational branches at w = -kappa, which makes the
    barrier twice differentiable there.
    """
    if not (0.0 < kappa <= 1.0):
        raise InvalidParameter(f"kappa must lie in (0, 1], got {kappa}")
    b1 = -math.log(kappa)
    k = kappa
    # rows: value match, first-derivative match, second-derivative match
    A = np.array(
        [
            [1.0, 1.0 / k**2, -1.0 / k],
            [0.0, -2.0 / k**3, 1.0 / k**2],
            [0.0, -6.0 / k**4, 2.0 / k**3],
        ]
    )
    rhs = np.array([math.log(k) + b1, 1.0 / k, 1.0 / k**2])
    b2, b3, b4 = np.linalg.solve(A, rhs)
    return b1, float(b2), float(b3), float(b4)


@dataclass(frozen=True)
class TruncatedLogBarrier:
    """Log barrier on [-kappa, 0), matched C^2 to a rational tail below -kappa."""

    kappa: float = 1.0
    betas: tuple[float, float, float, float] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.betas is None:
            object.__setattr__(self, "betas", truncated_log_coeffs(self.kappa))


Kind = Union[QuadraticPenalty, PolynomialPenalty, InverseBarrier, TruncatedLogBarrier]

BARRIER_KINDS = (InverseBarrier, TruncatedLogBarrier)
PENALTY_KINDS = (QuadraticPenalty, PolynomialPenalty)


@dataclass(frozen=True)
class AuxiliaryFunction:
    """A catalog member plus the optional modified-barrier wrapper.

    ``modified=True`` shifts the wall: P(w) = rho(w - shift; sigma).  Only
    barrier kinds may be modified; the shift comes from the schedule (static
    sequence) or from the solver (dynamic offset), see :func:`aux_eval`.
    """

    kind: Kind = field(default_factory=lambda: TruncatedLogBarrier(1.0))
    modified: bool = False

    def __post_init__(self):
        if self.modified and not self.is_barrier:
            raise InvalidParameter("only barrier kinds can take the modified wrapper")

    @property
    def is_barrier(self) -> bool:
        return isinstance(self.kind, BARRIER_KINDS)

    @property
    def is_penalty(self) -> bool:
        return isinstance(self.kind, PENALTY_KINDS)


def parse_aux(spec, modified: bool | None = None) -> AuxiliaryFunction:
    """Build an AuxiliaryFunction from a config name.

    Accepted names: ``quadratic``, ``polynomial:q``, ``inverse``,
    ``truncated-log:kappa``.  A dict form ``{"name": ..., "modified": bool}``
    is accepted as well.
    """
    if isinstance(spec, AuxiliaryFunction):
        return spec
    if isinstance(spec, dict):
        return parse_aux(spec["name"], modified=bool(spec.get("modified", False)))
    name, _, arg = str(spec).partition(":")
    name = name.strip().lower()
    if name == "quadratic":
        kind: Kind = QuadraticPenalty()
    elif name == "polynomial":
        kind = PolynomialPenalty(q=int(arg) if arg else 3)
    elif name == "inverse":
        kind = InverseBarrier()
    elif name in ("truncated-log", "truncated_log", "tlog"):
        kind = TruncatedLogBarrier(kappa=float(arg) if arg else 1.0)
    else:
        raise InvalidParameter(f"unknown auxiliary function {spec!r}")
    return AuxiliaryFunction(kind=kind, modified=bool(modified))


def aux_name(aux: AuxiliaryFunction) -> str:
    k = aux.kind
    if isinstance(k, QuadraticPenalty):
        base = "quadratic"
    elif isinstance(k, PolynomialPenalty):
        base = f"polynomial:{k.q}"
    elif isinstance(k, InverseBarrier):
        base = "inverse"
    else:
        base = f"truncated-log:{k.kappa:g}"
    return base + ("+modified" if aux.modified else "")


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StaticShift:
    """A modified-barrier shift that is a plain decaying sequence.

    ``decay=None`` means sqrt of the schedule-wide decay: the shift then
    shrinks strictly slower than sigma1, which keeps rho(-shift_k; sigma1_k)
    -> 0 for every barrier in the catalog (the modified-barrier schedule
    hypothesis) and bounds the wall stiffness sigma1/shift^2.
    """

    value: float = 1.0
    decay: float | None = None


@dataclass(frozen=True)
class DynamicShift:
    """Shift recomputed by the solver each stage as f(x, y) + offset.

    ``offset`` is a problem-supplied lower-bound margin for f (the LL
    dimension n for the sin benchmarks, 0 for nonnegative losses); it keeps
    the shifted argument strictly inside the wall at the current iterate.
    """

    offset: float = 0.0


Sigma2Rule = Union[StaticShift, DynamicShift]


@dataclass(frozen=True)
class RoleSigma:
    """Per-role barrier/penalty parameter with its own decay factor."""

    value: float = 1.0
    decay: float | None = None  # None -> schedule-wide decay


@dataclass(frozen=True)
class ScheduleState:
    """The decaying parameter tuple (mu_k, theta_k, sigma_k).

    All positive parameters shrink geometrically: one :func:`schedule_step`
    multiplies each by its decay factor (global ``decay`` unless a per-role
    override is set).  ``sigma2`` controls the modified-barrier shift; static
    shifts decay too (default: sqrt of the global decay, see StaticShift).
    """

    mu: float = 1.0
    theta: float = 1.0
    sigma1: float = 1.0
    decay: float = 1.0 / 1.01
    k: int = 0
    sigma2: Sigma2Rule = field(default_factory=StaticShift)
    sigma2_H: StaticShift | None = None  # shift sequence for modified barriers on H
    sigma2_h: StaticShift | None = None  # shift sequence for modified barriers on h
    sigma_B: RoleSigma | None = None
    sigma_H: RoleSigma | None = None
    sigma_h: RoleSigma | None = None
    sigma_f: RoleSigma | None = None

    def __post_init__(self):
        if min(self.mu, self.theta, self.sigma1) <= 0:
            raise InvalidParameter("schedule parameters must be strictly positive")
        if not (0.0 < self.decay <= 1.0):
            raise InvalidParameter("decay must lie in (0, 1]")

    def role_sigma(self, role: str) -> float:
        override = getattr(self, f"sigma_{role}", None)
        if override is not None:
            return override.value
        return self.sigma1

    def shift_value(self) -> float:
        """Current static shift value (0 when the rule is dynamic)."""
        if isinstance(self.sigma2, StaticShift):
            return self.sigma2.value
        return 0.0

    @property
    def sigma2_decay(self) -> float:
        if isinstance(self.sigma2, StaticShift) and self.sigma2.decay is not None:
            return self.sigma2.decay
        return math.sqrt(self.decay)


def schedule_step(sched: ScheduleState) -> ScheduleState:
    """Advance one outer stage: k+1, every decaying parameter multiplied down."""
    d = sched.decay

    def step_role(rs: RoleSigma | None) -> RoleSigma | None:
        if rs is None:
            return None
        return RoleSigma(rs.value * (rs.decay if rs.decay is not None else d), rs.decay)

    def step_shift(sh: StaticShift | None) -> StaticShift | None:
        if sh is None:
            return None
        factor = sh.decay if sh.decay is not None else math.sqrt(d)
        return StaticShift(sh.value * factor, sh.decay)

    sigma2 = sched.sigma2
    if isinstance(sigma2, StaticShift):
        sigma2 = step_shift(sigma2)
    return dataclasses.replace(
        sched,
        k=sched.k + 1,
        mu=sched.mu * d,
        theta=sched.theta * d,
        sigma1=sched.sigma1 * d,
        sigma2=sigma2,
        sigma2_H=step_shift(sched.sigma2_H),
        sigma2_h=step_shift(sched.sigma2_h),
        sigma_B=step_role(sched.sigma_B),
        sigma_H=step_role(sched.sigma_H),
        sigma_h=step_role(sched.sigma_h),
        sigma_f=step_role(sched.sigma_f),
    )


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _rho(kind: Kind, w: float, s: float) -> float:
    if isinstance(kind, QuadraticPenalty):
        return 0.0 if w <= 0.0 else w * w / (2.0 * s)
    if isinstance(kind, PolynomialPenalty):
        return 0.0 if w <= 0.0 else w**kind.q / (kind.q * s)
    if isinstance(kind, InverseBarrier):
        return math.inf if w >= 0.0 else -s / w
    # truncated log
    if w >= 0.0:
        return math.inf
    b1, b2, b3, b4 = kind.betas
    if w >= -kind.kappa:
        return -s * (math.log(-w) + b1)
    return -s * (b2 + b3 / (w * w) + b4 / w)


def _rho_deriv(kind: Kind, w: float, s: float) -> float:
    if isinstance(kind, QuadraticPenalty):
        return 0.0 if w <= 0.0 else w / s
    if isinstance(kind, PolynomialPenalty):
        return 0.0 if w <= 0.0 else w ** (kind.q - 1) / s
    if isinstance(kind, InverseBarrier):
        if w >= 0.0:
            raise BarrierWall(f"inverse barrier derivative at w={w}")
        return s / (w * w)
    if w >= 0.0:
        raise BarrierWall(f"truncated-log derivative at w={w}")
    _, _, b3, b4 = kind.betas
    if w >= -kind.kappa:
        return -s / w
    return s * (2.0 * b3 / w**3 + b4 / (w * w))


def effective_argument(aux: AuxiliaryFunction, omega: float, sched: ScheduleState, context_shift: float = 0.0) -> float:
    """The argument rho sees: omega minus the modified-barrier shift, if any."""
    if not aux.modified:
        return omega
    if isinstance(sched.sigma2, DynamicShift):
        return omega - context_shift
    return omega - sched.sigma2.value


def aux_eval(
    aux: AuxiliaryFunction,
    omega: float,
    sched: ScheduleState,
    context_shift: float = 0.0,
    role: str = "f",
) -> float:
    """P(omega) for the configured member; ``inf`` signals the barrier wall.

    For a modified barrier the effective argument is ``omega - shift`` where
    the shift is the static sigma2 value or, under the dynamic rule, the
    ``context_shift`` supplied by the solver.
    """
    w = effective_argument(aux, omega, sched, context_shift)
    return _rho(aux.kind, w, sched.role_sigma(role))


def aux_deriv(
    aux: AuxiliaryFunction,
    omega: float,
    sched: ScheduleState,
    context_shift: float = 0.0,
    role: str = "f",
) -> float:
    """dP/domega at omega; raises BarrierWall at or beyond a barrier wall."""
    w = effective_argument(aux, omega, sched, context_shift)
    return _rho_deriv(aux.kind, w, sched.role_sigma(role))
