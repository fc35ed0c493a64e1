"""Empirical order-of-accuracy measurement against modified vector fields.

A scheme that solves u' = f(u) to first order typically solves a nearby
"modified" equation to second order. This module builds the first-order
reduction of that modified equation for the forward Euler scheme and for the
trainable-coefficient two-step scheme, and measures empirical convergence
slopes so the claim is checked by experiment rather than by trust.

The second-order modified equations are reduced to first order by the
leading-order substitution u'' ~ J_f(u) u' with u' replaced by its own
leading term; solving the singularly perturbed second-order form directly
would require an initial velocity no experiment specifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from .dyncore import Array, TestProblem, VectorField
from .errors import ConfigurationError, ContractError
from .odeschemes import Scheme, integrate, make_scheme

StepperFn = Callable[[Array, float, float, float], Array]  # (u0, t0, T, dt) -> u(T)
Reference = Union[VectorField, Callable[[float], Array]]


@dataclass(frozen=True)
class OrderReport:
    """Log-log slope fit of error against step size."""

    dts: Tuple[float, ...]
    errors: Tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float
    reliable: bool  # False when r_squared < 0.99: report, do not assert

    def rows(self):
        return list(zip(self.dts, self.errors))


def fit_loglog(dts: Sequence[float], errors: Sequence[float]) -> Tuple[float, float, float]:
    """Least-squares slope/intercept/R^2 on (log dt, log error)."""
    x = np.log(np.asarray(dts, dtype=np.float64))
    y = np.log(np.asarray(errors, dtype=np.float64))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = y - y.mean()
    ss_tot = float(total @ total)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(resid @ resid) / ss_tot
    return float(slope), float(intercept), r2


def reduced_modified_field(
    f: VectorField, dt: float, kind: str = "forward_euler", k: float = 0.0
) -> VectorField:
    """First-order reduction of the scheme's modified equation.

    forward_euler:  u -> f(u) - (dt/2) J_f(u) f(u)
    lm (coefficient k): the two-step scheme tracks (1+k) u' = f at leading
    order, so the reduction is applied to the rescaled velocity:

        u -> f(u)/(1+k) - dt (1-k) / (2 (1+k)^2) * J_f(u) (f(u)/(1+k))

    At k = 0 this is exactly the forward Euler reduction.
    """
    if f.jacobian is None:
        raise ContractError("reduced_modified_field needs a jacobian")
    if kind == "forward_euler":
        k = 0.0
    elif kind != "lm":
        raise ConfigurationError(f"unknown reduction kind {kind!r}")
    if 1.0 + k == 0.0:
        raise ContractError("reduction is singular at k = -1")

    one_plus = 1.0 + k
    coeff = dt * (1.0 - k) / (2.0 * one_plus * one_plus)

    def evaluate(u, t, f=f, one_plus=one_plus, coeff=coeff):
        base = f(u, t) / one_plus
        return base - coeff * (f.jacobian(u, t) @ base)

    return VectorField(evaluate=evaluate)


def make_stepper(scheme: Union[str, Scheme], f: VectorField, **kwargs) -> StepperFn:
    """Close a scheme over a field, yielding (u0, t0, T, dt) -> final state."""
    sch = make_scheme(scheme, **kwargs) if isinstance(scheme, str) else scheme

    def run(u0, t0, T, dt):
        return integrate(sch, f, u0, t0, T, dt).final

    return run


def _reference_solution(reference: Reference, u0: Array, t0: float, T: float,
                        dt_ref: float) -> Array:
    if isinstance(reference, VectorField):
        return integrate(make_scheme("rk4"), reference, u0, t0, T, dt_ref).final
    return np.asarray(reference(T), dtype=np.float64)


def estimate_order(
    stepper: StepperFn,
    reference: Reference,
    problem: TestProblem,
    dts: Sequence[float],
    T: Optional[float] = None,
) -> OrderReport:
    """Error at the horizon for each dt, with a fitted log-log slope.

    The reference is either an exact map t -> state or a vector field that is
    integrated with RK4 at min(dts)/100. Requires at least 4 geometrically
    spaced step sizes; zero errors are rejected as degenerate rather than
    silently clipped.
    """
    dts = sorted((float(d) for d in dts), reverse=True)
    if len(dts) < 4:
        raise ContractError("need at least 4 step sizes")
    ratios = [dts[i] / dts[i + 1] for i in range(len(dts) - 1)]
    if max(ratios) / min(ratios) > 1.2:
        raise ContractError("step sizes must be geometrically spaced")
    horizon = problem.horizon if T is None else float(T)

    ref = _reference_solution(reference, problem.u0, 0.0, horizon, min(dts) / 100.0)
    errors = []
    for dt in dts:
        final = stepper(problem.u0, 0.0, horizon, dt)
        err = float(np.linalg.norm(final - ref))
        if err == 0.0:
            raise ContractError(f"degenerate zero error at dt={dt}")
        errors.append(err)

    slope, intercept, r2 = fit_loglog(dts, errors)
    return OrderReport(
        dts=tuple(dts),
        errors=tuple(errors),
        slope=slope,
        intercept=intercept,
        r_squared=r2,
        reliable=r2 >= 0.99,
    )


def gradflow_speed_report(
    potential: Callable[[Array], float],
    f: VectorField,
    u0: Array,
    k: float,
    dt: float,
    steps: int,
) -> dict:
    """Potential decay along forward Euler vs the two-step scheme with k < 0.

    Diagnostic only: the acceleration reading of the second-order term has no
    stated pass/fail metric, so this reports curves and leaves judgment to
    the caller.
    """
    fe = [float(potential(u0))]
    u = np.asarray(u0, dtype=np.float64)
    for _ in range(steps):
        u = u + dt * f(u, 0.0)
        fe.append(float(potential(u)))

    lm = [float(potential(u0))]
    u_prev = np.asarray(u0, dtype=np.float64)
    u = u_prev + dt * f(u_prev, 0.0)
    lm.append(float(potential(u)))
    for _ in range(steps - 1):
        u_new = (1.0 - k) * u + k * u_prev + dt * f(u, 0.0)
        u_prev, u = u, u_new
        lm.append(float(potential(u)))

    return {
        "k": k,
        "dt": dt,
        "forward_euler": fe,
        "lm": lm,
        "steps_to_halve_fe": _steps_to_halve(fe),
        "steps_to_halve_lm": _steps_to_halve(lm),
    }


def _steps_to_halve(curve) -> int:
    target = curve[0] / 2.0
    for i, v in enumerate(curve):
        if v <= target:
            return i
    return -1
