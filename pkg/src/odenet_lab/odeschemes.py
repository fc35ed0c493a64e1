"""Deterministic time-stepping schemes and their stability bookkeeping.

Covers one-step methods (forward/backward Euler, explicit Runge-Kutta),
explicit linear multistep methods, the trainable-coefficient two-step update
used by the residual architectures, the geometric-series approximation to the
implicit-Euler resolvent, and a uniform integrate() driver.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .dyncore import Array, Trajectory, VectorField
from .errors import (
    ConfigurationError,
    ContractError,
    ConvergenceError,
    DivergenceWarningError,
    OverflowError_,
)


def _require_finite(u: Array, what: str) -> Array:
    if not np.all(np.isfinite(u)):
        raise OverflowError_(f"{what} produced a non-finite state")
    return u


# ---------------------------------------------------------------------------
# one-step methods


def forward_euler_step(f: VectorField, u: Array, t: float, dt: float) -> Array:
    if dt <= 0:
        raise ContractError("dt must be positive")
    return _require_finite(u + dt * f(u, t), "forward Euler step")


def backward_euler_step(
    f: VectorField,
    u: Array,
    t: float,
    dt: float,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> Array:
    """Solve v = u + dt * f(v, t + dt).

    Newton iteration when the field carries a jacobian, damped fixed-point
    (damping 0.5) otherwise. Raises ConvergenceError with the last residual
    if the tolerance is not met within max_iter sweeps.
    """
    if dt <= 0 or tol <= 0:
        raise ContractError("dt and tol must be positive")
    t_new = t + dt
    v = u + dt * f(u, t)  # explicit predictor
    eye = np.eye(u.size)
    residual = None
    for _ in range(max_iter):
        g = v - u - dt * f(v, t_new)
        residual = float(np.linalg.norm(g))
        if residual <= tol:
            return _require_finite(v, "backward Euler step")
        if f.jacobian is not None:
            J = f.jacobian(v, t_new)
            v = v - np.linalg.solve(eye - dt * J, g)
        else:
            v = v - 0.5 * g
    raise ConvergenceError(
        f"backward Euler did not reach tol={tol} in {max_iter} iterations",
        residual=residual,
    )


@dataclass(frozen=True)
class RKTableau:
    """Explicit Butcher tableau: strictly lower-triangular a, weights b, nodes c."""

    a: Array
    b: Array
    c: Array

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        s = b.size
        if a.shape != (s, s) or c.size != s:
            raise ContractError("tableau dimensions disagree")
        if np.any(np.triu(a) != 0.0):
            raise ContractError("only explicit tableaus supported (a strictly lower)")
        if abs(b.sum() - 1.0) > 1e-12:
            raise ContractError("weights must sum to 1 for consistency")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def stages(self) -> int:
        return self.b.size


def rk2_tableau() -> RKTableau:
    """Explicit trapezoidal 2nd-order method: Euler predictor, averaged slopes."""
    return RKTableau(a=[[0.0, 0.0], [1.0, 0.0]], b=[0.5, 0.5], c=[0.0, 1.0])


def rk4_tableau() -> RKTableau:
    return RKTableau(
        a=[
            [0.0, 0.0, 0.0, 0.0],
            [0.5, 0.0, 0.0, 0.0],
            [0.0, 0.5, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ],
        b=[1 / 6, 1 / 3, 1 / 3, 1 / 6],
        c=[0.0, 0.5, 0.5, 1.0],
    )


def explicit_rk_step(
    tableau: RKTableau, f: VectorField, u: Array, t: float, dt: float
) -> Array:
    if dt <= 0:
        raise ContractError("dt must be positive")
    s = tableau.stages
    k = [None] * s
    for i in range(s):
        ui = u
        for j in range(i):
            aij = tableau.a[i, j]
            if aij != 0.0:
                ui = ui + dt * aij * k[j]
        k[i] = f(ui, t + tableau.c[i] * dt)
        _require_finite(k[i], "Runge-Kutta stage")
    out = u
    for j in range(s):
        bj = tableau.b[j]
        if bj != 0.0:
            out = out + dt * bj * k[j]
    return _require_finite(out, "Runge-Kutta step")


# ---------------------------------------------------------------------------
# linear multistep


@dataclass(frozen=True)
class SchemeCoefficients:
    """Coefficient set of an explicit k-step method.

    The update solved for the new state u_new is

        alpha[0]*u_new + sum_{j=1..k} alpha[j]*u_{n+1-j}
            = dt * sum_{j=0..k-1} beta[j]*f(u_{n-j}, t_{n-j})

    with beta indexed over the k history points, newest first. The f-sum
    never touches the unknown state, so every representable scheme is
    explicit; source conventions that attach explicitness to a leading
    f-coefficient put that coefficient on the unknown instead.
    """

    k: int
    alpha: Tuple[float, ...]
    beta: Tuple[float, ...]

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        beta = tuple(float(b) for b in self.beta)
        if len(alpha) != self.k + 1 or len(beta) != self.k:
            raise ContractError(
                f"k={self.k} needs {self.k + 1} alpha and {self.k} beta coefficients"
            )
        if alpha[0] == 0.0:
            raise ContractError("alpha[0] must be nonzero")
        if alpha[self.k] == 0.0 and beta[self.k - 1] == 0.0:
            raise ContractError("trailing coefficient pair identically zero")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @property
    def explicit(self) -> bool:
        return True  # structural: no f(u_new) term exists in this form

    @staticmethod
    def forward_euler() -> "SchemeCoefficients":
        return SchemeCoefficients(k=1, alpha=(1.0, -1.0), beta=(1.0,))

    @staticmethod
    def adams_bashforth2() -> "SchemeCoefficients":
        return SchemeCoefficients(k=2, alpha=(1.0, -1.0, 0.0), beta=(1.5, -0.5))


def lmm_step(
    coeffs: SchemeCoefficients,
    f: VectorField,
    history: Sequence[Tuple[float, Array]],
    dt: float,
) -> Array:
    """Advance one step given the last k (t, u) pairs, newest first."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    if len(history) != coeffs.k:
        raise ContractError(
            f"history must hold exactly k={coeffs.k} states, got {len(history)}"
        )
    acc = None
    for j, (tj, uj) in enumerate(history):
        bj = coeffs.beta[j]
        if bj != 0.0:
            term = bj * f(uj, tj)
            acc = term if acc is None else acc + term
    acc = dt * acc if acc is not None else np.zeros_like(history[0][1])
    for j in range(1, coeffs.k + 1):
        aj = coeffs.alpha[j]
        if aj != 0.0:
            acc = acc - aj * history[j - 1][1]
    return _require_finite(acc / coeffs.alpha[0], "linear multistep step")


def lm_architecture_step(
    k_n: float, u_n: Array, u_prev: Array, f_val: Array, dt: float = 1.0
) -> Array:
    """Two-step update (1 - k_n) u_n + k_n u_prev + dt * f_val.

    Network blocks call this with dt = 1 so the residual branch absorbs the
    step size; the explicit dt serves the modified-equation experiments.
    """
    u_n = np.asarray(u_n, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    f_val = np.asarray(f_val, dtype=np.float64)
    if u_n.shape != u_prev.shape or u_n.shape != f_val.shape:
        raise ContractError("lm_architecture_step operands must share shape")
    return _require_finite(
        (1.0 - k_n) * u_n + k_n * u_prev + dt * f_val, "LM architecture step"
    )


@dataclass(frozen=True)
class CharacteristicRoots:
    """Roots of z^2 - (1-k) z - k, which factors as (z - 1)(z + k)."""

    roots: Tuple[complex, complex]
    zero_stable: bool
    on_boundary: bool  # |k| = 1 exactly; audits report these separately


def characteristic_roots(k_n: float) -> CharacteristicRoots:
    roots = (complex(1.0, 0.0), complex(-k_n, 0.0))
    # root condition: roots in the closed unit disk, unit-modulus roots
    # simple; k = -1 gives a double root at 1 and fails
    zero_stable = abs(k_n) <= 1.0 and k_n != -1.0
    return CharacteristicRoots(roots, zero_stable, abs(k_n) == 1.0)


# ---------------------------------------------------------------------------
# Neumann resolvent approximation


def spectral_radius_estimate(B: Array, iters: int = 100) -> float:
    """Power iteration from a fixed start vector; adequate as a validity gate."""
    B = np.asarray(B, dtype=np.float64)
    d = B.shape[0]
    x = np.ones(d)
    x[0] += 1e-3  # break symmetry against sign-alternating eigenvectors
    x /= np.linalg.norm(x)
    rho = 0.0
    for _ in range(iters):
        y = B @ x
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0
        rho = ny
        x = y / ny
    return rho


def neumann_inverse_apply(A: Array, dt: float, m: int, u: Array) -> Array:
    """Truncated series sum_{j=0..m} (dt A)^j u approximating (I - dt A)^{-1} u.

    Valid when the spectral radius of dt*A is below 1; truncation error is
    bounded by ||dt A||^{m+1} ||u|| / (1 - ||dt A||).
    """
    A = np.asarray(A, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] != u.size:
        raise ContractError("A must be square and match u")
    if m < 0:
        raise ContractError("series order m must be >= 0")
    B = dt * A
    rho = spectral_radius_estimate(B)
    if rho >= 1.0:
        raise DivergenceWarningError(
            f"spectral radius estimate {rho:.4f} >= 1; geometric series diverges"
        )
    if rho >= 0.95:
        warnings.warn(
            f"spectral radius estimate {rho:.4f} close to 1; series converges slowly",
            RuntimeWarning,
            stacklevel=2,
        )
    acc = u.copy()
    term = u
    for _ in range(m):
        term = B @ term
        acc = acc + term
    return acc


# ---------------------------------------------------------------------------
# integrate driver


@dataclass(frozen=True)
class Scheme:
    """Scheme selector for integrate(); build through make_scheme()."""

    kind: str
    tableau: Optional[RKTableau] = None
    coeffs: Optional[SchemeCoefficients] = None
    lm_k: Optional[float] = None
    tol: float = 1e-10
    max_iter: int = 50


SCHEME_NAMES = ("forward_euler", "backward_euler", "rk2", "rk4", "ab2", "lm")


def make_scheme(
    name: str, k: Optional[float] = None, tol: float = 1e-10, max_iter: int = 50
) -> Scheme:
    if name == "forward_euler":
        return Scheme("forward_euler")
    if name == "backward_euler":
        return Scheme("backward_euler", tol=tol, max_iter=max_iter)
    if name == "rk2":
        return Scheme("rk", tableau=rk2_tableau())
    if name == "rk4":
        return Scheme("rk", tableau=rk4_tableau())
    if name == "ab2":
        return Scheme("lmm", coeffs=SchemeCoefficients.adams_bashforth2())
    if name == "lm":
        if k is None:
            raise ConfigurationError("scheme 'lm' needs a coefficient k")
        return Scheme("lm", lm_k=float(k))
    raise ConfigurationError(
        f"unknown scheme {name!r}; valid: {', '.join(SCHEME_NAMES)}"
    )


def integrate(
    scheme: Scheme,
    f: VectorField,
    u0: Array,
    t0: float,
    T: float,
    dt: float,
    max_steps: int = 10_000_000,
) -> Trajectory:
    """March from t0 to T in uniform steps (the final step is clipped onto T).

    Multistep schemes bootstrap missing history with RK2 steps. The two-step
    trainable-coefficient scheme bootstraps on its leading-order effective
    field f/(1+k): starting on the raw field perturbs the principal mode at
    first order in dt and would mask the scheme's own accuracy.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    if T < t0:
        raise ContractError("T must be >= t0")
    if T == t0:
        return Trajectory(np.array([t0]), u0[None, :].copy())
    if dt <= 0:
        raise ContractError("dt must be positive")
    n = max(1, int(math.ceil((T - t0) / dt - 1e-9)))
    if n > max_steps:
        raise ContractError(f"{n} steps exceed the budget of {max_steps}")

    if scheme.kind == "forward_euler":
        def step(i, t, h, u):
            return forward_euler_step(f, u, t, h)

    elif scheme.kind == "backward_euler":
        def step(i, t, h, u):
            return backward_euler_step(f, u, t, h, scheme.tol, scheme.max_iter)

    elif scheme.kind == "rk":
        def step(i, t, h, u):
            return explicit_rk_step(scheme.tableau, f, u, t, h)

    elif scheme.kind == "lmm":
        coeffs = scheme.coeffs
        rk2 = rk2_tableau()
        hist: deque = deque(maxlen=coeffs.k)

        def step(i, t, h, u):
            hist.appendleft((t, u))
            if len(hist) < coeffs.k:
                return explicit_rk_step(rk2, f, u, t, h)
            return lmm_step(coeffs, f, list(hist), h)

    elif scheme.kind == "lm":
        k = scheme.lm_k
        if 1.0 + k == 0.0:
            raise ConfigurationError("lm scheme with k = -1 has no leading field")
        lead = VectorField(evaluate=lambda u_, t_: f(u_, t_) / (1.0 + k))
        rk2 = rk2_tableau()
        prev = {"u": None}

        def step(i, t, h, u):
            if i == 0:
                prev["u"] = u
                return explicit_rk_step(rk2, lead, u, t, h)
            u_new = lm_architecture_step(k, u, prev["u"], f(u, t), h)
            prev["u"] = u
            return u_new

    else:
        raise ConfigurationError(f"unknown scheme kind {scheme.kind!r}")

    times = np.empty(n + 1)
    states = np.empty((n + 1, u0.size))
    times[0] = t0
    states[0] = u0
    u = u0
    for i in range(n):
        t = times[i]
        t_next = T if i == n - 1 else t0 + (i + 1) * dt
        try:
            u = step(i, t, t_next - t, u)
        except OverflowError_ as exc:
            raise OverflowError_(str(exc), step_index=i) from None
        times[i + 1] = t_next
        states[i + 1] = u
    return Trajectory(times, states)
