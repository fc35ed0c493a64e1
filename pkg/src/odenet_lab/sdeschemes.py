"""Stochastic step rules and weak-convergence experiments.

The Euler scheme for dX = f dt + g dB stays weakly convergent when the
Gaussian increment is swapped for any law whose first three moments satisfy
|E| + |E^3| + |E^2 - dt| <= K dt^2. This module provides three such laws
(and a deliberately failing constant-shift control), the moment check, path
simulation with pluggable increments, a weak-error sweep with confidence
intervals, and the single-step forms of the shake-shake, block-drop and
two-step block-drop training rules.

Driving noise is scalar per step: the limit dynamics the step rules
approximate carry rank-one diffusion along the branch direction, matching
the one random draw each block makes. Stochastic drift/diffusion both use
the standard Ito convention (drift times dt plus diffusion times dB).

The stochastic-control reading of noise injection (minimize expected loss
plus running regularization subject to the noisy dynamics) frames these
rules; no control solver lives here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtri

from .dyncore import Array, RngHub, VectorField
from .errors import ConfigurationError, ContractError, OverflowError_

INCREMENT_KINDS = ("gaussian", "two_point", "uniform", "constant_shift")


@dataclass(frozen=True)
class IncrementDistribution:
    """One-step driving-noise law with variance dt (constant_shift excepted).

    gaussian: N(0, dt). two_point: +-sqrt(dt) with probability 1/2 each.
    uniform: U[-sqrt(3 dt), +sqrt(3 dt)]. constant_shift: the degenerate law
    identically sqrt(dt), kept as a negative control that violates the
    moment condition.
    """

    kind: str
    dt: float

    def __post_init__(self):
        if self.kind not in INCREMENT_KINDS:
            raise ConfigurationError(
                f"unknown increment kind {self.kind!r}; valid: {INCREMENT_KINDS}"
            )
        if self.dt <= 0:
            raise ContractError("dt must be positive")

    def from_uniform(self, u: Array) -> Array:
        """Map U(0,1) draws to increments; shared draws couple the kinds."""
        root = math.sqrt(self.dt)
        if self.kind == "gaussian":
            return root * ndtri(u)
        if self.kind == "two_point":
            return np.where(u < 0.5, -root, root)
        if self.kind == "uniform":
            return math.sqrt(3.0 * self.dt) * (2.0 * u - 1.0)
        return np.full_like(np.asarray(u, dtype=np.float64), root)


def sample_increment(dist: IncrementDistribution, rng: np.random.Generator,
                     size: Optional[int] = None) -> Array:
    """Draw one increment (or a vector of them) from the given law."""
    u = rng.random(size=size)
    return dist.from_uniform(np.asarray(u))


def moment_condition_check(dist: IncrementDistribution, dt: Optional[float] = None,
                           k_const: float = 1.0) -> Tuple[float, float, float, bool]:
    """Closed-form (|E|, |E^3|, |E^2 - dt|) and the K dt^2 verdict."""
    dt = dist.dt if dt is None else float(dt)
    if dt <= 0:
        raise ContractError("dt must be positive")
    if dist.kind in ("gaussian", "two_point", "uniform"):
        m1, m3, m2gap = 0.0, 0.0, 0.0
    else:  # constant shift sqrt(dt)
        m1 = math.sqrt(dt)
        m3 = dt ** 1.5
        m2gap = 0.0
    bound = k_const * dt * dt
    return m1, m3, m2gap, (m1 <= bound and m3 <= bound and m2gap <= bound)


@dataclass(frozen=True)
class SDEProblem:
    """Drift/diffusion pair with optional closed-form expectations.

    diffusion maps (state, t) to a state-shaped vector multiplied by the
    scalar driving increment. analytic_expectation(phi_name, T) returns
    E[phi(X_T)] when known.
    """

    name: str
    drift: VectorField
    diffusion: Callable[[Array, float], Array]
    x0: Array
    analytic_expectation: Optional[Callable[[str, float], float]] = None


def gbm_problem(mu: float = 0.5, sigma: float = 0.2, x0: float = 1.0) -> SDEProblem:
    """Geometric Brownian motion; E[X_T] = x0 exp(mu T) serves as the oracle."""
    x0v = np.array([float(x0)])

    def expectation(phi: str, T: float) -> float:
        if phi == "identity":
            return float(x0) * math.exp(mu * T)
        if phi == "second_moment":
            return float(x0) ** 2 * math.exp((2.0 * mu + sigma * sigma) * T)
        raise ConfigurationError(f"no closed form for phi={phi!r}")

    return SDEProblem(
        name="gbm",
        drift=VectorField(evaluate=lambda x, t: mu * x),
        diffusion=lambda x, t: sigma * x,
        x0=x0v,
        analytic_expectation=expectation,
    )


def euler_maruyama_step(prob: SDEProblem, X: Array, t: float, dt: float,
                        dW: float) -> Array:
    """X + f(X,t) dt + g(X,t) dW, the increment source pluggable."""
    if dt <= 0:
        raise ContractError("dt must be positive")
    out = X + dt * prob.drift(X, t) + prob.diffusion(X, t) * dW
    if not np.all(np.isfinite(out)):
        raise OverflowError_("Euler-Maruyama step produced a non-finite state")
    return out


def simulate_paths(
    prob: SDEProblem,
    dist_kind: str,
    T: float,
    dt: float,
    paths: int,
    rng: np.random.Generator,
) -> Array:
    """Vectorized terminal states of `paths` independent scalar-noise paths.

    All paths advance in lockstep; the uniform draw block per step is laid
    out path-major so results do not depend on how work would be scheduled.
    """
    if paths < 1:
        raise ContractError("need at least one path")
    n = max(1, int(round(T / dt)))
    dist = IncrementDistribution(dist_kind, dt)
    d = prob.x0.size
    X = np.tile(prob.x0, (paths, 1))
    t = 0.0
    for _ in range(n):
        dW = dist.from_uniform(rng.random(size=paths))[:, None]
        drift = np.apply_along_axis(prob.drift, 1, X, t) if d > 1 else prob.drift(X, t)
        diff = np.apply_along_axis(prob.diffusion, 1, X, t) if d > 1 else prob.diffusion(X, t)
        X = X + dt * drift + diff * dW
        t += dt
    if not np.all(np.isfinite(X)):
        raise OverflowError_("path simulation produced non-finite states")
    return X


_PHI: dict = {
    "identity": lambda x: x[:, 0],
    "second_moment": lambda x: x[:, 0] ** 2,
}


@dataclass(frozen=True)
class WeakErrorReport:
    """Monte Carlo estimates of E[phi(X_T)] across step sizes."""

    dts: Tuple[float, ...]
    estimates: Tuple[float, ...]
    ci_halfwidths: Tuple[float, ...]  # 95% half-widths of the mean
    analytic: float
    biases: Tuple[float, ...]
    bias_slope: Optional[float]  # None when undefined or unresolvable
    inconclusive: bool
    paths: int

    def __post_init__(self):
        if self.paths < 100_000 and any(h > 1e-3 for h in self.ci_halfwidths):
            # accepted only when precision is bought some other way
            raise ContractError(
                "fewer than 1e5 paths requires ci half-widths <= 1e-3"
            )


def weak_error_sweep(
    prob: SDEProblem,
    dist_kind: str,
    phi: str,
    dts: Sequence[float],
    paths: int,
    seed: int,
    T: float = 1.0,
) -> WeakErrorReport:
    """Bias of E[phi(X_T)] estimates per dt, with a log-log bias slope.

    Runs with equal seeds share their underlying uniform draws across
    increment kinds (common random numbers), so twin sweeps with different
    laws are positively coupled and their difference is mostly bias. The
    slope is fitted only over step sizes whose bias clears the confidence
    half-width; if none do, the report is flagged inconclusive.
    """
    if prob.analytic_expectation is None:
        raise ContractError("weak_error_sweep needs an analytic expectation")
    if paths < 1:
        raise ContractError("paths must be positive")
    if phi not in _PHI:
        raise ConfigurationError(f"unknown test function {phi!r}; valid: {sorted(_PHI)}")
    hub = RngHub(seed)
    analytic = prob.analytic_expectation(phi, T)

    estimates, halfwidths, biases = [], [], []
    for i, dt in enumerate(dts):
        rng = hub.stream_indexed("weak_sweep", i)
        XT = simulate_paths(prob, dist_kind, T, dt, paths, rng)
        vals = _PHI[phi](XT)
        est = float(vals.mean())
        se = float(vals.std(ddof=1)) / math.sqrt(paths)
        estimates.append(est)
        halfwidths.append(1.96 * se)
        biases.append(abs(est - analytic))

    resolvable = [i for i in range(len(dts)) if biases[i] > halfwidths[i]]
    slope = None
    if len(dts) >= 2 and len(resolvable) >= 2:
        x = np.log([dts[i] for i in resolvable])
        y = np.log([biases[i] for i in resolvable])
        slope = float(np.polyfit(x, y, 1)[0])
    return WeakErrorReport(
        dts=tuple(float(d) for d in dts),
        estimates=tuple(estimates),
        ci_halfwidths=tuple(halfwidths),
        analytic=analytic,
        biases=tuple(biases),
        bias_slope=slope,
        inconclusive=len(resolvable) == 0,
        paths=paths,
    )


# ---------------------------------------------------------------------------
# single-step training rules


def shake_shake_step(f1_val: Array, f2_val: Array, X: Array, dt: float,
                     eta: float) -> Array:
    """Random convex mix of two branches, embedded at step size dt.

    X + (dt/2 + sqrt(dt)(eta - 1/2)) f1 + (dt/2 + sqrt(dt)(1/2 - eta)) f2;
    at dt = 1 this is exactly X + eta f1 + (1 - eta) f2.
    """
    if not 0.0 <= eta <= 1.0:
        raise ContractError("eta must lie in [0, 1]")
    root = math.sqrt(dt)
    c1 = 0.5 * dt + root * (eta - 0.5)
    c2 = 0.5 * dt + root * (0.5 - eta)
    return X + c1 * f1_val + c2 * f2_val


def stochastic_depth_step(f_val: Array, X: Array, dt: float, p_n: float,
                          eta_n: int) -> Array:
    """Block-drop update X + (dt p + sqrt(dt)(eta - p)) f.

    eta is the Bernoulli(p) keep indicator; at dt = 1 the update is X + eta f.
    """
    if not 0.0 < p_n < 1.0:
        raise ContractError("p_n must lie in (0, 1)")
    if eta_n not in (0, 1):
        raise ContractError("eta_n must be 0 or 1")
    coeff = dt * p_n + math.sqrt(dt) * (eta_n - p_n)
    return X + coeff * f_val


def stochastic_lm_step(X_n: Array, X_prev: Array, f_val: Array, g_n: float,
                       eta_n: int) -> Array:
    """Two-step block-drop update (2 + g) X_n - (1 + g) X_prev + eta f.

    With g = -1 - k and eta = 1 this reproduces the deterministic two-step
    architecture update with coefficient k.
    """
    if eta_n not in (0, 1):
        raise ContractError("eta_n must be 0 or 1")
    X_n = np.asarray(X_n, dtype=np.float64)
    X_prev = np.asarray(X_prev, dtype=np.float64)
    f_val = np.asarray(f_val, dtype=np.float64)
    if X_n.shape != X_prev.shape or X_n.shape != f_val.shape:
        raise ContractError("stochastic_lm_step operands must share shape")
    return (2.0 + g_n) * X_n - (1.0 + g_n) * X_prev + eta_n * f_val
