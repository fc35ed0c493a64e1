"""Dense vector/matrix primitives, vector fields, and canonical test problems.

States are plain 1-d float64 numpy arrays. A VectorField wraps an evaluable
map (state, time) -> state together with an optional jacobian; the canonical
test problems bundle a field with a closed-form solution so integrators can
be checked against an exact answer.

All values are immutable by convention: operations return fresh arrays and
never write into their inputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

Array = np.ndarray

_FD_BASE_STEP = 1e-6  # per-coordinate step is scaled by max(1, |x_i|)


def as_state(values) -> Array:
    """Coerce to a finite 1-d float64 vector."""
    u = np.asarray(values, dtype=np.float64)
    if u.ndim != 1 or u.size < 1:
        raise DimensionError(f"state must be a 1-d vector, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("state contains non-finite entries")
    return u


@dataclass(frozen=True)
class VectorField:
    """Right-hand side f of u' = f(u, t), with an optional jacobian."""

    evaluate: Callable[[Array, float], Array]
    jacobian: Optional[Callable[[Array, float], Array]] = None

    def __call__(self, u: Array, t: float = 0.0) -> Array:
        return self.evaluate(u, t)


@dataclass(frozen=True)
class Trajectory:
    """Time-ordered sequence of states produced by an integrator."""

    times: Array
    states: Array  # shape (len(times), d)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        s = np.asarray(self.states, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] != t.shape[0]:
            raise DimensionError("times and states must have matching length")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)

    @property
    def final(self) -> Array:
        return self.states[-1]


@dataclass(frozen=True)
class TestProblem:
    """A field plus its exact solution, used as an oracle in order tests."""

    name: str
    field: VectorField
    exact: Callable[[float], Array]
    u0: Array
    horizon: float


def linear_field(A) -> VectorField:
    """Field u -> A @ u with constant jacobian A."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"linear field needs a square matrix, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains non-finite entries")
    return VectorField(
        evaluate=lambda u, t: A @ u,
        jacobian=lambda u, t: A,
    )


_GRADFLOW_Q = np.array([[2.0, 0.5], [0.5, 1.0]])  # symmetric positive definite


def make_test_problem(name: str, u0=None, horizon: float = 1.0) -> TestProblem:
    """Canonical problems with closed-form solutions.

    exp_decay: u' = -u.  harmonic: 2-d rotation generator.  quadratic_gradflow:
    u' = -Q u with fixed SPD Q, solved through the eigendecomposition of Q.
    """
    if name == "exp_decay":
        u0 = as_state([1.0] if u0 is None else u0)
        fld = linear_field(-np.eye(u0.size))
        return TestProblem(name, fld, lambda t: np.exp(-t) * u0, u0, horizon)

    if name == "harmonic":
        u0 = as_state([1.0, 0.0] if u0 is None else u0)
        if u0.size != 2:
            raise DimensionError("harmonic problem is 2-dimensional")
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])

        def exact(t, u0=u0):
            c, s = np.cos(t), np.sin(t)
            return np.array([c * u0[0] + s * u0[1], -s * u0[0] + c * u0[1]])

        return TestProblem(name, linear_field(A), exact, u0, horizon)

    if name == "quadratic_gradflow":
        u0 = as_state([1.0, 1.0] if u0 is None else u0)
        if u0.size != 2:
            raise DimensionError("quadratic_gradflow problem is 2-dimensional")
        Q = _GRADFLOW_Q
        w, V = np.linalg.eigh(Q)

        def exact(t, u0=u0, w=w, V=V):
            return V @ (np.exp(-w * t) * (V.T @ u0))

        return TestProblem(name, linear_field(-Q), exact, u0, horizon)

    raise ConfigurationError(
        f"unknown test problem {name!r}; valid: exp_decay, harmonic, quadratic_gradflow"
    )


def gradflow_potential(u: Array) -> float:
    """The quadratic potential g with -grad g matching quadratic_gradflow."""
    u = np.asarray(u, dtype=np.float64)
    return 0.5 * float(u @ (_GRADFLOW_Q @ u))


def finite_difference_jacobian(field: VectorField, u: Array, t: float = 0.0) -> Array:
    """Central-difference jacobian with per-coordinate step 1e-6 * max(1, |x_i|)."""
    u = np.asarray(u, dtype=np.float64)
    d = u.size
    J = np.empty((d, d))
    for i in range(d):
        h = _FD_BASE_STEP * max(1.0, abs(u[i]))
        up, dn = u.copy(), u.copy()
        up[i] += h
        dn[i] -= h
        J[:, i] = (field(up, t) - field(dn, t)) / (2.0 * h)
    return J


def check_jacobian(field: VectorField, states: Sequence[Array], t: float = 0.0) -> float:
    """Max relative error of the provided jacobian against central differences."""
    if field.jacobian is None:
        raise ContractError("field has no jacobian to check")
    worst = 0.0
    for u in states:
        u = np.asarray(u, dtype=np.float64)
        J = field.jacobian(u, t)
        J_fd = finite_difference_jacobian(field, u, t)
        denom = max(1.0, float(np.max(np.abs(J))))
        worst = max(worst, float(np.max(np.abs(J - J_fd))) / denom)
    return worst


class RngHub:
    """Seeded source of named, mutually independent random streams.

    Each stream name maps to its own numpy Generator derived from
    (seed, sha256(name)), so draws in one stream never perturb another and
    results do not depend on the order in which streams are consumed.
    Repeated stream() calls with the same name restart the stream; hold on to
    the returned generator to keep drawing from it.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)

    @staticmethod
    def _key(name: str) -> int:
        return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "big")

    def stream(self, name: str) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self._key(name),))
        return np.random.default_rng(ss)

    def stream_indexed(self, name: str, index: int) -> np.random.Generator:
        """Sub-stream keyed by (seed, name, index), e.g. one per sample path."""
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self._key(name), int(index))
        )
        return np.random.default_rng(ss)
