"""FOM interface, the discrete residual, Newton's method and trajectories."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..io import FormatError, Reader, Writer
from .scheme import LinearMultistepScheme

TRJ_MAGIC = b"MROM-TRJ"
EPS = np.finfo(float).eps


class StepFailure(RuntimeError):
    """Nonlinear solve did not converge; carries the last residual norm."""

    def __init__(self, message: str, residual_norm: float = np.nan, step: int | None = None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.step = step


class FomModel:
    """Parameterized ODE ``dx/dt = f(x, t; mu)``.

    Subclasses define ``velocity``, ``jacobian`` (sparse) and ``initial_state``,
    plus ``grid``/``channels`` metadata used for restriction.
    """

    n_dofs: int
    grid: tuple[int, ...]
    channels: int = 1
    param_domain: tuple[tuple[float, float], ...] = ()

    def velocity(self, x, t, mu) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x, t, mu) -> sp.csc_matrix:
        raise NotImplementedError

    def jacobian_apply(self, x, t, mu, v) -> np.ndarray:
        return self.jacobian(x, t, mu) @ v

    def initial_state(self, mu) -> np.ndarray:
        raise NotImplementedError

    def check_param(self, mu):
        mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
        if self.param_domain:
            if mu.size != len(self.param_domain):
                raise ValueError(f"expected {len(self.param_domain)} parameters, got {mu.size}")
            for v, (lo, hi) in zip(mu, self.param_domain):
                if not lo <= v <= hi:
                    warnings.warn(f"parameter {v} outside [{lo}, {hi}]", stacklevel=3)
        return mu


# ---------------------------------------------------------------------------
# Discrete residual


class OdeResidual:
    """``r(xi) = a0 xi - dt b0 f(xi) + sum_j (a_j x^{n-j} - dt b_j f(x^{n-j}))``.

    ``history`` lists ``x^{n-1}, ..., x^{n-k}`` (most recent first).  Velocities
    of the history are computed once, or taken from ``f_history``.
    """

    def __init__(self, model: FomModel, scheme: LinearMultistepScheme, history: Sequence,
                 t_n: float, mu, f_history: Sequence | None = None):
        k = scheme.steps
        if len(history) != k:
            raise ValueError(f"history holds {len(history)} states, scheme needs {k}")
        self.model, self.scheme, self.t_n, self.mu = model, scheme, t_n, mu
        self.history = [np.asarray(h, dtype=np.float64) for h in history]
        for h in self.history:
            if h.shape != (model.n_dofs,):
                raise ValueError(f"history state shape {h.shape} != ({model.n_dofs},)")
        a, b, dt = scheme.alpha, scheme.beta, scheme.dt
        const = np.zeros(model.n_dofs)
        scale = 0.0
        for j in range(1, k + 1):
            x = self.history[j - 1]
            const += a[j] * x
            scale += abs(a[j]) * np.linalg.norm(x)
            if b[j] != 0.0:
                fj = f_history[j - 1] if f_history is not None else \
                    model.velocity(x, t_n - j * dt, mu)
                const -= dt * b[j] * fj
                scale += dt * abs(b[j]) * np.linalg.norm(fj)
        self.const = const
        self.history_scale = scale

    def __call__(self, xi) -> np.ndarray:
        s = self.scheme
        return s.alpha[0] * xi - s.dt * s.beta[0] * self.model.velocity(xi, self.t_n, self.mu) + self.const

    def evaluate(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """Residual and the velocity at ``xi``."""
        s = self.scheme
        f = self.model.velocity(xi, self.t_n, self.mu)
        return s.alpha[0] * xi - s.dt * s.beta[0] * f + self.const, f

    def jacobian(self, xi):
        """``a0 I - dt b0 df/dx`` as a sparse matrix."""
        s = self.scheme
        J = self.model.jacobian(xi, self.t_n, self.mu)
        return (s.alpha[0] * sp.identity(J.shape[0], format="csc") - (s.dt * s.beta[0]) * J).tocsc()

    def roundoff_floor(self, xi, f) -> float:
        """Residual norm indistinguishable from zero at double precision."""
        s = self.scheme
        mag = abs(s.alpha[0]) * np.linalg.norm(xi) + s.dt * abs(s.beta[0]) * np.linalg.norm(f)
        return 64.0 * EPS * (mag + self.history_scale)


@dataclass
class NewtonOptions:
    tol: float = 1e-6
    max_iter: int = 25


@dataclass
class SolveInfo:
    iterations: int
    residual_norm: float
    initial_norm: float


def newton_solve(residual: OdeResidual, guess, options: NewtonOptions = NewtonOptions()):
    """Newton's method with sparse LU; stops at ``||r|| <= tol ||r(guess)||``.

    Also stops once the residual reaches round-off level, where a relative
    drop can no longer be resolved.
    """
    xi = np.array(guess, dtype=np.float64)
    r, f = residual.evaluate(xi)
    r0 = np.linalg.norm(r)
    norm = r0
    it = 0
    while True:
        if not np.isfinite(norm):
            raise StepFailure("non-finite residual", norm)
        if norm <= options.tol * r0 or norm <= residual.roundoff_floor(xi, f):
            return xi, SolveInfo(it, norm, r0)
        if it >= options.max_iter:
            raise StepFailure(f"Newton did not converge in {it} iterations "
                              f"(residual {norm:.3e}, initial {r0:.3e})", norm)
        try:
            delta = spla.splu(residual.jacobian(xi)).solve(-r)
        except RuntimeError as exc:
            raise StepFailure(f"singular Newton system: {exc}", norm) from None
        xi = xi + delta
        r, f = residual.evaluate(xi)
        norm = np.linalg.norm(r)
        it += 1


def fom_step(model, scheme, history, t_n, mu, options: NewtonOptions = NewtonOptions(),
             f_history=None):
    """One implicit step from the previous state as initial guess."""
    if not scheme.implicit:
        raise ValueError("explicit schemes are not supported")
    res = OdeResidual(model, scheme, history, t_n, mu, f_history)
    return newton_solve(res, history[0], options)


# ---------------------------------------------------------------------------
# Trajectories


@dataclass
class Trajectory:
    """States ``x^0..x^{n_t}`` as the columns of an ``N x (n_t + 1)`` array."""

    states: np.ndarray
    dt: float
    mu: np.ndarray
    t0: float = 0.0
    iterations: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def save(self, path):
        w = Writer(TRJ_MAGIC)
        w.u64(self.states.shape[0])
        w.u64(self.states.shape[1])
        w.f64(self.dt)
        w.u64(self.mu.size)
        for v in self.mu:
            w.f64(v)
        w.array(self.states, order="F")
        w.save(path)

    @classmethod
    def load(cls, path) -> "Trajectory":
        r = Reader.open(path, TRJ_MAGIC)
        N, m = r.u64(), r.u64()
        dt = r.f64()
        mu = np.array([r.f64() for _ in range(r.u64())])
        states = r.array((N, m), order="F")
        r.done()
        if m < 1:
            raise FormatError("trajectory holds no states")
        return cls(np.ascontiguousarray(states), dt, mu)


def simulate_fom(model: FomModel, scheme: LinearMultistepScheme, mu, n_steps: int,
                 options: NewtonOptions = NewtonOptions(), t0: float = 0.0) -> Trajectory:
    """March the FOM; k-step schemes start with lower-order steps."""
    mu = model.check_param(mu)
    N = model.n_dofs
    X = np.empty((N, n_steps + 1))
    X[:, 0] = model.initial_state(mu)
    iters = np.zeros(n_steps, dtype=np.int64)
    for n in range(1, n_steps + 1):
        sch = scheme.startup(n)
        history = [X[:, n - j] for j in range(1, sch.steps + 1)]
        try:
            X[:, n], info = fom_step(model, sch, history, t0 + n * scheme.dt, mu, options)
        except StepFailure as exc:
            raise StepFailure(f"step {n}: {exc}", exc.residual_norm, n) from None
        iters[n - 1] = info.iterations
    return Trajectory(X, scheme.dt, mu, t0, iters)
