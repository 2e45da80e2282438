"""Projection ROMs on trial manifolds: manifold Galerkin, manifold LSPG and baselines.

A trial manifold represents states as ``x_ref + g(xi)``.  The Galerkin ROM
solves the time-discretized ODE ``dxi/dt = J_g^+ f`` with a quasi-Newton
method; the LSPG ROM minimizes the FOM discrete residual over the manifold
with Gauss-Newton.  Both globalize with a strong-Wolfe line search.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .autoencoder import AutoencoderModel
from .fom.core import EPS, FomModel, OdeResidual, StepFailure
from .fom.scheme import LinearMultistepScheme
from .io import Reader, Writer

ROM_MAGIC = b"MROM-ROM"
METHODS = ("galerkin", "lspg", "encoder-galerkin")


class SingularManifold(StepFailure):
    """Decoder Jacobian lost full column rank."""


class LineSearchError(StepFailure):
    pass


# ---------------------------------------------------------------------------
# Trial manifolds


class TrialManifold:
    """``x(xi) = x_ref + g(xi)`` with decoder Jacobian ``J_g``."""

    x_ref: np.ndarray
    xi0: np.ndarray

    @property
    def dim(self) -> int:
        return self.xi0.size

    def decode(self, xi) -> np.ndarray:
        raise NotImplementedError

    def decode_with_jacobian(self, xi) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def state(self, xi) -> np.ndarray:
        return self.x_ref + self.decode(xi)

    def state_with_jacobian(self, xi):
        g, J = self.decode_with_jacobian(xi)
        return self.x_ref + g, J


class AffineManifold(TrialManifold):
    """``x_ref + Phi xi`` with orthonormal ``Phi``."""

    def __init__(self, phi, x_ref, check: bool = True):
        self.phi = np.asarray(phi, dtype=np.float64)
        if check:
            dev = np.abs(self.phi.T @ self.phi - np.eye(self.phi.shape[1])).max()
            if dev > 1e-10:
                raise ValueError(f"basis is not orthonormal (deviation {dev:.2e})")
        self.x_ref = np.asarray(x_ref, dtype=np.float64)
        self.xi0 = np.zeros(self.phi.shape[1])

    def decode(self, xi):
        return self.phi @ xi

    def decode_with_jacobian(self, xi):
        return self.phi @ xi, self.phi


class AutoencoderManifold(TrialManifold):
    """Decoder of a trained autoencoder; ``xi0 = h_enc(0)`` and ``x_ref = x0 - g(xi0)``."""

    def __init__(self, model: AutoencoderModel, x0):
        self.model = model
        x0 = np.asarray(x0, dtype=np.float64)
        self.xi0 = model.encode(np.zeros(model.state_dim))
        self.x_ref = x0 - model.decode(self.xi0)

    def decode(self, xi):
        return self.model.decode(xi)

    def decode_with_jacobian(self, xi):
        return self.model.decode_with_jacobian(xi)

    def encode_with_jacobian_action(self, x, V):
        return self.model.encode_with_jacobian_action(x, V)


def manifold_from_autoencoder(model: AutoencoderModel, x0) -> AutoencoderManifold:
    return AutoencoderManifold(model, x0)


def manifold_from_pod(phi, x0) -> AffineManifold:
    return AffineManifold(phi, x0)


# ---------------------------------------------------------------------------
# Solver configuration and line search


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iter: int = 25
    c1: float = 1e-4
    c2: float = 0.9
    max_trials: int = 30
    line_search: bool = True

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("line-search constants must satisfy 0 < c1 < c2 < 1")
        if self.tol <= 0 or self.max_iter < 0:
            raise ValueError("invalid tolerance or iteration limit")


def wolfe_line_search(merit: Callable[[float], tuple[float, float]], phi0: float, dphi0: float,
                      lam_init: float = 1.0, c1: float = 1e-4, c2: float = 0.9,
                      max_trials: int = 30, lam_max: float = 64.0) -> tuple[float, int]:
    """Bracket-and-zoom search for a step satisfying the strong Wolfe conditions.

    ``merit(lam)`` returns ``(phi(lam), phi'(lam))``.  Returns ``(lam, trials)``.
    """
    if not dphi0 < 0:
        raise ValueError(f"not a descent direction (phi'(0) = {dphi0:.3e})")
    trials = 0

    def armijo(lam, phi):
        return phi <= phi0 + c1 * lam * dphi0

    def curvature(dphi):
        return abs(dphi) <= -c2 * dphi0

    def zoom(lo, phi_lo, dphi_lo, hi, phi_hi):
        nonlocal trials
        while trials < max_trials:
            # minimizer of the quadratic through (lo, phi_lo, dphi_lo) and (hi, phi_hi), safeguarded
            d = hi - lo
            denom = 2.0 * (phi_hi - phi_lo - dphi_lo * d)
            lam = lo - dphi_lo * d * d / denom if denom > 0 else lo + 0.5 * d
            a, b = min(lo, hi), max(lo, hi)
            lam = min(max(lam, a + 0.1 * (b - a)), b - 0.1 * (b - a))
            phi, dphi = merit(lam)
            trials += 1
            if not np.isfinite(phi) or not armijo(lam, phi) or phi >= phi_lo:
                hi, phi_hi = lam, phi if np.isfinite(phi) else np.inf
            else:
                if curvature(dphi):
                    return lam
                if dphi * (hi - lo) >= 0:
                    hi, phi_hi = lo, phi_lo
                lo, phi_lo, dphi_lo = lam, phi, dphi
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        raise LineSearchError(f"strong Wolfe step not found in {trials} trials")

    lam_prev, phi_prev, dphi_prev = 0.0, phi0, dphi0
    lam = lam_init
    while trials < max_trials:
        phi, dphi = merit(lam)
        trials += 1
        if not np.isfinite(phi) or not armijo(lam, phi) or (lam_prev > 0 and phi >= phi_prev):
            return zoom(lam_prev, phi_prev, dphi_prev, lam, phi if np.isfinite(phi) else np.inf), trials
        if curvature(dphi):
            return lam, trials
        if dphi >= 0:
            return zoom(lam, phi, dphi, lam_prev, phi_prev), trials
        lam_prev, phi_prev, dphi_prev = lam, phi, dphi
        lam = min(2.0 * lam, lam_max)
    raise LineSearchError(f"strong Wolfe step not found in {trials} trials")


# ---------------------------------------------------------------------------
# Galerkin


def pinv_apply(J, f, rank_tol: float = 1e-10):
    """``J^+ f`` by thin Householder QR; also returns ``(Q, R)``."""
    Q, R = np.linalg.qr(J)
    s = np.linalg.svd(R, compute_uv=False)
    if s[0] == 0.0 or s[-1] < rank_tol * s[0]:
        raise SingularManifold("decoder Jacobian is rank deficient "
                               f"(singular value ratio {s[-1] / s[0] if s[0] else 0.0:.2e})")
    return sla.solve_triangular(R, Q.T @ f), Q, R


def galerkin_reduced_velocity(manifold: TrialManifold, xi, t, mu, fom: FomModel) -> np.ndarray:
    """``J_g(xi)^+ f(x_ref + g(xi), t; mu)``."""
    x, J = manifold.state_with_jacobian(xi)
    return pinv_apply(J, fom.velocity(x, t, mu))[0]


class GalerkinResidual:
    """Manifold Galerkin discrete residual; history pullbacks ``J^+ f`` are cached."""

    def __init__(self, manifold, scheme: LinearMultistepScheme, xi_history: Sequence, t_n: float,
                 mu, fom: FomModel, v_history: Sequence | None = None):
        k = scheme.steps
        if len(xi_history) != k:
            raise ValueError(f"history holds {len(xi_history)} states, scheme needs {k}")
        self.manifold, self.scheme, self.t_n, self.mu, self.fom = manifold, scheme, t_n, mu, fom
        a, b, dt = scheme.alpha, scheme.beta, scheme.dt
        const = np.zeros(manifold.dim)
        for j in range(1, k + 1):
            const += a[j] * np.asarray(xi_history[j - 1])
            if b[j] != 0.0:
                vj = v_history[j - 1] if v_history is not None else galerkin_reduced_velocity(
                    manifold, xi_history[j - 1], t_n - j * dt, mu, fom)
                const -= dt * b[j] * vj
        self.const = const

    def evaluate(self, xi, need_jacobian: bool = False):
        """Residual, reduced velocity and (optionally) the quasi-Newton Jacobian."""
        s = self.scheme
        x, J = self.manifold.state_with_jacobian(xi)
        self.x, self.J = x, J
        f = self.fom.velocity(x, self.t_n, self.mu)
        v, Q, R = pinv_apply(J, f)
        r = s.alpha[0] * xi - s.dt * s.beta[0] * v + self.const
        if not need_jacobian:
            return r, v, None
        AJ = self.fom.jacobian(x, self.t_n, self.mu) @ J
        Jt = s.alpha[0] * np.eye(xi.size) - s.dt * s.beta[0] * sla.solve_triangular(R, Q.T @ AJ)
        return r, v, Jt

    def __call__(self, xi):
        return self.evaluate(xi)[0]


@dataclass
class StepInfo:
    iterations: int
    residual_norm: float
    initial_norm: float
    trials: int = 0
    descent: list = field(default_factory=list)      # phi'(0) per iteration
    stalled: bool = False                            # stopped by the state-step test


def _state_step_small(J, p, x, tol) -> bool:
    """A full step would move the reconstructed state by less than ``tol`` relative."""
    return np.linalg.norm(J @ p) <= tol * np.linalg.norm(x)


def _fd_step(xi, p):
    return np.cbrt(EPS) * max(1.0, np.linalg.norm(xi)) / max(np.linalg.norm(p), 1e-300)


def _backtrack(res, xi, norm, directions, max_trials):
    """Halve the step along each direction in turn until ``||r||`` strictly decreases.

    Returns ``(lam, p, trials)``; raises ``LineSearchError`` when no direction gives a decrease.
    """
    trials = 0
    for p in directions:
        lam = 1.0
        for _ in range(max_trials):
            trials += 1
            if np.linalg.norm(res(xi + lam * p)) < norm:
                return lam, p, trials
            lam *= 0.5
    raise LineSearchError(f"no decrease along any direction in {trials} trials", norm)


def _fd_jacobian(res, xi):
    """Central-difference Jacobian of the reduced residual, one column per coordinate."""
    h = np.cbrt(EPS) * np.maximum(1.0, np.abs(xi))
    cols = []
    for i in range(xi.size):
        e = np.zeros_like(xi)
        e[i] = h[i]
        cols.append((res(xi + e) - res(xi - e)) / (2 * h[i]))
    return np.column_stack(cols)


def galerkin_solve(res: GalerkinResidual, guess, config: SolverConfig = SolverConfig()):
    """Quasi-Newton iterations with approximate Jacobian ``a0 I - dt b0 J^+ (df/dx) J``.

    The merit is ``phi = ||r||^2 / 2``; its directional derivative is taken by
    central differences of the residual along the search direction.  The
    neglected derivative of ``J^+`` can matter on a curved manifold: when an
    iteration contracts the residual by less than half, the rest of the step uses
    a finite-difference Jacobian, and when a direction is not a descent
    direction the iteration falls back to that Jacobian, then to steepest descent.
    If no strong-Wolfe step exists (the residual is only piecewise smooth for
    ELU-type activations), plain backtracking on ``||r||`` is used instead.
    """
    xi = np.array(guess, dtype=np.float64)
    r, _, Jt = res.evaluate(xi, True)
    r0 = norm = np.linalg.norm(r)
    info = StepInfo(0, r0, r0)
    floor = 64.0 * EPS * max(np.linalg.norm(res.const), np.linalg.norm(xi), 1e-300)
    use_fd, prev = False, np.inf
    while True:
        if not np.isfinite(norm):
            raise StepFailure("non-finite Galerkin residual", norm)
        if norm <= config.tol * r0 or norm <= floor:
            info.residual_norm = norm
            return xi, info
        if info.iterations >= config.max_iter:
            raise StepFailure(f"quasi-Newton did not converge in {info.iterations} iterations "
                              f"(residual {norm:.3e}, initial {r0:.3e})", norm)
        use_fd = use_fd or norm > 0.5 * prev
        prev = norm
        Jfd = _fd_jacobian(res, xi) if use_fd else None
        p = np.linalg.lstsq(Jfd, -r, rcond=None)[0] if use_fd else np.linalg.solve(Jt, -r)
        if _state_step_small(res.J, p, res.x, config.tol):
            info.residual_norm, info.stalled = norm, True
            return xi, info
        lam = 1.0
        if config.line_search:
            h = _fd_step(xi, p)

            def merit(lam, xi=xi, p=p, h=h):
                rl = res(xi + lam * p)
                dr = (res(xi + (lam + h) * p) - res(xi + (lam - h) * p)) / (2 * h)
                return 0.5 * float(rl @ rl), float(rl @ dr)

            dphi0 = merit(0.0)[1]
            if not dphi0 < 0:
                Jfd = _fd_jacobian(res, xi) if Jfd is None else Jfd
                for p in (np.linalg.lstsq(Jfd, -r, rcond=None)[0], -Jfd.T @ r):
                    h = _fd_step(xi, p)
                    dphi0 = merit(0.0, p=p, h=h)[1]
                    if dphi0 < 0:
                        break
                merit = partial(merit, p=p, h=h)
            info.descent.append(dphi0)
            try:
                if not dphi0 < 0:
                    raise LineSearchError(f"no descent direction found "
                                          f"(phi'(0) = {dphi0:.3e})", norm)
                lam, trials = wolfe_line_search(merit, 0.5 * norm * norm, dphi0, 1.0,
                                                config.c1, config.c2, config.max_trials)
            except LineSearchError:
                # kinks in the activation derivative make the residual only piecewise smooth
                Jfd = _fd_jacobian(res, xi) if Jfd is None else Jfd
                dirs = (p, np.linalg.lstsq(Jfd, -r, rcond=None)[0], -Jfd.T @ r)
                lam, p, trials = _backtrack(res, xi, norm, dirs, config.max_trials)
            info.trials += trials
        xi = xi + lam * p
        r, _, Jt = res.evaluate(xi, True)
        norm = np.linalg.norm(r)
        info.iterations += 1


def galerkin_odelta_residual(manifold, scheme, xi_history, xi, t_n, mu, fom, v_history=None):
    return GalerkinResidual(manifold, scheme, xi_history, t_n, mu, fom, v_history)(np.asarray(xi))


def galerkin_step(manifold, scheme, xi_history, t_n, mu, fom, config: SolverConfig = SolverConfig(),
                  guess=None, v_history=None):
    res = GalerkinResidual(manifold, scheme, xi_history, t_n, mu, fom, v_history)
    return galerkin_solve(res, xi_history[0] if guess is None else guess, config)


galerkin_quasi_newton_solve = galerkin_step


# ---------------------------------------------------------------------------
# LSPG


class LspgProblem:
    """FOM discrete residual on the manifold, ``xi -> r^n(x_ref + g(xi))``."""

    def __init__(self, manifold, scheme, state_history: Sequence, t_n, mu, fom: FomModel,
                 f_history: Sequence | None = None):
        self.manifold, self.scheme, self.fom, self.t_n, self.mu = manifold, scheme, fom, t_n, mu
        self.fom_residual = OdeResidual(fom, scheme, state_history, t_n, mu, f_history)

    def residual(self, xi) -> np.ndarray:
        return self.fom_residual(self.manifold.state(xi))

    def residual_and_test_basis(self, xi):
        """Residual and ``Psi = (a0 I - dt b0 df/dx) J_g``."""
        s = self.scheme
        x, J = self.manifold.state_with_jacobian(xi)
        self.x, self.J = x, J
        r = self.fom_residual(x)
        Psi = s.alpha[0] * J
        if s.beta[0] != 0.0:
            Psi = Psi - (s.dt * s.beta[0]) * (self.fom.jacobian(x, self.t_n, self.mu) @ J)
        return r, np.asarray(Psi)


def lspg_objective_and_test_basis(manifold, scheme, state_history, xi, t_n, mu, fom):
    return LspgProblem(manifold, scheme, state_history, t_n, mu, fom).residual_and_test_basis(xi)


def _normal_step(Psi, g):
    H = Psi.T @ Psi
    try:
        return sla.cho_solve(sla.cho_factor(H), -g)
    except np.linalg.LinAlgError:
        reg = 1e-12 * max(np.max(np.diag(H)), 1e-300)
        try:
            return sla.cho_solve(sla.cho_factor(H + reg * np.eye(H.shape[0])), -g)
        except np.linalg.LinAlgError:
            raise StepFailure("Gauss-Newton normal matrix is singular") from None


def gauss_newton_solve(problem: LspgProblem, guess, config: SolverConfig = SolverConfig()):
    """Minimize ``||r(xi)||^2``; stops at ``||Psi^T r|| <= tol ||Psi^T r||_initial``."""
    xi = np.array(guess, dtype=np.float64)
    r, Psi = problem.residual_and_test_basis(xi)
    g = Psi.T @ r
    g0 = gnorm = np.linalg.norm(g)
    info = StepInfo(0, np.linalg.norm(r), g0)
    while True:
        if not np.isfinite(gnorm) or not np.all(np.isfinite(r)):
            raise StepFailure("non-finite LSPG residual", np.linalg.norm(r))
        floor = 64.0 * EPS * np.linalg.norm(Psi) * (np.linalg.norm(r) + problem.fom_residual.history_scale)
        if gnorm <= config.tol * g0 or gnorm <= floor:
            info.residual_norm = float(np.linalg.norm(r))
            return xi, info
        if info.iterations >= config.max_iter:
            raise StepFailure(f"Gauss-Newton did not converge in {info.iterations} iterations "
                              f"(gradient {gnorm:.3e}, initial {g0:.3e})", np.linalg.norm(r))
        p = _normal_step(Psi, g)
        if _state_step_small(problem.J, p, problem.x, config.tol):
            info.residual_norm, info.stalled = float(np.linalg.norm(r)), True
            return xi, info
        lam = 1.0
        phi0 = 0.5 * float(r @ r)
        dphi0 = float(g @ p)
        # below merit resolution the search cannot judge the step; take it in full
        resolution = 64.0 * EPS * (phi0 + np.linalg.norm(r) * problem.fom_residual.history_scale)
        if config.line_search and abs(dphi0) > resolution:
            cache = {}

            def merit(lam, xi=xi, p=p):
                rl, Pl = problem.residual_and_test_basis(xi + lam * p)
                cache[lam] = (rl, Pl, problem.x, problem.J)
                return 0.5 * float(rl @ rl), float(rl @ (Pl @ p))

            info.descent.append(dphi0)
            try:
                lam, trials = wolfe_line_search(merit, phi0, dphi0, 1.0,
                                                config.c1, config.c2, config.max_trials)
            except ValueError:
                raise LineSearchError(f"Gauss-Newton direction is not a descent direction "
                                      f"(phi'(0) = {dphi0:.3e})", np.linalg.norm(r)) from None
            info.trials += trials
            xi = xi + lam * p
            r, Psi, problem.x, problem.J = cache[lam]
        else:
            xi = xi + p
            r, Psi = problem.residual_and_test_basis(xi)
        g = Psi.T @ r
        gnorm = np.linalg.norm(g)
        info.iterations += 1


def lspg_step(manifold, scheme, state_history, t_n, mu, fom, config: SolverConfig = SolverConfig(),
              guess=None, f_history=None):
    if guess is None:
        raise ValueError("LSPG step needs an initial guess for the reduced coordinates")
    problem = LspgProblem(manifold, scheme, state_history, t_n, mu, fom, f_history)
    return gauss_newton_solve(problem, guess, config)


# ---------------------------------------------------------------------------
# Encoder-Galerkin baseline


class EncoderGalerkinResidual:
    """``a0 xi - dt b0 h_enc(f(x(xi))) + history``: velocity encoded by the encoder."""

    def __init__(self, manifold: AutoencoderManifold, scheme, xi_history, t_n, mu, fom):
        self.manifold, self.scheme, self.t_n, self.mu, self.fom = manifold, scheme, t_n, mu, fom
        a, b, dt = scheme.alpha, scheme.beta, scheme.dt
        const = np.zeros(manifold.dim)
        for j in range(1, scheme.steps + 1):
            xj = np.asarray(xi_history[j - 1])
            const += a[j] * xj
            if b[j] != 0.0:
                f = fom.velocity(manifold.state(xj), t_n - j * dt, mu)
                const -= dt * b[j] * manifold.model.encode(f)
        self.const = const

    def evaluate(self, xi):
        s = self.scheme
        x, J = self.manifold.state_with_jacobian(xi)
        f = self.fom.velocity(x, self.t_n, self.mu)
        AJ = self.fom.jacobian(x, self.t_n, self.mu) @ J
        v, dv = self.manifold.encode_with_jacobian_action(f, AJ)
        r = s.alpha[0] * xi - s.dt * s.beta[0] * v + self.const
        return r, s.alpha[0] * np.eye(xi.size) - s.dt * s.beta[0] * dv


def encoder_galerkin_step(manifold, scheme, xi_history, t_n, mu, fom,
                          config: SolverConfig = SolverConfig(), guess=None):
    """Plain Newton iterations on the encoder-Galerkin residual."""
    res = EncoderGalerkinResidual(manifold, scheme, xi_history, t_n, mu, fom)
    xi = np.array(xi_history[0] if guess is None else guess, dtype=np.float64)
    r, Jr = res.evaluate(xi)
    r0 = norm = np.linalg.norm(r)
    it = 0
    floor = 64.0 * EPS * max(np.linalg.norm(res.const), np.linalg.norm(xi), 1e-300)
    while not (norm <= config.tol * r0 or norm <= floor):
        if it >= config.max_iter or not np.isfinite(norm):
            raise StepFailure(f"Newton did not converge in {it} iterations (residual {norm:.3e})", norm)
        xi = xi + np.linalg.solve(Jr, -r)
        r, Jr = res.evaluate(xi)
        norm = np.linalg.norm(r)
        it += 1
    return xi, StepInfo(it, norm, r0)


# ---------------------------------------------------------------------------
# Time marching


@dataclass
class RomSolution:
    """Reduced trajectory, reconstructed states and per-step solver diagnostics."""

    xi: np.ndarray                 # p x (n_t + 1)
    states: np.ndarray             # N x (n_t + 1)
    dt: float
    mu: np.ndarray
    method: str
    iterations: np.ndarray         # n_t
    residual_norms: np.ndarray     # n_t
    t0: float = 0.0

    @property
    def n_steps(self) -> int:
        return self.xi.shape[1] - 1

    def save(self, path):
        w = Writer(ROM_MAGIC)
        w.u64(self.states.shape[0])
        w.u64(self.states.shape[1])
        w.f64(self.dt)
        w.u64(self.mu.size)
        for v in self.mu:
            w.f64(v)
        w.array(self.states, order="F")
        w.text(self.method)
        w.u64(self.xi.shape[0])
        w.array(self.xi, order="F")
        for it, rn in zip(self.iterations, self.residual_norms):
            w.u32(int(it))
            w.f64(rn)
        w.save(path)

    @classmethod
    def load(cls, path) -> "RomSolution":
        r = Reader.open(path, ROM_MAGIC)
        N, m = r.u64(), r.u64()
        dt = r.f64()
        mu = np.array([r.f64() for _ in range(r.u64())])
        states = np.ascontiguousarray(r.array((N, m), order="F"))
        method = r.text()
        p = r.u64()
        xi = np.ascontiguousarray(r.array((p, m), order="F"))
        its, res = [], []
        for _ in range(m - 1):
            its.append(r.u32())
            res.append(r.f64())
        r.done()
        return cls(xi, states, dt, mu, method, np.array(its, dtype=np.int64), np.array(res))


def rom_simulate(manifold: TrialManifold, scheme: LinearMultistepScheme, mu, n_steps: int,
                 method: str, fom: FomModel, config: SolverConfig = SolverConfig(),
                 t0: float = 0.0) -> RomSolution:
    """March a ROM from ``xi0``; each step starts from the previous solution."""
    if method not in METHODS:
        raise ValueError(f"unknown ROM method {method!r}; choose from {METHODS}")
    if method == "encoder-galerkin" and not isinstance(manifold, AutoencoderManifold):
        raise ValueError("encoder-galerkin needs an autoencoder manifold")
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    p = manifold.dim
    XI = np.empty((p, n_steps + 1))
    XI[:, 0] = manifold.xi0
    X = np.empty((manifold.x_ref.size, n_steps + 1))
    X[:, 0] = manifold.state(manifold.xi0)
    its = np.zeros(n_steps, dtype=np.int64)
    norms = np.zeros(n_steps)
    for n in range(1, n_steps + 1):
        sch = scheme.startup(n)
        t_n = t0 + n * scheme.dt
        hist = [XI[:, n - j] for j in range(1, sch.steps + 1)]
        try:
            if method == "galerkin":
                xi, info = galerkin_step(manifold, sch, hist, t_n, mu, fom, config)
            elif method == "lspg":
                states = [X[:, n - j] for j in range(1, sch.steps + 1)]
                xi, info = lspg_step(manifold, sch, states, t_n, mu, fom, config, guess=hist[0])
            else:
                xi, info = encoder_galerkin_step(manifold, sch, hist, t_n, mu, fom, config)
        except StepFailure as exc:
            raise type(exc)(f"{method} step {n}: {exc}", exc.residual_norm, n) from None
        XI[:, n] = xi
        X[:, n] = manifold.state(xi)
        its[n - 1] = info.iterations
        norms[n - 1] = info.residual_norm
    return RomSolution(XI, X, scheme.dt, mu, method, its, norms, t0)
