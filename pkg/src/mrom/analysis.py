"""Error metrics, projection errors, Lipschitz estimates and the a-posteriori error bound."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fom.core import FomModel, StepFailure, Trajectory
from .fom.scheme import LinearMultistepScheme
from .rom import (AffineManifold, AutoencoderManifold, LineSearchError, RomSolution, SolverConfig,
                  TrialManifold, galerkin_step, lspg_step, wolfe_line_search)


def _states(traj) -> np.ndarray:
    return traj.states if hasattr(traj, "states") else np.asarray(traj, dtype=np.float64)


def relative_error(fom, rom) -> float:
    """``sqrt(sum_n ||x^n - xt^n||^2) / sqrt(sum_n ||x^n||^2)`` over steps 1..n_t."""
    X, Y = _states(fom), _states(rom)
    if X.shape != Y.shape:
        raise ValueError(f"trajectory shapes differ: {X.shape} vs {Y.shape}")
    den = np.linalg.norm(X[:, 1:])
    if den == 0.0:
        raise ValueError("reference trajectory is identically zero")
    return float(np.linalg.norm(X[:, 1:] - Y[:, 1:]) / den)


def _check_orthonormal(phi):
    dev = np.abs(phi.T @ phi - np.eye(phi.shape[1])).max()
    if dev > 1e-10:
        raise ValueError(f"basis is not orthonormal (deviation {dev:.2e})")


def projection_error(fom, phi) -> float:
    """Error of projecting the centered trajectory onto ``range(phi)``, relative to the states."""
    X = _states(fom)
    phi = np.asarray(phi, dtype=np.float64)
    _check_orthonormal(phi)
    D = X[:, 1:] - X[:, :1]
    return float(np.linalg.norm(D - phi @ (phi.T @ D)) / np.linalg.norm(X[:, 1:]))


def optimal_basis(fom, p: int) -> np.ndarray:
    """Leading ``p`` left singular vectors of the trajectory's own centered snapshots."""
    X = _states(fom)
    U = np.linalg.svd(X[:, 1:] - X[:, :1], full_matrices=False)[0]
    if p > U.shape[1]:
        raise ValueError(f"p={p} exceeds the number of snapshots {U.shape[1]}")
    return U[:, :p]


def optimal_projection_error(fom, p: int) -> float:
    return projection_error(fom, optimal_basis(fom, p))


def _project_gn(manifold: TrialManifold, target, guess, tol, max_iter):
    """Gauss-Newton for ``min ||target - g(xi)||`` with a strong-Wolfe search."""
    xi = np.array(guess, dtype=np.float64)
    g, J = manifold.decode_with_jacobian(xi)
    r = g - target
    grad = J.T @ r
    g0 = max(np.linalg.norm(grad), 1e-300)
    for _ in range(max_iter):
        gn = np.linalg.norm(grad)
        phi0 = 0.5 * float(r @ r)
        if gn <= tol * g0 or gn <= 64 * np.finfo(float).eps * np.linalg.norm(J) * np.linalg.norm(target):
            break
        p = np.linalg.lstsq(J, -r, rcond=None)[0]
        dphi0 = float(grad @ p)
        if not dphi0 < -64 * np.finfo(float).eps * max(phi0, 1e-300):
            break
        cache = {}

        def merit(lam, xi=xi, p=p):
            gl, Jl = manifold.decode_with_jacobian(xi + lam * p)
            rl = gl - target
            cache[lam] = (rl, Jl)
            return 0.5 * float(rl @ rl), float(rl @ (Jl @ p))

        try:
            lam, _ = wolfe_line_search(merit, phi0, dphi0)
        except LineSearchError:
            break           # merit change below floating-point resolution along p
        xi = xi + lam * p
        r, J = cache[lam]
        grad = J.T @ r
    return xi, float(np.linalg.norm(r))


def manifold_projection(fom, manifold: TrialManifold, tol: float = 1e-10,
                        max_iter: int = 100) -> np.ndarray:
    """Per-step best approximation on the manifold; returns the states ``x_ref + g(xi*)``."""
    X = _states(fom)
    out = np.empty_like(X)
    out[:, 0] = manifold.state(manifold.xi0)
    prev = manifold.xi0
    for n in range(1, X.shape[1]):
        target = X[:, n] - manifold.x_ref
        if isinstance(manifold, AffineManifold):
            xi = manifold.phi.T @ target
        else:
            guesses = [prev]
            if isinstance(manifold, AutoencoderManifold):
                guesses.insert(0, manifold.model.encode(X[:, n] - X[:, 0]))
            best = None
            for guess in guesses:
                try:
                    cand = _project_gn(manifold, target, guess, tol, max_iter)
                except StepFailure as exc:
                    raise StepFailure(f"manifold projection step {n}: {exc}", exc.residual_norm,
                                      n) from None
                if best is None or cand[1] < best[1]:
                    best = cand
            xi = best[0]
        out[:, n] = manifold.state(xi)
        prev = xi
    return out


def manifold_projection_error(fom, manifold: TrialManifold, tol: float = 1e-10,
                              max_iter: int = 100) -> float:
    return relative_error(fom, manifold_projection(fom, manifold, tol, max_iter))


# ---------------------------------------------------------------------------
# Lipschitz constant


def lipschitz_estimate(fom: FomModel, states, mu, t: float = 0.0, power_iters: int = 50,
                       seed: int = 0) -> float:
    """Sample-based lower bound on the Lipschitz constant of ``f``.

    Maximum of secant ratios over all pairs of sampled states and of
    power-iteration estimates of ``||df/dx||_2`` at each state.
    """
    X = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if X.shape[1] < 2:
        raise ValueError("need at least two sample states")
    F = np.column_stack([fom.velocity(X[:, i], t, mu) for i in range(X.shape[1])])
    best = 0.0
    for i in range(X.shape[1] - 1):
        dx = np.linalg.norm(X[:, i + 1:] - X[:, i:i + 1], axis=0)
        df = np.linalg.norm(F[:, i + 1:] - F[:, i:i + 1], axis=0)
        ok = dx > 0
        if ok.any():
            best = max(best, float(np.max(df[ok] / dx[ok])))
    rng = np.random.default_rng(seed)
    for i in range(X.shape[1]):
        A = fom.jacobian(X[:, i], t, mu)
        v = rng.normal(size=X.shape[0])
        v /= np.linalg.norm(v)
        sigma = 0.0
        for _ in range(power_iters):
            w = A.T @ (A @ v)
            nw = np.linalg.norm(w)
            if nw == 0.0:
                break
            v = w / nw
            sigma = float(np.linalg.norm(A @ v))
        best = max(best, sigma)
    return best


# ---------------------------------------------------------------------------
# A-posteriori error bound


def bound_constants(scheme: LinearMultistepScheme, kappa: float):
    """``h = |a0| - |b0| kappa dt`` and ``gamma_j = (|a_j| + |b_j| kappa dt) / h``."""
    a, b, dt = scheme.alpha, scheme.beta, scheme.dt
    h = abs(a[0]) - abs(b[0]) * kappa * dt
    if h <= 0:
        return h, None
    return h, [(abs(a[j]) + abs(b[j]) * kappa * dt) / h for j in range(1, scheme.steps + 1)]


@dataclass
class BoundCheck:
    applicable: bool
    h: float
    gamma: list
    bound: np.ndarray             # per step 0..n_t
    error: np.ndarray             # per step 0..n_t
    residual: np.ndarray          # ||rbar^n|| per step 1..n_t

    @property
    def satisfied(self) -> np.ndarray:
        return self.error <= self.bound

    @property
    def violations(self) -> int:
        return int(np.sum(~self.satisfied)) if self.applicable else 0


def error_bound_check(fom_traj, rom, scheme: LinearMultistepScheme, kappa: float,
                      fom: FomModel, mu=None, rel_slack: float = 1e-12) -> BoundCheck:
    """Unroll the error recursion with the FOM O-Delta-E residual at the ROM states.

    The bound at step ``n`` is ``||rbar^n|| / h + sum_j gamma_j bound^{n-j}``,
    starting from zero initial error.  ``rel_slack`` absorbs round-off in the
    comparison (relative to the state norm).
    """
    X, Y = _states(fom_traj), _states(rom)
    if X.shape != Y.shape:
        raise ValueError("trajectory shapes differ")
    mu = getattr(fom_traj, "mu", None) if mu is None else mu
    t0 = getattr(fom_traj, "t0", 0.0)
    n_t = X.shape[1] - 1
    error = np.linalg.norm(X - Y, axis=0)
    h, gamma = bound_constants(scheme, kappa)
    if gamma is None:
        return BoundCheck(False, h, [], np.full(n_t + 1, np.inf), error, np.zeros(n_t))
    bound = np.zeros(n_t + 1)
    bound[0] = error[0]
    res = np.zeros(n_t)
    F = np.column_stack([fom.velocity(Y[:, n], t0 + n * scheme.dt, mu) for n in range(n_t + 1)])
    for n in range(1, n_t + 1):
        sch = scheme.startup(n)
        hn, gn = bound_constants(sch, kappa)
        if gn is None:
            return BoundCheck(False, hn, [], np.full(n_t + 1, np.inf), error, res)
        r = sch.alpha[0] * Y[:, n] - sch.dt * sch.beta[0] * F[:, n]
        for j in range(1, sch.steps + 1):
            r = r + sch.alpha[j] * Y[:, n - j] - sch.dt * sch.beta[j] * F[:, n - j]
        res[n - 1] = np.linalg.norm(r)
        bound[n] = res[n - 1] / hn + sum(gn[j - 1] * bound[n - j] for j in range(1, sch.steps + 1))
        bound[n] += rel_slack * np.linalg.norm(X[:, n])
    return BoundCheck(True, h, gamma, bound, error, res)


# ---------------------------------------------------------------------------
# Galerkin / LSPG equivalence


@dataclass
class EquivalenceGap:
    dts: list
    gaps: list

    @property
    def ratios(self) -> list:
        return [self.gaps[i] / self.gaps[i + 1] if self.gaps[i + 1] > 0 else np.inf
                for i in range(len(self.gaps) - 1)]


def equivalence_gap(manifold: TrialManifold, fom: FomModel,
                    scheme_for: Callable[[float], LinearMultistepScheme], dts: Sequence[float],
                    xi_history: Sequence, mu, t_prev: float = 0.0,
                    config: SolverConfig = SolverConfig(tol=1e-12)) -> EquivalenceGap:
    """One-step Galerkin and LSPG solutions from a fixed reduced history, for each ``dt``."""
    gaps = []
    for dt in dts:
        sch = scheme_for(dt)
        hist = list(xi_history)[:sch.steps]
        states = [manifold.state(x) for x in hist]
        t_n = t_prev + dt
        xg, _ = galerkin_step(manifold, sch, hist, t_n, mu, fom, config)
        xl, _ = lspg_step(manifold, sch, states, t_n, mu, fom, config, guess=hist[0])
        gaps.append(float(np.linalg.norm(xg - xl)))
    return EquivalenceGap(list(dts), gaps)


# ---------------------------------------------------------------------------
# Reports


@dataclass
class ErrorReport:
    """Metrics for one ROM run; all entries are nonnegative (NaN when not computed).

    JSON keys: ``method``, ``mu``, ``dim``, ``relative_error``,
    ``pod_projection_error``, ``optimal_projection_error``,
    ``manifold_projection_error``, ``kappa``, ``h``, ``gamma``, ``bound``,
    ``true_error``, ``bound_violations``, ``bound_applicable``, ``iterations``.
    """

    method: str
    mu: list
    dim: int
    relative_error: float = float("nan")
    pod_projection_error: float = float("nan")
    optimal_projection_error: float = float("nan")
    manifold_projection_error: float = float("nan")
    kappa: float = float("nan")
    h: float = float("nan")
    gamma: list = field(default_factory=list)
    bound: list = field(default_factory=list)
    true_error: list = field(default_factory=list)
    bound_violations: int = 0
    bound_applicable: bool = False
    iterations: int = 0

    def __post_init__(self):
        for k in ("relative_error", "pod_projection_error", "optimal_projection_error",
                  "manifold_projection_error", "kappa"):
            v = getattr(self, k)
            if v < 0:
                raise ValueError(f"{k} must be nonnegative")

    def to_json(self) -> str:
        """Non-finite numbers (not computed, or an inapplicable bound) are written as null."""
        def clean(v):
            if isinstance(v, list):
                return [clean(u) for u in v]
            if isinstance(v, float) and not np.isfinite(v):
                return None
            return v
        d = {k: clean(v) for k, v in asdict(self).items()}
        return json.dumps(d, indent=1, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ErrorReport":
        def restore(v):
            if isinstance(v, list):
                return [restore(u) for u in v]
            return float("nan") if v is None else v
        return cls(**{k: restore(v) for k, v in json.loads(text).items()})

    CSV_FIELDS = ("method", "mu", "dim", "relative_error", "pod_projection_error",
                  "optimal_projection_error", "manifold_projection_error", "kappa",
                  "bound_violations", "iterations")

    def csv_row(self) -> dict:
        row = {k: getattr(self, k) for k in self.CSV_FIELDS}
        row["mu"] = " ".join(repr(float(v)) for v in self.mu)
        for k in ("relative_error", "pod_projection_error", "optimal_projection_error",
                  "manifold_projection_error", "kappa"):
            row[k] = repr(float(row[k]))
        return row


def reports_to_csv(reports: Sequence[ErrorReport], extra: dict | None = None) -> str:
    buf = io.StringIO()
    keys = list(extra or {})
    w = csv.DictWriter(buf, fieldnames=keys + list(ErrorReport.CSV_FIELDS), lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow({**(extra or {}), **r.csv_row()})
    return buf.getvalue()


def rom_report(fom_traj: Trajectory, rom: RomSolution, dim: int, pod_phi=None,
               manifold: TrialManifold | None = None, optimal: bool = True) -> ErrorReport:
    rep = ErrorReport(rom.method, [float(v) for v in rom.mu], dim,
                      relative_error(fom_traj, rom), iterations=int(rom.iterations.sum()))
    if pod_phi is not None:
        rep.pod_projection_error = projection_error(fom_traj, pod_phi)
    if optimal:
        rep.optimal_projection_error = optimal_projection_error(fom_traj, dim)
    if manifold is not None:
        rep.manifold_projection_error = manifold_projection_error(fom_traj, manifold)
    return rep


__all__ = [
    "relative_error", "projection_error", "optimal_basis", "optimal_projection_error",
    "manifold_projection", "manifold_projection_error", "lipschitz_estimate", "bound_constants",
    "BoundCheck", "error_bound_check", "EquivalenceGap", "equivalence_gap", "ErrorReport",
    "reports_to_csv", "rom_report",
]
