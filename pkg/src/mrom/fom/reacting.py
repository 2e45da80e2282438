"""Premixed H2-air flame: 2-D convection-diffusion-reaction with Arrhenius source.

State channels are (T, H2, O2, H2O), stored channel-major, each field row-major
over (n1 horizontal, n2 vertical) grid points.  Horizontal column 0 of the
physical grid (x = 0) carries Dirichlet data and is eliminated, so the n1
unknown columns sit at x = dx, ..., n1 dx with dx = Lx / n1.  The vertical
points sit at y = 0, ..., Ly with dy = Ly / (n2 - 1).  Top, bottom and right
boundaries are homogeneous Neumann (mirror ghosts).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import FomModel

REACTING_DOMAIN = ((2.3375e12, 6.5e12), (5.625e3, 9.0e3))
REACTING_TEST_POINTS = ((2.5e12, 5.85e3), (3.2e12, 7.25e3))


@dataclass(frozen=True)
class FlameConstants:
    heat: float = 9800.0                          # Q
    stoich: tuple = (2.0, 1.0, -2.0)              # nu for H2, O2, H2O
    weights: tuple = (2.016, 31.9, 18.0)          # W for H2, O2, H2O
    density: float = 1.39e-3
    gas_constant: float = 8.314
    diffusivity: float = 2.0
    velocity: tuple = (50.0, 0.0)
    length: tuple = (1.8, 0.9)
    inflow_band: tuple = (0.3, 0.6)
    inflow: tuple = (950.0, 0.0282, 0.2259, 0.0)
    wall: tuple = (300.0, 0.0, 0.0, 0.0)
    initial: tuple = (300.0, 0.0, 0.0, 0.0)


def _second_diff_neumann(n, h, left_dirichlet):
    """1-D ``d^2/dx^2`` with a mirror ghost on the right (and on the left unless Dirichlet)."""
    main = -2.0 * np.ones(n)
    up = np.ones(n - 1)
    lo = np.ones(n - 1)
    if not left_dirichlet:
        up[0] = 2.0
    lo[-1] = 2.0
    return sp.diags([lo, main, up], [-1, 0, 1], format="csr") / (h * h)


def _upwind(n, h, v, left_dirichlet):
    """1-D first-order upwind ``v d/dx`` with mirror ghosts."""
    if v == 0.0:
        return sp.csr_matrix((n, n))
    if v > 0:
        D = sp.diags([np.ones(n), -np.ones(n - 1)], [0, -1], format="lil")
        if not left_dirichlet:
            D[0, 0], D[0, 1] = 1.0, -1.0          # ghost u_{-1} = u_1
    else:
        D = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], format="lil")
        D[n - 1, n - 1], D[n - 1, n - 2] = -1.0, 1.0   # ghost u_n = u_{n-2}
    return (v / h) * D.tocsr()


class ReactingFlowModel(FomModel):
    """Finite-difference model on an ``n1 x n2`` unknown grid with 4 channels."""

    param_domain = REACTING_DOMAIN
    channels = 4

    def __init__(self, n1: int = 64, n2: int = 32, constants: FlameConstants = FlameConstants()):
        if n1 < 2 or n2 < 3:
            raise ValueError("grid too small")
        c = self.const = constants
        self.grid = (n1, n2)
        self.n_points = n1 * n2
        self.n_dofs = 4 * n1 * n2
        self.dx = c.length[0] / n1
        self.dy = c.length[1] / (n2 - 1)
        self.y = self.dy * np.arange(n2)
        lo, hi = c.inflow_band
        band = (self.y >= lo - 1e-12) & (self.y <= hi + 1e-12)
        # Dirichlet column values, per channel and vertical point
        self.left = np.where(band[None, :], np.array(c.inflow)[:, None], np.array(c.wall)[:, None])

        k, (v1, v2) = c.diffusivity, c.velocity
        if v1 < 0:
            raise ValueError("inflow boundary requires a nonnegative horizontal velocity")
        Lx = k * _second_diff_neumann(n1, self.dx, True) - _upwind(n1, self.dx, v1, True)
        Ly = k * _second_diff_neumann(n2, self.dy, False) - _upwind(n2, self.dy, v2, False)
        L1 = sp.kron(Lx, sp.identity(n2)) + sp.kron(sp.identity(n1), Ly)
        self.L = sp.kron(sp.identity(4), L1, format="csr")
        # contribution of the Dirichlet ghost column to the first unknown column
        b = np.zeros((4, n1, n2))
        b[:, 0, :] = (k / self.dx ** 2 + v1 / self.dx) * self.left
        self.b = b.ravel()

    # -- reaction ----------------------------------------------------------

    def _fields(self, x):
        return np.asarray(x, dtype=np.float64).reshape(4, self.n_points)

    def _rate(self, u, mu):
        """Reaction rate, its concentrations and the Arrhenius factor."""
        c = self.const
        A, E = mu
        cH = c.density * np.maximum(u[1], 0.0) / c.weights[0]
        cO = c.density * np.maximum(u[2], 0.0) / c.weights[1]
        arr = A * np.exp(-E / (c.gas_constant * u[0]))
        return cH ** c.stoich[0] * cO ** c.stoich[1] * arr, cH, cO, arr

    def source(self, x, mu):
        """Arrhenius source ``(q_T, q_H2, q_O2, q_H2O)`` as a state-shaped vector."""
        c = self.const
        u = self._fields(x)
        rate = self._rate(u, mu)[0]
        q = np.empty_like(u)
        for i in range(3):
            q[i + 1] = -c.stoich[i] * (c.weights[i] / c.density) * rate
        q[0] = c.heat * q[3]
        return q.ravel()

    def source_jacobian(self, x, mu):
        c = self.const
        u = self._fields(x)
        A, E = mu
        rate, cH, cO, arr = self._rate(u, mu)
        nH, nO = c.stoich[0], c.stoich[1]
        # d rate / d (T, H2, O2)
        dT = rate * E / (c.gas_constant * u[0] ** 2)
        dH = np.where(u[1] > 0, nH * cH ** (nH - 1) * cO ** nO * arr * c.density / c.weights[0], 0.0)
        dO = np.where(u[2] > 0, cH ** nH * nO * cO ** (nO - 1) * arr * c.density / c.weights[1], 0.0)
        coef = [-c.stoich[i] * c.weights[i] / c.density for i in range(3)]
        coef = [c.heat * coef[2]] + coef
        m = self.n_points
        rows, cols, vals = [], [], []
        for i in range(4):
            for j, d in ((0, dT), (1, dH), (2, dO)):
                rows.append(np.arange(m) + i * m)
                cols.append(np.arange(m) + j * m)
                vals.append(coef[i] * d)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n_dofs, self.n_dofs))

    # -- FomModel ----------------------------------------------------------

    def velocity(self, x, t, mu):
        mu = np.atleast_1d(mu)
        return self.L @ x + self.b + self.source(x, mu)

    def jacobian(self, x, t, mu):
        mu = np.atleast_1d(mu)
        return (self.L + self.source_jacobian(x, mu)).tocsc()

    def initial_state(self, mu):
        return np.repeat(np.array(self.const.initial), self.n_points)


def reacting_training_grid(n1: int = 8, n2: int = 8) -> np.ndarray:
    (a, b), (c, d) = REACTING_DOMAIN
    m1 = a + (b - a) / (n1 - 1) * np.arange(n1)
    m2 = c + (d - c) / (n2 - 1) * np.arange(n2)
    return np.array([(u, v) for u in m1 for v in m2])
