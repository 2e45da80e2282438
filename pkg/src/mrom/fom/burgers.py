"""Parameterized inviscid Burgers equation, Godunov finite volumes.

    w_t + (w^2 / 2)_x = 0.02 exp(mu_2 x)  on [0, L],  w(0, t) = mu_1,  w(x, 0) = 1.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import FomModel

BURGERS_DOMAIN = ((4.25, 5.5), (0.015, 0.03))
BURGERS_TEST_POINTS = ((4.3, 0.021), (5.15, 0.0285))


def burgers_flux(w):
    return 0.5 * w * w


def godunov_flux(wl, wr):
    """Exact Riemann flux for ``f(w) = w^2 / 2``."""
    wl, wr = np.asarray(wl, dtype=np.float64), np.asarray(wr, dtype=np.float64)
    fl, fr = burgers_flux(wl), burgers_flux(wr)
    # wl <= wr: minimum of f over [wl, wr]; otherwise its maximum
    rare = np.where(wl > 0, fl, np.where(wr < 0, fr, 0.0))
    return np.where(wl <= wr, rare, np.maximum(fl, fr))


def godunov_flux_derivs(wl, wr):
    """Partial derivatives of :func:`godunov_flux` (one-sided choice at switch points)."""
    fl, fr = burgers_flux(wl), burgers_flux(wr)
    rare = wl <= wr
    dl = np.where(rare, np.where(wl > 0, wl, 0.0), np.where(fl >= fr, wl, 0.0))
    dr = np.where(rare, np.where((wl <= 0) & (wr < 0), wr, 0.0), np.where(fl >= fr, 0.0, wr))
    return dl, dr


class BurgersModel(FomModel):
    """Godunov discretization with ``n_cells`` uniform control volumes.

    Left boundary: ghost value ``mu_1``; right boundary: zero-gradient ghost.
    """

    param_domain = BURGERS_DOMAIN
    channels = 1

    def __init__(self, n_cells: int = 256, length: float = 100.0, source_scale: float = 0.02):
        self.n_dofs = n_cells
        self.grid = (n_cells,)
        self.length = length
        self.dx = length / n_cells
        self.x = (np.arange(n_cells) + 0.5) * self.dx
        self.source_scale = source_scale

    def source(self, mu):
        return self.source_scale * np.exp(mu[1] * self.x)

    def _interfaces(self, x, mu):
        w = np.asarray(x, dtype=np.float64)
        wl = np.concatenate(([mu[0]], w))
        wr = np.concatenate((w, [w[-1]]))
        return wl, wr

    def velocity(self, x, t, mu):
        mu = np.atleast_1d(mu)
        F = godunov_flux(*self._interfaces(x, mu))
        return -(F[1:] - F[:-1]) / self.dx + self.source(mu)

    def jacobian(self, x, t, mu):
        mu = np.atleast_1d(mu)
        wl, wr = self._interfaces(x, mu)
        dl, dr = godunov_flux_derivs(wl, wr)
        n = self.n_dofs
        # interface i+1/2 (index i+1) has left cell i, right cell i+1
        diag = -(dl[1:] - dr[:-1]) / self.dx
        diag[-1] -= dr[-1] / self.dx            # zero-gradient ghost equals the last cell
        upper = -dr[1:-1] / self.dx
        lower = dl[1:-1] / self.dx
        return sp.diags([lower, diag, upper], [-1, 0, 1], shape=(n, n), format="csc")

    def initial_state(self, mu):
        return np.ones(self.n_dofs)


def burgers_training_grid(n1: int = 10, n2: int = 8) -> np.ndarray:
    """Uniform lattice over the Burgers parameter domain, ``n1 * n2`` rows."""
    (a, b), (c, d) = BURGERS_DOMAIN
    m1 = a + (b - a) / (n1 - 1) * np.arange(n1)
    m2 = c + (d - c) / (n2 - 1) * np.arange(n2)
    return np.array([(u, v) for u in m1 for v in m2])
