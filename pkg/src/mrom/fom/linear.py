"""Linear time-invariant model ``dx/dt = A x + b``."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .core import FomModel


class LinearModel(FomModel):
    def __init__(self, A, x0, b=None):
        self.A = sp.csc_matrix(A)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        self.n_dofs = n
        self.grid = (n,)
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.b = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64)

    def velocity(self, x, t, mu):
        return self.A @ x + self.b

    def jacobian(self, x, t, mu):
        return self.A

    def initial_state(self, mu):
        return self.x0.copy()

    def lipschitz_constant(self) -> float:
        """``||A||_2`` (exact, via a dense SVD)."""
        return float(np.linalg.norm(self.A.toarray(), 2))
