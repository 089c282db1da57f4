"""Block tridiagonal LU for matrices with dense diagonal blocks.

Jacobians of the nonlocal wave equation couple every trait node within an
x column (through the competition integral) but only neighbouring columns
through the finite-difference stencil.  With the trait index fastest this is
block tridiagonal with dense diagonal blocks, and block Thomas elimination
factors it in ``O(n_x m^3)`` work instead of filling in a sparse LU.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lu_factor, lu_solve


class BlockTridiagonalLU:
    """Factor ``J = tridiag(L_i, D_i + dense_i, U_i)`` with block size ``m``.

    ``sparse`` holds the stencil part of ``J``; ``dense`` is an optional
    array of shape ``(N, m, m)`` added to the diagonal blocks.
    """

    def __init__(self, sparse: sp.spmatrix, m: int, dense: np.ndarray | None = None):
        J = sp.csr_matrix(sparse)
        n = J.shape[0]
        if n % m:
            raise ValueError("matrix size is not a multiple of the block size")
        N = n // m
        self.m, self.N = m, N
        self._lower = []
        self._lu = []
        self._G = []
        S_prev_G = None
        for i in range(N):
            rows = slice(i * m, (i + 1) * m)
            Jr = J[rows]
            D = Jr[:, rows].toarray()
            if dense is not None:
                D += dense[i]
            if i > 0:
                L = Jr[:, (i - 1) * m:i * m]
                D -= L @ S_prev_G
                self._lower.append(L)
            else:
                self._lower.append(None)
            lu = lu_factor(D, check_finite=False)
            self._lu.append(lu)
            if i < N - 1:
                U = Jr[:, (i + 1) * m:(i + 2) * m].toarray()
                S_prev_G = lu_solve(lu, U, check_finite=False)
                self._G.append(S_prev_G)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        vec = rhs.ndim == 1
        b = rhs.reshape(self.N, self.m, -1)
        y = np.empty_like(b)
        for i in range(self.N):
            r = b[i]
            if i > 0:
                r = r - self._lower[i] @ y[i - 1]
            y[i] = lu_solve(self._lu[i], r, check_finite=False)
        for i in range(self.N - 2, -1, -1):
            y[i] -= self._G[i] @ y[i + 1]
        out = y.reshape(rhs.shape[0], -1)
        return out[:, 0] if vec else out
