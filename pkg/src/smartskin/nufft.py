"""
Trigonometric sums on a uniform cell grid evaluated at scattered spectral
points, via an oversampled FFT and Gaussian gridding.

Evaluates

    f(psi_x, psi_y) = sum_{p,q} c[p, q] exp(+j (psi_x p' + psi_y q'))

with centred cell indices ``p' = p - (P - 1)/2``. The coefficients are
divided by the kernel's Fourier transform, transformed on an ``R*P`` by
``R*Q`` grid and interpolated with a truncated Gaussian of ``2*width``
taps per axis. Truncation error decays like ``exp(-pi*width*(R-1)/(R-1/2))``.
"""

from __future__ import annotations

import numpy as np
import scipy.fft
import scipy.sparse as sp


def _axis_weights(psi: np.ndarray, n_modes: int, n_grid: int, width: int, tau: float):
    """Column indices (wrapped) and Gaussian weights along one axis."""
    h = 2.0 * np.pi / n_grid
    base = np.floor(psi / h).astype(np.int64)
    offs = np.arange(-width + 1, width + 1)
    k = base[:, None] + offs[None, :]
    dist = psi[:, None] - k * h
    w = np.exp(-dist * dist / (4.0 * tau))
    return np.mod(k, n_grid), w


def _real_matmul(W: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Real sparse matrix times complex columns, without complex upcasting."""
    x = np.ascontiguousarray(x, dtype=complex)
    return (W @ x.view(np.float64)).view(complex)


class GriddingPlan:
    """Reusable type-2 (grid to points) transform and its adjoint.

    Parameters
    ----------
    shape : (P, Q)
        Coefficient grid size.
    psi_x, psi_y : ndarray
        Spectral coordinates (radians per cell) of the evaluation points.
    oversampling : int
        FFT grid oversampling factor ``R``.
    width : int
        Half-width of the interpolation stencil in grid samples.
    """

    def __init__(self, shape, psi_x, psi_y, oversampling: int = 4, width: int = 6,
                 workers: int = 1):
        if oversampling < 2:
            raise ValueError("oversampling must be >= 2")
        P, Q = shape
        self.shape = (int(P), int(Q))
        self.oversampling = int(oversampling)
        self.width = int(width)
        self.workers = workers
        psi_x = np.asarray(psi_x, dtype=float).ravel()
        psi_y = np.asarray(psi_y, dtype=float).ravel()
        self.n_points = psi_x.size
        self.grid_shape = (self.oversampling * P, self.oversampling * Q)
        Mx, My = self.grid_shape

        # integer mode numbers and the half-cell shift of even-sized grids
        self._mx = np.arange(P) - P // 2
        self._my = np.arange(Q) - Q // 2
        dx_shift = P // 2 - (P - 1) / 2.0
        dy_shift = Q // 2 - (Q - 1) / 2.0
        self._shift = np.exp(1j * (psi_x * dx_shift + psi_y * dy_shift))

        R = self.oversampling
        tau_x = np.pi * width / (P * P * R * (R - 0.5))
        tau_y = np.pi * width / (Q * Q * R * (R - 0.5))
        deapod_x = np.sqrt(tau_x / np.pi) * np.exp(-self._mx ** 2 * tau_x)
        deapod_y = np.sqrt(tau_y / np.pi) * np.exp(-self._my ** 2 * tau_y)
        self._deapod = 1.0 / np.outer(deapod_x, deapod_y)

        kx, wx = _axis_weights(psi_x, P, Mx, width, tau_x)
        ky, wy = _axis_weights(psi_y, Q, My, width, tau_y)
        cols = (kx[:, :, None] * My + ky[:, None, :]).reshape(self.n_points, -1)
        vals = (wx[:, :, None] * wy[:, None, :]).reshape(self.n_points, -1) / (Mx * My)
        rows = np.repeat(np.arange(self.n_points), cols.shape[1])
        W = sp.csr_matrix((vals.ravel(), (rows, cols.ravel())),
                          shape=(self.n_points, Mx * My))
        W.sum_duplicates()
        self._W = W
        self._WT = W.T.tocsr()
        self._ix = np.mod(self._mx, Mx)
        self._iy = np.mod(self._my, My)

    def forward(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate the sum at the plan's points; ``coeffs`` is (..., P, Q)."""
        coeffs = np.asarray(coeffs)
        lead = coeffs.shape[:-2]
        c = coeffs.reshape((-1,) + self.shape)
        Mx, My = self.grid_shape
        grid = np.zeros((c.shape[0], Mx, My), dtype=complex)
        grid[:, self._ix[:, None], self._iy[None, :]] = c * self._deapod
        grid = scipy.fft.ifft2(grid, axes=(-2, -1), norm="forward", workers=self.workers)
        out = _real_matmul(self._W, grid.reshape(c.shape[0], -1).T).T
        return (out * self._shift).reshape(lead + (self.n_points,))

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        """Conjugate transpose of :meth:`forward`; ``values`` is (..., N)."""
        values = np.asarray(values)
        lead = values.shape[:-1]
        v = values.reshape(-1, self.n_points) * np.conj(self._shift)
        Mx, My = self.grid_shape
        grid = _real_matmul(self._WT, v.T).T.reshape(v.shape[0], Mx, My)
        grid = scipy.fft.fft2(grid, axes=(-2, -1), norm="backward", workers=self.workers)
        c = grid[:, self._ix[:, None], self._iy[None, :]] * self._deapod
        return c.reshape(lead + self.shape)


def direct_sum(coeffs: np.ndarray, psi_x: np.ndarray, psi_y: np.ndarray) -> np.ndarray:
    """Reference evaluation of the same sum by explicit summation."""
    P, Q = coeffs.shape[-2:]
    px = np.arange(P) - (P - 1) / 2.0
    qy = np.arange(Q) - (Q - 1) / 2.0
    ex = np.exp(1j * np.outer(psi_x, px))
    ey = np.exp(1j * np.outer(psi_y, qy))
    return np.einsum("np,...pq,nq->...n", ex, coeffs, ey)
