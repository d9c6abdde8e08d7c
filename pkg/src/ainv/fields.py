"""Grid geometry, the truncated sine basis, mollification and error metrics.

All fields live on the square ``[-pi/2, pi/2]^2`` sampled at cell-centred
nodes.  Arrays are indexed ``values[a, b]`` with ``a`` running along x and
``b`` along y.

Sine coefficients are kept as an ``(N, N)`` matrix ``C[i-1, j-1]`` multiplying
``sin(i(x + pi/2)) sin(j(y + pi/2))``.  The flat vector form used for network
targets and on disk runs with ``i`` fastest (Fortran order of the matrix).
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import convolve1d
from sklearn.base import BaseEstimator, TransformerMixin

HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class Grid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid needs an integer n >= 8, got {self.n}")

    @property
    def h(self) -> float:
        return np.pi / self.n

    @property
    def nodes(self) -> np.ndarray:
        """1-D node coordinates, identical along both axes."""
        return -HALF_PI + (np.arange(self.n) + 0.5) * self.h

    def mesh(self):
        x = self.nodes
        return np.meshgrid(x, x, indexing="ij")

    def points(self) -> np.ndarray:
        """All nodes as an ``(n*n, 2)`` array, row-major in ``(a, b)``."""
        X, Y = self.mesh()
        return np.column_stack([X.ravel(), Y.ravel()])


@dataclass
class FieldGrid:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.grid.n
        if self.values.shape != (n, n):
            raise ValueError(f"field shape {self.values.shape} does not match grid n={n}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains NaN or Inf")


@dataclass
class SineCoeffs:
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).ravel()
        if self.order < 1 or self.coeffs.size != self.order**2:
            raise ValueError(
                f"order {self.order} needs {self.order ** 2} coefficients, got {self.coeffs.size}"
            )

    @classmethod
    def from_matrix(cls, C):
        C = np.asarray(C, dtype=float)
        return cls(C.shape[0], C.ravel(order="F"))

    @classmethod
    def zeros(cls, order):
        return cls(order, np.zeros(order * order))

    def matrix(self) -> np.ndarray:
        return self.coeffs.reshape(self.order, self.order, order="F")


@lru_cache(maxsize=64)
def _sine_table(n: int, order: int) -> np.ndarray:
    # S[i-1, a] = sin(i (x_a + pi/2)) = sin(i (a + 1/2) pi / n)
    u = (np.arange(n) + 0.5) * (np.pi / n)
    S = np.sin(np.outer(np.arange(1, order + 1), u))
    S.setflags(write=False)
    return S


def eval_sine_basis(c: SineCoeffs, g: Grid) -> FieldGrid:
    S = _sine_table(g.n, c.order)
    return FieldGrid(g, S.T @ c.matrix() @ S)


def project_sine_basis(f: FieldGrid, N: int) -> SineCoeffs:
    """Coefficients of ``f`` on the first ``N`` sine modes per axis.

    Node quadrature of the L2 projection.  On cell-centred nodes the sampled
    sines are exactly orthogonal, so this inverts :func:`eval_sine_basis`
    for any ``N < n``.
    """
    n = f.grid.n
    if N > n:
        raise ValueError(f"order {N} exceeds grid resolution n={n}")
    S = _sine_table(n, N)
    C = (4.0 / np.pi**2) * f.grid.h**2 * (S @ f.values @ S.T)
    return SineCoeffs.from_matrix(C)


def gaussian_kernel_1d(h: float, eps_m: float) -> np.ndarray:
    half = int(np.floor(4.0 * eps_m / h))
    t = np.arange(-half, half + 1) * h
    w = np.exp(-0.5 * (t / eps_m) ** 2)
    return w / w.sum()


def mollify(f: FieldGrid, eps_m: float) -> FieldGrid:
    """Convolve with a unit-mass Gaussian of standard deviation ``eps_m``.

    The kernel is cut at ``4 * eps_m``; the field is zero-padded outside the
    domain.
    """
    if eps_m <= 0:
        raise ValueError("mollifier width must be positive")
    w = gaussian_kernel_1d(f.grid.h, eps_m)
    out = convolve1d(f.values, w, axis=0, mode="constant", cval=0.0)
    out = convolve1d(out, w, axis=1, mode="constant", cval=0.0)
    return FieldGrid(f.grid, out)


def relative_l2(pred: SineCoeffs, truth: SineCoeffs) -> float:
    if pred.order != truth.order:
        raise ValueError(f"order mismatch: {pred.order} vs {truth.order}")
    denom = np.linalg.norm(truth.coeffs)
    if denom == 0:
        raise ValueError("relative error against an all-zero truth is undefined")
    return float(np.linalg.norm(pred.coeffs - truth.coeffs) / denom)


def relative_l2_rows(pred, truth) -> np.ndarray:
    """Row-wise relative errors for stacked coefficient vectors."""
    pred = np.atleast_2d(pred)
    truth = np.atleast_2d(truth)
    return np.linalg.norm(pred - truth, axis=1) / np.linalg.norm(truth, axis=1)


class SineBasisProjector(TransformerMixin, BaseEstimator):
    """Map stacked fields ``(n_samples, n, n)`` to flat sine coefficients.

    ``inverse_transform`` evaluates coefficients back on the grid.
    """

    def __init__(self, order=5, n=64):
        self.order = order
        self.n = n

    def fit(self, X=None, y=None):
        if self.order > self.n:
            raise ValueError(f"order {self.order} exceeds grid resolution n={self.n}")
        self.grid_ = Grid(self.n)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 3 or X.shape[1:] != (self.n, self.n):
            raise ValueError(f"expected fields of shape (m, {self.n}, {self.n}), got {X.shape}")
        S = _sine_table(self.n, self.order)
        C = (4.0 / np.pi**2) * (np.pi / self.n) ** 2 * np.einsum("ia,mab,jb->mij", S, X, S)
        return C.transpose(0, 2, 1).reshape(len(X), -1)

    def inverse_transform(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        S = _sine_table(self.n, self.order)
        C = Y.reshape(len(Y), self.order, self.order).transpose(0, 2, 1)
        return np.einsum("ia,mij,jb->mab", S, C, S)
