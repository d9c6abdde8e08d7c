"""Forward operator: plane-wave scattering off a potential supported in the grid square.

The total field solves the Lippmann-Schwinger equation
``u = u_inc + k^2 G[q u]`` discretised by a Nystrom rule on the cell-centred
grid.  The self-interaction of a cell replaces the singular diagonal by the
analytic integral of the small-argument expansion of ``(i/4) H0(kr)`` over a
disk of the same area as the cell.

``G`` is block Toeplitz, so it is applied by FFT on a doubled grid; the direct
dense summation is kept for small grids and for testing the FFT path.
"""

from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np

from .fields import FieldGrid, Grid, SineCoeffs, eval_sine_basis
from .gmres import GMRESError, gmres
from .special import EULER_GAMMA, greens_h0

__all__ = [
    "ScatterConfig",
    "Measurement",
    "make_geometry",
    "forward_solve",
    "forward_born",
    "measurement_error",
    "HelmholtzOperator",
    "GMRESError",
]


@dataclass(frozen=True)
class ScatterConfig:
    k: float = 5.0
    n_dirs: int = 16
    n_recv: int = 16
    radius: float = 10.0
    mode: str = "ls"
    ls_tol: float = 1e-8
    ls_max_iter: int = 2000
    restart: int = 50
    noise_std: float = 0.0
    apply: str = "fft"

    def __post_init__(self):
        if self.k <= 0:
            raise ValueError("wavenumber must be positive")
        if self.n_dirs < 1 or self.n_recv < 1:
            raise ValueError("need at least one direction and one receiver")
        if self.radius <= np.pi / np.sqrt(2):
            raise ValueError("receivers must lie outside the domain (radius > pi/sqrt(2))")
        if self.mode not in ("ls", "born"):
            raise ValueError(f"unknown forward mode {self.mode!r}")
        if self.apply not in ("fft", "dense"):
            raise ValueError(f"unknown operator application {self.apply!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class Measurement:
    """Scattered field, rows = incident directions, columns = receivers."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 2:
            raise ValueError("measurement must be a 2-D matrix")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("measurement contains NaN or Inf")

    def channels(self) -> np.ndarray:
        """Real/imag stacked as a ``(2, n_dirs, n_recv)`` real array."""
        return np.stack([self.data.real, self.data.imag])


def make_geometry(cfg: ScatterConfig):
    theta = 2 * np.pi * np.arange(cfg.n_dirs) / cfg.n_dirs
    phi = 2 * np.pi * np.arange(cfg.n_recv) / cfg.n_recv
    directions = np.column_stack([np.cos(theta), np.sin(theta)])
    receivers = cfg.radius * np.column_stack([np.cos(phi), np.sin(phi)])
    return directions, receivers


def self_term(k, h):
    """Integral of ``(i/4) H0(k r)`` over a disk of area ``h^2``."""
    rho = h / np.sqrt(np.pi)
    return h * h * 0.25j * (1 + (2j / np.pi) * (np.log(0.5 * k * rho) + EULER_GAMMA - 0.5))


class HelmholtzOperator:
    """Precomputed pieces of the discrete forward map for one grid and config."""

    def __init__(self, grid: Grid, cfg: ScatterConfig):
        self.grid = grid
        self.cfg = cfg
        n, h, k = grid.n, grid.h, cfg.k
        pts = grid.points()
        directions, receivers = make_geometry(cfg)
        self.incident = np.exp(1j * k * (directions @ pts.T))  # (n_dirs, n*n)
        dist = np.linalg.norm(receivers[:, None, :] - pts[None, :, :], axis=-1)
        self.receive = (k * k * h * h) * greens_h0(k, dist)  # (n_recv, n*n)

        off = np.arange(2 * n)
        off = np.where(off < n, off, off - 2 * n) * h
        r = np.hypot(off[:, None], off[None, :])
        r[0, 0] = 1.0
        kern = h * h * greens_h0(k, r)
        kern[0, 0] = self_term(k, h)
        kern[n, :] = 0.0
        kern[:, n] = 0.0
        self._kernel = kern
        self._kernel_hat = np.fft.fft2(kern)
        self._dense = None

    def dense_matrix(self):
        """Full Nystrom matrix of ``G`` (only sensible for small grids)."""
        if self._dense is None:
            pts = self.grid.points()
            d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
            np.fill_diagonal(d, 1.0)
            G = self.grid.h**2 * greens_h0(self.cfg.k, d)
            np.fill_diagonal(G, self_term(self.cfg.k, self.grid.h))
            self._dense = G
        return self._dense

    def apply_green(self, v):
        """Apply ``G`` to row vectors ``v`` of shape ``(m, n*n)``."""
        n = self.grid.n
        if self.cfg.apply == "dense":
            return v @ self.dense_matrix().T
        m = v.shape[0]
        pad = np.zeros((m, 2 * n, 2 * n), dtype=complex)
        pad[:, :n, :n] = v.reshape(m, n, n)
        out = np.fft.ifft2(np.fft.fft2(pad) * self._kernel_hat)
        return out[:, :n, :n].reshape(m, n * n)

    def solve_total_field(self, q):
        """Total field at the nodes for every incident direction."""
        k2 = self.cfg.k ** 2
        qv = q.ravel()

        def matvec(u):
            return u - k2 * self.apply_green(u * qv)

        u, info = gmres(
            matvec,
            self.incident,
            x0=self.incident,
            tol=self.cfg.ls_tol,
            restart=self.cfg.restart,
            maxiter=self.cfg.ls_max_iter,
        )
        return u, info

    def scattered(self, q, u):
        return (q.ravel() * u) @ self.receive.T


@lru_cache(maxsize=8)
def get_operator(n: int, cfg: ScatterConfig) -> HelmholtzOperator:
    return HelmholtzOperator(Grid(n), cfg)


def _check_potential(q: FieldGrid):
    if not np.all(np.isfinite(q.values)):
        raise ValueError("potential contains NaN or Inf")


def _add_noise(data, cfg, rng):
    if cfg.noise_std <= 0:
        return data
    rng = np.random.default_rng(rng)
    noise = rng.standard_normal(data.shape) + 1j * rng.standard_normal(data.shape)
    return data + cfg.noise_std / np.sqrt(2) * noise


def forward_solve(q: FieldGrid, cfg: ScatterConfig, rng=None, return_info=False):
    """Scattered field at the receivers for every incident direction.

    Raises :class:`GMRESError` (carrying the final residual) when the
    iterative solve does not reach ``cfg.ls_tol``.  ``rng`` seeds the optional
    measurement noise.
    """
    _check_potential(q)
    if cfg.mode == "born":
        return forward_born(q, cfg, rng=rng)
    op = get_operator(q.grid.n, cfg)
    if not np.any(q.values):
        m = Measurement(np.zeros((cfg.n_dirs, cfg.n_recv), dtype=complex))
        info = {"residuals": np.zeros(cfg.n_dirs), "iterations": np.zeros(cfg.n_dirs, int)}
    else:
        u, info = op.solve_total_field(q.values)
        m = Measurement(op.scattered(q.values, u))
    m.data = _add_noise(m.data, cfg, rng)
    if return_info:
        return m, info
    return m


def forward_born(q: FieldGrid, cfg: ScatterConfig, rng=None):
    """First-order (Born) approximation: the incident field replaces ``u``."""
    _check_potential(q)
    op = get_operator(q.grid.n, cfg)
    m = Measurement(op.scattered(q.values, op.incident))
    m.data = _add_noise(m.data, cfg, rng)
    return m


def measurement_error(qhat: SineCoeffs, m_obs: Measurement, cfg: ScatterConfig, g: Grid):
    """Relative Frobenius misfit of the data predicted by ``qhat``."""
    ref = np.linalg.norm(m_obs.data)
    if ref == 0:
        raise ValueError("observed measurement is identically zero")
    pred = forward_solve(eval_sine_basis(qhat, g), replace(cfg, noise_std=0.0))
    return float(np.linalg.norm(pred.data - m_obs.data) / ref)
