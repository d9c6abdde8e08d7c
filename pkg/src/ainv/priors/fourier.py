"""Fourier prior: band-limited fields on an inner square, zero outside.

Coefficients are stored as ``(2N+1, 2N+1)`` arrays ``c, d`` indexed
``[k + N, j + N]``; the field on the inner square is

    Re sum_{k,j} (c + i d)[k, j] exp(i w (k x + j y)),   w = 2 pi / (pi - 2 margin).

Because of the real part, ``(k, j)`` and ``(-k, -j)`` cannot be told apart
from the field.  :func:`fourier_project` therefore returns the Hermitian
representative (``c`` even, ``d`` odd under ``(k, j) -> (-k, -j)``), i.e. the
ordinary complex Fourier coefficients of a real function.
"""

from dataclasses import dataclass

import numpy as np

from ..fields import HALF_PI, FieldGrid, Grid, eval_sine_basis, mollify, project_sine_basis
from .disk import PriorSamplingError, default_eps

DEFAULT_MARGIN = np.pi / 8


@dataclass
class FourierCoeffs:
    n_modes: int
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        shape = (2 * self.n_modes + 1,) * 2
        self.c = np.asarray(self.c, dtype=float)
        self.d = np.asarray(self.d, dtype=float)
        if self.c.shape != shape or self.d.shape != shape:
            raise ValueError(f"Fourier coefficients must have shape {shape}")

    @classmethod
    def zeros(cls, n_modes):
        shape = (2 * n_modes + 1,) * 2
        return cls(n_modes, np.zeros(shape), np.zeros(shape))

    def complex(self):
        return self.c + 1j * self.d

    def vector(self):
        return np.concatenate([self.c.ravel(), self.d.ravel()])

    def to_dict(self):
        return {"n_modes": self.n_modes, "c": self.c.tolist(), "d": self.d.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_modes"]), np.array(d["c"]), np.array(d["d"]))


@dataclass
class SigmaEstimate:
    sigma1: np.ndarray
    sigma2: np.ndarray
    c_sigma: float = 2.0

    def __post_init__(self):
        self.sigma1 = np.asarray(self.sigma1, dtype=float)
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        if np.any(self.sigma1 < 0) or np.any(self.sigma2 < 0):
            raise ValueError("standard deviations must be non-negative")


def frequency(margin):
    return 2 * np.pi / (np.pi - 2 * margin)


def inner_nodes(g: Grid, margin):
    """Indices of grid nodes inside the inner square (same along both axes)."""
    x = g.nodes
    return np.flatnonzero(np.abs(x) <= HALF_PI - margin)


def synthesize(coeffs: FourierCoeffs, xs, ys, margin) -> np.ndarray:
    """Real field on the tensor grid ``xs x ys`` (no restriction applied)."""
    N = coeffs.n_modes
    w = frequency(margin)
    ks = np.arange(-N, N + 1)
    Ex = np.exp(1j * w * np.outer(xs, ks))
    Ey = np.exp(1j * w * np.outer(ys, ks))
    return (Ex @ coeffs.complex() @ Ey.T).real


def _analyse(values, xs, ys, N, margin):
    w = frequency(margin)
    ks = np.arange(-N, N + 1)
    Ex = np.exp(-1j * w * np.outer(ks, xs)) / len(xs)
    Ey = np.exp(-1j * w * np.outer(ks, ys)) / len(ys)
    F = Ex @ values @ Ey.T
    return FourierCoeffs(N, F.real, F.imag)


def fourier_project(f: FieldGrid, n_modes: int, margin=DEFAULT_MARGIN) -> FourierCoeffs:
    """Low Fourier modes of ``f`` restricted to the inner square.

    Plain node quadrature over the inner nodes.  When the margin is a whole
    number of cells those nodes sample exactly one period, and the result is
    exact for fields band-limited below the node count.
    """
    idx = inner_nodes(f.grid, margin)
    if len(idx) ** 2 < (2 * n_modes + 1) ** 2:
        raise ValueError(
            f"{len(idx) ** 2} inner nodes cannot resolve {(2 * n_modes + 1) ** 2} Fourier modes"
        )
    x = f.grid.nodes[idx]
    return _analyse(f.values[np.ix_(idx, idx)], x, x, n_modes, margin)


def hermitian_part(coeffs: FourierCoeffs) -> FourierCoeffs:
    """Canonical representative of the field that ``coeffs`` synthesises."""
    c, d = coeffs.c, coeffs.d
    return FourierCoeffs(coeffs.n_modes, 0.5 * (c + c[::-1, ::-1]), 0.5 * (d - d[::-1, ::-1]))


def fourier_field(coeffs: FourierCoeffs, g: Grid, margin=DEFAULT_MARGIN, eps_m=None,
                  order=None) -> FieldGrid:
    """Synthesis on the inner square, zero outside, mollified, into the sine space."""
    eps_m = default_eps(g) if eps_m is None else eps_m
    order = g.n // 2 if order is None else order
    idx = inner_nodes(g, margin)
    vals = np.zeros((g.n, g.n))
    x = g.nodes[idx]
    vals[np.ix_(idx, idx)] = synthesize(coeffs, x, x, margin)
    f = mollify(FieldGrid(g, vals), eps_m)
    if order >= g.n:
        return f
    return eval_sine_basis(project_sine_basis(f, order), g)


def contrast_map(f1, low, high):
    """Piecewise-linear rescaling: ``min -> low``, ``0 -> 0``, ``max -> high``.

    When zero is not strictly inside the range of ``f1`` the knee is dropped
    and the map is the single line through the two endpoints.
    """
    lo, hi = f1.min(), f1.max()
    if hi - lo <= 0:
        raise PriorSamplingError("constant Fourier sample cannot be rescaled")
    if lo < 0 < hi:
        return np.where(f1 < 0, f1 * (low / lo), f1 * (high / hi))
    return low + (f1 - lo) * (high - low) / (hi - lo)


def sample_fourier_prior(n_modes, rng, g: Grid, eps_margin=DEFAULT_MARGIN, eps_m=None,
                         low_range=(-0.2, -0.1), high_range=(2.0, 3.0), order=None,
                         aux_points=128, raw=None, return_info=False):
    """Draw a Fourier-prior field.

    Returns ``(coeffs, field)`` where ``coeffs`` are the Fourier coefficients
    after the rescaled sample is truncated back to ``n_modes`` modes.  The
    rescaling acts on a periodic auxiliary grid of ``aux_points`` per axis
    over the inner square; with ``return_info`` a third item holds the
    sampled bounds and the rescaled values there.  ``raw`` overrides the
    normal draw of ``(c, d)``.
    """
    if n_modes < 1:
        raise ValueError("need at least one Fourier mode")
    rng = np.random.default_rng(rng)
    shape = (2 * n_modes + 1,) * 2
    if raw is None:
        raw = FourierCoeffs(n_modes, rng.standard_normal(shape), rng.standard_normal(shape))
    low = rng.uniform(*low_range)
    high = rng.uniform(*high_range)

    L = np.pi - 2 * eps_margin
    t = -HALF_PI + eps_margin + L * np.arange(aux_points) / aux_points
    f1 = synthesize(raw, t, t, eps_margin)
    if not np.any(f1):
        f0 = f1
    else:
        f0 = contrast_map(f1, low, high)
    coeffs = _analyse(f0, t, t, n_modes, eps_margin)
    field = fourier_field(coeffs, g, eps_margin, eps_m, order)
    if return_info:
        return coeffs, field, {"low": low, "high": high, "raw": raw, "rescaled": f0}
    return coeffs, field


def estimate_sigma(val_pred, val_true, c_sigma=2.0) -> SigmaEstimate:
    """Per-mode perturbation scale: ``c_sigma`` times the mean absolute error."""
    if len(val_pred) == 0 or len(val_pred) != len(val_true):
        raise ValueError("need equally long, non-empty prediction and truth lists")
    N = val_pred[0].n_modes
    if any(p.n_modes != N for p in val_pred) or any(t.n_modes != N for t in val_true):
        raise ValueError("all coefficient sets must share the same number of modes")
    dc = np.mean([np.abs(p.c - t.c) for p, t in zip(val_pred, val_true)], axis=0)
    dd = np.mean([np.abs(p.d - t.d) for p, t in zip(val_pred, val_true)], axis=0)
    return SigmaEstimate(c_sigma * dc, c_sigma * dd, c_sigma)


def perturb_fourier(coeffs: FourierCoeffs, sigma: SigmaEstimate, rng, g: Grid,
                    eps_margin=DEFAULT_MARGIN, eps_m=None, order=None):
    """Resample every coefficient around ``coeffs`` and rebuild the field (no rescaling)."""
    rng = np.random.default_rng(rng)
    if sigma.sigma1.shape != coeffs.c.shape or sigma.sigma2.shape != coeffs.d.shape:
        raise ValueError("sigma shape does not match the coefficients")
    c = coeffs.c + sigma.sigma1 * rng.standard_normal(coeffs.c.shape)
    d = coeffs.d + sigma.sigma2 * rng.standard_normal(coeffs.d.shape)
    out = FourierCoeffs(coeffs.n_modes, c, d)
    return out, fourier_field(out, g, eps_margin, eps_m, order)
