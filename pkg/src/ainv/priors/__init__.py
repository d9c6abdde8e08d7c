"""Prior manifolds used by the adaptive loop.

Both priors expose the same small surface:

``sample(rng, grid)``
    draw a manifold point and its field.
``render(point, grid)``
    field of a manifold point.
``project(coeffs, grid)``
    approximate projection of a predicted sine expansion onto the manifold.
``perturbation(round_index, ...)``
    the perturbation scale for a round.
``perturb(point, scale, rng, grid)``
    a random neighbour of ``point`` on the manifold.
"""

import numpy as np
from sklearn.base import BaseEstimator

from ..fields import Grid, SineCoeffs, eval_sine_basis
from .disk import (
    DEFAULT_SCALES,
    DiskRanges,
    DiskSpec,
    PriorSamplingError,
    detect_disks,
    disk_indicator,
    effective_scales,
    fit_disks,
    perturb_disks,
    render_disks,
    sample_disk_prior,
)
from .fourier import (
    DEFAULT_MARGIN,
    FourierCoeffs,
    SigmaEstimate,
    estimate_sigma,
    fourier_field,
    fourier_project,
    hermitian_part,
    perturb_fourier,
    sample_fourier_prior,
    synthesize,
)

__all__ = [
    "DiskPrior",
    "FourierPrior",
    "make_prior",
    "DiskRanges",
    "DiskSpec",
    "FourierCoeffs",
    "SigmaEstimate",
    "PriorSamplingError",
    "detect_disks",
    "disk_indicator",
    "fit_disks",
    "perturb_disks",
    "render_disks",
    "sample_disk_prior",
    "estimate_sigma",
    "fourier_field",
    "fourier_project",
    "hermitian_part",
    "perturb_fourier",
    "sample_fourier_prior",
    "synthesize",
]


class DiskPrior(BaseEstimator):
    """Unions of disks with constant amplitude.

    ``refine`` polishes the detected disks by a bounded least-squares fit
    against the predicted coefficients; ``min_peak`` lets detection pick up
    disks much weaker than the strongest one.
    """

    kind = "disk"

    def __init__(self, n_min=1, n_max=2, r_min=0.15, r_max=0.4, a_min=0.5, a_max=1.5,
                 eps_m=None, field_order=None, scales=DEFAULT_SCALES, decay=0.7,
                 refine=True, min_peak=0.15):
        self.n_min = n_min
        self.n_max = n_max
        self.r_min = r_min
        self.r_max = r_max
        self.a_min = a_min
        self.a_max = a_max
        self.eps_m = eps_m
        self.field_order = field_order
        self.scales = scales
        self.decay = decay
        self.refine = refine
        self.min_peak = min_peak

    @property
    def ranges(self):
        return DiskRanges(self.n_min, self.n_max, self.r_min, self.r_max, self.a_min, self.a_max)

    def sample(self, rng, grid: Grid):
        spec = sample_disk_prior(self.ranges, rng)
        return spec, self.render(spec, grid)

    def render(self, spec, grid: Grid):
        return render_disks(spec, grid, self.eps_m, self.field_order)

    def project(self, coeffs: SineCoeffs, grid: Grid):
        """Disks whose band-limited render best matches ``coeffs``.

        Detection proposes candidates in order of peak height.  Without
        refinement they are returned as detected.  With refinement, each
        admissible disk count is tried on the strongest candidates, fitted,
        and the count with the smallest coefficient misfit wins.
        """
        field = eval_sine_basis(coeffs, grid)
        ranges = self.ranges
        cand = detect_disks(field, ranges, min_peak=self.min_peak)
        if len(cand) == 0:
            cand = self._fallback(field)
        if not self.refine:
            return cand
        best, best_err = None, np.inf
        counts = range(max(1, ranges.c1), ranges.c2 + 1)
        for c in counts:
            if c > len(cand) and best is not None:
                break
            spec = fit_disks(DiskSpec(cand.disks[:c]), coeffs, grid, ranges, self.eps_m)
            err = np.linalg.norm(self._coeffs(spec, grid, coeffs.order) - coeffs.coeffs)
            if err < best_err:
                best, best_err = spec, err
        return best

    def _coeffs(self, spec, grid, order):
        from ..fields import project_sine_basis

        return project_sine_basis(self.render(spec, grid), order).coeffs

    def _fallback(self, field):
        # one disk at the strongest point of the prediction
        ranges = self.ranges
        a, b = np.unravel_index(np.argmax(field.values), field.values.shape)
        x = field.grid.nodes
        r = 0.5 * (ranges.r1 + ranges.r2)
        lim = np.pi / 2 - r
        amp = float(np.clip(field.values[a, b], ranges.a1, ranges.a2))
        return DiskSpec([[np.clip(x[a], -lim, lim), np.clip(x[b], -lim, lim), r, amp]])

    def perturbation(self, round_index, **_):
        return effective_scales(self.scales, round_index, self.decay)

    def perturb(self, spec, scale, rng, grid: Grid):
        new = perturb_disks(spec, 0, scale, rng, self.ranges, decay=1.0)
        return new, self.render(new, grid)


class FourierPrior(BaseEstimator):
    """Band-limited fields on the inner square ``[-pi/2 + margin, pi/2 - margin]^2``."""

    kind = "fourier"

    def __init__(self, n_modes=3, margin=DEFAULT_MARGIN, eps_m=None, field_order=None,
                 low_range=(-0.2, -0.1), high_range=(2.0, 3.0), c_sigma=2.0):
        self.n_modes = n_modes
        self.margin = margin
        self.eps_m = eps_m
        self.field_order = field_order
        self.low_range = low_range
        self.high_range = high_range
        self.c_sigma = c_sigma

    def sample(self, rng, grid: Grid):
        return sample_fourier_prior(
            self.n_modes, rng, grid, self.margin, self.eps_m,
            self.low_range, self.high_range, self.field_order,
        )

    def render(self, coeffs, grid: Grid):
        return fourier_field(coeffs, grid, self.margin, self.eps_m, self.field_order)

    def project(self, coeffs: SineCoeffs, grid: Grid):
        return fourier_project(eval_sine_basis(coeffs, grid), self.n_modes, self.margin)

    def perturbation(self, round_index, val_pred=None, val_true=None, grid=None, **_):
        """Scale from the current model's validation errors in Fourier space."""
        if val_pred is None or val_true is None or len(val_pred) == 0:
            raise ValueError("the Fourier prior needs validation predictions to set its scale")
        fp = [self.project(SineCoeffs(int(np.sqrt(len(p))), p), grid) for p in val_pred]
        ft = [self.project(SineCoeffs(int(np.sqrt(len(t))), t), grid) for t in val_true]
        return estimate_sigma(fp, ft, self.c_sigma)

    def perturb(self, coeffs, sigma, rng, grid: Grid):
        return perturb_fourier(coeffs, sigma, rng, grid, self.margin, self.eps_m, self.field_order)


def make_prior(kind, **params):
    if kind == "disk":
        return DiskPrior(**params)
    if kind == "fourier":
        return FourierPrior(**params)
    raise ValueError(f"unknown prior {kind!r}")
