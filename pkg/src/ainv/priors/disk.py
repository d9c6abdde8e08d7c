"""Disk prior: sums of constant-amplitude disks, smoothed and band-limited.

A point on the manifold is a :class:`DiskSpec` (centre, radius, amplitude per
disk).  Projection of an arbitrary field onto the manifold is approximate:
threshold + connected components + moments, optionally followed by a bounded
least-squares fit of the disk parameters in sine-coefficient space.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from ..fields import (
    HALF_PI,
    FieldGrid,
    Grid,
    SineCoeffs,
    eval_sine_basis,
    mollify,
    project_sine_basis,
)


class PriorSamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiskRanges:
    c1: int = 1
    c2: int = 2
    r1: float = 0.15
    r2: float = 0.4
    a1: float = 0.5
    a2: float = 1.5

    def __post_init__(self):
        if not (1 <= self.c1 <= self.c2):
            raise ValueError(f"bad disk-count range [{self.c1}, {self.c2}]")
        if not (0 < self.r1 <= self.r2):
            raise ValueError(f"bad radius range [{self.r1}, {self.r2}]")
        if 2 * self.r2 >= np.pi:
            raise ValueError("largest disk does not fit in the domain")
        if self.a1 > self.a2:
            raise ValueError(f"bad amplitude range [{self.a1}, {self.a2}]")


@dataclass
class DiskSpec:
    """Disks as rows ``(cx, cy, radius, amplitude)``."""

    disks: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))

    def __post_init__(self):
        self.disks = np.asarray(self.disks, dtype=float).reshape(-1, 4)

    def __len__(self):
        return len(self.disks)

    def contained(self, tol=1e-12) -> bool:
        c, r = self.disks[:, :2], self.disks[:, 2]
        return bool(np.all(np.abs(c) <= HALF_PI - r[:, None] + tol))

    def disjoint(self) -> bool:
        return _all_disjoint(self.disks)

    def to_dict(self):
        return {
            "disks": [
                {"cx": cx, "cy": cy, "radius": r, "amplitude": a}
                for cx, cy, r, a in self.disks.tolist()
            ]
        }

    @classmethod
    def from_dict(cls, d):
        rows = [[e["cx"], e["cy"], e["radius"], e["amplitude"]] for e in d["disks"]]
        return cls(np.array(rows, dtype=float).reshape(-1, 4))


def _all_disjoint(disks):
    if len(disks) < 2:
        return True
    c, r = disks[:, :2], disks[:, 2]
    d = np.linalg.norm(c[:, None] - c[None], axis=-1)
    gap = d - (r[:, None] + r[None])
    np.fill_diagonal(gap, np.inf)
    return bool(np.all(gap > 0))


def sample_disk_prior(ranges: DiskRanges, rng, max_attempts=10_000) -> DiskSpec:
    rng = np.random.default_rng(rng)
    count = int(rng.integers(ranges.c1, ranges.c2 + 1))
    disks = []
    for idx in range(count):
        for _ in range(max_attempts):
            r = rng.uniform(ranges.r1, ranges.r2)
            c = rng.uniform(-(HALF_PI - r), HALF_PI - r, size=2)
            if all(np.hypot(*(c - o[:2])) > r + o[2] for o in disks):
                disks.append((c[0], c[1], r, 0.0))
                break
        else:
            raise PriorSamplingError(
                f"could not place disk {idx + 1} of {count} after {max_attempts} attempts; "
                f"radius range [{ranges.r1}, {ranges.r2}] is infeasible for {count} disks"
            )
    out = np.array(disks, dtype=float).reshape(-1, 4)
    out[:, 3] = rng.uniform(ranges.a1, ranges.a2, size=count)
    return DiskSpec(out)


def disk_indicator(spec: DiskSpec, g: Grid, antialias=True) -> np.ndarray:
    """Amplitude-weighted indicator sum at the grid nodes.

    With ``antialias`` the edge is a linear ramp one cell wide, i.e. an
    approximation of the cell coverage; this keeps the rendered field
    continuous in the disk parameters.
    """
    X, Y = g.mesh()
    out = np.zeros_like(X)
    for cx, cy, r, a in spec.disks:
        d = np.hypot(X - cx, Y - cy)
        if antialias:
            out += a * np.clip((r - d) / g.h + 0.5, 0.0, 1.0)
        else:
            out += a * (d <= r)
    return out


def default_eps(g: Grid) -> float:
    return 2.0 * g.h


def render_disks(spec: DiskSpec, g: Grid, eps_m=None, order=None, antialias=True) -> FieldGrid:
    """Indicator sum, mollified, then passed through the sine space of ``order``."""
    eps_m = default_eps(g) if eps_m is None else eps_m
    order = g.n // 2 if order is None else order
    f = mollify(FieldGrid(g, disk_indicator(spec, g, antialias)), eps_m)
    return eval_sine_basis(project_sine_basis(f, order), g)


def _clamp_disks(disks, ranges):
    disks = disks.copy()
    if ranges is not None:
        disks[:, 2] = np.clip(disks[:, 2], ranges.r1, ranges.r2)
        disks[:, 3] = np.clip(disks[:, 3], ranges.a1, ranges.a2)
    lim = np.maximum(HALF_PI - disks[:, 2], 0.0)
    disks[:, 0] = np.clip(disks[:, 0], -lim, lim)
    disks[:, 1] = np.clip(disks[:, 1], -lim, lim)
    return disks


def detect_disks(f: FieldGrid, ranges: DiskRanges = None, threshold=0.5, min_area=4,
                 min_peak=None) -> DiskSpec:
    """Locate disks in ``f`` by thresholding and moment fitting.

    Components of ``{|f| > threshold * max|f|}`` (4-connected) with at least
    ``min_area`` cells each become one disk: intensity-weighted centroid,
    radius from the area, amplitude = mean of ``f`` on the component.
    ``|f|`` is used unless ``ranges`` restricts amplitudes to be positive.

    With ``min_peak`` set, disks are instead extracted one at a time: the
    component holding the current maximum is cut at ``threshold`` times that
    maximum, masked out with its mollifier skirt, and the search repeats
    while the remaining maximum is at least ``min_peak`` times the global
    one.  Each disk then gets its own half-height contour, so weak disks next
    to strong ones keep their true radius.

    Radii are clamped into ``ranges`` and centres into the domain when
    ``ranges`` is given; amplitudes are left as measured.
    """
    g = f.grid
    vals = f.values
    signed = ranges is None or ranges.a1 < 0
    inten = np.abs(vals) if signed else vals
    peak = inten.max(initial=0.0)
    if peak <= 0:
        return DiskSpec()

    X, Y = g.mesh()
    found = []

    def measure(mask):
        w = inten[mask]
        area = int(mask.sum())
        cx = float(np.sum(w * X[mask]) / w.sum())
        cy = float(np.sum(w * Y[mask]) / w.sum())
        r = float(np.sqrt(area * g.h**2 / np.pi))
        return cx, cy, r, float(vals[mask].mean())

    if min_peak is None:
        labels, count = ndimage.label(inten > threshold * peak)
        for lab in range(1, count + 1):
            mask = labels == lab
            if mask.sum() >= min_area:
                found.append(measure(mask))
    else:
        skirt = int(np.ceil(4 * default_eps(g) / g.h)) + 1
        remaining = inten.copy()
        while True:
            a, b = np.unravel_index(np.argmax(remaining), remaining.shape)
            level = remaining[a, b]
            if level <= 0 or level < min_peak * peak:
                break
            labels, _ = ndimage.label(remaining > threshold * level)
            mask = labels == labels[a, b]
            if mask.sum() >= min_area:
                found.append(measure(mask))
            remaining[ndimage.binary_dilation(mask, iterations=skirt)] = 0.0

    disks = np.array(found, dtype=float).reshape(-1, 4)
    if ranges is not None and len(disks):
        disks[:, 2] = np.clip(disks[:, 2], ranges.r1, ranges.r2)
        lim = HALF_PI - disks[:, 2]
        disks[:, 0] = np.clip(disks[:, 0], -lim, lim)
        disks[:, 1] = np.clip(disks[:, 1], -lim, lim)
    return DiskSpec(disks)


def fit_disks(spec: DiskSpec, target: SineCoeffs, g: Grid, ranges: DiskRanges,
              eps_m=None, max_nfev=200) -> DiskSpec:
    """Least-squares polish of disk parameters against sine coefficients.

    Starts from ``spec`` and minimises the coefficient misfit of the
    rendered disks within the box given by ``ranges``.  Low-order
    coefficients of the band-limited render equal those of the mollified
    indicator, so the intermediate sine space is skipped.
    """
    if len(spec) == 0:
        return spec
    eps_m = default_eps(g) if eps_m is None else eps_m
    N = target.order
    x0 = _clamp_disks(spec.disks, ranges)

    def unpack(p):
        return p.reshape(-1, 4)

    def residual(p):
        f = mollify(FieldGrid(g, disk_indicator(DiskSpec(unpack(p)), g)), eps_m)
        return project_sine_basis(f, N).coeffs - target.coeffs

    lo = np.empty_like(x0)
    hi = np.empty_like(x0)
    lo[:, :2], hi[:, :2] = -(HALF_PI - ranges.r1), HALF_PI - ranges.r1
    lo[:, 2], hi[:, 2] = ranges.r1, ranges.r2
    lo[:, 3], hi[:, 3] = ranges.a1, ranges.a2
    # least_squares wants strictly interior starts
    span = hi - lo
    x0 = np.clip(x0, lo + 1e-9 * span, hi - 1e-9 * span)
    sol = least_squares(
        residual,
        x0.ravel(),
        bounds=(lo.ravel(), hi.ravel()),
        diff_step=1e-3,
        max_nfev=max_nfev,
        x_scale=np.tile([0.1, 0.1, 0.05, 0.1], len(x0)),
    )
    return DiskSpec(_clamp_disks(unpack(sol.x), ranges))


DEFAULT_SCALES = (0.15, 0.05, 0.15)


def perturb_disks(spec: DiskSpec, round_index: int, base_scales=DEFAULT_SCALES, rng=None,
                  ranges: DiskRanges = None, decay=0.7, max_redraw=100) -> DiskSpec:
    """Gaussian jitter of centres, radii and amplitudes, shrinking by ``decay`` per round.

    Results are clamped into ``ranges`` and the domain.  Overlapping draws are
    redrawn up to ``max_redraw`` times before the overlap is accepted.
    """
    rng = np.random.default_rng(rng)
    sc, sr, sa = np.asarray(base_scales, dtype=float) * decay**round_index
    if len(spec) == 0 or (sc == 0 and sr == 0 and sa == 0):
        return DiskSpec(spec.disks.copy())
    base = spec.disks
    scale = np.array([sc, sc, sr, sa])
    for _ in range(max_redraw):
        out = _clamp_disks(base + scale * rng.standard_normal(base.shape), ranges)
        if _all_disjoint(out):
            break
    return DiskSpec(out)


def effective_scales(base_scales, round_index, decay=0.7):
    return tuple(float(s) * decay**round_index for s in base_scales)
