"""Non-adaptive baselines, log-linear data scaling fits and efficiency factors."""

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .adapt import STREAM_BASE, STREAM_BASE_VAL, fit_base_model, generate_base_dataset
from .fields import SineCoeffs, relative_l2
from .io import write_csv, write_json

log = logging.getLogger(__name__)

SUMMARY_SCHEMA = 1

__all__ = [
    "ScalingFit",
    "EfficiencyReport",
    "fit_scaling",
    "adaptive_budget",
    "efficiency_factor",
    "run_nonadaptive_baseline",
    "emit_report",
    "svg_line_chart",
]


@dataclass
class ScalingFit:
    """``eps = a ln N + b`` fitted by ordinary least squares."""

    a: float
    b: float
    points: list = field(default_factory=list)
    r2: float = 1.0

    def predict(self, N):
        return self.a * np.log(N) + self.b

    def required_size(self, eps):
        if self.a >= 0:
            raise ValueError(f"slope {self.a} is not negative; the required size is undefined")
        return math.exp((eps - self.b) / self.a)

    def to_dict(self):
        return {"a": self.a, "b": self.b, "r2": self.r2, "points": [list(p) for p in self.points]}


@dataclass
class EfficiencyReport:
    target_eps: float
    n_adaptive: int
    n_nonadaptive: float
    f_eff: float
    extrapolated: bool = False

    def __post_init__(self):
        if not self.f_eff > 0:
            raise ValueError("efficiency factor must be positive")

    def to_dict(self):
        return dict(self.__dict__)


def fit_scaling(points) -> ScalingFit:
    pts = [(float(n), float(e)) for n, e in points]
    if len({n for n, _ in pts}) < 2:
        raise ValueError("need at least two distinct training sizes")
    x = np.log([n for n, _ in pts])
    y = np.array([e for _, e in pts])
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    a = float(np.sum((x - xm) * (y - ym)) / sxx)
    b = float(ym - a * xm)
    ss_res = float(np.sum((y - (a * x + b)) ** 2))
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    if a >= 0:
        warnings.warn(f"error does not decrease with data (slope {a:.4g})", RuntimeWarning)
    return ScalingFit(a, b, pts, r2)


def adaptive_budget(n_base_model, n_round, n_adapt):
    """Forward solves spent by the adaptive arm (validation solves are not counted)."""
    return int(n_base_model) + int(n_round) * int(n_adapt)


def efficiency_factor(fit: ScalingFit, budget, achieved_eps, max_observed=None) -> EfficiencyReport:
    """``N_NA / N_A`` where ``N_NA`` is the size the fit needs to reach ``achieved_eps``.

    ``budget`` is either ``N_A`` or a triple ``(N_base_model, N_round, N_adapt)``.
    ``max_observed`` defaults to the largest size in the fit; sizes more than
    ten times larger are flagged as extrapolated.
    """
    if fit.a >= 0:
        raise ValueError(f"slope {fit.a} is not negative; cannot extrapolate")
    n_a = adaptive_budget(*budget) if isinstance(budget, (tuple, list)) else int(budget)
    n_na = fit.required_size(achieved_eps)
    if max_observed is None:
        max_observed = max((n for n, _ in fit.points), default=np.inf)
    return EfficiencyReport(float(achieved_eps), n_a, n_na, n_na / n_a, bool(n_na > 10 * max_observed))


# baseline


def run_nonadaptive_baseline(prior, sizes, test_set, net_cfg, scatter_cfg, grid, order, seed,
                             lr=0.1, val_fraction=0.2, threads=1, tcfg=None, pool=None):
    """Train one fresh model per size and average the relative error over ``test_set``.

    The size-``N`` training set is the first ``N`` samples of the seeded base
    stream (validation likewise), so growing sizes extend rather than replace
    the data.  ``pool`` may hold already generated ``(train, val)`` prefixes.
    Returns ``[(N, mean_eps, per_instance_eps), ...]``.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes) or sizes[0] < 1:
        raise ValueError("sizes must be positive and ascending")
    n_max = sizes[-1]
    v_max = max(1, int(round(val_fraction * n_max)))
    tr_pool, va_pool = pool if pool is not None else (None, None)
    tr_pool = _extend(tr_pool, prior, n_max, scatter_cfg, seed, grid, order, STREAM_BASE, threads)
    va_pool = _extend(va_pool, prior, v_max, scatter_cfg, seed, grid, order, STREAM_BASE_VAL, threads)
    truths = [SineCoeffs(order, y) for y in test_set.Y]
    out = []
    for N in sizes:
        nv = max(1, int(round(val_fraction * N)))
        bm = fit_base_model(tr_pool.subset(range(N)), va_pool.subset(range(nv)), net_cfg, seed, lr, tcfg)
        pred = bm.predict(test_set.X)
        errs = [relative_l2(SineCoeffs(order, p), t) for p, t in zip(pred, truths)]
        log.info("baseline N=%d eps=%.4f", N, float(np.mean(errs)))
        out.append((N, float(np.mean(errs)), errs))
    return out


def _extend(pool, prior, n, scatter_cfg, seed, grid, order, stream, threads):
    from .nn import Dataset

    have = 0 if pool is None else len(pool)
    if have >= n:
        return pool
    more = generate_base_dataset(prior, n - have, scatter_cfg, seed, grid, order, stream, threads,
                                 offset=have)
    if pool is None:
        return more
    return Dataset.concat([Dataset(pool.X, pool.Y, None, pool.meta), more])


# reports


def svg_line_chart(path, series, title="", xlabel="", ylabel="", logx=False, width=480, height=320):
    """Polylines with axes and a legend; ``series`` is ``[(label, xs, ys, dashed), ...]``."""
    pad = 50
    pts = [(x, y) for _, xs, ys, _ in series for x, y in zip(xs, ys) if np.isfinite(y)]
    tx = (lambda v: math.log10(v)) if logx else (lambda v: v)
    if pts:
        xs_all = [tx(x) for x, _ in pts]
        ys_all = [y for _, y in pts]
        x0, x1 = min(xs_all), max(xs_all)
        y0, y1 = min(ys_all), max(ys_all)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def sx(v):
        return pad + (tx(v) - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle">{escape(title)}</text>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="12" y="{height / 2}" transform="rotate(-90 12 {height / 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
        f'<text x="{pad}" y="{height - pad + 15}" font-size="10">{escape(_fmt(x0, logx))}</text>',
        f'<text x="{width - pad}" y="{height - pad + 15}" font-size="10" text-anchor="end">'
        f'{escape(_fmt(x1, logx))}</text>',
        f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.3g}</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.3g}</text>',
    ]
    for i, (label, xs, ys, dashed) in enumerate(series):
        c = colors[i % len(colors)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys) if np.isfinite(y))
        dash = ' stroke-dasharray="5,4"' if dashed else ""
        if coords:
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2"{dash} points="{coords}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" font-size="11" fill="{c}" '
                   f'text-anchor="end">{escape(label)}</text>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def _fmt(v, logx):
    return f"{10 ** v:.3g}" if logx else f"{v:.3g}"


ADAPTIVE_FIELDS = ["instance", "round", "cumulative_samples", "relative_error", "measurement_error"]
NONADAPTIVE_FIELDS = ["n_train", "relative_error", "fitted"]
EFFICIENCY_FIELDS = ["round", "target_eps", "n_adaptive", "n_nonadaptive", "f_eff", "extrapolated"]


def _num(v):
    return "" if v is None else repr(float(v))


def emit_report(records, fit, reports, out_dir, n_base_model=0, n_adapt=0, baseline=(),
                plots=True):
    """Write the analysis files; returns the list of paths.

    ``records`` maps an instance id to its list of round records (objects
    with ``round``, ``relative_error``, ``measurement_error``).  ``baseline``
    is ``[(N, eps), ...]``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []

    rows = []
    for inst in sorted(records):
        for r in records[inst]:
            rows.append({
                "instance": inst,
                "round": r.round,
                "cumulative_samples": adaptive_budget(n_base_model, r.round, n_adapt),
                "relative_error": _num(r.relative_error),
                "measurement_error": _num(r.measurement_error),
            })
    write_csv(out_dir / "adaptive.csv", rows, ADAPTIVE_FIELDS)
    files.append(out_dir / "adaptive.csv")

    base_rows = [
        {"n_train": n, "relative_error": repr(float(e)),
         "fitted": _num(fit.predict(n)) if fit is not None else ""}
        for n, e in baseline
    ]
    write_csv(out_dir / "nonadaptive.csv", base_rows, NONADAPTIVE_FIELDS)
    files.append(out_dir / "nonadaptive.csv")

    eff_rows = [
        {"round": t, "target_eps": repr(r.target_eps), "n_adaptive": r.n_adaptive,
         "n_nonadaptive": repr(r.n_nonadaptive), "f_eff": repr(r.f_eff),
         "extrapolated": int(r.extrapolated)}
        for t, r in reports
    ]
    write_csv(out_dir / "efficiency.csv", eff_rows, EFFICIENCY_FIELDS)
    files.append(out_dir / "efficiency.csv")

    mean_curve = _mean_curve(records, n_base_model, n_adapt)
    summary = {
        "schema_version": SUMMARY_SCHEMA,
        "fit": None if fit is None else fit.to_dict(),
        "adaptive_mean": [{"round": t, "cumulative_samples": n, "relative_error": e}
                          for t, n, e in mean_curve],
        "efficiency": [dict(round=t, **r.to_dict()) for t, r in reports],
        "n_instances": len(records),
    }
    write_json(out_dir / "summary.json", summary)
    files.append(out_dir / "summary.json")

    if plots:
        series = []
        if mean_curve:
            series.append(("adaptive", [n for _, n, _ in mean_curve], [e for _, _, e in mean_curve], False))
        if baseline:
            series.append(("non-adaptive", [n for n, _ in baseline], [e for _, e in baseline], False))
        if fit is not None and baseline:
            ns = sorted({n for n, _ in baseline} | {n for _, n, _ in mean_curve})
            series.append(("log-linear fit", ns, [float(fit.predict(n)) for n in ns], True))
        files.append(svg_line_chart(out_dir / "error_vs_samples.svg", series,
                                    "relative error vs samples", "samples", "relative error", logx=True))
        if reports:
            files.append(svg_line_chart(
                out_dir / "efficiency.svg",
                [("F_eff", [r.target_eps for _, r in reports], [r.f_eff for _, r in reports], False)],
                "efficiency vs accuracy", "relative error", "F_eff",
            ))
    return files


def _mean_curve(records, n_base_model, n_adapt):
    by_round = {}
    for recs in records.values():
        for r in recs:
            if r.relative_error is not None:
                by_round.setdefault(r.round, []).append(r.relative_error)
    return [(t, adaptive_budget(n_base_model, t, n_adapt), float(np.mean(v)))
            for t, v in sorted(by_round.items())]
