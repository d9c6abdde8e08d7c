"""Instance-wise adaptive refinement.

Starting from a base regressor, each round projects the current estimate onto
the prior manifold, samples a local neighbourhood there, solves the forward
problem for those samples, and fine-tunes the regressor on them together
with the base samples nearest to the current estimate.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .fields import Grid, SineCoeffs, eval_sine_basis, project_sine_basis, relative_l2
from .nn import (
    Dataset,
    NetConfig,
    NetWeights,
    TrainConfig,
    channel_stats,
    init_net,
    nn_forward,
    scale_targets,
    standardize,
    target_stats,
    train,
)
from .priors import DiskSpec, make_prior
from .scatter import GMRESError, Measurement, ScatterConfig, forward_solve, measurement_error

log = logging.getLogger(__name__)

__all__ = [
    "AdaptConfig",
    "RoundRecord",
    "AdaptError",
    "generate_base_dataset",
    "nearest_base_subset",
    "build_adaptive_dataset",
    "adaptive_solve",
    "AdaptiveInverter",
]

# rng streams; every sample gets default_rng([seed, stream, *counters])
STREAM_BASE = 0
STREAM_BASE_VAL = 1
STREAM_TEST = 2
STREAM_ADAPT = 3
STREAM_ADAPT_VAL = 4
STREAM_TRAIN = 5
STREAM_BASELINE = 6


class AdaptError(RuntimeError):
    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index


@dataclass(frozen=True)
class AdaptConfig:
    n_base_model: int = 300
    n_round: int = 3
    n_adapt: int = 50
    n_base: int = 100
    stopping: str = "fixed"
    plateau_delta: float = 0.02
    plateau_window: int = 2
    fine_tune_lr: float = 0.01
    val_fraction: float = 0.2
    measure: bool = True

    def __post_init__(self):
        if self.n_adapt < 0 or self.n_base < 0 or self.n_adapt + self.n_base == 0:
            raise ValueError("need n_adapt, n_base >= 0 and not both zero")
        if self.n_round < 0 or self.n_base_model < 1:
            raise ValueError("bad round count or base dataset size")
        if self.stopping not in ("fixed", "plateau"):
            raise ValueError(f"unknown stopping rule {self.stopping!r}")
        if self.stopping == "plateau" and not self.measure:
            raise ValueError("plateau stopping needs the measurement error")
        if self.plateau_window < 1 or not 0 <= self.plateau_delta < 1:
            raise ValueError("bad plateau settings")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class RoundRecord:
    """State after round ``t``; round 0 is the base model's estimate."""

    round: int
    prediction: SineCoeffs
    projection: object = None
    relative_error: float = None
    measurement_error: float = None
    n_adapt: int = 0
    n_base: int = 0
    epochs: int = 0
    scale: object = None
    weights_in: str = None
    weights_out: str = None

    def row(self):
        return {
            "round": self.round,
            "relative_error": "" if self.relative_error is None else repr(self.relative_error),
            "measurement_error": "" if self.measurement_error is None else repr(self.measurement_error),
            "n_adapt": self.n_adapt,
            "n_base": self.n_base,
            "epochs": self.epochs,
            "weights": self.weights_out or "",
        }


# dataset generation


def sample_rng(seed, stream, *counters):
    return np.random.default_rng([int(seed), int(stream), *(int(c) for c in counters)])


def _base_sample(job):
    prior, grid, cfg, order, seed, stream, idx = job
    rng = sample_rng(seed, stream, idx)
    try:
        point, f = prior.sample(rng, grid)
        m = forward_solve(f, cfg, rng=rng)
    except (GMRESError, ValueError, RuntimeError) as e:
        raise AdaptError(f"sample {idx}: {e}") from e
    return m.channels(), project_sine_basis(f, order).coeffs, point


def _perturbed_sample(job):
    prior, grid, cfg, order, point, scale, seed, counters = job
    rng = sample_rng(seed, *counters)
    try:
        new, f = prior.perturb(point, scale, rng, grid)
        m = forward_solve(f, cfg, rng=rng)
    except (GMRESError, ValueError, RuntimeError) as e:
        raise AdaptError(f"perturbed sample {counters[-1]}: {e}") from e
    return m.channels(), project_sine_basis(f, order).coeffs, new


def _run(fn, jobs, threads):
    if threads is None or threads <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def _to_dataset(results):
    X = np.stack([r[0] for r in results])
    Y = np.stack([r[1] for r in results])
    return Dataset(X, Y, meta=[r[2] for r in results])


def generate_base_dataset(prior, N, scatter_cfg: ScatterConfig, seed, grid=None, order=5,
                          stream=STREAM_BASE, threads=1, offset=0) -> Dataset:
    """``N`` prior samples with their measurements; targets are order-``order`` sine coefficients.

    Sample ``i`` depends only on ``(seed, stream, offset + i)``, so results do
    not depend on ``threads``.
    """
    if N < 1:
        raise ValueError("need at least one sample")
    grid = Grid(64) if grid is None else grid
    jobs = [(prior, grid, scatter_cfg, order, seed, stream, offset + i) for i in range(N)]
    return _to_dataset(_run(_base_sample, jobs, threads))


def nearest_base_subset(base: Dataset, prediction, N_base) -> Dataset:
    """The ``N_base`` samples whose targets are closest to ``prediction`` (ties by index)."""
    if N_base > len(base):
        raise ValueError(f"asked for {N_base} base samples but only {len(base)} exist")
    p = prediction.coeffs if isinstance(prediction, SineCoeffs) else np.asarray(prediction)
    d = np.linalg.norm(base.Y - p[None], axis=1)
    order = np.argsort(d, kind="stable")
    return base.subset(order[:N_base])


def build_adaptive_dataset(prior, point, scale, N_adapt, base: Dataset, prediction, N_base,
                           scatter_cfg: ScatterConfig, grid: Grid, order, seed, counters,
                           threads=1) -> Dataset:
    """``N_adapt`` perturbations of ``point`` plus the ``N_base`` nearest base samples.

    Perturbation ``i`` uses the rng ``[seed, *counters, i]``.
    """
    parts = []
    if N_adapt > 0:
        jobs = [
            (prior, grid, scatter_cfg, order, point, scale, seed, (*counters, i))
            for i in range(N_adapt)
        ]
        local = _to_dataset(_run(_perturbed_sample, jobs, threads))
        local.meta = [("adapt", m) for m in local.meta]
        parts.append(local)
    if N_base > 0:
        near = nearest_base_subset(base, prediction, N_base)
        near.meta = [("base", m) for m in (near.meta or [None] * len(near))]
        parts.append(near)
    out = Dataset.concat(parts)
    out.stats = None
    return out


# the loop


def _predict(w, X, stats, cfg, target=None):
    out = nn_forward(w, standardize(Dataset(X, np.zeros((len(X), 1))), stats).X, cfg)
    if target is not None:
        mu, s = target
        out = out * s + mu
    return out


def _split_sizes(n_adapt, n_base, frac):
    return int(round(frac * n_adapt)), int(round(frac * n_base))


def _plateaued(errors, delta, window):
    if len(errors) <= window:
        return False
    before = min(errors[:-window])
    recent = min(errors[-window:])
    return recent > (1 - delta) * before


@dataclass
class BaseModel:
    """A trained base regressor with the data it was trained and validated on.

    ``stats`` standardize the inputs; ``target`` is the ``(mean, scale)``
    pair the network's outputs are expressed in.
    """

    weights: NetWeights
    net_cfg: NetConfig
    stats: tuple
    train: Dataset
    val: Dataset
    history: list = field(default_factory=list)
    target: tuple = None

    def predict(self, X, weights=None):
        w = self.weights if weights is None else weights
        return _predict(w, X, self.stats, self.net_cfg, self.target)

    def training_view(self, data: Dataset) -> Dataset:
        out = standardize(data, self.stats)
        return out if self.target is None else scale_targets(out, self.target)


def train_base_model(prior, acfg: AdaptConfig, net_cfg: NetConfig, scatter_cfg: ScatterConfig,
                     grid: Grid, order, seed, lr=0.1, threads=1, tcfg: TrainConfig = None,
                     n_train=None) -> BaseModel:
    """Sample a base dataset plus a validation set of relative size ``val_fraction`` and train."""
    n_train = acfg.n_base_model if n_train is None else n_train
    n_val = max(1, int(round(acfg.val_fraction * n_train)))
    data = generate_base_dataset(prior, n_train, scatter_cfg, seed, grid, order, STREAM_BASE, threads)
    val = generate_base_dataset(prior, n_val, scatter_cfg, seed, grid, order, STREAM_BASE_VAL, threads)
    return fit_base_model(data, val, net_cfg, seed, lr, tcfg)


def fit_base_model(data: Dataset, val: Dataset, net_cfg: NetConfig, seed, lr=0.1,
                   tcfg: TrainConfig = None) -> BaseModel:
    bm = BaseModel(None, net_cfg, channel_stats(data.X), data, val, target=target_stats(data.Y))
    tcfg = TrainConfig(lr=lr, seed=int(sample_rng(seed, STREAM_TRAIN).integers(2**31))) if tcfg is None else tcfg
    w0 = init_net(net_cfg, int(sample_rng(seed, STREAM_TRAIN, 1).integers(2**31)))
    bm.weights, bm.history = train(bm.training_view(data), bm.training_view(val), w0, tcfg, net_cfg)
    data.stats = bm.stats
    val.stats = bm.stats
    return bm


def adaptive_solve(m_hat: Measurement, base: BaseModel, prior, acfg: AdaptConfig,
                   scatter_cfg: ScatterConfig, grid: Grid, seed=0, instance=0, truth=None,
                   threads=1, tcfg: TrainConfig = None, hooks=None):
    """Refine the base model's estimate for one measurement.

    Returns ``(prediction, records)``.  ``records[t]`` describes the estimate
    after round ``t``.  With fixed stopping the last estimate is returned;
    with plateau stopping the estimate with the smallest measurement error.

    ``hooks`` may hold callables ``on_scale(t, scale)``,
    ``on_dataset(t, train, val)`` and ``on_weights(t, weights)``; they
    observe, never modify.
    """
    hooks = hooks or {}
    cfg = base.net_cfg
    order = int(round(np.sqrt(cfg.out_dim)))
    x = m_hat.channels()[None]
    w = base.weights
    if tcfg is None:
        tcfg = TrainConfig(lr=acfg.fine_tune_lr)
    else:
        tcfg = replace(tcfg, lr=acfg.fine_tune_lr)

    def record(t, pred, **kw):
        rec = RoundRecord(t, pred, **kw)
        if truth is not None:
            rec.relative_error = relative_l2(pred, truth)
        if acfg.measure:
            try:
                rec.measurement_error = measurement_error(pred, m_hat, scatter_cfg, grid)
            except GMRESError as e:
                log.warning("round %d: measurement error unavailable (%s)", t, e)
                rec.measurement_error = float("inf")
        return rec

    pred = SineCoeffs(order, base.predict(x, w)[0])
    records = [record(0, pred, weights_out=w.checksum())]
    val_set = base.val
    val_pred = base.predict(val_set.X, w)
    n_va, n_vb = _split_sizes(acfg.n_adapt, acfg.n_base, acfg.val_fraction)
    n_vb = min(n_vb, len(base.val))
    n_vb = max(n_vb, 1) if n_va == 0 else n_vb

    for t in range(1, acfg.n_round + 1):
        try:
            point = prior.project(pred, grid)
            if isinstance(point, DiskSpec) and len(point) == 0:
                # nothing detected: one disk at the maximum of the raw estimate
                point = prior._fallback(eval_sine_basis(pred, grid))
            records[-1].projection = point
            scale = prior.perturbation(t - 1, val_pred=val_pred, val_true=val_set.Y, grid=grid)
            if "on_scale" in hooks:
                hooks["on_scale"](t, scale)
            train_t = build_adaptive_dataset(
                prior, point, scale, acfg.n_adapt, base.train, pred, acfg.n_base,
                scatter_cfg, grid, order, seed, (STREAM_ADAPT, instance, t), threads,
            )
            val_t = build_adaptive_dataset(
                prior, point, scale, n_va, base.val, pred, n_vb,
                scatter_cfg, grid, order, seed, (STREAM_ADAPT_VAL, instance, t), threads,
            )
            if "on_dataset" in hooks:
                hooks["on_dataset"](t, train_t, val_t)
            w_in = w.checksum()
            rt = replace(tcfg, seed=int(sample_rng(seed, STREAM_TRAIN, instance, t).integers(2**31)))
            w, hist = train(base.training_view(train_t), base.training_view(val_t), w, rt, cfg)
        except AdaptError as e:
            raise AdaptError(f"round {t}: {e}", t) from e
        except (GMRESError, ValueError, RuntimeError) as e:
            raise AdaptError(f"round {t}: {e}", t) from e
        if "on_weights" in hooks:
            hooks["on_weights"](t, w.copy())
        pred = SineCoeffs(order, base.predict(x, w)[0])
        val_set = val_t
        val_pred = base.predict(val_set.X, w)
        rec = record(
            t, pred, n_adapt=acfg.n_adapt, n_base=acfg.n_base, epochs=hist[-1]["epoch"],
            scale=scale, weights_in=w_in, weights_out=w.checksum(),
        )
        records.append(rec)
        log.info("round %d: rel %s meas %s", t, rec.relative_error, rec.measurement_error)
        if acfg.stopping == "plateau" and _plateaued(
            [r.measurement_error for r in records], acfg.plateau_delta, acfg.plateau_window
        ):
            break

    try:
        records[-1].projection = prior.project(pred, grid)
    except ValueError:
        records[-1].projection = None
    if acfg.stopping == "plateau":
        best = min(records, key=lambda r: r.measurement_error)
        return best.prediction, records
    return pred, records


class AdaptiveInverter(RegressorMixin, BaseEstimator):
    """Estimator front end: ``fit`` trains the base model, ``predict`` adapts per measurement.

    ``predict`` takes measurement channels ``(M, 2, N_d, N_t)`` or a list of
    :class:`Measurement` and returns ``(M, order^2)`` coefficients.  Round
    records of the last call are kept in ``records_``.
    """

    def __init__(self, prior="disk", prior_params=None, n=64, order=5, scatter=None,
                 n_layers=2, channels=16, fc=(128, 64), base_lr=0.1, n_base_model=300,
                 n_round=3, n_adapt=50, n_base=100, stopping="fixed", fine_tune_lr=0.01,
                 random_state=0, n_jobs=1):
        self.prior = prior
        self.prior_params = prior_params
        self.n = n
        self.order = order
        self.scatter = scatter
        self.n_layers = n_layers
        self.channels = channels
        self.fc = fc
        self.base_lr = base_lr
        self.n_base_model = n_base_model
        self.n_round = n_round
        self.n_adapt = n_adapt
        self.n_base = n_base
        self.stopping = stopping
        self.fine_tune_lr = fine_tune_lr
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _setup(self):
        self.prior_ = make_prior(self.prior, **(self.prior_params or {}))
        self.scatter_ = self.scatter or ScatterConfig()
        self.grid_ = Grid(self.n)
        self.acfg_ = AdaptConfig(
            n_base_model=self.n_base_model, n_round=self.n_round, n_adapt=self.n_adapt,
            n_base=self.n_base, stopping=self.stopping, fine_tune_lr=self.fine_tune_lr,
        )
        self.net_cfg_ = NetConfig(
            input_shape=(self.scatter_.n_dirs, self.scatter_.n_recv), n_layers=self.n_layers,
            channels=self.channels, fc=(*self.fc, self.order**2),
        )

    def fit(self, X=None, y=None):
        """Train the base model on fresh prior samples (``X``, ``y`` are ignored)."""
        self._setup()
        self.base_ = train_base_model(
            self.prior_, self.acfg_, self.net_cfg_, self.scatter_, self.grid_, self.order,
            self.random_state, self.base_lr, self.n_jobs,
        )
        return self

    def predict(self, X, truths=None):
        if isinstance(X, Measurement):
            X = [X]
        ms = [m if isinstance(m, Measurement) else Measurement(m[0] + 1j * m[1]) for m in X]
        out, self.records_ = [], []
        for i, m in enumerate(ms):
            truth = None if truths is None else SineCoeffs(self.order, truths[i])
            pred, recs = adaptive_solve(
                m, self.base_, self.prior_, self.acfg_, self.scatter_, self.grid_,
                seed=self.random_state, instance=i, truth=truth, threads=self.n_jobs,
            )
            out.append(pred.coeffs)
            self.records_.append(recs)
        return np.array(out)
