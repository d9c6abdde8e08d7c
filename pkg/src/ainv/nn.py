"""Small convolutional regressor from measurements to sine coefficients.

Everything is plain numpy in float64: convolutions go through an im2col
matrix product, padding wraps around (the measurement axes are angles), and
pooling averages non-overlapping or strided windows.  The last fully
connected layer is linear so that signed coefficients can be produced.
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, RegressorMixin

log = logging.getLogger(__name__)

__all__ = [
    "NetConfig",
    "NetWeights",
    "TrainConfig",
    "Dataset",
    "TrainingError",
    "init_net",
    "nn_forward",
    "nn_backward",
    "mse",
    "train",
    "standardize",
    "target_stats",
    "scale_targets",
    "CoeffRegressor",
]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetConfig:
    input_shape: tuple = (16, 16)
    n_layers: int = 2
    channels: int = 64
    kernel: int = 5
    padding: int = 2
    pool: int = 2
    stride: int = 2
    fc: tuple = (512, 256, 25)
    in_channels: int = 2

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "fc", tuple(int(v) for v in self.fc))
        if self.n_layers < 0 or self.channels < 1 or self.kernel < 1 or self.padding < 0:
            raise ValueError("bad convolution settings")
        if self.pool < 1 or self.stride < 1:
            raise ValueError("bad pooling settings")
        if len(self.fc) == 0 or min(self.fc) < 1:
            raise ValueError("need at least one fully connected layer with positive width")
        for h, w in self.spatial_trace()[1:]:
            if h < 1 or w < 1:
                raise ValueError(f"spatial size collapses: trace {self.spatial_trace()}")

    def spatial_trace(self):
        """Spatial shape before the first stage and after every conv+pool stage."""
        h, w = self.input_shape
        out = [(h, w)]
        for _ in range(self.n_layers):
            h = h + 2 * self.padding - self.kernel + 1
            w = w + 2 * self.padding - self.kernel + 1
            h = (h - self.pool) // self.stride + 1
            w = (w - self.pool) // self.stride + 1
            out.append((h, w))
        return out

    @property
    def flat_dim(self):
        h, w = self.spatial_trace()[-1]
        c = self.channels if self.n_layers else self.in_channels
        return c * h * w

    @property
    def out_dim(self):
        return self.fc[-1]

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "n_layers": self.n_layers,
            "channels": self.channels,
            "kernel": self.kernel,
            "padding": self.padding,
            "pool": self.pool,
            "stride": self.stride,
            "fc": list(self.fc),
            "in_channels": self.in_channels,
        }


@dataclass
class NetWeights:
    """Conv kernels ``(C_out, C_in, K, K)`` and fc matrices ``(out, in)``, with biases."""

    conv: list = field(default_factory=list)
    fc: list = field(default_factory=list)

    def arrays(self):
        out = []
        for W, b in self.conv + self.fc:
            out += [W, b]
        return out

    def copy(self):
        return NetWeights(
            [(W.copy(), b.copy()) for W, b in self.conv],
            [(W.copy(), b.copy()) for W, b in self.fc],
        )

    def checksum(self):
        hsh = hashlib.sha256()
        for a in self.arrays():
            hsh.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return hsh.hexdigest()

    def check(self, cfg: NetConfig):
        if len(self.conv) != cfg.n_layers or len(self.fc) != len(cfg.fc):
            raise ValueError("weights do not match the network configuration")
        cin = cfg.in_channels
        for W, b in self.conv:
            if W.shape != (cfg.channels, cin, cfg.kernel, cfg.kernel) or b.shape != (cfg.channels,):
                raise ValueError(f"conv weight shape {W.shape} does not match the configuration")
            cin = cfg.channels
        din = cfg.flat_dim
        for (W, b), dout in zip(self.fc, cfg.fc):
            if W.shape != (dout, din) or b.shape != (dout,):
                raise ValueError(f"fc weight shape {W.shape} does not match the configuration")
            din = dout


def init_net(cfg: NetConfig, seed) -> NetWeights:
    """He-normal weights, zero biases."""
    rng = np.random.default_rng(seed)
    conv = []
    cin = cfg.in_channels
    for _ in range(cfg.n_layers):
        fan_in = cin * cfg.kernel**2
        W = rng.standard_normal((cfg.channels, cin, cfg.kernel, cfg.kernel)) * np.sqrt(2.0 / fan_in)
        conv.append((W, np.zeros(cfg.channels)))
        cin = cfg.channels
    fc = []
    din = cfg.flat_dim
    for dout in cfg.fc:
        W = rng.standard_normal((dout, din)) * np.sqrt(2.0 / din)
        fc.append((W, np.zeros(dout)))
        din = dout
    return NetWeights(conv, fc)


# layers


def wrap_pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="wrap")


def _unwrap_pad(dxp, p):
    """Adjoint of :func:`wrap_pad`: fold the halo back onto the interior."""
    if p == 0:
        return dxp
    H = dxp.shape[2] - 2 * p
    W = dxp.shape[3] - 2 * p
    d = dxp[:, :, p:p + H].copy()
    d[:, :, H - p:] += dxp[:, :, :p]
    d[:, :, :p] += dxp[:, :, H + p:]
    out = d[:, :, :, p:p + W].copy()
    out[:, :, :, W - p:] += d[:, :, :, :p]
    out[:, :, :, :p] += d[:, :, :, W + p:]
    return out


def _im2col(xp, K):
    # (B, C, Ho, Wo, K, K) -> (B*Ho*Wo, C*K*K)
    win = sliding_window_view(xp, (K, K), axis=(2, 3))
    B, C, Ho, Wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * K * K), (B, Ho, Wo)


def conv_forward(x, W, b, p):
    Cout, Cin, K, _ = W.shape
    xp = wrap_pad(x, p)
    cols, (B, Ho, Wo) = _im2col(xp, K)
    out = cols @ W.reshape(Cout, -1).T + b
    return out.reshape(B, Ho, Wo, Cout).transpose(0, 3, 1, 2), cols


def conv_backward(dout, cols, x_shape, W, p, need_dx=True):
    Cout, Cin, K, _ = W.shape
    B, _, Ho, Wo = dout.shape
    dflat = dout.transpose(0, 2, 3, 1).reshape(-1, Cout)
    dW = (dflat.T @ cols).reshape(W.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dW, db
    # column gradients laid out (Cin, K, K, B, Ho, Wo) straight from the product
    dcols = (W.reshape(Cout, -1).T @ dflat.T).reshape(Cin, K, K, B, Ho, Wo)
    dxp = np.zeros((Cin, B, x_shape[2] + 2 * p, x_shape[3] + 2 * p))
    for a in range(K):
        for c in range(K):
            dxp[:, :, a:a + Ho, c:c + Wo] += dcols[:, a, c]
    return _unwrap_pad(dxp.transpose(1, 0, 2, 3), p), dW, db


def pool_forward(x, k, s):
    B, C, H, W = x.shape
    Ho, Wo = (H - k) // s + 1, (W - k) // s + 1
    out = np.zeros((B, C, Ho, Wo))
    for a in range(k):
        for c in range(k):
            out += x[:, :, a:a + s * (Ho - 1) + 1:s, c:c + s * (Wo - 1) + 1:s]
    return out / (k * k)


def pool_backward(dout, x_shape, k, s):
    dx = np.zeros(x_shape)
    Ho, Wo = dout.shape[2:]
    g = dout / (k * k)
    for a in range(k):
        for c in range(k):
            dx[:, :, a:a + s * (Ho - 1) + 1:s, c:c + s * (Wo - 1) + 1:s] += g
    return dx


def _as_batch(x, cfg):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.shape[1:] != (cfg.in_channels, *cfg.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match {(cfg.in_channels, *cfg.input_shape)}")
    return x, single


def _forward(w: NetWeights, x, cfg: NetConfig):
    cache = []
    h = x
    for W, b in w.conv:
        z, cols = conv_forward(h, W, b, cfg.padding)
        a = np.maximum(z, 0.0)
        cache.append((h.shape, cols, z, a.shape))
        h = pool_forward(a, cfg.pool, cfg.stride)
    flat_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    acts = [h]
    for i, (W, b) in enumerate(w.fc):
        z = h @ W.T + b
        h = z if i == len(w.fc) - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return h, (cache, flat_shape, acts)


def nn_forward(w: NetWeights, x, cfg: NetConfig):
    """Network output for one input ``(2, N_d, N_t)`` or a batch ``(B, 2, N_d, N_t)``."""
    w.check(cfg)
    x, single = _as_batch(x, cfg)
    y, _ = _forward(w, x, cfg)
    return y[0] if single else y


def mse(pred, target):
    return float(np.mean((pred - target) ** 2))


def nn_backward(w: NetWeights, x, target, cfg: NetConfig):
    """Loss and gradients of the mean squared error over batch and outputs.

    Returns ``(loss, grads)`` with ``grads`` a :class:`NetWeights` of the
    same layout as ``w``.
    """
    w.check(cfg)
    x, single = _as_batch(x, cfg)
    target = np.asarray(target, dtype=float)
    if single:
        target = target[None]
    if target.shape != (x.shape[0], cfg.out_dim):
        raise ValueError(f"target shape {target.shape} does not match output {(x.shape[0], cfg.out_dim)}")
    y, (cache, flat_shape, acts) = _forward(w, x, cfg)
    diff = y - target
    loss = float(np.mean(diff**2))
    g = 2.0 * diff / diff.size

    fc_grads = []
    for i in range(len(w.fc) - 1, -1, -1):
        W, _ = w.fc[i]
        if i < len(w.fc) - 1:
            g = g * (acts[i + 1] > 0)
        fc_grads.append((g.T @ acts[i], g.sum(axis=0)))
        g = g @ W
    fc_grads.reverse()

    g = g.reshape(flat_shape)
    conv_grads = []
    for i in range(len(w.conv) - 1, -1, -1):
        W = w.conv[i][0]
        x_shape, cols, z, a_shape = cache[i]
        g = pool_backward(g, a_shape, cfg.pool, cfg.stride) * (z > 0)
        g, dW, db = conv_backward(g, cols, x_shape, W, cfg.padding, need_dx=i > 0)
        conv_grads.append((dW, db))
    conv_grads.reverse()
    return loss, NetWeights(conv_grads, fc_grads)


# data


@dataclass
class Dataset:
    """Measurement channels ``X (M, 2, N_d, N_t)`` and coefficient targets ``Y (M, N^2)``.

    ``stats`` holds per-channel ``(mean, std)`` once the inputs are
    standardized; ``meta`` carries free-form per-sample provenance.
    """

    X: np.ndarray
    Y: np.ndarray
    stats: tuple = None
    meta: list = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        if self.X.ndim != 4 or self.Y.ndim != 2 or len(self.X) != len(self.Y):
            raise ValueError(f"inconsistent dataset shapes {self.X.shape} / {self.Y.shape}")
        if self.stats is not None:
            mu, sd = (np.asarray(v, dtype=float) for v in self.stats)
            if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sd)) and np.all(sd > 0)):
                raise ValueError("normalization statistics must be finite with positive std")
            self.stats = (mu, sd)

    def __len__(self):
        return len(self.X)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        meta = None if self.meta is None else [self.meta[i] for i in idx]
        return Dataset(self.X[idx], self.Y[idx], self.stats, meta)

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise ValueError("nothing to concatenate")
        stats = parts[0].stats
        meta = None
        if all(p.meta is not None for p in parts):
            meta = [m for p in parts for m in p.meta]
        return Dataset(
            np.concatenate([p.X for p in parts]), np.concatenate([p.Y for p in parts]), stats, meta
        )


def channel_stats(X):
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=(0, 2, 3))
    sd = X.std(axis=(0, 2, 3))
    for c, s in enumerate(sd):
        if not s > 0:
            raise ValueError(f"channel {c} has zero variance; cannot standardize")
    return mu, sd


def standardize(data: Dataset, stats=None) -> Dataset:
    """Per-channel standardization of the inputs; reuse ``stats`` when given."""
    if stats is None:
        if len(data) == 0:
            raise ValueError("cannot compute statistics of an empty dataset")
        stats = channel_stats(data.X)
    mu, sd = (np.asarray(v, dtype=float) for v in stats)
    for c, s in enumerate(sd):
        if not s > 0:
            raise ValueError(f"channel {c} has zero variance; cannot standardize")
    X = (data.X - mu[None, :, None, None]) / sd[None, :, None, None]
    return Dataset(X, data.Y.copy(), (mu, sd), data.meta)


def target_stats(Y):
    """Per-coefficient mean and a single global scale for the targets.

    One scalar scale keeps the training loss an exact multiple of the plain
    coefficient MSE, so no coefficient is reweighted.
    """
    Y = np.asarray(Y, dtype=float)
    mu = Y.mean(axis=0)
    s = float(np.sqrt(np.mean((Y - mu) ** 2)))
    return mu, (s if s > 0 else 1.0)


def scale_targets(data: Dataset, tstats) -> Dataset:
    mu, s = tstats
    return Dataset(data.X, (data.Y - mu) / s, data.stats, data.meta)


# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    momentum: float = 0.9
    batch_size: int = 100
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    def to_dict(self):
        return dict(self.__dict__)


def _dataset_loss(w, data, cfg, chunk=500):
    tot = 0.0
    for i in range(0, len(data), chunk):
        y = nn_forward(w, data.X[i:i + chunk], cfg)
        tot += float(np.sum((y - data.Y[i:i + chunk]) ** 2))
    return tot / data.Y.size


def sgd_momentum_step(params, grads, velocity, lr, mu):
    """In-place classical momentum update: ``v <- mu v - lr g``, ``theta <- theta + v``."""
    for p, g, v in zip(params, grads, velocity):
        v *= mu
        v -= lr * g
        p += v


def train(train_set: Dataset, val_set: Dataset, w0: NetWeights, tcfg: TrainConfig, cfg: NetConfig,
          val_loss=None):
    """Mini-batch SGD with momentum and early stopping on the validation loss.

    Epoch 0 is the starting point.  Returns the weights of the epoch with the
    lowest validation loss and the history, a list of dicts with keys
    ``epoch, train_mse, val_mse``.  ``val_loss(weights, epoch)`` replaces the
    validation evaluation (used for testing the stopping logic).
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if val_loss is None:
        if val_set is None or len(val_set) == 0:
            raise ValueError("empty validation set")

        def val_loss(w, epoch):
            return _dataset_loss(w, val_set, cfg)

    rng = np.random.default_rng(tcfg.seed)
    w = w0.copy()
    params = w.arrays()
    velocity = [np.zeros_like(p) for p in params]
    bs = min(tcfg.batch_size, len(train_set))

    best_w = w.copy()
    best = val_loss(w, 0)
    history = [{"epoch": 0, "train_mse": _dataset_loss(w, train_set, cfg), "val_mse": best}]
    stale = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        perm = rng.permutation(len(train_set))
        tot = 0.0
        for i in range(0, len(perm), bs):
            idx = perm[i:i + bs]
            loss, grads = nn_backward(w, train_set.X[idx], train_set.Y[idx], cfg)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss became {loss} at epoch {epoch}; learning rate {tcfg.lr} is likely too high"
                )
            sgd_momentum_step(params, grads.arrays(), velocity, tcfg.lr, tcfg.momentum)
            tot += loss * len(idx)
        vl = val_loss(w, epoch)
        if not np.isfinite(vl):
            raise TrainingError(f"validation loss became {vl} at epoch {epoch}")
        history.append({"epoch": epoch, "train_mse": tot / len(perm), "val_mse": vl})
        if vl < best:
            best, best_w, stale = vl, w.copy(), 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    log.debug("trained %d epochs, best val %.4g", history[-1]["epoch"], best)
    return best_w, history


class CoeffRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: raw measurement channels in, sine coefficients out.

    Inputs are standardized, and targets centred and scaled, with statistics
    from the first ``fit``; with ``warm_start`` later fits continue from the
    current weights and keep those statistics.
    """

    def __init__(self, n_layers=2, channels=64, kernel=5, padding=2, pool=2, stride=2,
                 fc=(512, 256, 25), lr=0.1, momentum=0.9, batch_size=100, max_epochs=500,
                 patience=20, val_fraction=0.2, warm_start=False, random_state=0):
        self.n_layers = n_layers
        self.channels = channels
        self.kernel = kernel
        self.padding = padding
        self.pool = pool
        self.stride = stride
        self.fc = fc
        self.lr = lr
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.val_fraction = val_fraction
        self.warm_start = warm_start
        self.random_state = random_state

    def _net_config(self, X):
        return NetConfig(
            input_shape=X.shape[2:], n_layers=self.n_layers, channels=self.channels,
            kernel=self.kernel, padding=self.padding, pool=self.pool, stride=self.stride,
            fc=tuple(self.fc), in_channels=X.shape[1],
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        cfg = self._net_config(X)
        if cfg.out_dim != y.shape[1]:
            raise ValueError(f"last fc width {cfg.out_dim} != target width {y.shape[1]}")
        fresh = not (self.warm_start and hasattr(self, "weights_"))
        if fresh:
            self.net_config_ = cfg
            self.stats_ = channel_stats(X)
            self.target_stats_ = target_stats(y)
            self.weights_ = init_net(cfg, self.random_state)
        if X_val is None:
            rng = np.random.default_rng(self.random_state)
            perm = rng.permutation(len(X))
            n_val = max(1, int(round(self.val_fraction * len(X)))) if len(X) > 1 else 0
            vi, ti = perm[:n_val], perm[n_val:]
            X_val, y_val, X, y = X[vi], y[vi], X[ti], y[ti]
            if len(X_val) == 0:
                X_val, y_val = X, y
        tr = scale_targets(standardize(Dataset(X, y), self.stats_), self.target_stats_)
        va = Dataset(X_val, np.asarray(y_val, dtype=float).reshape(len(X_val), -1))
        va = scale_targets(standardize(va, self.stats_), self.target_stats_)
        tcfg = TrainConfig(self.lr, self.momentum, self.batch_size, self.max_epochs,
                           self.patience, self.random_state)
        self.weights_, self.history_ = train(tr, va, self.weights_, tcfg, self.net_config_)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        Z = standardize(Dataset(X, np.zeros((len(X), 1))), self.stats_).X
        mu, sc = self.target_stats_
        return nn_forward(self.weights_, Z, self.net_config_) * sc + mu
