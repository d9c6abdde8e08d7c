import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ainv.adapt import (
    STREAM_BASE,
    AdaptConfig,
    AdaptError,
    BaseModel,
    adaptive_solve,
    build_adaptive_dataset,
    fit_base_model,
    generate_base_dataset,
    nearest_base_subset,
)
from ainv.adapt import _plateaued
from ainv.fields import Grid, SineCoeffs, eval_sine_basis, project_sine_basis, relative_l2
from ainv.nn import Dataset, NetConfig, NetWeights, TrainConfig, channel_stats, init_net
from ainv.priors import DiskPrior, FourierPrior, estimate_sigma
from ainv.scatter import Measurement, ScatterConfig, forward_solve

G = Grid(16)
SC = ScatterConfig(n_dirs=4, n_recv=4)
NET = NetConfig(input_shape=(4, 4), n_layers=1, channels=2, kernel=3, padding=1, fc=(8, 25))
FAST = TrainConfig(max_epochs=3, patience=3)


class EchoPrior:
    """Manifold = order-5 sine expansions; projection and perturbation are identities."""

    def sample(self, rng, grid):
        c = SineCoeffs(5, 0.3 * rng.standard_normal(25))
        return c, eval_sine_basis(c, grid)

    def render(self, c, grid):
        return eval_sine_basis(c, grid)

    def project(self, coeffs, grid):
        return coeffs

    def perturbation(self, round_index, **_):
        return 0.0

    def perturb(self, point, scale, rng, grid):
        return point, eval_sine_basis(point, grid)


class FailingPrior(EchoPrior):
    def perturb(self, point, scale, rng, grid):
        raise ValueError("boom")


@pytest.fixture(scope="module")
def disk_base():
    prior = DiskPrior(n_max=1, r_min=0.3, r_max=0.5)
    data = generate_base_dataset(prior, 20, SC, seed=1, grid=G)
    val = generate_base_dataset(prior, 5, SC, seed=1, grid=G, stream=STREAM_BASE + 1)
    return prior, fit_base_model(data, val, NET, seed=1, tcfg=FAST)


def test_generate_single_sample_shapes():
    d = generate_base_dataset(EchoPrior(), 1, SC, seed=0, grid=G)
    assert d.X.shape == (1, 2, 4, 4) and d.Y.shape == (1, 25) and len(d.meta) == 1


def test_generate_deterministic_and_thread_independent():
    a = generate_base_dataset(DiskPrior(), 4, SC, seed=3, grid=G)
    b = generate_base_dataset(DiskPrior(), 4, SC, seed=3, grid=G)
    c = generate_base_dataset(DiskPrior(), 4, SC, seed=3, grid=G, threads=2)
    assert a.X.tobytes() == b.X.tobytes() == c.X.tobytes()
    assert a.Y.tobytes() == c.Y.tobytes()
    # prefix property: sample i only depends on its own counter
    d = generate_base_dataset(DiskPrior(), 2, SC, seed=3, grid=G)
    assert np.array_equal(d.X, a.X[:2])


def test_generate_rejects_empty():
    with pytest.raises(ValueError):
        generate_base_dataset(EchoPrior(), 0, SC, seed=0, grid=G)


def _brute_nearest(Y, p, k):
    d = [(float(np.sqrt(np.sum((y - p) ** 2))), i) for i, y in enumerate(Y)]
    return [i for _, i in sorted(d)[:k]]


def test_nearest_subset_matches_exhaustive_sort():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((50, 25))
    base = Dataset(np.zeros((50, 2, 1, 1)), Y, meta=list(range(50)))
    p = rng.standard_normal(25)
    got = nearest_base_subset(base, SineCoeffs(5, p), 10)
    assert got.meta == _brute_nearest(Y, p, 10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12))
def test_nearest_subset_property(seed, k):
    rng = np.random.default_rng(seed)
    # a coarse lattice of targets so that ties happen
    Y = rng.integers(-2, 3, size=(12, 2)).astype(float)
    base = Dataset(np.zeros((12, 2, 1, 1)), Y, meta=list(range(12)))
    p = rng.integers(-2, 3, size=2).astype(float)
    got = nearest_base_subset(base, p, k)
    d = np.linalg.norm(Y - p, axis=1)
    sel = np.array(got.meta)
    rest = np.setdiff1d(np.arange(12), sel)
    assert len(sel) == k
    if len(rest):
        assert d[sel].max() <= d[rest].min()
        # ties resolved towards lower indices
        edge = d[sel].max()
        assert all(i < j for i in sel[d[sel] == edge] for j in rest[d[rest] == edge])


def test_nearest_subset_edge_cases():
    Y = np.arange(15.0).reshape(5, 3)
    base = Dataset(np.zeros((5, 2, 1, 1)), Y, meta=list(range(5)))
    assert sorted(nearest_base_subset(base, Y[0], 5).meta) == list(range(5))
    assert nearest_base_subset(base, Y[3], 1).meta == [3]
    with pytest.raises(ValueError):
        nearest_base_subset(base, Y[0], 6)


def test_adaptive_dataset_without_local_samples():
    base = generate_base_dataset(EchoPrior(), 6, SC, seed=0, grid=G)
    p = base.Y[2]
    d = build_adaptive_dataset(EchoPrior(), None, 0.0, 0, base, p, 3, SC, G, 5, 0, (3, 0, 1))
    assert len(d) == 3 and all(tag == "base" for tag, _ in d.meta)
    assert np.array_equal(d.Y[0], p)


def _echo_base(truth):
    f = eval_sine_basis(truth, G)
    ch = forward_solve(f, SC).channels()
    rng = np.random.default_rng(0)
    X = ch[None] + 0.1 * rng.standard_normal((8, 2, 4, 4))
    Y = np.tile(truth.coeffs, (8, 1))
    cfg = NetConfig(input_shape=(4, 4), n_layers=0, fc=(25,))
    w = NetWeights([], [(np.zeros((25, 32)), truth.coeffs.copy())])
    stats = channel_stats(X)
    return BaseModel(w, cfg, stats, Dataset(X[:6], Y[:6], stats), Dataset(X[6:], Y[6:], stats)), ch


def test_stub_fixed_point():
    truth = SineCoeffs(5, 0.2 * np.random.default_rng(1).standard_normal(25))
    base, ch = _echo_base(truth)
    acfg = AdaptConfig(n_round=3, n_adapt=4, n_base=4)
    pred, recs = adaptive_solve(Measurement(ch[0] + 1j * ch[1]), base, EchoPrior(), acfg, SC, G,
                                truth=truth, tcfg=FAST)
    assert [r.round for r in recs] == [0, 1, 2, 3]
    assert all(r.relative_error <= 1e-12 for r in recs)
    assert all(r.measurement_error <= 1e-10 for r in recs)
    assert relative_l2(pred, truth) <= 1e-12


def test_failure_carries_round_index():
    truth = SineCoeffs(5, 0.2 * np.random.default_rng(2).standard_normal(25))
    base, ch = _echo_base(truth)
    with pytest.raises(AdaptError) as err:
        adaptive_solve(Measurement(ch[0] + 1j * ch[1]), base, FailingPrior(),
                       AdaptConfig(n_round=2, n_adapt=2, n_base=2), SC, G, tcfg=FAST)
    assert err.value.round_index == 1


def test_round_chain_and_composition(disk_base):
    prior, base = disk_base
    acfg = AdaptConfig(n_round=2, n_adapt=5, n_base=10, measure=False)
    seen = {}

    def on_dataset(t, tr, va):
        seen[t] = (tr, va)

    m = Measurement(base.val.X[0, 0] + 1j * base.val.X[0, 1])
    _, recs = adaptive_solve(m, base, prior, acfg, SC, G, seed=1, tcfg=FAST,
                             truth=SineCoeffs(5, base.val.Y[0]), hooks={"on_dataset": on_dataset})
    for t in (1, 2):
        assert recs[t].weights_in == recs[t - 1].weights_out
        tr, va = seen[t]
        tags = [tag for tag, _ in tr.meta]
        assert len(tr) == 15 and tags.count("adapt") == 5 and tags.count("base") == 10
        vtags = [tag for tag, _ in va.meta]
        assert vtags.count("adapt") == 1 and vtags.count("base") == 2
    assert recs[0].weights_out == base.weights.checksum()
    assert all(r.measurement_error is None for r in recs)


def test_instance_isolation(disk_base):
    prior, base = disk_base
    acfg = AdaptConfig(n_round=1, n_adapt=3, n_base=4, measure=False)
    sets = []
    for i in (0, 1):
        m = Measurement(base.val.X[i, 0] + 1j * base.val.X[i, 1])
        store = {}
        _, recs = adaptive_solve(m, base, prior, acfg, SC, G, seed=1, instance=0, tcfg=FAST,
                                 hooks={"on_dataset": lambda t, tr, va: store.update(tr=tr)})
        sets.append((recs[0].prediction.coeffs, store["tr"]))
    assert not np.array_equal(sets[0][0], sets[1][0])
    assert not np.array_equal(sets[0][1].Y, sets[1][1].Y)


def test_fourier_sigma_wiring():
    prior = FourierPrior(n_modes=1)
    data = generate_base_dataset(prior, 12, SC, seed=2, grid=G)
    val = generate_base_dataset(prior, 5, SC, seed=2, grid=G, stream=STREAM_BASE + 1)
    base = fit_base_model(data, val, NET, seed=2, tcfg=FAST)
    acfg = AdaptConfig(n_round=2, n_adapt=5, n_base=5, measure=False)
    scales, sets, weights = {}, {}, {}
    hooks = {
        "on_scale": lambda t, s: scales.__setitem__(t, s),
        "on_dataset": lambda t, tr, va: sets.__setitem__(t, va),
        "on_weights": lambda t, w: weights.__setitem__(t, w),
    }
    m = Measurement(val.X[0, 0] + 1j * val.X[0, 1])
    adaptive_solve(m, base, prior, acfg, SC, G, seed=2, tcfg=FAST, hooks=hooks)

    def expected(w, vs):
        pred = base.predict(vs.X, w)
        fp = [prior.project(SineCoeffs(5, p), G) for p in pred]
        ft = [prior.project(SineCoeffs(5, y), G) for y in vs.Y]
        return estimate_sigma(fp, ft, c_sigma=2.0)

    for t, (w, vs) in {1: (base.weights, base.val), 2: (weights[1], sets[1])}.items():
        ref = expected(w, vs)
        assert np.array_equal(scales[t].sigma1, ref.sigma1)
        assert np.array_equal(scales[t].sigma2, ref.sigma2)
    assert scales[1].c_sigma == 2.0


def test_disk_scales_follow_round_index(disk_base):
    prior, base = disk_base
    acfg = AdaptConfig(n_round=2, n_adapt=2, n_base=2, measure=False)
    scales = {}
    m = Measurement(base.val.X[1, 0] + 1j * base.val.X[1, 1])
    adaptive_solve(m, base, prior, acfg, SC, G, tcfg=FAST,
                   hooks={"on_scale": lambda t, s: scales.__setitem__(t, s)})
    assert scales[1] == pytest.approx((0.15, 0.05, 0.15))
    assert scales[2] == pytest.approx((0.105, 0.035, 0.105))


def test_plateau_rule():
    assert not _plateaued([1.0, 0.9], 0.02, 2)
    assert not _plateaued([1.0, 0.5, 0.4], 0.02, 2)
    assert _plateaued([1.0, 0.9, 0.89, 0.885], 0.02, 2)
    assert not _plateaued([1.0, 0.9, 0.95, 0.87], 0.02, 2)
    assert _plateaued([1.0, 1.2], 0.02, 1)


def test_plateau_stopping_returns_best(disk_base):
    prior, base = disk_base
    acfg = AdaptConfig(n_round=4, n_adapt=2, n_base=2, stopping="plateau", plateau_window=1,
                       plateau_delta=0.5)
    m = Measurement(base.val.X[2, 0] + 1j * base.val.X[2, 1])
    pred, recs = adaptive_solve(m, base, prior, acfg, SC, G, tcfg=FAST)
    # a 50% improvement per round is not reached, so the loop stops after round 1
    assert len(recs) == 2
    best = min(recs, key=lambda r: r.measurement_error)
    assert np.array_equal(pred.coeffs, best.prediction.coeffs)


def test_config_validation():
    with pytest.raises(ValueError):
        AdaptConfig(n_adapt=0, n_base=0)
    with pytest.raises(ValueError):
        AdaptConfig(stopping="never")
    with pytest.raises(ValueError):
        AdaptConfig(stopping="plateau", measure=False)
