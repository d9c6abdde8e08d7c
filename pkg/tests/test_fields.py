import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ainv.fields import (
    FieldGrid,
    Grid,
    SineBasisProjector,
    SineCoeffs,
    eval_sine_basis,
    mollify,
    project_sine_basis,
    relative_l2,
)


def brute_eval(C, n):
    # independent double loop over nodes and modes
    h = math.pi / n
    out = np.zeros((n, n))
    N = C.shape[0]
    for a in range(n):
        x = -math.pi / 2 + (a + 0.5) * h
        for b in range(n):
            y = -math.pi / 2 + (b + 0.5) * h
            s = 0.0
            for i in range(1, N + 1):
                for j in range(1, N + 1):
                    s += C[i - 1, j - 1] * math.sin(i * (x + math.pi / 2)) * math.sin(j * (y + math.pi / 2))
            out[a, b] = s
    return out


def test_grid_geometry():
    g = Grid(64)
    assert g.n * g.h == pytest.approx(math.pi, abs=0)
    assert np.all(np.abs(g.nodes) < math.pi / 2)
    assert g.nodes[0] == pytest.approx(-math.pi / 2 + g.h / 2)
    with pytest.raises(ValueError):
        Grid(4)


def test_field_rejects_nan_and_bad_shape():
    g = Grid(8)
    with pytest.raises(ValueError):
        FieldGrid(g, np.full((8, 8), np.nan))
    with pytest.raises(ValueError):
        FieldGrid(g, np.zeros((8, 9)))


def test_coeff_length_checked():
    with pytest.raises(ValueError):
        SineCoeffs(3, np.zeros(8))


def test_eval_zero():
    assert not np.any(eval_sine_basis(SineCoeffs.zeros(4), Grid(16)).values)


def test_eval_single_mode():
    g = Grid(16)
    C = np.zeros((3, 3))
    C[0, 0] = 1
    X, Y = g.mesh()
    ref = np.sin(X + math.pi / 2) * np.sin(Y + math.pi / 2)
    assert np.allclose(eval_sine_basis(SineCoeffs.from_matrix(C), g).values, ref, atol=1e-15)


def test_eval_matches_double_loop():
    C = np.zeros((3, 3))
    C[1, 2] = 0.5  # mode (i, j) = (2, 3)
    f = eval_sine_basis(SineCoeffs.from_matrix(C), Grid(32))
    assert np.max(np.abs(f.values - brute_eval(C, 32))) <= 1e-12


def test_flat_order_is_i_fastest():
    c = SineCoeffs(2, [1.0, 2.0, 3.0, 4.0])
    assert c.matrix()[1, 0] == 2.0  # (i, j) = (2, 1)
    assert c.matrix()[0, 1] == 3.0


def test_project_round_trip_n5():
    rng = np.random.default_rng(3)
    c = SineCoeffs(5, rng.standard_normal(25))
    back = project_sine_basis(eval_sine_basis(c, Grid(64)), 5)
    assert np.max(np.abs(back.coeffs - c.coeffs)) <= 1e-10


def test_project_zero_and_too_high():
    g = Grid(16)
    assert not np.any(project_sine_basis(FieldGrid(g, np.zeros((16, 16))), 3).coeffs)
    with pytest.raises(ValueError):
        project_sine_basis(FieldGrid(g, np.zeros((16, 16))), 17)


def test_project_constant_matches_analytic_integral():
    c = project_sine_basis(FieldGrid(Grid(64), np.ones((64, 64))), 3).matrix()
    for i in range(1, 4):
        for j in range(1, 4):
            ref = (4 / math.pi**2) * (2 / i) * (2 / j) if (i % 2 and j % 2) else 0.0
            assert abs(c[i - 1, j - 1] - ref) <= 1e-2


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([3, 5]), st.sampled_from([32, 64]), st.integers(0, 2**32 - 1))
def test_round_trip_property(N, n, seed):
    c = SineCoeffs(N, np.random.default_rng(seed).uniform(-3, 3, N * N))
    back = project_sine_basis(eval_sine_basis(c, Grid(n)), N)
    assert np.max(np.abs(back.coeffs - c.coeffs)) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32 - 1))
def test_eval_linear(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    g = Grid(16)
    c1, c2 = rng.standard_normal(16), rng.standard_normal(16)
    lhs = eval_sine_basis(SineCoeffs(4, alpha * c1 + beta * c2), g).values
    rhs = alpha * eval_sine_basis(SineCoeffs(4, c1), g).values + beta * eval_sine_basis(SineCoeffs(4, c2), g).values
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-12 * (1 + abs(alpha) + abs(beta)))


def brute_mollify(v, h, eps):
    n = v.shape[0]
    half = int(math.floor(4 * eps / h))
    w = np.array([math.exp(-0.5 * (t * h / eps) ** 2) for t in range(-half, half + 1)])
    w2 = np.outer(w, w) / w.sum() ** 2
    out = np.zeros_like(v)
    for a in range(n):
        for b in range(n):
            s = 0.0
            for p in range(-half, half + 1):
                for q in range(-half, half + 1):
                    if 0 <= a - p < n and 0 <= b - q < n:
                        s += w2[p + half, q + half] * v[a - p, b - q]
            out[a, b] = s
    return out


def test_mollify_spike_matches_direct_convolution():
    g = Grid(64)
    v = np.zeros((64, 64))
    v[32, 32] = 1.0
    got = mollify(FieldGrid(g, v), 2 * g.h).values
    assert np.max(np.abs(got - brute_mollify(v, g.h, 2 * g.h))) <= 1e-12


def test_mollify_zero_constant_and_mass():
    g = Grid(64)
    eps = 2 * g.h
    assert not np.any(mollify(FieldGrid(g, np.zeros((64, 64))), eps).values)
    const = mollify(FieldGrid(g, np.full((64, 64), 2.5)), eps).values
    m = int(math.ceil(4 * eps / g.h))
    assert np.max(np.abs(const[m:-m, m:-m] - 2.5)) <= 1e-6
    rng = np.random.default_rng(0)
    v = np.zeros((64, 64))
    v[20:44, 20:44] = rng.uniform(0, 1, (24, 24))
    out = mollify(FieldGrid(g, v), eps).values
    assert abs(out.sum() - v.sum()) <= 1e-6 * v.sum()
    assert out.max() <= v.max()
    with pytest.raises(ValueError):
        mollify(FieldGrid(g, v), 0.0)


def test_mollify_commutes_with_shift():
    g = Grid(64)
    rng = np.random.default_rng(1)
    v = np.zeros((64, 64))
    v[20:40, 18:38] = rng.standard_normal((20, 20))
    eps = 2 * g.h
    shifted = np.roll(v, (3, -2), axis=(0, 1))
    a = np.roll(mollify(FieldGrid(g, v), eps).values, (3, -2), axis=(0, 1))
    b = mollify(FieldGrid(g, shifted), eps).values
    m = int(math.ceil(4 * eps / g.h)) + 3
    assert np.allclose(a[m:-m, m:-m], b[m:-m, m:-m], atol=1e-14)


def test_relative_l2_cases():
    rng = np.random.default_rng(2)
    t = SineCoeffs(3, rng.standard_normal(9))
    assert relative_l2(t, t) == 0
    assert relative_l2(SineCoeffs.zeros(3), t) == pytest.approx(1.0, abs=1e-15)
    assert relative_l2(SineCoeffs(3, 1.1 * t.coeffs), t) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(ValueError):
        relative_l2(SineCoeffs.zeros(2), t)
    with pytest.raises(ValueError):
        relative_l2(t, SineCoeffs.zeros(3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_relative_l2_triangle_bound(seed, alpha):
    rng = np.random.default_rng(seed)
    t = SineCoeffs(3, rng.standard_normal(9))
    p = SineCoeffs(3, alpha * rng.standard_normal(9))
    bound = (np.linalg.norm(p.coeffs) + np.linalg.norm(t.coeffs)) / np.linalg.norm(t.coeffs)
    assert relative_l2(p, t) <= bound + 1e-12


def test_projector_estimator_round_trip():
    rng = np.random.default_rng(4)
    C = rng.standard_normal((3, 25))
    proj = SineBasisProjector(order=5, n=32).fit()
    fields = proj.inverse_transform(C)
    assert fields.shape == (3, 32, 32)
    assert np.allclose(proj.transform(fields), C, atol=1e-10)
    assert np.allclose(fields[1], eval_sine_basis(SineCoeffs(5, C[1]), Grid(32)).values, atol=1e-12)
    assert proj.get_params() == {"order": 5, "n": 32}
