import numpy as np
from hypothesis import example, given, settings, strategies as st

from mcforest.matching import export_matched, feature_scales, match_neighbors


def brute_force(x, d, y, m, inv_var):
    n = len(y)
    out = np.empty((n, m))
    for i in range(n):
        for t in range(m):
            if d[i] == t:
                out[i, t] = y[i]
                continue
            best, arg = np.inf, -1
            for j in range(n):
                if d[j] != t:
                    continue
                dist = float(np.sum(inv_var * (x[i] - x[j]) ** 2))
                if dist < best:
                    best, arg = dist, j
            out[i, t] = y[arg]
    return out


def test_scales_hand_variance():
    x = np.array([[0.0, 3.0], [2.0, 3.0]])
    np.testing.assert_allclose(feature_scales(x), [0.5, 0.0])


def test_nearest_neighbour_example():
    x = np.array([[0.0], [1.0], [5.0]])
    d = np.array([1, 0, 0])
    y = np.array([0.0, 7.0, 9.0])
    yt = match_neighbors(x, d, y, 2)
    assert yt[0, 0] == 7.0 and yt[0, 1] == 0.0


def test_zero_distance_and_ties():
    x = np.array([[1.0], [1.0], [0.0], [2.0]])
    d = np.array([1, 0, 1, 1])
    y = np.array([0.0, 3.0, 5.0, 6.0])
    yt = match_neighbors(x, d, y, 2)
    assert yt[0, 0] == 3.0
    # row 0 sits at zero distance from row 1
    assert yt[1, 1] == 0.0
    x2 = np.array([[0.0], [-1.0], [1.0]])
    yt2 = match_neighbors(x2, np.array([0, 1, 1]), np.array([0.0, 4.0, 8.0]), 2)
    assert yt2[0, 1] == 4.0


def test_constant_column_ignored():
    rng = np.random.default_rng(0)
    x = np.column_stack([rng.normal(size=30), np.full(30, 2.0)])
    d = np.arange(30) % 2
    y = rng.normal(size=30)
    x_noise = x.copy()
    # a constant column carries no distance, whatever its value
    x_noise[:, 1] = 7.0
    np.testing.assert_array_equal(match_neighbors(x, d, y, 2), match_neighbors(x_noise, d, y, 2))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(4, 60), m=st.integers(2, 3), p=st.integers(1, 3), seed=st.integers(0, 10**6),
       discrete=st.booleans())
# two columns whose computed variances differ only in the last bit
@example(n=30, m=3, p=2, seed=4298, discrete=True)
def test_matches_brute_force(n, m, p, seed, discrete):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 3, size=(n, p)).astype(float) if discrete else rng.normal(size=(n, p))
    d = np.concatenate([np.arange(m), rng.integers(0, m, n - m)])
    y = rng.normal(size=n)
    inv = feature_scales(x)
    got = match_neighbors(x, d, y, m, inv)
    np.testing.assert_array_equal(got, brute_force(x, d, y, m, inv))
    np.testing.assert_array_equal(got[np.arange(n), d], y)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(0.01, 100.0))
def test_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(40, 2))
    d = np.arange(40) % 2
    y = rng.normal(size=40)
    base = match_neighbors(x, d, y, 2, feature_scales(x))
    xs = x * np.array([c, 1.0])
    np.testing.assert_array_equal(match_neighbors(xs, d, y, 2, feature_scales(xs)), base)


def test_export(tmp_path):
    yt = np.array([[1.0, 2.0], [3.0, 4.0]])
    export_matched(tmp_path / "m.csv", yt)
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines) == 3
