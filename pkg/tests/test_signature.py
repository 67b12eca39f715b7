import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigpath.signature import (
    PiecewiseLinearPath,
    TruncatedSignature,
    batch_signature,
    batch_signature_backward,
    chen_mul,
    check_budget,
    levy_area,
    oracle_signature,
    sig_segment,
    signature,
    signature_backward,
    signature_size,
    time_augment,
)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


@st.composite
def knot_arrays(draw, min_knots=1, max_knots=6, max_dim=3):
    n = draw(st.integers(min_knots, max_knots))
    d = draw(st.integers(1, max_dim))
    return draw(arrays(np.float64, (n, d), elements=finite))


def _outer_power(delta, k):
    out = np.ones(1)
    for _ in range(k):
        out = np.multiply.outer(out, delta).reshape(-1)
    return out


# --- worked examples --------------------------------------------------------


def test_l_shaped_path_level_two_and_area():
    path = PiecewiseLinearPath.from_values([[0, 0], [1, 0], [1, 1]])
    sig = signature(path, 2)
    np.testing.assert_allclose(sig.level(1), [1, 1], atol=1e-15)
    np.testing.assert_allclose(sig.level(2).reshape(2, 2), [[0.5, 1.0], [0.0, 0.5]], atol=1e-15)
    assert levy_area(path, 0, 1) == pytest.approx(0.5, abs=1e-15)
    assert levy_area(path, 1, 0) == pytest.approx(-0.5, abs=1e-15)


def test_l_shaped_path_level_three_hand_values():
    # a = e0, b = e1: S3 = a^3/6 + a^2 b/2 + a b^2/2 + b^3/6
    sig = signature(PiecewiseLinearPath.from_values([[0, 0], [1, 0], [1, 1]]), 3)
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0] = 1 / 6
    expected[0, 0, 1] = 1 / 2
    expected[0, 1, 1] = 1 / 2
    expected[1, 1, 1] = 1 / 6
    np.testing.assert_allclose(sig.level(3).reshape(2, 2, 2), expected, atol=1e-15)
    assert sig.coefficient(0, 0, 1) == pytest.approx(0.5)


def test_single_knot_gives_zero_signature():
    sig = signature(np.array([[1.0, 2.0]]), 3)
    assert all(np.all(level == 0) for level in sig.levels)


def test_segment_is_tensor_exponential():
    delta = np.array([0.3, -1.2, 2.0])
    sig = sig_segment(delta, 4)
    for k in range(1, 5):
        np.testing.assert_allclose(sig.level(k).reshape(-1), _outer_power(delta, k) / math.factorial(k), rtol=1e-14)


def test_one_dimensional_path_depends_only_on_increment():
    sig = signature(np.array([[0.0], [3.0], [-1.0], [2.0]]), 4)
    for k in range(1, 5):
        assert sig.level(k).flat[0] == pytest.approx(2.0**k / math.factorial(k), rel=1e-13)


def test_sizes_and_budget():
    assert signature_size(3, 2) == 12
    with pytest.raises(ValueError):
        check_budget(3, 0)
    with pytest.raises(ValueError):
        check_budget(3, 7)
    with pytest.raises(ValueError):
        check_budget(50, 5)
    with pytest.raises(ValueError):
        signature(np.zeros((3, 50)), 5)


def test_path_validation():
    with pytest.raises(ValueError):
        PiecewiseLinearPath([0.0, 1.0], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        PiecewiseLinearPath([1.0, 0.0], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        PiecewiseLinearPath(np.zeros(0), np.zeros((0, 1)))


def test_chen_mul_rejects_mismatch():
    with pytest.raises(ValueError):
        chen_mul(sig_segment([1.0, 2.0], 2), sig_segment([1.0, 2.0], 3))


def test_levy_area_rejects_equal_channels():
    with pytest.raises(ValueError):
        levy_area(np.zeros((3, 2)), 1, 1)
    with pytest.raises(ValueError):
        levy_area(np.zeros((3, 2)), 0, 2)


def test_time_augment_prepends_params():
    path = PiecewiseLinearPath([0.0, 0.5, 2.0], [[1.0], [2.0], [0.0]])
    aug = time_augment(path)
    np.testing.assert_array_equal(aug.values[:, 0], [0.0, 0.5, 2.0])
    np.testing.assert_array_equal(aug.values[:, 1], [1.0, 2.0, 0.0])


def test_restrict_matches_projected_path(rng):
    values = rng.standard_normal((5, 3))
    full = signature(values, 3)
    sub = signature(values[:, [0, 2]], 3)
    restricted = full.restrict([0, 2])
    for k in range(1, 4):
        np.testing.assert_allclose(restricted.level(k), sub.level(k), atol=1e-13)


def test_truncated_signature_validates_shapes():
    with pytest.raises(ValueError):
        TruncatedSignature(2, 2, (np.zeros(2), np.zeros(3)))


# --- oracle agreement -------------------------------------------------------


@given(knot_arrays(min_knots=2, max_knots=5))
def test_oracle_exact_on_levels_one_and_two(values):
    fast = signature(values, 2)
    slow = oracle_signature(values, 2, steps=7)
    np.testing.assert_allclose(slow.level(1), fast.level(1), atol=1e-12)
    np.testing.assert_allclose(slow.level(2), fast.level(2), atol=1e-11)


def test_oracle_converges_at_all_levels(rng):
    for _ in range(10):
        d = rng.integers(1, 4)
        values = rng.standard_normal((rng.integers(2, 7), d))
        fast = signature(values, 4)
        slow = oracle_signature(values, 4, steps=10_000)
        for k in range(1, 5):
            np.testing.assert_allclose(slow.level(k), fast.level(k), atol=1e-4)


# --- algebraic properties ---------------------------------------------------


@given(knot_arrays(min_knots=2, max_knots=6), st.data())
def test_chen_identity(values, data):
    depth = data.draw(st.integers(1, 4))
    split = data.draw(st.integers(0, len(values) - 1))
    whole = signature(values, depth)
    joined = chen_mul(signature(values[: split + 1], depth), signature(values[split:], depth))
    for a, b in zip(whole.levels, joined.levels):
        np.testing.assert_allclose(a, b, atol=1e-12 * max(1.0, np.abs(a).max()))


@given(knot_arrays(min_knots=2, max_knots=5), st.data())
def test_collinear_knots_change_nothing(values, data):
    seg = data.draw(st.integers(0, len(values) - 2))
    frac = data.draw(st.floats(0.01, 0.99))
    extra = values[seg] + frac * (values[seg + 1] - values[seg])
    longer = np.insert(values, seg + 1, extra, axis=0)
    a, b = signature(values, 4), signature(longer, 4)
    for x, y in zip(a.levels, b.levels):
        np.testing.assert_allclose(x, y, atol=1e-12 * max(1.0, np.abs(x).max()))


@given(knot_arrays(min_knots=2, max_knots=5), arrays(np.float64, 3, elements=finite))
def test_translation_invariance(values, shift):
    shifted = values + shift[: values.shape[1]]
    for x, y in zip(signature(values, 3).levels, signature(shifted, 3).levels):
        np.testing.assert_allclose(x, y, atol=1e-11 * max(1.0, np.abs(x).max()))


@given(knot_arrays(min_knots=2, max_knots=5))
def test_shuffle_product_level_two(values):
    d = values.shape[1]
    sig = signature(values, 2)
    s1, s2 = sig.level(1), sig.level(2).reshape(d, d)
    np.testing.assert_allclose(np.outer(s1, s1), s2 + s2.T, atol=1e-10 * max(1.0, np.abs(s2).max()))


@given(knot_arrays(min_knots=2, max_knots=5))
def test_reversed_path_is_inverse(values):
    fwd = signature(values, 3)
    back = signature(values[::-1], 3)
    prod = chen_mul(fwd, back)
    scale = max(1.0, max(np.abs(level).max() for level in fwd.levels))
    for level in prod.levels:
        np.testing.assert_allclose(level, 0.0, atol=1e-10 * scale**2)


@given(knot_arrays(min_knots=2, max_knots=5))
def test_levy_area_antisymmetric_and_repeat_knots(values):
    if values.shape[1] < 2:
        return
    assert levy_area(values, 0, 1) == pytest.approx(-levy_area(values, 1, 0), abs=1e-12)
    doubled = np.repeat(values, 2, axis=0)
    assert levy_area(doubled, 0, 1) == pytest.approx(levy_area(values, 0, 1), abs=1e-10)


def test_batch_matches_single(rng):
    values = rng.standard_normal((4, 3, 6, 2))
    levels = batch_signature(values, 3)
    for idx in np.ndindex(4, 3):
        single = signature(values[idx], 3)
        for k in range(3):
            np.testing.assert_allclose(levels[k][idx], single.levels[k], atol=1e-13)


def test_prefixes_are_partial_signatures(rng):
    values = rng.standard_normal((5, 2))
    _, prefixes = batch_signature(values, 3, keep_intermediates=True)
    for j in range(1, 5):
        partial = signature(values[: j + 1], 3)
        for k in range(3):
            np.testing.assert_allclose(prefixes[j][k], partial.levels[k], atol=1e-13)


# --- gradients --------------------------------------------------------------


def _finite_difference(values, depth, upstream, eps=1e-6):
    grad = np.zeros_like(values)
    for idx in np.ndindex(values.shape):
        plus, minus = values.copy(), values.copy()
        plus[idx] += eps
        minus[idx] -= eps
        fp = sum(np.dot(u, s) for u, s in zip(upstream, signature(plus, depth).levels))
        fm = sum(np.dot(u, s) for u, s in zip(upstream, signature(minus, depth).levels))
        grad[idx] = (fp - fm) / (2 * eps)
    return grad


@pytest.mark.parametrize("n_knots,dim,depth", [(2, 1, 3), (4, 2, 3), (5, 3, 4), (3, 2, 1)])
def test_signature_backward_matches_finite_differences(rng, n_knots, dim, depth):
    values = rng.standard_normal((n_knots, dim))
    upstream = [rng.standard_normal(dim**k) for k in range(1, depth + 1)]
    analytic = signature_backward(values, depth, upstream)
    numeric = _finite_difference(values, depth, upstream)
    rel = np.abs(analytic - numeric).max() / max(1e-12, np.abs(numeric).max())
    assert rel < 1e-6


def test_batch_backward_matches_single(rng):
    values = rng.standard_normal((3, 4, 2))
    upstream = [rng.standard_normal((3, 2**k)) for k in range(1, 4)]
    batch = batch_signature_backward(values, 3, upstream)
    for b in range(3):
        single = signature_backward(values[b], 3, [u[b] for u in upstream])
        np.testing.assert_allclose(batch[b], single, atol=1e-13)


def test_signature_backward_validates_upstream():
    with pytest.raises(ValueError):
        signature_backward(np.zeros((3, 2)), 2, [np.zeros(2)])
    with pytest.raises(ValueError):
        signature_backward(np.zeros((3, 2)), 2, [np.zeros(2), np.zeros(3)])
