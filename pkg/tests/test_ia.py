import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from ginar import autodiff as ad
from ginar.autodiff import Tensor
from ginar.ia import (
    IAState,
    apply_ia,
    attention_coefficients,
    build_correspondence,
    identity_projection,
    neighbor_set,
    plan_neighbors,
    recover_variable,
)


def _state(n=6, c=3, cout=4, d=3, seed=0, **kw):
    return IAState.init(n, c, cout, d, np.random.default_rng(seed), **kw)


def test_default_k_clamped():
    assert _state(n=5).k == 4
    assert _state(n=30).k == 10


@pytest.mark.parametrize("seed", range(5))
def test_correspondence_row_sums(seed):
    s = _state(seed=seed)
    np.testing.assert_allclose(build_correspondence(s).data.sum(axis=1), 2.0, atol=1e-5)


def test_correspondence_diagonal_at_least_one():
    A = build_correspondence(_state()).data
    assert np.all(np.diag(A) >= 1.0)


def test_neighbor_set_tie_break_lower_index():
    row = np.array([[5.0, 1.0, 1.0, 1.0, 0.0]])
    assert list(neighbor_set(row, 0, 2)) == [1, 2]


def test_neighbor_set_excludes_self_and_respects_pool():
    A = np.array([[9.0, 3.0, 2.0, 1.0]] * 4)
    assert list(neighbor_set(A, 0, 3)) == [1, 2, 3]
    assert list(neighbor_set(A, 0, 3, candidates=[2, 3])) == [2, 3]


def test_neighbor_set_k_larger_than_pool():
    assert len(neighbor_set(np.ones((3, 3)), 1, 10)) == 2


def test_neighbor_set_rejects_zero_k():
    with pytest.raises(ValueError):
        neighbor_set(np.ones((3, 3)), 0, 0)


def test_attention_single_neighbor_is_one():
    s = _state()
    x = Tensor(np.random.default_rng(1).normal(size=(6, 3)))
    np.testing.assert_allclose(attention_coefficients(s, x, 0, [3]).data, [1.0])


def test_attention_sums_to_one():
    s = _state()
    x = Tensor(np.random.default_rng(2).normal(size=(6, 3)))
    a = attention_coefficients(s, x, 0, [1, 2, 4])
    assert a.data.sum() == pytest.approx(1.0)
    assert np.all(a.data > 0)


def test_attention_empty_neighbors_raises():
    with pytest.raises(ValueError):
        attention_coefficients(_state(), Tensor(np.ones((6, 3))), 0, [])


def test_recover_with_single_neighbor():
    s = _state()
    x = np.random.default_rng(3).normal(size=(6, 3))
    got = recover_variable(s, Tensor(x), 0, Tensor(np.array([1.0])), [4]).data
    np.testing.assert_allclose(got, np.maximum(x[4] @ s.W.data, 0.0))


def _oracle(s, x, missing):
    return oracles.ia(
        x, s.E1.data, s.E2.data, s.W.data, s.score_w.data, s.score_b.data, missing, s.k
    )


@pytest.mark.parametrize("seed", range(10))
def test_apply_ia_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    s = _state(n=n, c=int(rng.integers(1, 4)), cout=int(rng.integers(2, 5)), seed=seed, k=int(rng.integers(1, 4)))
    missing = sorted(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist())
    x = rng.normal(size=(n, s.W.shape[0]))
    np.testing.assert_allclose(apply_ia(s, Tensor(x), missing).data, _oracle(s, x, missing), rtol=0, atol=1e-6)


def test_apply_ia_batched_matches_per_sample():
    s = _state(seed=4)
    x = np.random.default_rng(5).normal(size=(3, 6, 3))
    batched = apply_ia(s, Tensor(x), [0, 2]).data
    for b in range(3):
        np.testing.assert_allclose(batched[b], apply_ia(s, Tensor(x[b]), [0, 2]).data, atol=1e-12)


def test_apply_ia_matches_per_variable_functions():
    s = _state(seed=6)
    x = np.random.default_rng(7).normal(size=(6, 3))
    missing = [1, 4]
    out = apply_ia(s, Tensor(x), missing).data
    xz = x.copy()
    xz[missing] = 0.0
    normal = [0, 2, 3, 5]
    A = build_correspondence(s).data
    for i in missing:
        nb = neighbor_set(A, i, s.k, candidates=normal)
        alpha = attention_coefficients(s, Tensor(xz), i, nb)
        np.testing.assert_allclose(out[i], recover_variable(s, Tensor(xz), i, alpha, nb).data, atol=1e-12)


def test_apply_ia_no_missing_is_projection():
    s = _state()
    x = np.random.default_rng(8).normal(size=(6, 3))
    np.testing.assert_allclose(apply_ia(s, Tensor(x), []).data, np.maximum(x @ s.W.data, 0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_masked_values_never_leak(seed):
    rng = np.random.default_rng(seed)
    s = _state(seed=seed % 7)
    x = rng.normal(size=(6, 3))
    missing = sorted(rng.choice(6, size=int(rng.integers(1, 6)), replace=False).tolist())
    y = x.copy()
    y[missing] = rng.normal(size=(len(missing), 3)) * 100
    np.testing.assert_array_equal(apply_ia(s, Tensor(x), missing).data, apply_ia(s, Tensor(y), missing).data)


def test_dense_uses_every_normal_variable():
    s = _state(n=8, k=1, dense=True)
    plan = plan_neighbors(s, [0, 1])
    assert plan.select[0].sum() == 6 and plan.select[1].sum() == 6


def test_plan_only_selects_normal_variables():
    s = _state(n=8)
    plan = plan_neighbors(s, [0, 3, 5])
    assert not plan.select[:, [0, 3, 5]].any()
    assert not plan.select[[1, 2, 4, 6, 7]].any()


def test_shape_error_names_op():
    with pytest.raises(ad.ShapeError, match="apply_ia"):
        apply_ia(_state(), Tensor(np.ones((5, 3))), [0])


def test_identity_projection_zero_fills():
    s = _state()
    x = np.random.default_rng(9).normal(size=(6, 3))
    out = identity_projection(s, Tensor(x), [2]).data
    np.testing.assert_array_equal(out[2], 0.0)
    np.testing.assert_allclose(out[0], np.maximum(x[0] @ s.W.data, 0))


@pytest.mark.parametrize("pairwise", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_apply_ia_gradient(seed, pairwise):
    s = _state(n=5, c=2, cout=3, seed=seed, pairwise_scores=pairwise)
    rng = np.random.default_rng(100 + seed)
    x = Tensor(rng.normal(size=(2, 5, 2)) + 0.3, requires_grad=True)
    probe = Tensor(rng.normal(size=(2, 5, 3)))
    params = dict(s.parameters(), x=x)
    rep = ad.grad_check(lambda: ad.sum(apply_ia(s, x, [1, 3]) * probe), params)
    assert rep.passed, rep
