import numpy as np
import pytest
from hypothesis import given, strategies as st

from bootpca.matrixio import TallMatrix
from bootpca.svd import (DegenerateSampleError, SvdResult, center_rows, economy_svd, gram,
                         sign_convention)

from conftest import random_tall


def test_center_rows_example():
    out, mu = center_rows(TallMatrix.from_array([[1, 3], [2, 2]]))
    np.testing.assert_array_equal(out.to_array(), [[-1, 1], [0, 0]])
    np.testing.assert_array_equal(mu, [2, 2])


def test_center_rows_already_centered():
    arr = np.array([[-1.0, 1.0], [2.0, -2.0]])
    out, mu = center_rows(TallMatrix.from_array(arr))
    np.testing.assert_array_equal(out.to_array(), arr)
    np.testing.assert_array_equal(mu, 0)


def test_center_rows_idempotent():
    once, _ = center_rows(random_tall(50, 6, seed=1, block_rows=7))
    twice, mu2 = center_rows(once)
    np.testing.assert_allclose(twice.to_array(), once.to_array(), atol=1e-15)
    assert np.max(np.abs(mu2)) < 1e-15


def test_gram_examples():
    np.testing.assert_array_equal(gram(TallMatrix.from_array(np.eye(2))), np.eye(2))
    np.testing.assert_array_equal(gram(TallMatrix.from_array([[2, 0], [0, 1], [0, 0]])),
                                  np.diag([4.0, 1.0]))


def test_gram_block_invariance():
    arr = np.random.default_rng(4).standard_normal((40, 5))
    g1 = gram(TallMatrix(arr, 1))
    g40 = gram(TallMatrix(arr, 40))
    np.testing.assert_allclose(g1, g40, rtol=0, atol=1e-12 * np.abs(g40).max())


def test_uncentered_diagonal_example():
    res = economy_svd(TallMatrix.from_array([[2, 0], [0, 1], [0, 0]]), center=False)
    np.testing.assert_allclose(res.d, [2, 1])
    np.testing.assert_allclose(np.abs(res.V.to_array()), [[1, 0], [0, 1], [0, 0]], atol=1e-15)
    np.testing.assert_allclose(np.abs(res.U), np.eye(2), atol=1e-15)


def test_rank_one():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(12)
    u = rng.standard_normal(5)
    v /= np.linalg.norm(v)
    u /= np.linalg.norm(u)
    res = economy_svd(TallMatrix(3 * np.outer(v, u)), center=False)
    assert res.rank == 1
    np.testing.assert_allclose(res.d, [3.0])


def test_zero_matrix_is_degenerate():
    with pytest.raises(DegenerateSampleError, match="degenerate sample"):
        economy_svd(TallMatrix(np.zeros((4, 3))), center=False)
    with pytest.raises(DegenerateSampleError):
        economy_svd(TallMatrix(np.ones((4, 3))))


def test_matches_full_svd_oracle():
    Y = random_tall(30, 8, seed=5, block_rows=7)
    res = economy_svd(Y)
    Yc = Y.to_array() - Y.to_array().mean(axis=1, keepdims=True)
    d_ref = np.linalg.svd(Yc, compute_uv=False)[:7]
    assert res.rank == 7
    np.testing.assert_allclose(res.d, d_ref, rtol=1e-8)
    recon = res.V.to_array() * res.d @ res.U.T
    assert np.linalg.norm(recon - Yc) <= 1e-8 * np.linalg.norm(Yc)


def test_sign_convention_applied():
    res = economy_svd(random_tall(25, 9, seed=2))
    np.testing.assert_array_equal(sign_convention(res.U), 1.0)


def test_save_load_roundtrip(tmp_path):
    res = economy_svd(random_tall(25, 6, seed=8, block_rows=4), v_path=tmp_path / "V.bpca")
    res.save(tmp_path)
    back = SvdResult.load(tmp_path)
    np.testing.assert_array_equal(back.V.to_array(), res.V.to_array())
    for name in ("d", "U", "mu", "v_colmeans"):
        np.testing.assert_array_equal(getattr(back, name), getattr(res, name))
    assert back.centered


def test_v_colmeans():
    res = economy_svd(random_tall(25, 6, seed=8))
    np.testing.assert_allclose(res.v_colmeans, res.V.to_array().mean(axis=0), atol=1e-15)


def _check_invariants(Y: TallMatrix, center: bool = True):
    res = economy_svd(Y, center=center)
    V = res.V.to_array()
    assert np.all(res.d > 0) and np.all(np.diff(res.d) <= 0)
    assert np.max(np.abs(V.T @ V - np.eye(res.rank))) <= 1e-8
    assert np.max(np.abs(res.U.T @ res.U - np.eye(res.rank))) <= 1e-10
    arr = Y.to_array()
    Yc = arr - arr.mean(axis=1, keepdims=True) if center else arr
    assert np.linalg.norm(V * res.d @ res.U.T - Yc) <= 1e-8 * np.linalg.norm(Yc)
    assert res.rank <= min(Y.p, Y.n - 1 if center else Y.n)
    G = gram(TallMatrix(Yc))
    np.testing.assert_allclose(np.trace(G) / (Y.n - 1), res.total_variance, rtol=1e-10)
    return res


dims = st.tuples(st.integers(2, 40), st.integers(2, 10))


@given(dims, st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_svd_invariants_property(dims, seed, br):
    p, n = dims
    _check_invariants(random_tall(p, n, seed, min(br, p)))


@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_scale_equivariance(seed, c):
    Y = random_tall(30, 7, seed)
    a = economy_svd(Y)
    b = economy_svd(TallMatrix(c * Y.to_array()))
    np.testing.assert_allclose(b.d, c * a.d, rtol=1e-9)
    np.testing.assert_allclose(b.U, a.U, atol=1e-8)
    np.testing.assert_allclose(b.V.to_array(), a.V.to_array(), atol=1e-8)


@given(st.integers(0, 2**32 - 1))
def test_column_permutation(seed):
    rng = np.random.default_rng(seed)
    arr = rng.standard_normal((30, 7))
    perm = rng.permutation(7)
    a = economy_svd(TallMatrix(arr))
    b = economy_svd(TallMatrix(arr[:, perm]))
    np.testing.assert_allclose(b.d, a.d, rtol=1e-9)
    signs = np.sign(np.sum(a.V.to_array() * b.V.to_array(), axis=0))
    np.testing.assert_allclose(b.V.to_array() * signs, a.V.to_array(), atol=1e-8)
    np.testing.assert_allclose(b.U * signs, a.U[perm], atol=1e-8)


@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_block_size_invariance(seed, br):
    arr = np.random.default_rng(seed).standard_normal((30, 8))
    a = economy_svd(TallMatrix(arr, 30))
    b = economy_svd(TallMatrix(arr, br))
    assert np.max(np.abs(a.V.to_array() - b.V.to_array())) <= 1e-10
    assert np.max(np.abs(a.U - b.U)) <= 1e-10
    assert np.max(np.abs(a.d - b.d)) <= 1e-10 * a.d[0]
