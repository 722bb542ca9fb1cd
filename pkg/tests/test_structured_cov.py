import threading

import numpy as np
import pytest

from emgpr.gp_single import LatentProcessParams, log_marginal
from emgpr.kernels import KernelSpec, gram
from emgpr.structured_cov import (
    WeightSet,
    assemble,
    cross_cov,
    log_marginal_joint,
    noise_grad,
    trace_terms,
    weight_grad,
)

from conftest import central_diff, dense_cross_cov, dense_joint_cov, dense_log_marginal, random_problem


def test_weightset_shapes_and_delta():
    w = WeightSet.delta(3)
    assert w.shape == (3, 1, 3)
    np.testing.assert_array_equal(w.coregionalization()[1], np.diag([0, 1, 0]))
    assert WeightSet(np.eye(2)).shape == (2, 1, 2)
    flat = np.arange(8.0)
    np.testing.assert_array_equal(WeightSet.from_flat(flat, (2, 2, 2)).flat(), flat)
    r2 = WeightSet.delta(4, rank=2)
    assert r2.rank == 2
    with pytest.raises(ValueError):
        WeightSet(np.ones((2, 1, 2, 1)))


def test_tiny_block_diagonal():
    K = np.array([[1.0]])
    cov = assemble(WeightSet.delta(2), [K, K], [0.01, 0.04])
    np.testing.assert_allclose(cov.matrix, np.diag([1.01, 1.04]), atol=1e-15)


def test_assemble_matches_naive_kron(rng):
    for _ in range(10):
        X, _, grams, vectors, noise, _ = random_problem(rng, N=2, D=2)
        cov = assemble(WeightSet(vectors), grams, noise)
        np.testing.assert_allclose(cov.matrix, dense_joint_cov(vectors, grams, noise), atol=1e-12)
        np.testing.assert_allclose(cov.matrix, cov.matrix.T, atol=1e-12)


def test_assemble_rank_two_and_block_layout(rng):
    X, _, grams, vectors, noise, _ = random_problem(rng, N=3, D=3, k=2)
    cov = assemble(WeightSet(vectors), grams, noise)
    np.testing.assert_allclose(cov.matrix, dense_joint_cov(vectors, grams, noise), atol=1e-12)
    B = WeightSet(vectors).coregionalization()
    N = 3
    block = cov.matrix[0:N, 2 * N:3 * N]
    np.testing.assert_allclose(block, sum(B[q, 0, 2] * grams[q] for q in range(3)), atol=1e-12)


def test_delta_weights_block_diagonal(rng):
    X, _, grams, _, noise, _ = random_problem(rng, N=4, D=3)
    M = assemble(WeightSet.delta(3), grams, noise).matrix
    for a in range(3):
        for b in range(3):
            if a != b:
                assert np.all(M[a * 4:(a + 1) * 4, b * 4:(b + 1) * 4] == 0)


def test_svd_weights_reproduce_icm(rng):
    D, N = 3, 5
    X = rng.normal(size=(N, 2))
    K = gram(KernelSpec.se(0.9), X)
    G = rng.normal(size=(D, D))
    B = G @ G.T
    U, s, _ = np.linalg.svd(B)
    vectors = (U * np.sqrt(s)).T
    noise = np.array([0.1, 0.2, 0.3])
    cov = assemble(WeightSet(vectors), [K] * D, noise)
    oracle = np.kron(B, K) + np.kron(np.diag(noise), np.eye(N))
    np.testing.assert_allclose(cov.matrix, oracle, atol=1e-10)


def test_log_marginal_joint_dense_oracle(rng):
    for _ in range(10):
        X, _, grams, vectors, noise, y = random_problem(rng, N=3, D=2)
        cov = assemble(WeightSet(vectors), grams, noise)
        assert log_marginal_joint(cov, y) == pytest.approx(
            dense_log_marginal(dense_joint_cov(vectors, grams, noise), y), abs=1e-10)


def test_delta_joint_is_sum_of_tasks(rng):
    X, ls, grams, _, noise, y = random_problem(rng, N=5, D=3)
    cov = assemble(WeightSet.delta(3), grams, noise)
    total = sum(log_marginal(LatentProcessParams(KernelSpec.se(ls[d]), np.sqrt(noise[d])), X, y[d * 5:(d + 1) * 5])
                for d in range(3))
    assert log_marginal_joint(cov, y) == pytest.approx(total, abs=1e-9)


def test_zero_targets_log_marginal(rng):
    X, _, grams, vectors, noise, _ = random_problem(rng, N=3, D=2)
    cov = assemble(WeightSet(vectors), grams, noise)
    _, logdet = np.linalg.slogdet(cov.matrix)
    assert log_marginal_joint(cov, np.zeros(6)) == pytest.approx(-0.5 * logdet - 3 * np.log(2 * np.pi), abs=1e-12)


def _fd_weight_grad(vectors, grams, noise, y, observed=None):
    shape = vectors.shape

    def f(flat):
        return log_marginal_joint(assemble(WeightSet.from_flat(flat, shape), grams, noise, observed=observed), y)

    return central_diff(f, vectors.ravel()).reshape(shape)


@pytest.mark.parametrize("k", [1, 2])
def test_weight_grad_finite_difference(rng, k):
    X, _, grams, vectors, noise, y = random_problem(rng, N=4, D=3, k=k)
    cov = assemble(WeightSet(vectors), grams, noise)
    g = weight_grad(cov, y)
    fd = _fd_weight_grad(vectors, grams, noise, y)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_weight_grad_with_missing_entries(rng):
    X, _, grams, vectors, noise, _ = random_problem(rng, N=5, D=3)
    observed = rng.uniform(size=(5, 3)) > 0.3
    observed[0] = True
    y = rng.normal(size=int(observed.sum()))
    cov = assemble(WeightSet(vectors), grams, noise, observed=observed)
    np.testing.assert_allclose(weight_grad(cov, y), _fd_weight_grad(vectors, grams, noise, y, observed),
                               rtol=1e-5, atol=1e-7)


def test_determinant_only_gradient_near_identity():
    # tiny length-scale: every K_q is (numerically) the identity
    X = np.arange(4.0)[:, None] * 10
    grams = [gram(KernelSpec.se(0.01), X)] * 2
    vectors = np.array([[[1.0, 0.5]], [[-0.3, 0.8]]])
    cov = assemble(WeightSet(vectors), grams, [0.0, 0.0])
    g = weight_grad(cov, np.zeros(8))
    fd = _fd_weight_grad(vectors, grams, [0.0, 0.0], np.zeros(8))
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_zero_weight_vector_has_zero_gradient(rng):
    X, _, grams, vectors, noise, _ = random_problem(rng, N=4, D=3)
    vectors[1] = 0.0
    cov = assemble(WeightSet(vectors), grams, noise)
    g = weight_grad(cov, np.zeros(12))
    np.testing.assert_array_equal(g[1], 0.0)


def test_noise_grad_finite_difference(rng):
    X, _, grams, vectors, noise, y = random_problem(rng, N=4, D=3)
    w = WeightSet(vectors)
    g = noise_grad(assemble(w, grams, noise), y)
    fd = central_diff(lambda s: log_marginal_joint(assemble(w, grams, s), y), noise)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_trace_terms_dense_oracle(rng):
    X, _, grams, vectors, noise, y = random_problem(rng, N=4, D=3)
    cov = assemble(WeightSet(vectors), grams, noise)
    T, A_diag = trace_terms(cov, y)
    Cinv = np.linalg.inv(cov.matrix)
    g = Cinv @ y
    A = np.outer(g, g) - Cinv
    for q, K in enumerate(grams):
        for a in range(3):
            for b in range(3):
                assert T[q, a, b] == pytest.approx(np.trace(A[a * 4:(a + 1) * 4, b * 4:(b + 1) * 4] @ K), abs=1e-10)
    np.testing.assert_allclose(A_diag, np.diag(A), atol=1e-12)


def test_cross_cov_oracles(rng):
    X, ls, grams, vectors, noise, _ = random_problem(rng, N=4, D=3)
    Xs = rng.normal(size=(2, 2))
    cross = [gram(KernelSpec.se(a), Xs, X) for a in ls]
    C = cross_cov(WeightSet(vectors), cross)
    np.testing.assert_allclose(C, dense_cross_cov(vectors, cross), atol=1e-12)
    Cd = cross_cov(WeightSet.delta(3), cross)
    for d in range(3):
        np.testing.assert_array_equal(Cd[d * 2:(d + 1) * 2, d * 4:(d + 1) * 4], cross[d])
    same = cross_cov(WeightSet(vectors), grams)
    full = assemble(WeightSet(vectors), grams, noise).matrix
    np.testing.assert_allclose(same, full - np.kron(np.diag(noise), np.eye(4)), atol=1e-12)


def test_mismatched_inputs_rejected(rng):
    X, _, grams, vectors, noise, y = random_problem(rng, N=4, D=3)
    with pytest.raises(ValueError):
        assemble(WeightSet(vectors), grams[:2], noise)
    cov = assemble(WeightSet(vectors), grams, noise)
    with pytest.raises(ValueError):
        log_marginal_joint(cov, y[:-1])


def test_concurrent_factorization_is_shared(rng):
    X, _, grams, vectors, noise, y = random_problem(rng, N=6, D=3)
    cov = assemble(WeightSet(vectors), grams, noise)
    out = []
    threads = [threading.Thread(target=lambda: out.append(cov.cholesky)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(o is out[0] for o in out)
