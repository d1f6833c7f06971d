import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jadce.complexlift import (
    ComplexMat, Projector, is_lifted_operator, lift_blocks, lift_operator, lift_stack,
    nullspace_projector, pseudoinverse, unlift_operator, unlift_stack,
)
from jadce.numerics import ContractError, DimensionError, SingularMatrixError, Tensor
from jadce.scenario import gen_pilot


def rand_complex(rng, shape):
    return ComplexMat(rng.standard_normal(shape), rng.standard_normal(shape))


def test_scalar_lift():
    S = ComplexMat(np.array([[3.0]]), np.array([[-2.0]]))
    np.testing.assert_array_equal(lift_operator(S), [[3.0, 2.0], [-2.0, 3.0]])


def test_real_operator_lifts_block_diagonal():
    R = np.arange(6.0).reshape(2, 3)
    A = lift_operator(ComplexMat(R, np.zeros_like(R)))
    np.testing.assert_array_equal(A[:2, :3], R)
    np.testing.assert_array_equal(A[2:, 3:], R)
    assert not A[:2, 3:].any() and not A[2:, :3].any()


def test_stack_examples():
    np.testing.assert_array_equal(lift_stack(ComplexMat([[1.0]], [[2.0]])), [[1.0], [2.0]])
    assert not lift_stack(ComplexMat.zeros(3, 2)).any()
    with pytest.raises(ContractError):
        unlift_stack(np.zeros((3, 2)))


@settings(max_examples=40, deadline=None)
@given(L=st.integers(1, 5), N=st.integers(1, 5), M=st.integers(1, 4), seed=st.integers(0, 2**31))
def test_lift_homomorphism(L, N, M, seed):
    rng = np.random.default_rng(seed)
    S, X = rand_complex(rng, (L, N)), rand_complex(rng, (N, M))
    direct = ComplexMat.from_complex(S.to_complex() @ X.to_complex())
    np.testing.assert_allclose(lift_operator(S) @ lift_stack(X), lift_stack(direct),
                               atol=1e-12, rtol=0)
    assert unlift_stack(lift_stack(X)) == X
    assert unlift_operator(lift_operator(S)) == S


def test_lift_blocks_matches_array_lift():
    rng = np.random.default_rng(3)
    S = rand_complex(rng, (3, 4))
    out = lift_blocks(Tensor(S.re), Tensor(S.im))
    np.testing.assert_array_equal(out.data, lift_operator(S))
    assert is_lifted_operator(out.data)
    bad = out.data.copy()
    bad[0, 0] += 1
    assert not is_lifted_operator(bad)
    with pytest.raises(ContractError):
        unlift_operator(bad)


def mp_errors(A, Ap):
    def rel(x, y):
        return np.linalg.norm(x - y) / max(np.linalg.norm(y), 1e-300)
    return [rel(A @ Ap @ A, A), rel(Ap @ A @ Ap, Ap),
            rel((A @ Ap).T, A @ Ap), rel((Ap @ A).T, Ap @ A)]


def test_pinv_examples():
    np.testing.assert_allclose(pseudoinverse(np.eye(4), 0.0), np.eye(4), atol=1e-15)
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((6, 4)))
    np.testing.assert_allclose(pseudoinverse(Q.T, 0.0), Q, atol=1e-12)
    A = np.random.default_rng(1).standard_normal((4, 6))
    Ap = pseudoinverse(A, 0.0)
    assert max(mp_errors(A, Ap)) < 1e-8
    # SVD-based oracle
    np.testing.assert_allclose(Ap, np.linalg.pinv(A), atol=1e-10)


def test_pinv_errors():
    with pytest.raises(DimensionError):
        pseudoinverse(np.zeros((3, 2)))
    with pytest.raises(SingularMatrixError):
        pseudoinverse(np.zeros((2, 3)), eps=0.0)
    with pytest.raises(ContractError):
        pseudoinverse(np.eye(2), eps=-1.0)
    # eps > 0 regularizes a rank-deficient matrix
    assert np.isfinite(pseudoinverse(np.zeros((2, 3)), eps=1e-8)).all()


def test_pinv_tensor_stays_on_tape():
    A = Tensor(np.random.default_rng(2).standard_normal((2, 5)), requires_grad=True)
    assert isinstance(pseudoinverse(A), Tensor)


def test_projector_examples():
    A = np.random.default_rng(4).standard_normal((5, 5))
    assert np.abs(nullspace_projector(A, 0.0)).max() < 1e-10
    np.testing.assert_allclose(nullspace_projector(np.array([[1.0, 0.0]]), 0.0),
                               np.diag([0.0, 1.0]), atol=1e-15)


@pytest.mark.parametrize("N,L", [(8, 4), (16, 12), (32, 16)])
def test_projector_rank(N, L):
    proj = Projector.from_pilot(gen_pilot(N, L, seed=N + L))
    eig = np.linalg.eigvalsh(proj.P)
    assert int(np.sum(eig > 1e-6)) == 2 * N - 2 * L


@settings(max_examples=25, deadline=None)
@given(N=st.integers(2, 12), data=st.data())
def test_projector_properties(N, data):
    L = data.draw(st.integers(1, N - 1))
    seed = data.draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    S = lift_operator(rand_complex(rng, (L, N)))
    P = nullspace_projector(S, 0.0)
    np.testing.assert_array_equal(P, P.T)
    assert np.linalg.norm(P @ P - P) < 1e-8 * np.linalg.norm(P)
    assert np.linalg.norm(S @ P) < 1e-8 * np.linalg.norm(S)
    # every member of the solution family reproduces S S^+ Y
    X_true = lift_stack(rand_complex(rng, (N, 3)))
    Y = S @ X_true
    W = rng.standard_normal((2 * N, 3))
    est = pseudoinverse(S, 0.0) @ Y + P @ W
    assert np.linalg.norm(S @ est - Y) < 1e-8 * np.linalg.norm(Y)


def test_projector_cache_is_read_only():
    proj = Projector.from_pilot(gen_pilot(8, 4, 0))
    with pytest.raises(ValueError):
        proj.P[0, 0] = 1.0
    Y = np.random.default_rng(0).standard_normal((3, 8, 2))
    np.testing.assert_allclose(proj.estimate(Y)[1], proj.pinv @ Y[1])


def test_complexmat_shape_mismatch():
    with pytest.raises(DimensionError):
        ComplexMat(np.zeros((2, 2)), np.zeros((2, 3)))
