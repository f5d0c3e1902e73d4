import numpy as np
import pytest
from hypothesis import given, strategies as st

from majdesign.majorizers import (
    ALPHA_FLOOR,
    MajorizerSpec,
    best_circulant_approx,
    circ_majorizer,
    circulant_majorizer,
    dense_scale_to_majorize,
    lipschitz_majorizer,
    max_generalized_eigenvalue,
    scale_to_majorize,
    sqs_majorizer,
)
from majdesign.operators import (
    CirculantOperator,
    DFTOperator,
    DimensionError,
    HermitianOperator,
    IdentityOperator,
    StackedOperator,
)

from oracles import dense_circulant, max_eig, min_eig, random_psd


def herm(A):
    return HermitianOperator.from_dense(np.asarray(A, dtype=float))


def test_spec_rejects_bad_d():
    with pytest.raises(DimensionError):
        MajorizerSpec(IdentityOperator(3), np.ones(2))
    with pytest.raises(ValueError):
        MajorizerSpec(IdentityOperator(2), np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        MajorizerSpec(IdentityOperator(2), np.ones(2), method="guess")


def test_spec_alpha_floor():
    M = MajorizerSpec(IdentityOperator(2), np.ones(2), alpha=0.0)
    assert M.alpha == ALPHA_FLOOR


def test_spec_descriptors():
    assert MajorizerSpec(IdentityOperator(2), np.ones(2)).descriptor == "identity"
    assert MajorizerSpec(DFTOperator(4), np.ones(4)).descriptor == "dft"
    S = StackedOperator([DFTOperator(4), IdentityOperator(4)])
    assert MajorizerSpec(S, np.ones(8)).descriptor == "stacked:dft+identity"


def test_spec_dense_matches_definition(rng):
    S = StackedOperator([DFTOperator(5), IdentityOperator(5)])
    d = rng.random(10)
    M = MajorizerSpec(S, d, alpha=2.5)
    Kd = np.vstack([np.fft.fft(np.eye(5), axis=0, norm="ortho"), np.eye(5)])
    np.testing.assert_allclose(M.dense(), 2.5 * Kd.conj().T @ np.diag(d) @ Kd, atol=1e-12)


def test_lipschitz_diag():
    M = lipschitz_majorizer(herm(np.diag([1.0, 2.0, 3.0])), tol=1e-3)
    assert np.allclose(M.d, M.d[0])
    assert 3.0 < M.d[0] <= 3.0 * (1 + 1e-3) + 1e-9


def test_lipschitz_2x2():
    tol = 1e-3
    M = lipschitz_majorizer(herm([[2, 1], [1, 2]]), tol=tol)
    np.testing.assert_allclose(M.d, [3 * (1 + tol)] * 2, rtol=1e-6)


def test_lipschitz_toeplitz(toeplitz64):
    M = lipschitz_majorizer(herm(toeplitz64), tol=1e-3)
    lam = max_eig(toeplitz64)
    assert lam <= M.d[0] <= lam * (1 + 1e-3) * (1 + 1e-6)
    assert min_eig(M.dense() - toeplitz64) >= 0


def test_lipschitz_nonconvergence_doubles_safety():
    H = herm(np.diag([1.0, 1.0 - 1e-9, 0.5]))
    M = lipschitz_majorizer(H, tol=1e-3, power_tol=1e-15, max_iters=3)
    assert not M.meta["power_converged"]
    assert M.d[0] == pytest.approx(M.meta["lambda_max"] * (1 + 2e-3))


def test_sqs_hint():
    M = sqs_majorizer(herm([[2, 1], [1, 2]]), nonnegative_hint=True)
    np.testing.assert_allclose(M.d, [3, 3])


def test_sqs_identity():
    np.testing.assert_allclose(sqs_majorizer(herm(np.eye(5))).d, np.ones(5))


def test_sqs_negative_entries():
    H = np.array([[2.0, -1.0], [-1.0, 2.0]])
    M = sqs_majorizer(herm(H), nonnegative_hint=False)
    np.testing.assert_allclose(M.d, [3, 3])
    np.testing.assert_allclose(M.dense() - H, [[1, 1], [1, 1]])
    assert min_eig(M.dense() - H) >= -1e-12


def test_sqs_hint_rejects_negative_entries():
    with pytest.raises(ValueError):
        sqs_majorizer(herm([[2.0, -1.0], [-1.0, 2.0]]), nonnegative_hint=True)


def test_sqs_probe_path_matches_dense(rng):
    Hd = random_psd(20, rng)
    a = sqs_majorizer(herm(Hd)).d
    b = sqs_majorizer(herm(Hd), dense_cap=0).d
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_sqs_majorizes_random(rng):
    for k in range(20):
        Hd = random_psd(int(rng.integers(2, 40)), rng, complex_=bool(k % 2))
        H = HermitianOperator.from_dense(Hd)
        M = sqs_majorizer(H)
        assert min_eig(M.dense() - Hd) >= -1e-10 * max_eig(Hd)


def test_best_circulant_fixed_point(rng):
    c = rng.standard_normal(6)
    C = best_circulant_approx(dense_circulant(c))
    np.testing.assert_allclose(C.first_column, c, atol=1e-14)


def test_best_circulant_of_diag():
    np.testing.assert_allclose(best_circulant_approx(np.diag([1.0, 2.0, 3.0])).first_column, [2, 0, 0])


def test_best_circulant_needs_square():
    with pytest.raises(DimensionError):
        best_circulant_approx(np.ones((2, 3)))


def test_best_circulant_is_orthogonal_projection(rng):
    n = 7
    T = rng.standard_normal((n, n))
    C = dense_circulant(best_circulant_approx(T).first_column)
    # idempotent
    C2 = dense_circulant(best_circulant_approx(C).first_column)
    np.testing.assert_allclose(C2, C, atol=1e-13)
    # residual orthogonal to every basis circulant
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1
        assert abs(np.sum((T - C) * dense_circulant(e))) < 1e-12


def test_circulant_majorizer_requires_pd():
    with pytest.raises(ValueError):
        circulant_majorizer(CirculantOperator([0.0, 1.0, 0.0, 1.0]))
    M = circulant_majorizer(CirculantOperator([2.0, 0.5, 0.0, 0.5]))
    np.testing.assert_allclose(M.dense().real, dense_circulant([2.0, 0.5, 0.0, 0.5]), atol=1e-12)


def test_scale_identity_diag():
    tol = 1e-3
    M0 = MajorizerSpec(IdentityOperator(2), np.ones(2))
    M = scale_to_majorize(M0, herm(np.diag([0.5, 2.0])), tol=tol)
    assert M.alpha == pytest.approx(2 * (1 + tol), rel=1e-6)
    assert M.certified and M.method == "power-iteration"


def test_scale_two_identity():
    tol = 1e-3
    M0 = MajorizerSpec(IdentityOperator(2), 2 * np.ones(2))
    M = scale_to_majorize(M0, herm(np.eye(2)), tol=tol)
    assert M.alpha == pytest.approx(0.5 * (1 + tol), rel=1e-6)


def test_scale_of_zero_H_hits_floor():
    M0 = MajorizerSpec(IdentityOperator(2), np.ones(2))
    M = scale_to_majorize(M0, herm(np.zeros((2, 2))))
    assert M.alpha == ALPHA_FLOOR


def test_scale_rejects_singular_M0():
    M0 = MajorizerSpec(IdentityOperator(2), np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        scale_to_majorize(M0, herm(np.eye(2)))


def test_scale_circulant_toeplitz(toeplitz64):
    tol = 1e-3
    H = herm(toeplitz64)
    M = circ_majorizer(H, dense_H=toeplitz64, tol=tol)
    lam = min_eig(M.dense().real - toeplitz64)
    lmax = max_eig(toeplitz64)
    assert -1e-8 <= lam <= 2 * tol * lmax


def test_scale_is_tight_random(rng):
    tol = 1e-3
    for k in range(10):
        n = int(rng.integers(3, 30))
        Hd = random_psd(n, rng)
        M0 = MajorizerSpec(IdentityOperator(n), rng.random(n) + 0.2)
        M = scale_to_majorize(M0, herm(Hd), tol=tol, power_tol=1e-10, max_iters=200000)
        lam = min_eig(M.dense() - Hd)
        assert -1e-8 <= lam <= 2 * tol * max_eig(Hd)


def test_dense_scale_matches_pencil(rng):
    n = 12
    Hd = random_psd(n, rng)
    S = StackedOperator([DFTOperator(n), IdentityOperator(n)])
    M0 = MajorizerSpec(S, rng.random(2 * n) + 0.1)
    M = dense_scale_to_majorize(M0, herm(Hd), tol=1e-3)
    assert M.method == "dense-eigen"
    lam = min_eig(M.dense() - Hd)
    assert -1e-8 <= lam <= 2e-3 * max_eig(Hd)


def test_generalized_eigen_stacked(rng):
    n = 10
    Hd = random_psd(n, rng)
    S = StackedOperator([DFTOperator(n), IdentityOperator(n)])
    M0 = MajorizerSpec(S, rng.random(2 * n) + 0.1)
    Md = M0.dense()
    L = np.linalg.cholesky(Md)
    Li = np.linalg.inv(L)
    ref = max_eig(Li @ Hd @ Li.conj().T)
    est = max_generalized_eigenvalue(M0, herm(Hd), tol=1e-9, max_iters=100000)
    assert est.value == pytest.approx(ref, rel=1e-6)


def test_realified_circulant_majorizes_real_H(toeplitz64):
    H = herm(toeplitz64)
    M0 = circulant_majorizer(best_circulant_approx(toeplitz64))
    # make the spectrum deliberately asymmetric, then realify
    d = M0.d * (1 + 0.3 * np.sin(np.arange(64)))
    M = scale_to_majorize(MajorizerSpec(DFTOperator(64), d), H)
    R = M.realified()
    assert R.real
    x = np.random.default_rng(0).standard_normal(64)
    assert not np.iscomplexobj(R.apply(x))
    assert min_eig(R.dense() - toeplitz64) >= -1e-8 * max_eig(toeplitz64)


@given(st.integers(2, 12), st.integers(0, 2**31 - 1))
def test_sqs_property(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    Hd = B @ B.T
    M = sqs_majorizer(herm(Hd))
    assert min_eig(M.dense() - Hd) >= -1e-10 * max(max_eig(Hd), 1e-300)


@given(st.integers(2, 10), st.integers(0, 2**31 - 1))
def test_lipschitz_property(n, seed):
    rng = np.random.default_rng(seed)
    Hd = random_psd(n, rng, complex_=True)
    M = lipschitz_majorizer(HermitianOperator.from_dense(Hd), power_tol=1e-10, max_iters=100000)
    assert min_eig(M.dense() - Hd) >= -1e-8 * max_eig(Hd)
