import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from rismux.channel import SystemConfig, assemble_effective, random_phases, rng_stream, sample_channels
from rismux.errors import DomainError, StructuralError
from rismux.optim import optimize_phases
from rismux.spectral import (ChannelPartials, effective_rank, effective_rank_grad,
                             effective_rank_partial_lambda, effective_rank_value_and_grad,
                             gram_offdiag_ratio, min_singular_grad, msv_tie,
                             singular_value_grad, singular_value_jacobian, svd_thin)

# frozen from an independent mpmath evaluation of the entropy formula
XI_2_1 = 1.8898815748423097
DXI_DL1_2_1 = -0.14555178724379292
DXI_DL2_2_1 = 0.29110357448758584


def _instance(M=4, K=4, L=8, alpha=0.5, seed=3, trial=0):
    real = sample_channels(SystemConfig(M=M, K=K, L=L, alpha=alpha, seed=seed), trial)
    theta = random_phases(rng_stream(seed, trial, 99), L)
    return real, theta


def _cn(rng, shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)


def _fd(fun, theta, h=1e-6):
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return out


# --- svd_thin -------------------------------------------------------------

def test_svd_identity():
    assert_allclose(svd_thin(np.eye(4)).lam, np.ones(4), atol=1e-15)


def test_svd_diagonal_with_zero_rows():
    H = np.vstack([np.diag([3.0, 2.0]), np.zeros((2, 2))])
    assert_allclose(svd_thin(H).lam, [3.0, 2.0], atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_svd_matches_gram_eigenvalues(seed):
    H = _cn(np.random.default_rng(seed), (4, 4))
    ref = np.sqrt(np.sort(np.linalg.eigvalsh(H.conj().T @ H))[::-1])
    assert_allclose(svd_thin(H).lam, ref, rtol=1e-10)


@given(st.integers(0, 2**32 - 1), st.integers(1, 5), st.integers(0, 3))
@settings(max_examples=50, deadline=None)
def test_svd_invariants(seed, K, extra):
    H = _cn(np.random.default_rng(seed), (K + extra, K))
    svd = svd_thin(H)
    lam1 = svd.lam[0]
    assert svd.U.shape == (K + extra, K) and svd.V.shape == (K, K)
    assert np.all(np.diff(svd.lam) <= 0) and np.all(svd.lam >= 0)
    assert np.linalg.norm(H - svd.reconstruct()) < 1e-10 * np.linalg.norm(H)
    assert_allclose(svd.U.conj().T @ svd.U, np.eye(K), atol=1e-10)
    assert_allclose(svd.V.conj().T @ svd.V, np.eye(K), atol=1e-10)
    for k in range(K):
        assert np.linalg.norm(H @ svd.V[:, k] - svd.lam[k] * svd.U[:, k]) < 1e-10 * lam1
        assert np.linalg.norm(H.conj().T @ svd.U[:, k] - svd.lam[k] * svd.V[:, k]) < 1e-10 * lam1


def test_svd_rejects_bad_input():
    with pytest.raises(StructuralError):
        svd_thin(np.array([[np.inf, 0], [0, 1]]))
    with pytest.raises(StructuralError):
        svd_thin(np.ones((2, 3)))


# --- effective rank -------------------------------------------------------

def test_effective_rank_flat_spectrum():
    assert effective_rank([1.0, 1.0, 1.0, 1.0]) == 4.0


def test_effective_rank_rank_one():
    assert effective_rank([5.0, 0.0, 0.0, 0.0]) == 1.0


def test_effective_rank_two_values():
    assert effective_rank([2.0, 1.0]) == pytest.approx(XI_2_1, rel=1e-14)


def test_effective_rank_zero_spectrum():
    with pytest.raises(DomainError):
        effective_rank([0.0, 0.0])


spectra = arrays(float, st.integers(1, 6), elements=st.floats(0, 1e3)).filter(lambda a: a.sum() > 1e-6)


@given(spectra)
def test_effective_rank_range(lam):
    lam = np.sort(lam)[::-1]
    assert 1.0 <= effective_rank(lam) <= lam.size


@given(spectra, st.floats(1e-3, 1e3))
def test_effective_rank_scale_invariant(lam, c):
    lam = np.sort(lam)[::-1]
    assert abs(effective_rank(c * lam) - effective_rank(lam)) < 1e-12 * lam.size


def test_partial_lambda_vanishes_at_flat_spectrum():
    for k in range(4):
        assert abs(effective_rank_partial_lambda([1.0, 1.0, 1.0, 1.0], k)) < 1e-15


def test_partial_lambda_two_values():
    assert effective_rank_partial_lambda([2.0, 1.0], 0) == pytest.approx(DXI_DL1_2_1, rel=1e-12)
    assert effective_rank_partial_lambda([2.0, 1.0], 1) == pytest.approx(DXI_DL2_2_1, rel=1e-12)


def test_partial_lambda_matches_finite_difference():
    h = 1e-6
    fd = (effective_rank([2.0 + h, 1.0]) - effective_rank([2.0 - h, 1.0])) / (2 * h)
    assert effective_rank_partial_lambda([2.0, 1.0], 0) == pytest.approx(fd, rel=1e-8)


def test_partial_lambda_signs():
    assert effective_rank_partial_lambda([2.0, 1.0], 0) < 0
    assert effective_rank_partial_lambda([2.0, 1.0], 1) > 0


def test_partial_lambda_zero_singular_value_is_finite():
    lam = [3.0, 1.0, 0.0]
    assert effective_rank_partial_lambda(lam, 2) == 1e12
    assert np.isfinite(effective_rank_partial_lambda(lam, 0))


@given(arrays(float, st.integers(2, 6), elements=st.floats(0.1, 10)), st.data())
@settings(deadline=None)
def test_partial_lambda_matches_fd_property(lam, data):
    lam = np.sort(lam)[::-1]
    k = data.draw(st.integers(0, lam.size - 1))
    h = 1e-6
    e = np.zeros_like(lam)
    e[k] = h
    fd = (effective_rank(lam + e) - effective_rank(lam - e)) / (2 * h)
    assert abs(effective_rank_partial_lambda(lam, k) - fd) < 1e-7


# --- singular value gradients --------------------------------------------

def test_singular_value_grad_alpha_zero():
    real, theta = _instance(alpha=0.0)
    svd = svd_thin(assemble_effective(real, theta, 0.0))
    for k in range(4):
        assert np.all(singular_value_grad(svd, ChannelPartials(real, theta, 0.0), k) == 0)


@pytest.mark.parametrize("k", range(4))
def test_singular_value_grad_matches_fd(k):
    real, theta = _instance(L=8, alpha=0.5)
    svd = svd_thin(assemble_effective(real, theta, 0.5))
    analytic = singular_value_grad(svd, ChannelPartials(real, theta, 0.5), k)
    fd = _fd(lambda t: svd_thin(assemble_effective(real, t, 0.5)).lam[k], theta)
    assert np.max(np.abs(analytic - fd)) < 1e-7


@pytest.mark.parametrize("k", range(4))
def test_rank_one_form_equals_dense_form(k):
    real, theta = _instance(L=8, alpha=0.3)
    svd = svd_thin(assemble_effective(real, theta, 0.3))
    partials = ChannelPartials(real, theta, 0.3)
    assert_allclose(singular_value_grad(svd, partials, k),
                    singular_value_grad(svd, partials, k, dense=True), rtol=0, atol=1e-12)


def test_jacobian_rows_match_per_k_gradient():
    real, theta = _instance(L=8)
    svd = svd_thin(assemble_effective(real, theta, 0.5))
    partials = ChannelPartials(real, theta, 0.5)
    jac = singular_value_jacobian(svd, partials)
    for k in range(4):
        assert_allclose(jac[k], singular_value_grad(svd, partials, k), atol=1e-15)


def test_singular_value_grad_bad_index():
    real, theta = _instance()
    svd = svd_thin(assemble_effective(real, theta, 0.5))
    with pytest.raises(StructuralError):
        singular_value_grad(svd, ChannelPartials(real, theta, 0.5), 4)


def test_effective_rank_grad_alpha_zero():
    real, theta = _instance(L=16, alpha=0.0)
    assert np.all(effective_rank_grad(real, theta, 0.0) == 0)


def test_effective_rank_grad_matches_fd():
    real, theta = _instance(L=16, alpha=0.5, seed=21)
    fd = _fd(lambda t: effective_rank(svd_thin(assemble_effective(real, t, 0.5)).lam), theta)
    assert np.max(np.abs(effective_rank_grad(real, theta, 0.5) - fd)) < 1e-6


def test_effective_rank_grad_vanishes_at_optimum():
    cfg = SystemConfig(M=4, K=4, L=32, alpha=0.5, seed=8)
    real = sample_channels(cfg, 0)
    report = optimize_phases("er", real, cfg)
    xi, grad = effective_rank_value_and_grad(real, report.theta_star, 0.5)
    assert xi == pytest.approx(4.0, abs=1e-6)
    assert np.max(np.abs(grad)) < 1e-4


def test_min_singular_grad_alpha_zero():
    real, theta = _instance(alpha=0.0)
    assert np.all(min_singular_grad(real, theta, 0.0) == 0)


@pytest.mark.parametrize("trial", range(5))
def test_min_singular_grad_matches_fd(trial):
    real, theta = _instance(L=8, alpha=0.5, trial=trial)
    lam = svd_thin(assemble_effective(real, theta, 0.5)).lam
    assert lam[-2] - lam[-1] > 1e-6 * lam[0]
    fd = _fd(lambda t: svd_thin(assemble_effective(real, t, 0.5)).lam[-1], theta)
    assert np.max(np.abs(min_singular_grad(real, theta, 0.5) - fd)) < 1e-7


def test_min_singular_grad_at_exact_tie():
    # G = 0 and D = sqrt(2) I makes every singular value equal to 1
    from rismux.channel import ChannelRealization
    rng = np.random.default_rng(4)
    real = ChannelRealization(np.sqrt(2) * np.eye(3), _cn(rng, (3, 5)), np.zeros((5, 3)))
    theta = np.zeros(5)
    lam = svd_thin(assemble_effective(real, theta, 0.5)).lam
    assert msv_tie(lam)
    grad = min_singular_grad(real, theta, 0.5)
    assert grad.shape == (5,) and np.all(np.isfinite(grad))


# --- Gram diagnostic ------------------------------------------------------

def test_gram_ratio_orthonormal():
    Q, _ = np.linalg.qr(_cn(np.random.default_rng(0), (5, 3)))
    assert gram_offdiag_ratio(Q) < 1e-15


def test_gram_ratio_identical_columns():
    assert gram_offdiag_ratio(np.array([[1.0, 1.0], [0.0, 0.0]])) == pytest.approx(1.0, abs=1e-15)


def test_gram_ratio_matches_explicit_gram():
    H = _cn(np.random.default_rng(2), (4, 4))
    gram = np.zeros((4, 4), dtype=complex)
    for i in range(4):
        for j in range(4):
            gram[i, j] = np.vdot(H[:, i], H[:, j])
    off = sum(abs(gram[i, j]) ** 2 for i in range(4) for j in range(4) if i != j)
    diag = sum(abs(gram[i, i]) ** 2 for i in range(4))
    assert gram_offdiag_ratio(H) == pytest.approx(np.sqrt(off / diag), rel=1e-12)


def test_gram_ratio_zero_matrix():
    with pytest.raises(DomainError):
        gram_offdiag_ratio(np.zeros((3, 2)))


@pytest.mark.parametrize("seed", range(4))
def test_full_effective_rank_iff_orthogonal_equal_norms(seed):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(_cn(rng, (6, 4)))
    H = 2.5 * Q
    assert gram_offdiag_ratio(H) < 1e-8
    assert effective_rank(svd_thin(H).lam) == pytest.approx(4.0, abs=1e-8)
    # orthogonal but unequal norms
    H2 = Q * np.array([1.0, 2.0, 3.0, 4.0])
    assert gram_offdiag_ratio(H2) < 1e-8
    assert effective_rank(svd_thin(H2).lam) < 4.0 - 1e-8
    # equal norms but not orthogonal
    H3 = _cn(rng, (6, 4))
    H3 /= np.linalg.norm(H3, axis=0)
    assert gram_offdiag_ratio(H3) > 1e-8
    assert effective_rank(svd_thin(H3).lam) < 4.0 - 1e-8
