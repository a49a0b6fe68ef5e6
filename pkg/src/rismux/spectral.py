"""Singular-value analysis of the effective channel and its phase gradients.

Conventions: singular values are sorted in descending order everywhere, so
the minimum singular value is the last one. Indices ``k`` and ``ell`` are
0-based.
"""

from dataclasses import dataclass

import numpy as np

from .channel import assemble_effective, ris_scale, _check_alpha, _check_theta
from .errors import DomainError, NumericalError, StructuralError

__all__ = [
    "SvdResult",
    "ChannelPartials",
    "svd_thin",
    "effective_rank",
    "effective_rank_partial_lambda",
    "singular_value_grad",
    "singular_value_jacobian",
    "effective_rank_grad",
    "effective_rank_value_and_grad",
    "min_singular_grad",
    "min_singular_value_and_grad",
    "msv_tie",
    "gram_offdiag_ratio",
]

# stands in for +inf when a zero singular value is pushed up
ZERO_LAMBDA_PARTIAL = 1e12
MSV_TIE_RTOL = 1e-9


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``H = U @ diag(lam) @ V.conj().T``.

    Attributes
    ----------
    U : ndarray, shape (M, K)
    lam : ndarray, shape (K,)
        Singular values, descending.
    V : ndarray, shape (K, K)
    """

    U: np.ndarray
    lam: np.ndarray
    V: np.ndarray

    def reconstruct(self):
        return (self.U * self.lam) @ self.V.conj().T


def svd_thin(H):
    """Thin SVD of an M x K matrix with ``M >= K``."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise StructuralError(f"expected a matrix, got shape {H.shape}")
    M, K = H.shape
    if M < K:
        raise StructuralError(f"need M >= K, got {H.shape}")
    if not np.all(np.isfinite(H)):
        raise StructuralError("matrix has non-finite entries")
    try:
        U, lam, Vh = np.linalg.svd(H, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"SVD did not converge: {exc}",
            {"shape": H.shape, "fro_norm": float(np.linalg.norm(H)),
             "max_abs": float(np.max(np.abs(H)))}) from exc
    return SvdResult(U, lam, Vh.conj().T)


def _check_spectrum(lam):
    lam = np.asarray(lam, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise StructuralError("spectrum must be a non-empty 1-D array")
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise DomainError("singular values must be finite and nonnegative")
    total = lam.sum()
    if total <= 0:
        raise DomainError("effective rank is undefined for the zero matrix")
    return lam, total


def effective_rank(lam):
    """Exponential of the Shannon entropy of ``lam / lam.sum()``.

    Zero singular values contribute nothing (``0 ln 0 = 0``). The result lies
    in ``[1, len(lam)]``.

    >>> effective_rank([5.0, 0.0, 0.0, 0.0])
    1.0
    """
    lam, total = _check_spectrum(lam)
    p = lam / total
    p = p[p > 0]
    xi = float(np.exp(-np.sum(p * np.log(p))))
    return min(max(xi, 1.0), float(lam.size))


def _er_partials(lam, total, xi):
    # d xi / d lam_k for all k at once
    p = lam / total
    pos = p > 0
    one_plus_log = np.zeros_like(lam)
    one_plus_log[pos] = 1.0 + np.log(p[pos])
    # C[j, k] = sum_{i != k} lam_i if j == k else -lam_j
    # sum_j C[j,k] a_j = total * a_k - sum_j lam_j a_j
    weighted = np.dot(lam, one_plus_log)
    out = -(total * one_plus_log - weighted) / total**2 * xi
    # a zero singular value with C_kk > 0 has an infinite partial
    zero_with_mass = ~pos & (total - lam > 0)
    out[zero_with_mass] = ZERO_LAMBDA_PARTIAL
    return out


def effective_rank_partial_lambda(lam, k):
    """Partial derivative of :func:`effective_rank` in ``lam[k]``."""
    lam, total = _check_spectrum(lam)
    if not (0 <= k < lam.size):
        raise StructuralError(f"k must lie in [0, {lam.size}), got {k}")
    xi = effective_rank(lam)
    return float(_er_partials(lam, total, xi)[k])


class ChannelPartials:
    """Provider of the per-element channel derivatives ``dH/dtheta_ell``.

    Calling the provider with ``ell`` returns the dense M x K matrix. The
    factors are also exposed so the gradient code can use the rank-one
    structure directly.
    """

    def __init__(self, real, theta, alpha):
        self.theta = _check_theta(real, theta)
        _check_alpha(alpha)
        self.real = real
        self.alpha = alpha
        # coefficient of column ell of F times row ell of G
        self.coef = ris_scale(alpha, real.L) * 1j * np.exp(1j * self.theta)

    @property
    def L(self):
        return self.real.L

    def __call__(self, ell):
        return self.coef[ell] * np.outer(self.real.F[:, ell], self.real.G[ell, :])


def singular_value_jacobian(svd, partials):
    """``J[k, ell] = d lam_k / d theta_ell`` for every k and ell, shape (K, L).

    Uses ``Re{coef_ell (u_k^H f_ell)(g_ell^T v_k)}``, O(L (M + K)) per k.
    """
    uf = svd.U.conj().T @ partials.real.F          # (K, L)
    gv = partials.real.G @ svd.V                   # (L, K)
    return np.real(partials.coef[None, :] * uf * gv.T)


def singular_value_grad(svd, partials, k, dense=False):
    """Gradient of the ``k``-th singular value with respect to all phases.

    Parameters
    ----------
    svd : SvdResult
        Decomposition of the channel at which ``partials`` were built.
    partials : ChannelPartials or callable
        ``ell -> dH/dtheta_ell``. A bare callable needs ``dense=True`` and an
        ``L`` attribute.
    k : int
        Singular value index in descending order.
    dense : bool
        Evaluate ``Re{u_k^H (dH/dtheta_ell) v_k}`` with the full matrices.
    """
    K = svd.lam.size
    if isinstance(k, bool) or not (0 <= int(k) < K):
        raise StructuralError(f"k must lie in [0, {K}), got {k!r}")
    u, v = svd.U[:, k], svd.V[:, k]
    if dense:
        return np.array([np.real(u.conj() @ partials(ell) @ v)
                         for ell in range(partials.L)])
    uf = u.conj() @ partials.real.F
    gv = partials.real.G @ v
    return np.real(partials.coef * uf * gv)


def _svd_at(real, theta, alpha):
    return svd_thin(assemble_effective(real, theta, alpha))


def effective_rank_value_and_grad(real, theta, alpha):
    """Effective rank of ``H(theta)`` and its gradient in one SVD."""
    svd = _svd_at(real, theta, alpha)
    lam, total = _check_spectrum(svd.lam)
    xi = effective_rank(lam)
    if alpha == 0:
        return xi, np.zeros(real.L)
    dxi_dlam = _er_partials(lam, total, xi)
    jac = singular_value_jacobian(svd, ChannelPartials(real, theta, alpha))
    return xi, dxi_dlam @ jac


def effective_rank_grad(real, theta, alpha):
    """Gradient of the effective rank of ``H(theta)``, shape (L,)."""
    return effective_rank_value_and_grad(real, theta, alpha)[1]


def msv_tie(lam, rtol=MSV_TIE_RTOL):
    """True when the two smallest singular values are numerically tied."""
    lam = np.asarray(lam)
    if lam.size < 2:
        return False
    return bool(lam[-2] - lam[-1] <= rtol * lam[0])


def min_singular_value_and_grad(real, theta, alpha):
    """Minimum singular value of ``H(theta)`` and its (sub)gradient.

    At a tie between the two smallest singular values the returned vector is
    the gradient of the last one, a valid Clarke subgradient.
    """
    svd = _svd_at(real, theta, alpha)
    value = float(svd.lam[-1])
    if alpha == 0:
        return value, np.zeros(real.L)
    grad = singular_value_grad(svd, ChannelPartials(real, theta, alpha), svd.lam.size - 1)
    return value, grad


def min_singular_grad(real, theta, alpha):
    return min_singular_value_and_grad(real, theta, alpha)[1]


def gram_offdiag_ratio(H):
    """``||offdiag(H^H H)||_F / ||diag(H^H H)||_F``; zero iff columns are orthogonal."""
    H = np.asarray(H, dtype=complex)
    gram = H.conj().T @ H
    diag = np.diag(gram)
    diag_norm = np.linalg.norm(diag)
    if diag_norm == 0:
        raise DomainError("Gram ratio is undefined for the zero matrix")
    off = gram - np.diag(diag)
    return float(np.linalg.norm(off) / diag_norm)
