"""Linear receivers, post-equalization SINR and achievable rates.

Every user transmits with unit power and the SINR charges each stream a
noise power of ``K * sigma2``. The MMSE receiver used by :func:`sinr` and
:func:`sum_rate` is regularized with that same effective noise, which makes
it the SINR-maximizing linear receiver.
"""

import enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import StructuralError

__all__ = [
    "ReceiverKind",
    "effective_noise",
    "mmse_weights",
    "mf_weights",
    "post_sinr",
    "linear_sum_rate",
    "joint_decoding_rate",
    "receiver_weights",
    "sinr",
    "sum_rate",
]


class ReceiverKind(str, enum.Enum):
    MMSE = "mmse"
    MF = "mf"
    JOINT = "joint"


def effective_noise(K, sigma2):
    """Per-stream noise power seen in the SINR denominator."""
    return K * sigma2


def mmse_weights(H, sigma2):
    """``(H^H H + sigma2 I)^{-1} H^H``, shape (K, M).

    Solved with a Cholesky factorization of the regularized Gram matrix.
    """
    H = np.asarray(H, dtype=complex)
    if not sigma2 > 0:
        raise StructuralError(f"sigma2 must be positive, got {sigma2!r}")
    Hh = H.conj().T
    gram = Hh @ H + sigma2 * np.eye(H.shape[1])
    return cho_solve(cho_factor(gram, lower=True), Hh)


def mf_weights(H):
    """Matched filter ``H^H``."""
    return np.asarray(H).conj().T


def post_sinr(W, H, sigma2):
    """Per-user SINR after equalization with ``W`` (row ``k`` is ``w_k^H``).

    .. math::

        \\gamma_k = \\frac{|w_k^H h_k|^2}
                         {\\sum_{j \\ne k} |w_k^H h_j|^2 + K \\sigma^2 \\|w_k\\|^2}

    A zero row yields ``gamma_k = 0``.
    """
    W = np.asarray(W, dtype=complex)
    H = np.asarray(H, dtype=complex)
    K = H.shape[1]
    if W.shape != (K, H.shape[0]):
        raise StructuralError(f"W must have shape ({K}, {H.shape[0]}), got {W.shape}")
    WH = W @ H
    signal = np.abs(np.diag(WH)) ** 2
    interference = np.sum(np.abs(WH) ** 2, axis=1) - signal
    noise = effective_noise(K, sigma2) * np.sum(np.abs(W) ** 2, axis=1)
    denom = np.maximum(interference, 0.0) + noise
    gamma = np.zeros(K)
    nz = denom > 0
    gamma[nz] = signal[nz] / denom[nz]
    return gamma


def linear_sum_rate(gamma):
    """``sum_k log2(1 + gamma_k)`` in bits per channel use."""
    return float(np.sum(np.log2(1.0 + np.asarray(gamma, dtype=float))))


def joint_decoding_rate(H, sigma2):
    """Sum capacity ``log2 det(I + H^H H / (K sigma2))`` of the uplink.

    Stands in for the ML receiver baseline; uses the same noise scaling as
    :func:`post_sinr`.
    """
    H = np.asarray(H, dtype=complex)
    K = H.shape[1]
    gram = H.conj().T @ H / effective_noise(K, sigma2)
    chol = np.linalg.cholesky(np.eye(K) + gram)
    return float(2.0 * np.sum(np.log2(np.real(np.diag(chol)))))


def receiver_weights(kind, H, sigma2):
    kind = ReceiverKind(kind)
    if kind is ReceiverKind.MMSE:
        return mmse_weights(H, effective_noise(np.shape(H)[1], sigma2))
    if kind is ReceiverKind.MF:
        return mf_weights(H)
    raise StructuralError("the joint receiver has no weight matrix")


def sinr(kind, H, sigma2):
    return post_sinr(receiver_weights(kind, H, sigma2), H, sigma2)


def sum_rate(kind, H, sigma2):
    """Achievable sum rate of ``H`` with the given receiver."""
    kind = ReceiverKind(kind)
    if kind is ReceiverKind.JOINT:
        return joint_decoding_rate(H, sigma2)
    return linear_sum_rate(sinr(kind, H, sigma2))
