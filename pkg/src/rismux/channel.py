"""RIS-assisted uplink channel model.

The effective M x K channel seen by the base station is

.. math::

    H = \\sqrt{1-\\alpha} D + \\sqrt{\\alpha / L} F \\operatorname{diag}(e^{i\\theta}) G

with ``D`` (M x K), ``F`` (M x L) and ``G`` (L x K) i.i.d. CN(0, 1). The
``1/sqrt(L)`` normalization keeps the average received power independent of
``alpha`` and ``L`` when the phases are random.
"""

from dataclasses import dataclass

import numpy as np

from .errors import StructuralError

__all__ = [
    "SystemConfig",
    "ChannelRealization",
    "rng_stream",
    "sample_cn",
    "sample_channels",
    "assemble_effective",
    "channel_partial",
    "channel_partial_entrywise",
    "random_phases",
]

_MAX_SEED = 2**64

# stream tags for the three static matrices
TAG_D, TAG_F, TAG_G = 0, 1, 2


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions, power split and noise level of one simulated link.

    Parameters
    ----------
    M : int
        Base-station antennas.
    K : int
        Single-antenna users, ``1 <= K <= M``.
    L : int
        RIS elements.
    alpha : float
        Fraction of received power arriving through the RIS, in ``[0, 1]``.
    sigma2 : float
        Noise variance (linear). Per-user transmit power is 1.
    seed : int
        Master seed, unsigned 64 bit.
    """

    M: int = 4
    K: int = 4
    L: int = 100
    alpha: float = 0.5
    sigma2: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("M", "K", "L"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise StructuralError(f"{name} must be a positive integer, got {value!r}")
        if self.K > self.M:
            raise StructuralError(f"need M >= K, got M={self.M}, K={self.K}")
        if not (0.0 <= self.alpha <= 1.0):
            raise StructuralError(f"alpha must lie in [0, 1], got {self.alpha!r}")
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise StructuralError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not (0 <= int(self.seed) < _MAX_SEED):
            raise StructuralError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @property
    def snr_db(self):
        """SNR in dB under the unit transmit power convention."""
        return -10.0 * np.log10(self.sigma2)

    @staticmethod
    def sigma2_from_snr_db(snr_db):
        return 10.0 ** (-float(snr_db) / 10.0)

    def replace(self, **changes):
        fields = dict(M=self.M, K=self.K, L=self.L, alpha=self.alpha,
                      sigma2=self.sigma2, seed=self.seed)
        fields.update(changes)
        return SystemConfig(**fields)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of the static matrices ``D``, ``F`` and ``G``.

    The arrays are made read-only on construction.
    """

    D: np.ndarray
    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        D, F, G = (np.asarray(x, dtype=complex) for x in (self.D, self.F, self.G))
        if D.ndim != 2 or F.ndim != 2 or G.ndim != 2:
            raise StructuralError("D, F and G must be 2-D")
        M, K = D.shape
        if F.shape[0] != M or G.shape[1] != K or F.shape[1] != G.shape[0]:
            raise StructuralError(
                f"inconsistent shapes D{D.shape}, F{F.shape}, G{G.shape}")
        for name, arr in (("D", D), ("F", F), ("G", G)):
            if not np.all(np.isfinite(arr)):
                raise StructuralError(f"{name} has non-finite entries")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def M(self):
        return self.D.shape[0]

    @property
    def K(self):
        return self.D.shape[1]

    @property
    def L(self):
        return self.F.shape[1]

    def to_dict(self):
        """Plain JSON-friendly representation (real and imaginary parts)."""
        return {name: {"re": getattr(self, name).real.tolist(),
                       "im": getattr(self, name).imag.tolist()}
                for name in ("D", "F", "G")}

    @classmethod
    def from_dict(cls, data):
        def load(name):
            return np.asarray(data[name]["re"]) + 1j * np.asarray(data[name]["im"])
        return cls(load("D"), load("F"), load("G"))


def rng_stream(seed, *key):
    """Independent generator identified by ``(seed, *key)``.

    Streams with different keys are statistically independent and do not
    depend on the order in which they are created.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def sample_cn(rng, shape):
    """Circularly-symmetric CN(0, 1) samples (each quadrature has variance 1/2)."""
    parts = rng.normal(scale=np.sqrt(0.5), size=(2,) + tuple(shape))
    return parts[0] + 1j * parts[1]


def sample_channels(config, trial_index):
    """Draw ``D``, ``F``, ``G`` for one trial.

    The result is a deterministic function of ``(config.seed, trial_index)``;
    each matrix comes from its own stream so that changing ``L`` leaves ``D``
    untouched.
    """
    if int(trial_index) < 0:
        raise StructuralError(f"trial_index must be nonnegative, got {trial_index}")
    M, K, L = config.M, config.K, config.L
    D = sample_cn(rng_stream(config.seed, trial_index, TAG_D), (M, K))
    F = sample_cn(rng_stream(config.seed, trial_index, TAG_F), (M, L))
    G = sample_cn(rng_stream(config.seed, trial_index, TAG_G), (L, K))
    return ChannelRealization(D, F, G)


def random_phases(rng, L):
    """Uniform phases on ``[0, 2*pi)``."""
    return rng.uniform(0.0, 2.0 * np.pi, size=L)


def _check_theta(real, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (real.L,):
        raise StructuralError(f"theta must have shape ({real.L},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise StructuralError("theta has non-finite entries")
    return theta


def _check_alpha(alpha):
    if not (0.0 <= alpha <= 1.0):
        raise StructuralError(f"alpha must lie in [0, 1], got {alpha!r}")


def ris_scale(alpha, L):
    return np.sqrt(alpha) / np.sqrt(L)


def assemble_effective(real, theta, alpha):
    """Effective channel ``H`` (M x K) for phase vector ``theta``."""
    theta = _check_theta(real, theta)
    _check_alpha(alpha)
    psi = np.exp(1j * theta)
    return (np.sqrt(1.0 - alpha) * real.D
            + ris_scale(alpha, real.L) * (real.F @ (psi[:, None] * real.G)))


def channel_partial(real, theta, ell, alpha):
    """Derivative of ``H`` with respect to ``theta[ell]`` (0-based ``ell``).

    A rank-one matrix: scaled outer product of column ``ell`` of ``F`` with
    row ``ell`` of ``G``.
    """
    theta = _check_theta(real, theta)
    _check_alpha(alpha)
    if isinstance(ell, bool) or not (0 <= int(ell) < real.L):
        raise StructuralError(f"ell must lie in [0, {real.L}), got {ell!r}")
    ell = int(ell)
    coef = ris_scale(alpha, real.L) * np.exp(1j * (theta[ell] + np.pi / 2))
    return coef * np.kron(real.F[:, ell][:, None], real.G[ell, :][None, :])


def channel_partial_entrywise(real, theta, ell, alpha):
    """Scalar-loop evaluation of :func:`channel_partial`, kept as a cross-check."""
    theta = _check_theta(real, theta)
    _check_alpha(alpha)
    if not (0 <= int(ell) < real.L):
        raise StructuralError(f"ell must lie in [0, {real.L}), got {ell!r}")
    coef = np.sqrt(alpha) / np.sqrt(real.L) * np.exp(1j * (theta[ell] + np.pi / 2))
    out = np.zeros((real.M, real.K), dtype=complex)
    for m in range(real.M):
        for k in range(real.K):
            out[m, k] = coef * real.F[m, ell] * real.G[ell, k]
    return out
