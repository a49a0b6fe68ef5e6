"""Runtime invariant checks behind ``rismux selftest``."""

from dataclasses import dataclass

import numpy as np

from .channel import (ChannelRealization, SystemConfig, assemble_effective, channel_partial,
                      channel_partial_entrywise, random_phases, rng_stream, sample_channels)
from .experiment import gradient_selftest
from .receivers import mf_weights, post_sinr, sinr, sum_rate
from .spectral import effective_rank, gram_offdiag_ratio, svd_thin

TAG_CHECKS = 40


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _instances(n, seed, M=4, K=4, L=16, alpha=0.5):
    cfg = SystemConfig(M=M, K=K, L=L, alpha=alpha, seed=seed)
    for i in range(n):
        yield cfg, sample_channels(cfg, i), random_phases(rng_stream(seed, i, TAG_CHECKS), L)


def _check_svd(n, seed):
    worst = 0.0
    for cfg, real, theta in _instances(n, seed):
        H = assemble_effective(real, theta, cfg.alpha)
        svd = svd_thin(H)
        K = svd.lam.size
        worst = max(worst,
                    np.linalg.norm(H - svd.reconstruct()) / np.linalg.norm(H),
                    np.max(np.abs(svd.U.conj().T @ svd.U - np.eye(K))),
                    np.max(np.abs(svd.V.conj().T @ svd.V - np.eye(K))))
        if np.any(np.diff(svd.lam) > 0):
            return Check("svd", False, "singular values not descending")
    return Check("svd", worst < 1e-10, f"worst reconstruction/orthonormality error {worst:.2e}")


def _check_effective_rank(n, seed):
    rng = rng_stream(seed, TAG_CHECKS, 1)
    worst_scale = 0.0
    for _ in range(n):
        lam = np.sort(rng.exponential(size=4))[::-1]
        xi = effective_rank(lam)
        if not 1.0 <= xi <= 4.0:
            return Check("effective_rank", False, f"out of range: {xi}")
        worst_scale = max(worst_scale, abs(effective_rank(rng.uniform(0.01, 100) * lam) - xi))
    return Check("effective_rank", worst_scale < 1e-12,
                 f"range [1, K] ok, worst scale-invariance error {worst_scale:.2e}")


def _check_channel_partial(n, seed):
    worst_fd = worst_forms = 0.0
    h = 1e-6
    for cfg, real, theta in _instances(n, seed, L=8):
        for ell in range(cfg.L):
            e = np.zeros(cfg.L)
            e[ell] = h
            fd = (assemble_effective(real, theta + e, cfg.alpha)
                  - assemble_effective(real, theta - e, cfg.alpha)) / (2 * h)
            dense = channel_partial(real, theta, ell, cfg.alpha)
            worst_fd = max(worst_fd, np.max(np.abs(dense - fd)))
            worst_forms = max(worst_forms, np.max(np.abs(
                dense - channel_partial_entrywise(real, theta, ell, cfg.alpha))))
    ok = worst_fd < 1e-8 and worst_forms < 1e-14
    return Check("channel_partial", ok,
                 f"worst FD error {worst_fd:.2e}, kron vs entrywise {worst_forms:.2e}")


def _check_power(seed, draws=1000):
    details, ok = [], True
    for alpha, L in ((0.1, 16), (0.5, 100), (1.0, 100)):
        cfg = SystemConfig(M=4, K=4, L=L, alpha=alpha, seed=seed)
        p = np.mean([np.linalg.norm(assemble_effective(
            sample_channels(cfg, t), random_phases(rng_stream(seed, t, TAG_CHECKS), L), alpha)) ** 2
            for t in range(draws)]) / (cfg.M * cfg.K)
        ok &= abs(p - 1) < 0.05
        details.append(f"alpha={alpha:g},L={L}:{p:.3f}")
    return Check("power_normalization", ok, "E||H||^2/(MK) " + " ".join(details))


def _check_periodicity(n, seed):
    worst = 0.0
    for cfg, real, theta in _instances(n, seed):
        worst = max(worst, np.max(np.abs(assemble_effective(real, theta, cfg.alpha)
                                         - assemble_effective(real, theta + 2 * np.pi, cfg.alpha))))
    return Check("periodicity", worst < 1e-12, f"worst |H(theta) - H(theta + 2pi)| {worst:.2e}")


def _check_linear_in_direct(n, seed):
    worst = 0.0
    for cfg, real, theta in _instances(n, seed):
        doubled = ChannelRealization(2 * real.D, real.F, real.G)
        diff = (assemble_effective(doubled, theta, cfg.alpha)
                - assemble_effective(real, theta, cfg.alpha))
        worst = max(worst, np.max(np.abs(diff - np.sqrt(1 - cfg.alpha) * real.D)))
    return Check("linear_in_D", worst < 1e-12, f"worst error {worst:.2e}")


def _check_receivers(n, seed):
    rng = rng_stream(seed, TAG_CHECKS, 2)
    violations = 0
    for cfg, real, theta in _instances(n, seed):
        H = assemble_effective(real, theta, cfg.alpha)
        for snr_db in (-10.0, 0.0, 10.0, 20.0):
            s2 = SystemConfig.sigma2_from_snr_db(snr_db)
            best = sinr("mmse", H, s2)
            others = [mf_weights(H)] + [
                (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))) for _ in range(20)]
            for W in others:
                violations += np.any(best < post_sinr(W, H, s2) * (1 - 1e-9))
            joint, mmse, mf = (sum_rate(k, H, s2) for k in ("joint", "mmse", "mf"))
            violations += (joint < mmse - 1e-9) or (mmse < mf - 1e-9)
    return Check("receivers", violations == 0,
                 f"MMSE SINR optimality and JOINT>=MMSE>=MF, {violations} violations")


def _check_orthogonal_collapse(n, seed):
    rng = rng_stream(seed, TAG_CHECKS, 3)
    worst = 0.0
    for _ in range(n):
        Q = np.linalg.qr(rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4)))[0]
        H = Q * rng.uniform(0.5, 3.0, size=4)
        a, b = sinr("mmse", H, 0.1), sinr("mf", H, 0.1)
        worst = max(worst, np.max(np.abs(a - b) / b))
    return Check("orthogonal_collapse", worst < 1e-6, f"worst MMSE/MF SINR rel diff {worst:.2e}")


def _check_full_rank_iff_orthogonal(n, seed):
    rng = rng_stream(seed, TAG_CHECKS, 4)
    for _ in range(n):
        Q = np.linalg.qr(rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4)))[0]
        cases = [(2.0 * Q, True), (Q * np.array([1.0, 2.0, 3.0, 4.0]), False)]
        X = rng.normal(size=(6, 4)) + 1j * rng.normal(size=(6, 4))
        cases.append((X / np.linalg.norm(X, axis=0), False))
        for H, expect in cases:
            full = abs(effective_rank(svd_thin(H).lam) - 4.0) < 1e-8
            ortho_equal = (gram_offdiag_ratio(H) < 1e-8
                           and np.ptp(np.linalg.norm(H, axis=0)) < 1e-8)
            if full != expect or ortho_equal != expect:
                return Check("full_rank_iff_orthogonal", False, "mismatch on constructed matrix")
    return Check("full_rank_iff_orthogonal", True, f"{3 * n} constructed matrices")


def run_checks(n_instances=100, seed=0, corrupt=False):
    """Run every check; returns a list of :class:`Check`."""
    report = gradient_selftest(None, n_instances, seed, corrupt=corrupt)
    checks = [Check(f"gradient[{name}]", report.worst_error[name] < report.tolerance,
                    f"worst abs error {report.worst_error[name]:.3e} over "
                    f"{report.checked[name]} instances (tol {report.tolerance:g})")
              for name in ("er", "msv")]
    small = max(5, n_instances // 10)
    checks += [
        _check_svd(n_instances, seed),
        _check_effective_rank(n_instances, seed),
        _check_channel_partial(small, seed),
        _check_power(seed),
        _check_periodicity(n_instances, seed),
        _check_linear_in_direct(n_instances, seed),
        _check_receivers(small, seed),
        _check_orthogonal_collapse(n_instances, seed),
        _check_full_rank_iff_orthogonal(small, seed),
    ]
    return checks
