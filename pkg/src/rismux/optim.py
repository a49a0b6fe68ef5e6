"""Unconstrained maximization of phase-shift objectives.

Both solvers minimize the negated objective internally and share a
bracketing/zoom line search that enforces the strong Wolfe conditions and
interpolates with cubics fitted to (value, slope) pairs at the bracket ends.
"""

import enum
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dsymv, dsyr2

from .channel import random_phases, rng_stream
from .errors import LineSearchError, StructuralError
from .spectral import effective_rank_value_and_grad, min_singular_value_and_grad

__all__ = [
    "Criterion",
    "Termination",
    "OptimizerOptions",
    "OptimizationReport",
    "line_search_cubic",
    "bfgs_maximize",
    "steepest_ascent",
    "optimize_phases",
    "criterion_value_and_grad",
]

# stream tag for initial phases drawn by optimize_phases
TAG_THETA0 = 10


class Criterion(str, enum.Enum):
    ER_C = "er"
    MSV_C = "msv"


class Termination(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    LINE_SEARCH_FAILURE = "line_search_failure"


@dataclass(frozen=True)
class OptimizerOptions:
    """Stopping rules and line-search constants.

    ``debug`` turns on a finite-difference check of the gradient at the
    starting point and asserts the Wolfe inequalities at every accepted step.
    """

    max_iterations: int = 500
    grad_tolerance: float = 1e-6
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_steps: int = 25
    restarts: int = 0
    debug: bool = False

    def __post_init__(self):
        if not (0 < self.wolfe_c1 < self.wolfe_c2 < 1):
            raise StructuralError(
                f"need 0 < c1 < c2 < 1, got c1={self.wolfe_c1}, c2={self.wolfe_c2}")
        if self.max_iterations < 1 or self.max_line_search_steps < 1:
            raise StructuralError("iteration limits must be positive")
        if self.restarts < 0:
            raise StructuralError("restarts must be nonnegative")
        if not self.grad_tolerance > 0:
            raise StructuralError("grad_tolerance must be positive")

    def to_dict(self):
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass
class OptimizationReport:
    theta_star: np.ndarray
    objective_trace: np.ndarray
    final_gradient_norm: float
    iterations: int
    termination: Termination
    wall_time: float = 0.0
    theta0: np.ndarray = field(default=None, repr=False)

    @property
    def objective_initial(self):
        return float(self.objective_trace[0])

    @property
    def objective_final(self):
        return float(self.objective_trace[-1])


def _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
    # minimizer of the cubic matching value and slope at both ends
    d1 = d_lo + d_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
    disc = d1 * d1 - d_lo * d_hi
    if disc < 0:
        return None
    d2 = np.sign(a_hi - a_lo) * np.sqrt(disc)
    denom = d_hi - d_lo + 2.0 * d2
    if denom == 0:
        return None
    return a_hi - (a_hi - a_lo) * (d_hi + d2 - d1) / denom


def line_search_cubic(phi, dphi, initial_step=1.0, opts=None, phi0=None, dphi0=None):
    """Step length satisfying the strong Wolfe conditions for minimizing ``phi``.

    Parameters
    ----------
    phi, dphi : callable
        Value and derivative of the objective along the search direction.
    initial_step : float
        First trial step; doubled while the bracket is not found.
    opts : OptimizerOptions, optional
    phi0, dphi0 : float, optional
        Known values at zero, to save evaluations.

    Returns
    -------
    float
        Accepted step.

    Raises
    ------
    LineSearchError
        No acceptable step within ``opts.max_line_search_steps`` trials in
        either the bracketing or the zoom phase.
    """
    opts = opts or OptimizerOptions()
    c1, c2 = opts.wolfe_c1, opts.wolfe_c2
    f0 = phi(0.0) if phi0 is None else phi0
    d0 = dphi(0.0) if dphi0 is None else dphi0
    if not d0 < 0:
        raise StructuralError(f"not a descent direction: dphi(0) = {d0}")

    def armijo_fails(a, f):
        return f > f0 + c1 * a * d0

    def curvature_holds(d):
        return abs(d) <= -c2 * d0

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
        for _ in range(opts.max_line_search_steps):
            width = a_hi - a_lo
            if abs(width) <= 1e-16 * max(1.0, abs(a_lo)):
                break
            a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi)
            lo, hi = sorted((a_lo, a_hi))
            margin = 0.1 * (hi - lo)
            if a is None or not np.isfinite(a) or not (lo + margin <= a <= hi - margin):
                a = 0.5 * (a_lo + a_hi)
            f = phi(a)
            d = dphi(a)
            if armijo_fails(a, f) or f >= f_lo:
                a_hi, f_hi, d_hi = a, f, d
            else:
                if curvature_holds(d):
                    return a
                if d * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, d
        raise LineSearchError("zoom phase did not find a strong Wolfe step")

    a_prev, f_prev, d_prev = 0.0, f0, d0
    a = float(initial_step)
    for i in range(opts.max_line_search_steps):
        f = phi(a)
        if not np.isfinite(f):
            # shrink back toward the last good step
            a = 0.5 * (a_prev + a)
            continue
        if armijo_fails(a, f) or (i > 0 and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f, dphi(a))
        d = dphi(a)
        if curvature_holds(d):
            return a
        if d >= 0:
            return zoom(a, f, d, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f, d
        a = 2.0 * a
    raise LineSearchError(
        f"no bracket found within {opts.max_line_search_steps} steps")


def _fd_gradient(fun, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def _maximize(objective, gradient, theta0, opts, direction_rule):
    opts = opts or OptimizerOptions()
    start = time.perf_counter()
    x = np.array(theta0, dtype=float)
    f = -float(objective(x))
    g = -np.asarray(gradient(x), dtype=float)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise StructuralError("objective or gradient is not finite at theta0")
    if g.shape != x.shape:
        raise StructuralError(f"gradient shape {g.shape} does not match theta {x.shape}")
    if opts.debug:
        fd = -_fd_gradient(objective, x)
        err = np.max(np.abs(fd - g))
        if err > 1e-4 * max(1.0, np.max(np.abs(g))):
            raise AssertionError(f"gradient disagrees with finite differences (max err {err:.3e})")

    trace = [-f]
    termination = Termination.MAX_ITERATIONS
    iterations = 0
    state = direction_rule.start(x.size)

    for _ in range(opts.max_iterations):
        if np.max(np.abs(g)) < opts.grad_tolerance:
            termination = Termination.CONVERGED
            break
        p, step0 = direction_rule.direction(state, g)
        slope = float(g @ p)
        if not slope < 0:
            # lost positive-definiteness through rounding; fall back to the gradient
            state = direction_rule.start(x.size)
            p, step0 = -g, 1.0
            slope = float(g @ p)
        assert slope < 0, "search direction is not an ascent direction"

        cache = {}

        def evaluate(a):
            if a not in cache:
                xa = x + a * p
                cache[a] = (-float(objective(xa)), -np.asarray(gradient(xa), dtype=float))
            return cache[a]

        try:
            a = line_search_cubic(lambda t: evaluate(t)[0], lambda t: float(evaluate(t)[1] @ p),
                                  step0, opts, phi0=f, dphi0=slope)
        except LineSearchError:
            termination = Termination.LINE_SEARCH_FAILURE
            break

        f_new, g_new = evaluate(a)
        if opts.debug:
            assert f_new <= f + opts.wolfe_c1 * a * slope, "sufficient decrease violated"
            assert abs(g_new @ p) <= opts.wolfe_c2 * abs(slope), "curvature condition violated"
        x_new = x + a * p
        state = direction_rule.update(state, x_new - x, g_new - g, a, slope)
        x, f, g = x_new, f_new, g_new
        trace.append(-f)
        iterations += 1
    else:
        if np.max(np.abs(g)) < opts.grad_tolerance:
            termination = Termination.CONVERGED

    return OptimizationReport(
        theta_star=x,
        objective_trace=np.asarray(trace),
        final_gradient_norm=float(np.max(np.abs(g))),
        iterations=iterations,
        termination=termination,
        wall_time=time.perf_counter() - start,
        theta0=np.array(theta0, dtype=float),
    )


class _BfgsRule:
    """Inverse-Hessian BFGS directions with the initial y.s/y.y rescaling.

    Only the lower triangle of the symmetric inverse Hessian is maintained,
    through in-place BLAS rank-2 updates.
    """

    @staticmethod
    def start(n):
        return {"H": np.asfortranarray(np.eye(n)), "updated": False}

    @staticmethod
    def direction(state, g):
        return -dsymv(1.0, state["H"], g, lower=1), 1.0

    @staticmethod
    def update(state, s, y, step, slope):
        sy = float(s @ y)
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            return state
        H = state["H"]
        if not state["updated"]:
            H = np.asfortranarray((sy / float(y @ y)) * np.eye(s.size))
        Hy = dsymv(1.0, H, y, lower=1)
        # H + c s s^T - (Hy s^T + s Hy^T) / sy  ==  H + u s^T + s u^T
        u = (0.5 * (sy + y @ Hy) / sy**2) * s - Hy / sy
        H = dsyr2(1.0, u, s, a=H, lower=1, overwrite_a=1)
        return {"H": H, "updated": True}


class _SteepestRule:
    """Gradient direction; the first trial step reuses the last decrease."""

    @staticmethod
    def start(n):
        return {"last": None}

    @staticmethod
    def direction(state, g):
        slope = -float(g @ g)
        step0 = 1.0
        if state["last"] is not None:
            prev_step, prev_slope = state["last"]
            step0 = prev_step * prev_slope / slope
        return -g, step0

    @staticmethod
    def update(state, s, y, step, slope):
        return {"last": (step, slope)}


def bfgs_maximize(objective, gradient, theta0, opts=None):
    """Maximize ``objective`` with BFGS and a strong Wolfe cubic line search.

    The objective trace is nondecreasing. Curvature pairs with
    ``s.y <= 1e-12 |s||y|`` are skipped. On line-search failure the best
    iterate so far is returned with ``termination = line_search_failure``.
    """
    return _maximize(objective, gradient, theta0, opts, _BfgsRule)


def steepest_ascent(objective, gradient, theta0, opts=None):
    """Maximize ``objective`` along the gradient, same line search as BFGS."""
    return _maximize(objective, gradient, theta0, opts, _SteepestRule)


_VALUE_AND_GRAD = {
    Criterion.ER_C: effective_rank_value_and_grad,
    Criterion.MSV_C: min_singular_value_and_grad,
}


def criterion_value_and_grad(criterion, real, alpha):
    """Memoized ``(objective, gradient)`` pair for a criterion.

    Both callables share one SVD per distinct ``theta``.
    """
    fn = _VALUE_AND_GRAD[Criterion(criterion)]
    memo = {"key": None, "value": None}

    def value_and_grad(theta):
        key = np.asarray(theta, dtype=float).tobytes()
        if memo["key"] != key:
            memo["key"] = key
            memo["value"] = fn(real, theta, alpha)
        return memo["value"]

    return (lambda theta: value_and_grad(theta)[0],
            lambda theta: value_and_grad(theta)[1])


def optimize_phases(criterion, real, config, opts=None, rng=None, theta0=None,
                    method="bfgs"):
    """Optimize the RIS phases of one realization for ``criterion``.

    Parameters
    ----------
    criterion : Criterion or str
        ``"er"`` (effective rank) or ``"msv"`` (minimum singular value).
    real : ChannelRealization
    config : SystemConfig
        Supplies ``alpha`` and, when ``rng`` is None, the seed.
    opts : OptimizerOptions, optional
    rng : numpy.random.Generator, optional
        Source of the uniform starting phases.
    theta0 : array_like, optional
        Explicit first starting point; restarts still draw from ``rng``.
    method : {"bfgs", "steepest"}

    Returns
    -------
    OptimizationReport
        The best-objective report over ``1 + opts.restarts`` starts.
    """
    opts = opts or OptimizerOptions()
    if real.L != config.L or real.M != config.M or real.K != config.K:
        raise StructuralError("realization does not match config dimensions")
    solver = {"bfgs": bfgs_maximize, "steepest": steepest_ascent}[method]
    if rng is None:
        rng = rng_stream(config.seed, TAG_THETA0)
    objective, gradient = criterion_value_and_grad(criterion, real, config.alpha)
    best = None
    for start in range(1 + opts.restarts):
        if start == 0 and theta0 is not None:
            x0 = np.asarray(theta0, dtype=float)
        else:
            x0 = random_phases(rng, config.L)
        report = solver(objective, gradient, x0, opts)
        if best is None or report.objective_final > best.objective_final:
            best = report
    return best
