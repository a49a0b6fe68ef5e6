"""Seeded Monte-Carlo trials and parameter sweeps.

Seeding
-------
Every random quantity is drawn from a stream keyed by integers, never from
shared generator state:

* channels ``D, F, G``: ``(point seed, trial, matrix tag)``, identical for all
  criteria so that the baselines are paired with the optimized trials;
* starting or random phases: ``(point seed, trial, phase tag, criterion tag)``.

The point seed is derived from ``(sweep seed, axis index)`` for the ``L`` and
``alpha`` axes. Along the SNR axis the channel and the optimized phases do not
depend on the SNR, so each trial is solved once and evaluated at every SNR.
"""

import concurrent.futures
import enum
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import (SystemConfig, assemble_effective, random_phases, rng_stream,
                      sample_channels)
from .errors import StructuralError
from .optim import Criterion, OptimizerOptions, optimize_phases
from .receivers import ReceiverKind, sinr, sum_rate
from .spectral import (effective_rank, effective_rank_grad, gram_offdiag_ratio,
                       min_singular_grad, svd_thin)

__all__ = [
    "TrialCriterion",
    "TrialRecord",
    "SweepSpec",
    "SweepRow",
    "SweepTable",
    "SweepAborted",
    "SelftestReport",
    "run_trial",
    "run_trial_snrs",
    "run_sweep",
    "point_seed",
    "phase_rng",
    "gradient_selftest",
]

TAG_PHASES = 20
TAG_SELFTEST = 30
AXES = ("snr_db", "L", "alpha")


class TrialCriterion(str, enum.Enum):
    ER_C = "er"
    MSV_C = "msv"
    RANDOM_PHASE = "random"
    NO_RIS = "none"

    @property
    def tag(self):
        return {"er": 1, "msv": 2, "random": 3, "none": 4}[self.value]


@dataclass
class TrialRecord:
    trial_index: int
    criterion: str
    snr_db: float
    L: int
    alpha: float
    rates: dict
    sinr: dict
    effective_rank_final: float
    lambda_min_final: float
    gram_offdiag: float
    optimizer_iterations: int = 0
    termination: str = ""
    lambda_min_initial: float = float("nan")
    effective_rank_initial: float = float("nan")
    axis_value: float = float("nan")


def phase_rng(config, trial_index, criterion):
    """Stream for the starting (or random) phases of one trial."""
    return rng_stream(config.seed, trial_index, TAG_PHASES, TrialCriterion(criterion).tag)


def _solve(config, criterion, opts, trial_index):
    """Channel and phases for one trial; independent of the SNR."""
    criterion = TrialCriterion(criterion)
    real = sample_channels(config, trial_index)
    info = {"optimizer_iterations": 0, "termination": ""}
    if criterion is TrialCriterion.NO_RIS:
        return real.D.copy(), info
    rng = phase_rng(config, trial_index, criterion)
    if criterion is TrialCriterion.RANDOM_PHASE:
        return assemble_effective(real, random_phases(rng, config.L), config.alpha), info
    report = optimize_phases(Criterion(criterion.value), real, config, opts, rng=rng)
    H0 = assemble_effective(real, report.theta0, config.alpha)
    lam0 = svd_thin(H0).lam
    info.update(optimizer_iterations=report.iterations,
                termination=report.termination.value,
                lambda_min_initial=float(lam0[-1]),
                effective_rank_initial=effective_rank(lam0))
    return assemble_effective(real, report.theta_star, config.alpha), info


def _record(H, info, config, criterion, receivers, snr_db, trial_index):
    sigma2 = SystemConfig.sigma2_from_snr_db(snr_db)
    lam = svd_thin(H).lam
    rates, sinrs = {}, {}
    for kind in receivers:
        kind = ReceiverKind(kind)
        rates[kind.value] = sum_rate(kind, H, sigma2)
        if kind is not ReceiverKind.JOINT:
            sinrs[kind.value] = sinr(kind, H, sigma2).tolist()
    return TrialRecord(
        trial_index=int(trial_index),
        criterion=TrialCriterion(criterion).value,
        snr_db=float(snr_db),
        L=config.L,
        alpha=config.alpha,
        rates=rates,
        sinr=sinrs,
        effective_rank_final=effective_rank(lam),
        lambda_min_final=float(lam[-1]),
        gram_offdiag=gram_offdiag_ratio(H),
        **info,
    )


def run_trial_snrs(config, criterion, receivers, opts, trial_index, snr_values):
    """One trial evaluated at several SNRs (the solve is shared)."""
    H, info = _solve(config, criterion, opts, trial_index)
    return [_record(H, info, config, criterion, receivers, snr, trial_index)
            for snr in snr_values]


def run_trial(config, criterion, receivers=("mmse", "mf", "joint"), opts=None, trial_index=0):
    """Sample, optimize (per criterion) and evaluate one trial at ``config.sigma2``.

    Optimizer trouble is reported in ``termination``; the record is emitted
    regardless.
    """
    return run_trial_snrs(config, criterion, receivers, opts, trial_index,
                          [config.snr_db])[0]


def point_seed(seed, axis_index):
    """64-bit seed for one sweep point."""
    state = np.random.SeedSequence(int(seed), spawn_key=(int(axis_index),)).generate_state(2)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass
class SweepSpec:
    """Everything that determines a :class:`SweepTable`.

    For the ``L`` and ``alpha`` axes the SNR is fixed by ``base.sigma2``.
    """

    base: SystemConfig
    axis: str
    values: list
    criteria: list = field(default_factory=lambda: ["er", "msv", "random", "none"])
    receivers: list = field(default_factory=lambda: ["mmse", "mf", "joint"])
    trials: int = 200
    seed: int = 0
    opts: OptimizerOptions = field(default_factory=OptimizerOptions)

    def __post_init__(self):
        if self.axis not in AXES:
            raise StructuralError(f"axis must be one of {AXES}, got {self.axis!r}")
        if len(self.values) == 0:
            raise StructuralError("axis values must be nonempty")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise StructuralError("axis values must be strictly increasing")
        if self.trials < 1:
            raise StructuralError("trials must be positive")
        self.criteria = [TrialCriterion(c).value for c in self.criteria]
        self.receivers = [ReceiverKind(r).value for r in self.receivers]
        if self.axis == "L":
            self.values = [int(v) for v in self.values]
        else:
            self.values = [float(v) for v in self.values]
        # validate every point's configuration up front
        for i in range(len(self.values)):
            self.point_config(i)

    def point_config(self, index):
        value = self.values[index]
        if self.axis == "snr_db":
            return self.base.replace(seed=point_seed(self.seed, 0),
                                     sigma2=SystemConfig.sigma2_from_snr_db(value))
        return self.base.replace(seed=point_seed(self.seed, index), **{self.axis: value})

    def to_dict(self):
        return {
            "base": asdict(self.base),
            "axis": self.axis,
            "values": list(self.values),
            "criteria": list(self.criteria),
            "receivers": list(self.receivers),
            "trials": self.trials,
            "seed": self.seed,
            "opts": self.opts.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["base"] = SystemConfig(**data["base"])
        data["opts"] = OptimizerOptions(**data.get("opts", {}))
        return cls(**data)


@dataclass(frozen=True)
class SweepRow:
    axis: str
    axis_value: float
    criterion: str
    receiver: str
    mean_rate: float
    stderr: float
    trials: int


CSV_HEADER = "axis,axis_value,criterion,receiver,mean_rate_bpcu,stderr,trials"


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class SweepTable:
    rows: list
    records: list = field(default_factory=list, repr=False)
    complete: bool = True

    def get(self, axis_value, criterion, receiver):
        for row in self.rows:
            if (row.axis_value == axis_value and row.criterion == criterion
                    and row.receiver == receiver):
                return row
        raise KeyError((axis_value, criterion, receiver))

    def records_for(self, axis_value=None, criterion=None):
        return [r for r in self.records
                if (criterion is None or r.criterion == criterion)
                and (axis_value is None or r.axis_value == axis_value)]

    def to_csv(self):
        lines = [CSV_HEADER]
        for row in self.rows:
            lines.append(",".join([row.axis, _fmt(row.axis_value), row.criterion, row.receiver,
                                   _fmt(row.mean_rate), _fmt(row.stderr), str(row.trials)]))
        return "\n".join(lines) + "\n"


class SweepAborted(RuntimeError):
    """A trial raised; ``partial`` holds the cells completed before it."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def _aggregate(spec, results, cells):
    rows, records = [], []
    for point, crit in cells:
        value = spec.values[point]
        recs = [results[(point, crit, t)] for t in range(spec.trials)]
        for rec in recs:
            rec.axis_value = value
        records.extend(recs)
        for rx in spec.receivers:
            rates = np.array([r.rates[rx] for r in recs])
            mean = float(np.mean(rates))
            se = float(np.std(rates, ddof=1) / math.sqrt(rates.size)) if rates.size > 1 else 0.0
            rows.append(SweepRow(spec.axis, value, crit, rx, mean, se, rates.size))
    return rows, records


def _unit(args):
    spec, point, crit, trial = args
    if spec.axis == "snr_db":
        recs = run_trial_snrs(spec.point_config(0), crit, spec.receivers, spec.opts,
                              trial, spec.values)
        return [((p, crit, trial), rec) for p, rec in enumerate(recs)]
    config = spec.point_config(point)
    rec = run_trial_snrs(config, crit, spec.receivers, spec.opts, trial, [config.snr_db])[0]
    return [((point, crit, trial), rec)]


def run_sweep(spec, workers=1, on_event=None):
    """Run every (axis value, criterion, trial) of ``spec`` and aggregate.

    Parameters
    ----------
    spec : SweepSpec
    workers : int
        Worker processes; results do not depend on it.
    on_event : callable, optional
        Receives ``{"event": "trial", ...}`` and ``{"event": "point", ...}``
        dicts as work completes, in a fixed order.

    Raises
    ------
    SweepAborted
        Carrying the completed cells when any trial raises.
    """
    if spec.axis == "snr_db":
        units = [(spec, 0, crit, t) for crit in spec.criteria for t in range(spec.trials)]
    else:
        units = [(spec, p, crit, t) for p in range(len(spec.values))
                 for crit in spec.criteria for t in range(spec.trials)]

    results = {}
    failure = None
    executor = None
    if workers > 1:
        executor = concurrent.futures.ProcessPoolExecutor(max_workers=workers)
        outputs = executor.map(_unit, units, chunksize=max(1, len(units) // (8 * workers)))
    else:
        outputs = map(_unit, units)
    try:
        for unit, out in zip(units, outputs):
            for key, rec in out:
                results[key] = rec
            _, point, crit, trial = unit
            if on_event is not None:
                on_event({"event": "trial", "point": point, "criterion": crit, "trial": trial})
                if trial == spec.trials - 1:
                    points = range(len(spec.values)) if spec.axis == "snr_db" else [point]
                    for p in points:
                        on_event({"event": "point", "point": p, "criterion": crit})
    except Exception as exc:  # noqa: BLE001 - re-raised with partial results
        failure = exc
    finally:
        if executor is not None:
            executor.shutdown(cancel_futures=True)

    cells = [(p, c) for p in range(len(spec.values)) for c in spec.criteria
             if all((p, c, t) in results for t in range(spec.trials))]
    rows, records = _aggregate(spec, results, cells)
    table = SweepTable(rows, records, complete=failure is None)
    if failure is not None:
        raise SweepAborted(f"sweep aborted: {failure!r}", table) from failure
    return table


@dataclass
class SelftestReport:
    passed: bool
    worst_error: dict
    checked: dict
    excluded: int
    tolerance: float
    max_abs_gradient: dict

    def lines(self):
        out = []
        for name in ("er", "msv"):
            status = "PASS" if self.worst_error[name] < self.tolerance else "FAIL"
            out.append(f"{status} gradient[{name}]: worst abs error "
                       f"{self.worst_error[name]:.3e} over {self.checked[name]} instances "
                       f"(tol {self.tolerance:g})")
        return out


def _fd(fun, theta, h):
    g = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (fun(theta + e) - fun(theta - e)) / (2 * h)
    return g


def gradient_selftest(config=None, n_instances=100, seed=0, corrupt=False,
                      Ls=(8, 32), alphas=(0.1, 0.5, 0.9), tolerance=1e-6, step=1e-6):
    """Compare analytic gradients with central finite differences.

    With ``config=None`` the instances cycle through ``Ls`` x ``alphas`` at
    M = K = 4; otherwise every instance uses ``config``'s dimensions and
    ``alpha``. MSV instances whose two smallest singular values are closer
    than ``1e-6 * lam_1`` are skipped. ``corrupt`` flips the sign of the
    analytic gradients to demonstrate that the test can fail.
    """
    grid = [(L, a) for L in Ls for a in alphas]
    worst = {"er": 0.0, "msv": 0.0}
    checked = {"er": 0, "msv": 0}
    biggest = {"er": 0.0, "msv": 0.0}
    excluded = 0
    sign = -1.0 if corrupt else 1.0
    for i in range(n_instances):
        if config is None:
            L, alpha = grid[i % len(grid)]
            cfg = SystemConfig(M=4, K=4, L=L, alpha=alpha, seed=seed)
        else:
            cfg = config.replace(seed=seed)
        real = sample_channels(cfg, i)
        theta = random_phases(rng_stream(seed, i, TAG_SELFTEST), cfg.L)
        lam = svd_thin(assemble_effective(real, theta, cfg.alpha)).lam

        def xi(t):
            return effective_rank(svd_thin(assemble_effective(real, t, cfg.alpha)).lam)

        def lam_min(t):
            return svd_thin(assemble_effective(real, t, cfg.alpha)).lam[-1]

        pairs = [("er", effective_rank_grad, xi)]
        if lam.size < 2 or lam[-2] - lam[-1] >= 1e-6 * lam[0]:
            pairs.append(("msv", min_singular_grad, lam_min))
        else:
            excluded += 1
        for name, grad_fn, fun in pairs:
            analytic = sign * grad_fn(real, theta, cfg.alpha)
            err = float(np.max(np.abs(analytic - _fd(fun, theta, step))))
            worst[name] = max(worst[name], err)
            biggest[name] = max(biggest[name], float(np.max(np.abs(analytic))))
            checked[name] += 1
    passed = all(worst[n] < tolerance for n in worst)
    return SelftestReport(passed, worst, checked, excluded, tolerance, biggest)
