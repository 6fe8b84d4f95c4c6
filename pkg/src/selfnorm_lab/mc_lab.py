"""Monte Carlo verification harness.

Replications are processed in fixed blocks of :data:`BLOCK_SIZE`; block
``b`` draws from ``RngStream(seed, b * BLOCK_SIZE)``, i.e. the stream id is
the index of the block's first replication.  Worker count only changes
which thread evaluates a block, so every count and statistic is
bit-identical for any number of workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from . import bpre_infer, stats_core
from .errors import (
    ConfigError,
    DegenerateVarianceError,
    DomainError,
    EnvelopeShapeMismatch,
    UnsupportedModelError,
)
from .gauss import log_phi_tail, phi_quantile, phi_tail
from .models import (
    BpreModel,
    IidModel,
    MdsModel,
    Rademacher,
    _mds_signs,
    envelope_rates,
    env_moments,
    mds_conditional_variance,
    mds_from_signs,
    rademacher_enumeration,
    sample_bpre_batch,
    sample_iid_batch,
)
from .rng import RngStream
from .stats_core import ENVELOPES, EnvelopeParams

BLOCK_SIZE = 2048
STATISTICS = ("W", "T", "W_block", "N", "S", "LNZ")
_BPRE_ONLY = {"N", "S", "LNZ"}


@dataclass(frozen=True)
class EnvelopeSpec:
    shape: str = "thm21"
    rho: float = 1.0
    c: float | None = None
    gamma_n: float | None = None
    delta_n: float | None = None

    def __post_init__(self):
        if self.shape not in ENVELOPES:
            raise ConfigError(f"unknown envelope shape {self.shape!r}", key="shape")


@dataclass(frozen=True)
class ExperimentConfig:
    model: object
    statistic: str = "W"
    n: int = 100
    replications: int = 10_000
    x_grid: tuple = ()
    seed: int = 0
    n0: int = 0
    block_length: int = 1
    min_expected_hits: int = 50
    tail: str = "upper"
    degenerate_policy: str = "skip"
    enumerate: bool = False
    envelope: EnvelopeSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_grid", tuple(float(x) for x in self.x_grid))
        if self.replications < 1:
            raise ConfigError("replications must be >= 1", key="replications")
        if self.n < 1:
            raise ConfigError("n must be >= 1", key="n")
        if self.n0 < 0:
            raise ConfigError("n0 must be >= 0", key="n0")
        if list(self.x_grid) != sorted(self.x_grid):
            raise ConfigError("x_grid must be sorted ascending", key="x_grid")
        if self.statistic not in STATISTICS:
            raise ConfigError(f"unknown statistic {self.statistic!r}", key="statistic")
        is_bpre = isinstance(self.model, BpreModel)
        if self.statistic in _BPRE_ONLY and not is_bpre:
            raise ConfigError(f"statistic {self.statistic} needs a bpre model", key="statistic")
        if is_bpre and self.statistic == "W_block":
            raise ConfigError("block statistic is defined for increment models only", key="statistic")
        if self.statistic == "W_block" and not 1 <= self.block_length <= self.n:
            raise ConfigError("block length must lie in [1, n]", key="block_length")
        if self.statistic in {"T", "N"} and self.n < 2:
            raise ConfigError("studentized statistics need n >= 2", key="n")
        if self.tail not in ("upper", "lower"):
            raise ConfigError("tail must be 'upper' or 'lower'", key="tail")
        if self.degenerate_policy not in ("skip", "error"):
            raise ConfigError("degenerate_policy must be 'skip' or 'error'", key="degenerate_policy")
        if self.enumerate:
            if not isinstance(self.model, Rademacher):
                raise ConfigError("enumeration mode needs the rademacher law", key="enumerate")
            if self.n > 30 or self.replications != 2**self.n:
                raise ConfigError("enumeration mode needs n <= 30 and replications = 2^n", key="enumerate")


@dataclass(frozen=True)
class StatSample:
    """Statistic value per replication (NaN where degenerate)."""

    values: np.ndarray
    degenerate: int

    @property
    def valid(self) -> np.ndarray:
        return self.values[~np.isnan(self.values)]


@dataclass(frozen=True)
class TailPoint:
    x: float
    count: int
    phat: float
    wilson_lo: float
    wilson_hi: float
    ratio: float
    log_ratio: float
    envelope: float


@dataclass
class TailCurve:
    points: list[TailPoint]
    n: int
    replications: int
    statistic: str = "W"
    tail: str = "upper"
    degenerate: int = 0
    excluded: list[float] = field(default_factory=list)
    envelope_params: EnvelopeParams | None = None
    envelope_shape: str = "thm21"


@dataclass(frozen=True)
class KolmogorovDistance:
    d: float
    at: float


@dataclass(frozen=True)
class CoverageReport:
    level: float
    coverage: float
    replications: int
    lo: float
    hi: float
    degenerate: int = 0


@dataclass
class LogRatioCurve:
    points: list[tuple[float, float]]
    excluded: list[float]


@dataclass
class MdpDiagnostic:
    b: float
    target: float
    rows: list[dict]
    excluded: list[dict]


@dataclass
class ExceedanceCurve:
    points: list[tuple[float, int, float]]
    replications: int
    slope: float | None = None
    reference: dict = field(default_factory=dict)


# ------------------------------------------------------------------ utilities


def wilson_interval(count: int, total: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion, widened to contain ``count/total``."""
    if total <= 0:
        return 0.0, 1.0
    z = phi_quantile(1.0 - (1.0 - level) / 2.0)
    p = count / total
    z2n = z * z / total
    denom = 1.0 + z2n
    centre = (p + z2n / 2.0) / denom
    margin = z / denom * math.sqrt(p * (1.0 - p) / total + z * z / (4.0 * total * total))
    lo = max(0.0, min(centre - margin, p))
    hi = min(1.0, max(centre + margin, p))
    return lo, hi


def _blocks(replications: int):
    return [(s, min(BLOCK_SIZE, replications - s)) for s in range(0, replications, BLOCK_SIZE)]


def run_blocks(config: ExperimentConfig, fn: Callable, workers: int = 1) -> list:
    """Apply ``fn(config, start, count)`` to every block, results in block order."""
    blocks = _blocks(config.replications)
    if workers <= 1 or len(blocks) == 1:
        return [fn(config, s, c) for s, c in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda b: fn(config, *b), blocks))


def _horizon(config: ExperimentConfig) -> int:
    return config.n if config.statistic == "LNZ" else config.n0 + config.n


def _increments(config: ExperimentConfig, start: int, count: int) -> np.ndarray:
    model = config.model
    if config.enumerate:
        return rademacher_enumeration(config.n, start, count)
    rng = RngStream(config.seed, start)
    if isinstance(model, IidModel):
        return sample_iid_batch(model, config.n, count, rng)
    if isinstance(model, MdsModel):
        return mds_from_signs(model, _mds_signs(model, config.n, count, rng))
    raise UnsupportedModelError(f"no increment sampler for {type(model).__name__}")


def _bpre_paths(config: ExperimentConfig, start: int, count: int):
    return sample_bpre_batch(config.model, _horizon(config), count, RngStream(config.seed, start))


def _block_statistic(config: ExperimentConfig, start: int, count: int) -> np.ndarray:
    stat = config.statistic
    if isinstance(config.model, BpreModel):
        paths = _bpre_paths(config, start, count)
        mom = env_moments(config.model)
        if stat == "LNZ":
            if not mom.nu2 > 0.0:
                raise DegenerateVarianceError("nu^2 = 0: ln Z_n is not random")
            n = config.n
            return (np.log(paths.z[:, n]) - n * mom.mu) / (math.sqrt(n) * math.sqrt(mom.nu2))
        ratios = bpre_infer.ratios_batch(paths.z, config.n0, config.n)
        if stat == "N":
            return bpre_infer.n_statistic_batch(ratios, mom.m)
        if stat == "S":
            return bpre_infer.s_statistic_batch(ratios, mom.m, math.sqrt(mom.sigma2))
        if stat == "T":
            return stats_core.student_t_batch(ratios - mom.m)
        return stats_core.self_normalized_batch(ratios - mom.m)[2]
    x = _increments(config, start, count)
    if stat == "W":
        return stats_core.self_normalized_batch(x)[2]
    if stat == "T":
        return stats_core.student_t_batch(x)
    return stats_core.block_self_normalized_batch(x, config.block_length)[2]


def simulate_statistic(config: ExperimentConfig, workers: int = 1) -> StatSample:
    """Evaluate the configured statistic once per replication."""
    values = np.concatenate(run_blocks(config, _block_statistic, workers))
    degenerate = int(np.count_nonzero(np.isnan(values)))
    if degenerate and config.degenerate_policy == "error":
        raise DegenerateVarianceError(
            f"{degenerate} of {config.replications} replications had a degenerate statistic"
        )
    return StatSample(values, degenerate)


def _tail_counts(sample: StatSample, thresholds: Sequence[float], tail: str) -> list[int]:
    v = np.sort(sample.valid)
    if tail == "upper":
        return [int(v.size - np.searchsorted(v, x, side="left")) for x in thresholds]
    return [int(np.searchsorted(v, -x, side="right")) for x in thresholds]


def envelope_params_for(config: ExperimentConfig, n: int | None = None) -> EnvelopeParams | None:
    env = config.envelope
    if env is None or config.statistic == "LNZ":
        return None
    n = config.n if n is None else n
    gamma, delta = envelope_rates(config.model, n, env.rho, config.statistic, config.block_length)
    return EnvelopeParams(
        env.rho,
        env.gamma_n if env.gamma_n is not None else gamma,
        env.delta_n if env.delta_n is not None else delta,
        1.0 if env.c is None else env.c,
    )


# --------------------------------------------------------------- tail curves


def estimate_tail_curve(
    config: ExperimentConfig, workers: int = 1, sample: StatSample | None = None
) -> TailCurve:
    """Hit counts of ``{stat >= x}`` (or ``{stat <= -x}``) on the grid, with
    Wilson bounds and ratios to the normal tail.

    Grid points where ``R (1 - Phi(x))`` falls below ``min_expected_hits``
    are dropped and listed in ``excluded``.
    """
    if sample is None:
        sample = simulate_statistic(config, workers)
    total = sample.values.size - sample.degenerate
    keep, excluded = [], []
    for x in config.x_grid:
        if config.replications * phi_tail(x).value < config.min_expected_hits:
            excluded.append(x)
        else:
            keep.append(x)
    counts = _tail_counts(sample, keep, config.tail)
    params = envelope_params_for(config)
    shape = config.envelope.shape if config.envelope else "thm21"
    points = []
    for x, count in zip(keep, counts):
        tp = phi_tail(x)
        phat = count / total if total else 0.0
        lo, hi = wilson_interval(count, total)
        log_ratio = math.log(phat) - tp.log_value if count else -math.inf
        if params is not None and x >= 0:
            env = ENVELOPES[shape](x, params)
        else:
            env = math.nan
        points.append(TailPoint(x, count, phat, lo, hi, phat / tp.value, log_ratio, env))
    return TailCurve(
        points,
        config.n,
        total,
        config.statistic,
        config.tail,
        sample.degenerate,
        excluded,
        params,
        shape,
    )


def log_ratio_curve(curve: TailCurve) -> LogRatioCurve:
    """``ln phat / ln(1 - Phi(x))`` per grid point; zero counts are excluded."""
    points, excluded = [], []
    for p in curve.points:
        if p.count == 0:
            excluded.append(p.x)
            continue
        points.append((p.x, math.log(p.phat) / log_phi_tail(p.x)))
    return LogRatioCurve(points, excluded)


def fit_envelope_constant(
    curve: TailCurve, shape: str | Callable | None = None, params: EnvelopeParams | None = None
) -> tuple[float, float]:
    """Smallest ``c`` with ``|log_ratio| <= c * shape(x)`` on every usable point.

    Returns ``(c_fit, max_violation)``; the violation is zero at ``c_fit``
    and is kept for symmetry with :func:`check_envelope_uniformity`.
    """
    shape_fn = _shape_fn(curve, shape, params)
    usable = [p for p in curve.points if p.count > 0 and p.x >= 0 and math.isfinite(p.log_ratio)]
    if len(usable) < 3:
        raise DomainError(f"need at least 3 usable grid points, got {len(usable)}")
    c_fit = 0.0
    for p in usable:
        s = shape_fn(p.x)
        if s == 0.0:
            if p.log_ratio != 0.0:
                raise EnvelopeShapeMismatch(f"shape vanishes at x={p.x} but log-ratio is {p.log_ratio}")
            continue
        c_fit = max(c_fit, abs(p.log_ratio) / s)
    violation = max(max(abs(p.log_ratio) - c_fit * shape_fn(p.x), 0.0) for p in usable)
    return c_fit, violation


def _shape_fn(curve, shape, params):
    if callable(shape):
        return shape
    params = params or curve.envelope_params
    if params is None:
        raise DomainError("tail curve carries no envelope parameters")
    unit = replace(params, c=1.0)
    fn = ENVELOPES[shape or curve.envelope_shape]
    return lambda x: fn(x, unit)


def check_envelope_uniformity(c_fit: float, curves: Sequence[TailCurve], shape: str | None = None):
    """Worst ``|log_ratio| / (c_fit * shape_n(x))`` on each curve, keyed by ``n``.

    A value at most ``1 + slack`` means the constant fitted at one ``n``
    still bounds the curve at another.
    """
    out = {}
    for curve in curves:
        fn = _shape_fn(curve, shape, None)
        worst = 0.0
        for p in curve.points:
            if p.count == 0 or p.x < 0:
                continue
            bound = c_fit * fn(p.x)
            if bound > 0:
                worst = max(worst, abs(p.log_ratio) / bound)
            elif p.log_ratio != 0:
                worst = math.inf
        out[curve.n] = worst
    return out


# ------------------------------------------------------------------------- MDP


def mdp_rates(a_values: Sequence[float], log_phat: Sequence[float]) -> list[tuple[float, float]]:
    """``(a, ln phat / a^2)``; ``a = 0`` is dropped."""
    return [(a, lp / (a * a)) for a, lp in zip(a_values, log_phat) if a != 0]


def mdp_diagnostic(
    config: ExperimentConfig, a_values: Sequence[float], b: float, workers: int = 1,
    sample: StatSample | None = None,
) -> MdpDiagnostic:
    """Empirical ``(1/a^2) ln P(stat >= a b)`` to compare with ``-b^2/2``."""
    if sample is None:
        sample = simulate_statistic(config, workers)
    total = sample.values.size - sample.degenerate
    rows, excluded = [], []
    for a in a_values:
        thr = a * b
        if a == 0:
            excluded.append({"a": a, "reason": "a = 0"})
            continue
        if abs(thr) > 40 or config.replications * phi_tail(thr).value < config.min_expected_hits:
            excluded.append({"a": a, "reason": "below min_expected_hits"})
            continue
        (count,) = _tail_counts(sample, [thr], "upper")
        if count == 0:
            excluded.append({"a": a, "reason": "zero count"})
            continue
        phat = count / total
        ((_, rate),) = mdp_rates([a], [math.log(phat)])
        rows.append({"a": a, "b": b, "threshold": thr, "count": count, "phat": phat,
                     "rate": rate, "target": -b * b / 2.0})
    return MdpDiagnostic(b, -b * b / 2.0, rows, excluded)


# -------------------------------------------------------------- Berry-Esseen


def ks_distance(values) -> KolmogorovDistance:
    """One-sample Kolmogorov distance of the empirical law of ``values`` to Phi."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise DomainError("empty sample")
    r = v.size
    cdf = ndtr(v)
    upper = np.arange(1, r + 1) / r - cdf
    lower = cdf - np.arange(0, r) / r
    iu, il = int(np.argmax(upper)), int(np.argmax(lower))
    if upper[iu] >= lower[il]:
        return KolmogorovDistance(float(upper[iu]), float(v[iu]))
    return KolmogorovDistance(float(lower[il]), float(v[il]))


def kolmogorov_distance(config: ExperimentConfig, workers: int = 1) -> KolmogorovDistance:
    if config.replications < 100:
        raise DomainError("Kolmogorov distance needs at least 100 replications")
    return ks_distance(simulate_statistic(config, workers).valid)


# ------------------------------------------------------------ condition probes


def _block_a1(config: ExperimentConfig, start: int, count: int) -> np.ndarray:
    model = config.model
    if isinstance(model, MdsModel):
        eps = _mds_signs(model, config.n, count, RngStream(config.seed, start))
        return mds_conditional_variance(model, eps)
    if isinstance(model, BpreModel):
        paths = _bpre_paths(config, start, count)
        z = paths.z[:, config.n0 : config.n0 + config.n]
        return np.sum(1.0 / z, axis=1)
    raise UnsupportedModelError(type(model).__name__)


def _decay_slope(points) -> float | None:
    usable = [(x, math.log(p)) for x, c, p in points if c > 0 and x > 0]
    if len(usable) < 3:
        return None
    xs, ys = np.array(usable).T
    return float(np.polyfit(xs, ys, 1)[0])


def probe_condition_a1(config: ExperimentConfig, workers: int = 1) -> ExceedanceCurve:
    """Exceedance ``P(|<S>_n / B_n^2 - 1| >= x)`` of the conditional variance.

    i.i.d.: ``<S>_n = n Var X = B_n^2`` exactly.  MDS: ``<S>_n`` from the sign
    path, ``B_n^2 = n (1 + beta^2)``.  BPRE: ``<S>_n = n sigma^2 + tau^2 H``
    with ``H`` the harmonic sum of the window; ``B_n^2`` uses the empirical
    median of ``H`` and is reported in ``reference``.
    """
    model = config.model
    r = config.replications
    if isinstance(model, IidModel):
        bracket = np.full(r, config.n * model.variance)
        b2 = config.n * model.variance
        reference = {"B_n^2": b2, "rule": "n Var X"}
    elif isinstance(model, MdsModel):
        bracket = np.concatenate(run_blocks(config, _block_a1, workers))
        b2 = config.n * model.variance
        reference = {"B_n^2": b2, "rule": "n (1 + beta^2)"}
    elif isinstance(model, BpreModel):
        mom = env_moments(model)
        harmonic = np.concatenate(run_blocks(config, _block_a1, workers))
        h_ref = float(np.median(harmonic))
        bracket = config.n * mom.sigma2 + mom.tau2 * harmonic
        b2 = config.n * mom.sigma2 + mom.tau2 * h_ref
        reference = {"B_n^2": b2, "rule": "n sigma^2 + tau^2 median(H)", "median_harmonic": h_ref}
    else:
        raise UnsupportedModelError(f"no conditional-variance oracle for {type(model).__name__}")
    dev = np.abs(bracket / b2 - 1.0)
    points = []
    for x in config.x_grid:
        c = int(np.count_nonzero(dev >= x))
        points.append((x, c, c / r))
    return ExceedanceCurve(points, r, _decay_slope(points), reference)


def ln_z_tail_probe(config: ExperimentConfig, workers: int = 1) -> ExceedanceCurve:
    """Two-sided exceedance of ``(ln Z_n - n mu)/(sqrt(n) nu)``."""
    if not isinstance(config.model, BpreModel):
        raise UnsupportedModelError("ln Z_n probe needs a bpre model")
    if not env_moments(config.model).nu2 > 0:
        raise DegenerateVarianceError("nu^2 = 0: ln Z_n is not random")
    sample = simulate_statistic(replace(config, statistic="LNZ"), workers)
    v = np.abs(sample.values)
    r = v.size
    points = []
    for x in config.x_grid:
        c = int(np.count_nonzero(v >= x))
        points.append((x, c, c / r))
    return ExceedanceCurve(points, r, _decay_slope(points))


# ------------------------------------------------------------- BPRE inference


def _block_ci(config: ExperimentConfig, start: int, count: int, level: float) -> np.ndarray:
    paths = _bpre_paths(config, start, count)
    ratios = bpre_infer.ratios_batch(paths.z, config.n0, config.n)
    lower, upper = bpre_infer.confidence_bounds_batch(ratios, level)
    return np.stack([lower, upper], axis=1)


def coverage_experiment(config: ExperimentConfig, level: float, workers: int = 1) -> CoverageReport:
    """Fraction of replications whose interval for ``m`` contains the true ``m``."""
    if not isinstance(config.model, BpreModel):
        raise UnsupportedModelError("coverage needs a bpre model")
    if config.n < 2:
        raise DomainError("coverage needs n >= 2")
    m = env_moments(config.model).m
    bounds = np.concatenate(run_blocks(config, partial(_block_ci, level=level), workers))
    bad = np.isnan(bounds[:, 0])
    degenerate = int(np.count_nonzero(bad))
    if degenerate > 0.01 * config.replications:
        raise DegenerateVarianceError(
            f"{degenerate} of {config.replications} windows had zero ratio variance"
        )
    good = bounds[~bad]
    hits = int(np.count_nonzero((good[:, 0] <= m) & (m <= good[:, 1])))
    total = good.shape[0]
    lo, hi = wilson_interval(hits, total)
    return CoverageReport(level, hits / total, total, lo, hi, degenerate)


def _block_cv_gap(config: ExperimentConfig, start: int, count: int) -> np.ndarray:
    paths = _bpre_paths(config, start, count)
    mom = env_moments(config.model)
    n0, n = config.n0, config.n
    xi = bpre_infer.ratios_batch(paths.z, n0, n) - mom.m
    cond = n * mom.sigma2 + mom.tau2 * np.sum(1.0 / paths.z[:, n0 : n0 + n], axis=1)
    return np.sum(xi * xi, axis=1) - cond


def conditional_variance_gap(config: ExperimentConfig, workers: int = 1) -> tuple[float, float]:
    """Mean and standard error over replications of
    ``sum_k xi_k^2 - (n sigma^2 + tau^2 sum_k 1/Z_k)``."""
    gaps = np.concatenate(run_blocks(config, _block_cv_gap, workers))
    return float(gaps.mean()), float(gaps.std(ddof=1) / math.sqrt(gaps.size))


def _block_increments(config: ExperimentConfig, start: int, count: int) -> np.ndarray:
    paths = _bpre_paths(config, start, count)
    return bpre_infer.ratios_batch(paths.z, config.n0, config.n) - env_moments(config.model).m


def martingale_increment_means(config: ExperimentConfig, workers: int = 1):
    """Per-generation mean and standard error of ``Z_{k+1}/Z_k - m``."""
    xi = np.concatenate(run_blocks(config, _block_increments, workers))
    return xi.mean(axis=0), xi.std(axis=0, ddof=1) / math.sqrt(xi.shape[0])
