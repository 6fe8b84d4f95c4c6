"""Increment generators and the branching process in a random environment.

Three families: i.i.d. laws with exact moments, the one-step stationary
martingale difference sequence ``X_i = e_i (1 + beta e_{i-1})`` and a
BPRE with finitely many environment states and finite-support offspring
laws (no zero offspring).  Batch samplers return ``(replications, n)``
arrays; the single-path samplers are the one-row case of the same code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import (
    ConfigError,
    DegenerateVarianceError,
    DomainError,
    PopulationOverflowError,
)
from .rng import RngStream

MASS_TOL = 1e-12
DEFAULT_EXACT_THRESHOLD = 10**6
# populations are held in float64; stop well before the top of the range
_POPULATION_CAP = 1e300


# ---------------------------------------------------------------- i.i.d. laws


class IidModel:
    """A centered law for i.i.d. increments."""

    name = "iid"

    def draw(self, gen: np.random.Generator, shape) -> np.ndarray:
        raise NotImplementedError

    def abs_moment(self, q: float) -> float:
        """``E|X|^q`` in closed form."""
        raise NotImplementedError

    @property
    def variance(self) -> float:
        return self.abs_moment(2.0)


@dataclass(frozen=True)
class Rademacher(IidModel):
    name = "rademacher"

    def draw(self, gen, shape):
        reps, n = shape
        raw = gen.integers(0, 256, size=(reps, (n + 7) // 8), dtype=np.uint8)
        bits = np.unpackbits(raw, axis=1, count=n)
        return 2.0 * bits - 1.0

    def abs_moment(self, q):
        return 1.0


@dataclass(frozen=True)
class Uniform(IidModel):
    a: float = 1.0
    name = "uniform"

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigError(f"uniform half-width must be positive, got {self.a}", key="a")

    def draw(self, gen, shape):
        return gen.uniform(-self.a, self.a, size=shape)

    def abs_moment(self, q):
        return self.a**q / (q + 1.0)


@dataclass(frozen=True)
class DiscreteLaw(IidModel):
    """Finite-support law with mean zero; covers the centered two-point case."""

    values: tuple[float, ...]
    probs: tuple[float, ...]
    name = "discrete"

    def __post_init__(self):
        if len(self.values) != len(self.probs) or not self.values:
            raise ConfigError("discrete law needs matching nonempty values and probs", key="pmf")
        if any(p < 0 for p in self.probs):
            raise ConfigError("probabilities must be nonnegative", key="pmf")
        if abs(math.fsum(self.probs) - 1.0) > MASS_TOL:
            raise ConfigError("probabilities must sum to 1", key="pmf")
        mean = math.fsum(v * p for v, p in zip(self.values, self.probs))
        scale = max(abs(v) for v in self.values)
        if abs(mean) > MASS_TOL * max(scale, 1.0):
            raise ConfigError(f"increment law must have mean zero, got {mean!r}", key="pmf")
        if self.variance <= 0:
            raise ConfigError("increment law must have positive variance", key="pmf")

    @classmethod
    def two_point(cls, low: float, high: float) -> "DiscreteLaw":
        """Centered law on ``{low, high}``; the weights are forced by mean zero."""
        if not low < 0 < high:
            raise ConfigError(f"two-point law needs low < 0 < high, got {low}, {high}")
        p_high = -low / (high - low)
        return cls((float(low), float(high)), (1.0 - p_high, p_high))

    def draw(self, gen, shape):
        cdf = np.cumsum(self.probs)
        idx = np.searchsorted(cdf, gen.random(shape), side="right")
        np.minimum(idx, len(self.values) - 1, out=idx)
        return np.asarray(self.values)[idx]

    def abs_moment(self, q):
        return math.fsum(abs(v) ** q * p for v, p in zip(self.values, self.probs))


def sample_iid_batch(model: IidModel, n: int, reps: int, rng: RngStream) -> np.ndarray:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return model.draw(rng.generator(), (reps, n))


def sample_iid(model: IidModel, n: int, rng: RngStream) -> np.ndarray:
    return sample_iid_batch(model, n, 1, rng)[0]


def rademacher_enumeration(n: int, start: int, count: int) -> np.ndarray:
    """Sign vectors of replications ``start..start+count-1``: bit i of r gives X_{i+1}."""
    r = np.arange(start, start + count, dtype=np.uint64)[:, None]
    bits = (r >> np.arange(n, dtype=np.uint64)[None, :]) & np.uint64(1)
    return 2.0 * bits.astype(np.float64) - 1.0


# --------------------------------------------------------- martingale differences


@dataclass(frozen=True)
class MdsModel:
    """``X_i = e_i (1 + beta e_{i-1})`` with i.i.d. Rademacher ``e``."""

    beta: float
    depth: int = 1

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta}", key="beta")
        if self.depth != 1:
            raise ConfigError("only memory depth 1 is supported", key="depth")

    @property
    def variance(self) -> float:
        return 1.0 + self.beta**2


def _mds_signs(model: MdsModel, n: int, reps: int, rng: RngStream) -> np.ndarray:
    # column 0 is e_0, drawn from the stationary law
    return Rademacher().draw(rng.generator(), (reps, n + 1))


def mds_from_signs(model: MdsModel, eps: np.ndarray) -> np.ndarray:
    return eps[:, 1:] * (1.0 + model.beta * eps[:, :-1])


def mds_conditional_variance(model: MdsModel, eps: np.ndarray) -> np.ndarray:
    """``<S>_n = sum_i (1 + beta e_{i-1})^2`` for every path."""
    return np.sum((1.0 + model.beta * eps[:, :-1]) ** 2, axis=1)


def sample_mds_batch(model: MdsModel, n: int, reps: int, rng: RngStream) -> np.ndarray:
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    return mds_from_signs(model, _mds_signs(model, n, reps, rng))


def sample_mds(model: MdsModel, n: int, rng: RngStream) -> np.ndarray:
    return sample_mds_batch(model, n, 1, rng)[0]


# ---------------------------------------------------------------------- BPRE


def parse_pmf(text: str) -> dict[int, float]:
    """Parse ``"k:prob,k:prob"`` into an offspring pmf."""
    pmf: dict[int, float] = {}
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        try:
            k_text, p_text = item.split(":")
            k, p = int(k_text), float(p_text)
        except ValueError:
            raise ConfigError(f"pmf entries must look like 'k:prob', got {item!r}", key="pmf") from None
        if k in pmf:
            raise ConfigError(f"offspring count {k} listed twice", key="pmf")
        pmf[k] = p
    return pmf


def format_pmf(pmf: Mapping[int, float]) -> str:
    return ",".join(f"{k}:{p!r}" for k, p in sorted(pmf.items()))


@dataclass(frozen=True)
class Environment:
    weight: float
    pmf: Mapping[int, float]

    def __post_init__(self):
        pmf = dict(self.pmf)
        if not pmf:
            raise ConfigError("offspring pmf is empty", key="pmf")
        if pmf.get(0, 0.0) > 0.0 or any(k < 0 for k in pmf):
            raise ConfigError(
                "offspring law must give each individual at least one offspring", key="pmf"
            )
        pmf.pop(0, None)
        if any(p < 0 for p in pmf.values()):
            raise ConfigError("offspring probabilities must be nonnegative", key="pmf")
        if abs(math.fsum(pmf.values()) - 1.0) > MASS_TOL:
            raise ConfigError("offspring pmf must sum to 1 within 1e-12", key="pmf")
        if not 0.0 <= self.weight <= 1.0:
            raise ConfigError(f"environment weight must lie in [0, 1], got {self.weight}", key="weight")
        object.__setattr__(self, "pmf", dict(sorted(pmf.items())))

    @property
    def mean(self) -> float:
        return math.fsum(k * p for k, p in self.pmf.items())

    @property
    def variance(self) -> float:
        m = self.mean
        return math.fsum((k - m) ** 2 * p for k, p in self.pmf.items())

    def abs_central_moment(self, q: float) -> float:
        m = self.mean
        return math.fsum(abs(k - m) ** q * p for k, p in self.pmf.items())


@dataclass(frozen=True)
class BpreModel:
    """i.i.d. environment drawn from ``env_states`` each generation; ``Z_0 = 1``."""

    env_states: tuple[Environment, ...]
    exact_threshold: int = DEFAULT_EXACT_THRESHOLD

    def __post_init__(self):
        if not self.env_states:
            raise ConfigError("at least one environment state is required", key="environments")
        if abs(math.fsum(e.weight for e in self.env_states) - 1.0) > MASS_TOL:
            raise ConfigError("environment weights must sum to 1 within 1e-12", key="weight")
        if self.exact_threshold < 1:
            raise ConfigError("exact_threshold must be >= 1", key="exact_threshold")

    @classmethod
    def deterministic(cls, pmf: Mapping[int, float], **kw) -> "BpreModel":
        return cls((Environment(1.0, pmf),), **kw)

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.env_states])


@dataclass(frozen=True)
class EnvMoments:
    m: float
    sigma2: float
    tau2: float
    mu: float
    nu2: float
    upsilon2: float


def env_moments(model: BpreModel) -> EnvMoments:
    """Exact moments of the offspring mean and of ``Z_1`` from the finite pmfs."""
    w = [e.weight for e in model.env_states]
    means = [e.mean for e in model.env_states]
    m = math.fsum(wi * mi for wi, mi in zip(w, means))
    sigma2 = math.fsum(wi * (mi - m) ** 2 for wi, mi in zip(w, means))
    tau2 = math.fsum(wi * e.variance for wi, e in zip(w, model.env_states))
    logs = [math.log(mi) for mi in means]
    mu = math.fsum(wi * li for wi, li in zip(w, logs))
    nu2 = math.fsum(wi * (li - mu) ** 2 for wi, li in zip(w, logs))
    upsilon2 = math.fsum(
        wi * p * (k - m) ** 2 for wi, e in zip(w, model.env_states) for k, p in e.pmf.items()
    )
    return EnvMoments(m, sigma2, tau2, mu, nu2, upsilon2)


@dataclass
class Trajectory:
    """Population path ``Z_0..Z_N`` with the realized environment means."""

    z: np.ndarray
    env_means: np.ndarray
    approx_from: int | None = None
    env_states: np.ndarray | None = field(default=None, repr=False)

    @property
    def horizon(self) -> int:
        return len(self.z) - 1


@dataclass
class TrajectoryBatch:
    """``reps`` BPRE paths; ``approx_from`` is -1 where every step was exact."""

    z: np.ndarray
    env_means: np.ndarray
    env_states: np.ndarray
    approx_from: np.ndarray

    def __getitem__(self, r: int) -> Trajectory:
        a = int(self.approx_from[r])
        return Trajectory(
            self.z[r].copy(), self.env_means[r].copy(), None if a < 0 else a, self.env_states[r].copy()
        )

    def __len__(self):
        return self.z.shape[0]


def sample_bpre_batch(
    model: BpreModel, horizon: int, reps: int, rng: RngStream, exact_threshold: int | None = None
) -> TrajectoryBatch:
    """Simulate ``reps`` independent paths up to generation ``horizon``.

    A step with ``Z_n <= exact_threshold`` sums ``Z_n`` offspring draws exactly
    (as multinomial counts over the finite support).  Larger populations step
    by a Gaussian with the environment's exact conditional mean ``m_e Z_n`` and
    variance ``v_e Z_n``, rounded and floored at ``Z_n``.
    """
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    threshold = model.exact_threshold if exact_threshold is None else exact_threshold
    if threshold < 1:
        raise DomainError("exact_threshold must be >= 1")
    gen = rng.generator()
    states = model.env_states
    cum_w = np.cumsum(model.weights)
    env_mean = np.array([e.mean for e in states])
    env_var = np.array([e.variance for e in states])
    supports = [np.array(list(e.pmf.keys()), dtype=np.float64) for e in states]
    probs = [np.array(list(e.pmf.values())) for e in states]

    z = np.empty((reps, horizon + 1))
    z[:, 0] = 1.0
    env_idx = np.empty((reps, horizon), dtype=np.int64)
    approx_from = np.full(reps, -1, dtype=np.int64)

    for step in range(horizon):
        cur = z[:, step]
        e = np.searchsorted(cum_w, gen.random(reps), side="right")
        np.minimum(e, len(states) - 1, out=e)
        env_idx[:, step] = e
        nxt = np.empty(reps)
        exact = cur <= threshold
        for s in range(len(states)):
            rows = np.flatnonzero(exact & (e == s))
            if rows.size:
                counts = gen.multinomial(cur[rows].astype(np.int64), probs[s])
                nxt[rows] = counts @ supports[s]
        approx = np.flatnonzero(~exact)
        if approx.size:
            za = cur[approx]
            ea = e[approx]
            mean = env_mean[ea] * za
            sd = np.sqrt(env_var[ea] * za)
            nxt[approx] = np.maximum(za, np.rint(mean + sd * gen.standard_normal(approx.size)))
            fresh = approx[approx_from[approx] < 0]
            approx_from[fresh] = step
        if not np.all(nxt < _POPULATION_CAP):
            raise PopulationOverflowError(step + 1)
        z[:, step + 1] = nxt

    return TrajectoryBatch(z, env_mean[env_idx], env_idx, approx_from)


def sample_bpre(
    model: BpreModel, horizon: int, rng: RngStream, exact_threshold: int | None = None
) -> Trajectory:
    return sample_bpre_batch(model, horizon, 1, rng, exact_threshold)[0]


def _check_window(traj: Trajectory, n0: int, n: int):
    if n0 < 0 or n < 1 or n0 + n - 1 > traj.horizon:
        raise DomainError(
            f"window n0={n0}, n={n} is outside a trajectory of horizon {traj.horizon}"
        )


def conditional_variance_bpre(traj: Trajectory, mom: EnvMoments, n0: int, n: int) -> float:
    """``n sigma^2 + tau^2 sum_{k=n0}^{n0+n-1} 1/Z_k``: the summed conditional
    variances of the centred Lotka-Nagaev ratios over the window."""
    _check_window(traj, n0, n)
    harmonic = math.fsum(1.0 / z for z in traj.z[n0 : n0 + n])
    return n * mom.sigma2 + mom.tau2 * harmonic


def normalized_population(traj: Trajectory, upto: int) -> float:
    """``V_n = Z_n / prod_{i<n} m_i`` along the realized environment."""
    if traj.env_means is None or len(traj.env_means) < upto:
        raise DomainError("environment record does not cover the requested generation")
    if not 0 <= upto <= traj.horizon:
        raise DomainError(f"generation {upto} outside trajectory")
    prod = math.prod(float(m) for m in traj.env_means[:upto])
    if math.isfinite(prod) and prod > 0.0:
        return float(traj.z[upto]) / prod
    return math.exp(math.log(traj.z[upto]) - math.fsum(math.log(m) for m in traj.env_means[:upto]))


def log_population_z(traj: Trajectory, mom: EnvMoments, n: int) -> float:
    """Standardized log population ``(ln Z_n - n mu) / (sqrt(n) nu)``."""
    if not mom.nu2 > 0.0:
        raise DegenerateVarianceError("nu^2 = 0: the environment is deterministic in ln m_0")
    if not 1 <= n <= traj.horizon:
        raise DomainError(f"generation {n} outside trajectory")
    return (math.log(traj.z[n]) - n * mom.mu) / (math.sqrt(n) * math.sqrt(mom.nu2))


# -------------------------------------------------------- envelope rate oracles


def envelope_rates(model, n: int, rho: float = 1.0, statistic: str = "W", block_length: int = 1):
    """Model-specific ``(gamma_n, delta_n)`` feeding the envelope shapes.

    i.i.d.: ``gamma_n = (E|X|^{2+rho}/E X^2)^{1/rho} / B_n`` with ``B_n^2 = n Var X``
    and ``delta_n = n^{-1/2}`` (the conditional variance is exactly ``B_n^2``).
    MDS: the conditional moment ratio is at most ``(1+beta)^rho`` and
    ``<S>_n - B_n^2 = 2 beta sum e_{i-1}``.  BPRE: ``gamma_n`` from the
    conditional moment constant and ``delta_n^2 = ln n / n``.  Block
    statistics use ``k^{-1/2}`` for both, ``k`` the block count.
    Both values are capped at 1/4.
    """
    if n < 2:
        raise DomainError("envelope rates need n >= 2")
    cap = 0.25
    if statistic == "W_block":
        k = n // block_length
        r = 1.0 / math.sqrt(max(k, 1))
        return min(cap, r), min(cap, r)
    if isinstance(model, IidModel):
        ratio = model.abs_moment(2.0 + rho) / model.variance
        gamma = ratio ** (1.0 / rho) / math.sqrt(n * model.variance)
        return min(cap, gamma), min(cap, 1.0 / math.sqrt(n))
    if isinstance(model, MdsModel):
        b = model.beta
        gamma = (1.0 + b) / math.sqrt(n * model.variance)
        delta = max(1.0, 2.0 * b / model.variance) / math.sqrt(n)
        return min(cap, gamma), min(cap, delta)
    if isinstance(model, BpreModel):
        from .bpre_infer import conditional_moment_bound_check

        mom = env_moments(model)
        const = conditional_moment_bound_check(model, rho)
        gamma = const ** (1.0 / rho) / math.sqrt(n * mom.sigma2)
        return min(cap, gamma), min(cap, math.sqrt(math.log(n) / n))
    raise DomainError(f"no rate oracle for {type(model).__name__}")
