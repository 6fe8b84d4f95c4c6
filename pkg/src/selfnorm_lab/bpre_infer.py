"""Offspring-mean inference from Lotka-Nagaev ratios ``Z_{k+1}/Z_k``."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, DegenerateVarianceError, DomainError
from .gauss import phi_quantile
from .models import BpreModel, Trajectory, env_moments


@dataclass(frozen=True)
class TrajectoryWindow:
    n0: int
    n: int
    ratios: np.ndarray


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float


@dataclass(frozen=True)
class BernsteinReport:
    c: float
    l_max: int
    violations: tuple[int, ...]


def window_from_trajectory(traj: Trajectory, n0: int, n: int) -> TrajectoryWindow:
    """Ratios ``Z_{k+1}/Z_k`` for ``k = n0..n0+n-1``; any start ``n0 >= 0`` is allowed."""
    if n0 < 0 or n < 1:
        raise DomainError(f"need n0 >= 0 and n >= 1, got n0={n0}, n={n}")
    z = np.asarray(traj.z, dtype=np.float64)
    if n0 + n >= len(z):
        raise DomainError(
            f"window n0={n0}, n={n} needs generations up to {n0 + n}, "
            f"trajectory ends at {len(z) - 1}"
        )
    return TrajectoryWindow(n0, n, z[n0 + 1 : n0 + n + 1] / z[n0 : n0 + n])


def ratios_batch(z: np.ndarray, n0: int, n: int) -> np.ndarray:
    if n0 < 0 or n0 + n >= z.shape[1]:
        raise DomainError(f"window n0={n0}, n={n} outside trajectories of horizon {z.shape[1] - 1}")
    return z[:, n0 + 1 : n0 + n + 1] / z[:, n0 : n0 + n]


def _tstat(ratios: np.ndarray, m: float):
    t, mean, sd = _kernels.row_tstat(np.ascontiguousarray(ratios[None, :]), float(m))
    return float(t[0]), float(mean[0]), float(sd[0])


def mhat(w: TrajectoryWindow) -> float:
    s, _ = _kernels.row_sum_and_squares(np.ascontiguousarray(w.ratios[None, :]))
    return float(s[0]) / w.n


def _need_two(w: TrajectoryWindow):
    if w.n < 2:
        raise DomainError(f"the studentized statistic needs n >= 2, got {w.n}")


def n_statistic(w: TrajectoryWindow, m: float) -> float:
    """Studentized ratio mean ``sqrt(n)(mhat - m)/sd``."""
    _need_two(w)
    t, _, _ = _tstat(w.ratios, m)
    if math.isnan(t):
        raise DegenerateVarianceError("ratios in the window have zero sample variance")
    return t


def n_statistic_batch(ratios: np.ndarray, m: float) -> np.ndarray:
    t, _, _ = _kernels.row_tstat(np.ascontiguousarray(ratios), float(m))
    return t


def s_statistic(w: TrajectoryWindow, m: float, sigma: float) -> float:
    """Ratio mean standardized by the known environment sd ``sigma``."""
    if not sigma > 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    return math.sqrt(w.n) * (mhat(w) - m) / sigma


def s_statistic_batch(ratios: np.ndarray, m: float, sigma: float) -> np.ndarray:
    if not sigma > 0.0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    s, _ = _kernels.row_sum_and_squares(np.ascontiguousarray(ratios))
    n = ratios.shape[1]
    return math.sqrt(n) * (s / n - m) / sigma


def _z_for_level(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise DomainError(f"confidence level must lie in (0, 1), got {level}")
    return phi_quantile(1.0 - (1.0 - level) / 2.0)


def confidence_interval(w: TrajectoryWindow, level: float) -> ConfidenceInterval:
    """Two-sided interval for ``m``: the set where ``|N| <= z_{(1+level)/2}``."""
    _need_two(w)
    z = _z_for_level(level)
    t, mean, sd = _tstat(w.ratios, 0.0)
    if math.isnan(t):
        raise DegenerateVarianceError("ratios in the window have zero sample variance")
    half = z * sd / math.sqrt(w.n)
    return ConfidenceInterval(mean - half, mean + half, level)


def confidence_bounds_batch(ratios: np.ndarray, level: float):
    """Row-wise ``(lower, upper)``; NaN where the window is degenerate."""
    z = _z_for_level(level)
    t, mean, sd = _kernels.row_tstat(np.ascontiguousarray(ratios), 0.0)
    half = z * sd / math.sqrt(ratios.shape[1])
    bad = np.isnan(t)
    lower = np.where(bad, np.nan, mean - half)
    upper = np.where(bad, np.nan, mean + half)
    return lower, upper


def window_summary(w: TrajectoryWindow, level: float) -> dict:
    ci = confidence_interval(w, level)
    _, mean, sd = _tstat(w.ratios, 0.0)
    return {
        "n0": w.n0,
        "n": w.n,
        "mhat": mean,
        "sigma_hat": sd,
        "level": level,
        "lower": ci.lower,
        "upper": ci.upper,
    }


# ------------------------------------------------------------ moment conditions


def deviation_moments(model: BpreModel, which: str, l_max: int) -> list[float]:
    """Exact ``E|.|^l`` for ``l = 2..l_max`` of ``Z_1 - m_0`` ("offspring")
    or ``m_0 - m`` ("environment")."""
    w = [e.weight for e in model.env_states]
    if which == "offspring":
        per_env = [[e.abs_central_moment(l) for e in model.env_states] for l in range(2, l_max + 1)]
        return [math.fsum(wi * v for wi, v in zip(w, row)) for row in per_env]
    if which == "environment":
        m = env_moments(model).m
        means = [e.mean for e in model.env_states]
        return [
            math.fsum(wi * abs(mi - m) ** l for wi, mi in zip(w, means)) for l in range(2, l_max + 1)
        ]
    raise DomainError(f"unknown deviation {which!r}; use 'offspring' or 'environment'")


def bernstein_check(moments: Sequence[float], c: float) -> BernsteinReport:
    """Orders ``l`` where ``E|.|^l > l! c^{l-2} E|.|^2 / 2``.

    ``moments[0]`` is the order-2 moment; entry ``i`` is order ``i + 2``.
    """
    moments = [float(v) for v in moments]
    if not moments:
        raise DomainError("the order-2 moment is required")
    if not c > 0.0:
        raise DomainError(f"Bernstein constant must be positive, got {c}")
    second = moments[0]
    violations = []
    for l, value in enumerate(moments, start=2):
        bound = 0.5 * math.factorial(l) * c ** (l - 2) * second
        if value > bound * (1.0 + 1e-12):
            violations.append(l)
    return BernsteinReport(c, len(moments) + 1, tuple(violations))


def conditional_moment_bound_check(model: BpreModel, rho: float) -> float:
    """Constant ``2^{1+rho}(E|Z_1-m_0|^{2+rho} + E|m_0-m|^{2+rho}) / sigma^2``
    bounding the conditional (2+rho)-moment of a centred ratio by its
    conditional variance."""
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"rho must lie in (0, 1], got {rho}")
    mom = env_moments(model)
    if not mom.sigma2 > 0.0:
        raise DegenerateVarianceError("sigma^2 = 0: environment offspring means are constant")
    q = 2.0 + rho
    w = [e.weight for e in model.env_states]
    off = math.fsum(wi * e.abs_central_moment(q) for wi, e in zip(w, model.env_states))
    env = math.fsum(wi * abs(e.mean - mom.m) ** q for wi, e in zip(w, model.env_states))
    return 2.0 ** (1.0 + rho) * (off + env) / mom.sigma2


def _convolve_pmf(pmf: dict[int, float], times: int) -> dict[int, float]:
    out = {0: 1.0}
    for _ in range(times):
        nxt: dict[int, float] = {}
        for a, pa in out.items():
            for b, pb in pmf.items():
                nxt[a + b] = nxt.get(a + b, 0.0) + pa * pb
        out = nxt
    return out


def conditional_moment_ratio(model: BpreModel, z: int, rho: float) -> float:
    """Exact ``E[|xi|^{2+rho} | Z_k = z] / E[xi^2 | Z_k = z]`` for the centred
    ratio ``xi = Z_{k+1}/z - m``, by convolving the offspring pmfs."""
    if z < 1:
        raise DomainError("population must be positive")
    m = env_moments(model).m
    num = 0.0
    den = 0.0
    for e in model.env_states:
        total = _convolve_pmf(dict(e.pmf), z)
        num += e.weight * math.fsum(p * abs(k / z - m) ** (2.0 + rho) for k, p in total.items())
        den += e.weight * math.fsum(p * (k / z - m) ** 2 for k, p in total.items())
    return num / den


# ---------------------------------------------------------------- trajectory I/O


def read_trajectory_csv(path) -> tuple[Trajectory, int]:
    """Read ``generation,population`` rows with strictly increasing generations.

    Returns the trajectory re-indexed from zero and the first generation
    number in the file, which callers add to any window start.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["generation", "population"]:
            raise ConfigError(f"{path}: header must be 'generation,population'")
        gens, pops = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                g, p = int(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise ConfigError(f"{path}: malformed row", line=lineno) from None
            if gens and g <= gens[-1]:
                raise ConfigError(f"{path}: generations must be strictly increasing", line=lineno)
            if not p > 0:
                raise ConfigError(f"{path}: populations must be positive", line=lineno)
            gens.append(g)
            pops.append(p)
    if not gens:
        raise ConfigError(f"{path}: no data rows")
    if gens != list(range(gens[0], gens[0] + len(gens))):
        raise ConfigError(f"{path}: generations must be consecutive")
    return Trajectory(np.asarray(pops), None, None), gens[0]
