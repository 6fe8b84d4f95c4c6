"""Self-normalized statistics and the moderate-deviation bound shapes.

Single-sample functions validate their input and raise on degenerate
variance; the ``*_batch`` variants take a ``(replications, n)`` array and
mark degenerate rows with NaN so the Monte Carlo harness can count them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DegenerateVarianceError, DomainError


@dataclass(frozen=True)
class SelfNormStats:
    sum: float
    bracket: float
    w: float


@dataclass(frozen=True)
class BlockSpec:
    m: int
    k: int

    @classmethod
    def for_length(cls, n: int, m: int) -> "BlockSpec":
        if not 1 <= m <= n:
            raise DomainError(f"block length must lie in [1, {n}], got {m}")
        return cls(m, n // m)


@dataclass(frozen=True)
class EnvelopeParams:
    """Exponent, rate sequences and constant of the bound envelopes."""

    rho: float
    gamma_n: float
    delta_n: float
    c: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise DomainError(f"rho must lie in (0, 1], got {self.rho}")
        for name in ("gamma_n", "delta_n"):
            v = getattr(self, name)
            if not 0.0 < v <= 0.25:
                raise DomainError(f"{name} must lie in (0, 1/4], got {v}")
        if not self.c >= 0.0:
            raise DomainError(f"envelope constant must be nonnegative, got {self.c}")


def as_sample(increments, min_n: int = 1) -> np.ndarray:
    x = np.asarray(increments, dtype=np.float64)
    if x.ndim != 1:
        raise DomainError("a sample is a one-dimensional sequence of increments")
    if x.size < min_n:
        raise DomainError(f"sample needs at least {min_n} increments, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DomainError("sample increments must be finite")
    return x


def self_normalized_batch(x: np.ndarray):
    """Row-wise ``(S_n, [S]_n, W_n)``; ``W_n`` is NaN where ``[S]_n = 0``."""
    s, q = _kernels.row_sum_and_squares(np.ascontiguousarray(x, dtype=np.float64))
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(q > 0.0, s / np.sqrt(q), np.nan)
    return s, q, w


def self_normalized(sample) -> SelfNormStats:
    """Self-normalized sum ``W_n = S_n / sqrt([S]_n)`` of a single sample."""
    x = as_sample(sample)
    s, q, w = self_normalized_batch(x[None, :])
    if not q[0] > 0.0:
        raise DegenerateVarianceError("all increments are zero; [S]_n = 0")
    return SelfNormStats(float(s[0]), float(q[0]), float(w[0]))


def student_t_batch(x: np.ndarray, shift: float = 0.0) -> np.ndarray:
    t, _, _ = _kernels.row_tstat(np.ascontiguousarray(x, dtype=np.float64), float(shift))
    return t


def student_t(sample) -> float:
    """Student's ``T_n = sqrt(n) mean / sd`` with the unbiased variance."""
    x = as_sample(sample, min_n=2)
    t = student_t_batch(x[None, :])[0]
    if math.isnan(t):
        raise DegenerateVarianceError("sample variance is zero")
    return float(t)


def chung_transform(x: float, n: int) -> float:
    """Threshold ``x_n`` with ``{T_n >= x} = {W_n >= x_n}`` for ``x >= 0``."""
    if not x >= 0.0:
        raise DomainError(f"the T/W threshold identity needs x >= 0, got {x}")
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    return x * math.sqrt(n / (n + x * x - 1.0))


def block_sums_batch(x: np.ndarray, m: int) -> np.ndarray:
    BlockSpec.for_length(x.shape[1], m)
    return _kernels.block_sums(np.ascontiguousarray(x, dtype=np.float64), int(m))


def block_self_normalized_batch(x: np.ndarray, m: int):
    return self_normalized_batch(block_sums_batch(x, m))


def block_self_normalized(sample, m: int) -> SelfNormStats:
    """Self-normalize the ``floor(n/m)`` consecutive block sums of length ``m``."""
    x = as_sample(sample)
    blocks = block_sums_batch(x[None, :], m)[0]
    if not np.any(blocks != 0.0):
        raise DegenerateVarianceError("all block sums are zero")
    return self_normalized(blocks)


def gamma_hat(gamma_n: float, x: float, rho: float) -> float:
    if not gamma_n > 0.0:
        raise DomainError(f"gamma_n must be positive, got {gamma_n}")
    if not x >= 0.0:
        raise DomainError(f"x must be nonnegative, got {x}")
    if not 0.0 < rho <= 1.0:
        raise DomainError(f"rho must lie in (0, 1], got {rho}")
    return gamma_n ** (rho * (2.0 - rho) / 4.0) / (1.0 + x ** (rho * (2.0 + rho) / 4.0))


def _envelope(x: float, p: EnvelopeParams, power: int) -> float:
    if not x >= 0.0:
        raise DomainError(f"x must be nonnegative, got {x}")
    g, d, rho = p.gamma_n, p.delta_n, p.rho
    body = (
        x ** (2.0 + rho) * g**rho
        + x**power * d
        + (1.0 + x) * (gamma_hat(g, x, rho) + d * abs(math.log(d)))
    )
    return p.c * body


def envelope_thm21(x: float, p: EnvelopeParams) -> float:
    """Bound on ``|ln P(W_n >= x)/(1 - Phi(x))|`` under the exponential (A1) form."""
    return _envelope(x, p, 2)


def envelope_remark21(x: float, p: EnvelopeParams) -> float:
    """Variant of :func:`envelope_thm21` for the sub-Gaussian (A1') form."""
    return _envelope(x, p, 3)


ENVELOPES = {"thm21": envelope_thm21, "remark21": envelope_remark21}


def epsilon_n(delta_seq: Sequence[float], k: int | None = None) -> float:
    """``sum_j j^{-1/2} delta_{mj} / sqrt(k)`` over the first ``k`` entries."""
    deltas = [float(d) for d in delta_seq]
    if k is None:
        k = len(deltas)
    if k < 1 or not deltas:
        raise DomainError("epsilon_n needs at least one delta")
    if len(deltas) < k:
        raise DomainError(f"need {k} deltas, got {len(deltas)}")
    deltas = deltas[:k]
    if any(not d > 0.0 for d in deltas):
        raise DomainError("all deltas must be positive")
    return math.fsum(d / math.sqrt(j) for j, d in enumerate(deltas, start=1)) / math.sqrt(k)
