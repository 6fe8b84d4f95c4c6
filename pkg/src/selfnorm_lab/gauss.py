"""Standard normal tail, log-tail and quantile.

Every ratio and envelope check in the package divides by ``1 - Phi(x)``,
so these routines are accurate to ~1e-13 relative on ``|x| <= 40`` and
carry the logarithm alongside the value to survive underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy import special

from .errors import DomainError

MAX_ABS_Z = 40.0
_SQRT1_2 = math.sqrt(0.5)
# beyond this the plain tail is computed from the scaled erfc in log form
_LOG_SWITCH = 8.0


@dataclass(frozen=True)
class TailProb:
    """``1 - Phi(x)`` together with its natural logarithm."""

    value: float
    log_value: float


def _check_z(x: float) -> float:
    x = float(x)
    if not math.isfinite(x):
        raise DomainError(f"z-score must be finite, got {x!r}")
    if abs(x) > MAX_ABS_Z:
        raise DomainError(f"|x| must be <= {MAX_ABS_Z}, got {x!r}")
    return x


def _tail(x: float) -> float:
    return 0.5 * float(special.erfc(x * _SQRT1_2))


def _log_tail(x: float) -> float:
    if x >= _LOG_SWITCH:
        # erfc(t) = erfcx(t) exp(-t^2); erfcx is smooth and O(1/t)
        return math.log(0.5 * float(special.erfcx(x * _SQRT1_2))) - 0.5 * x * x
    if x > -_LOG_SWITCH:
        return math.log(_tail(x))
    # exp of the log keeps subnormal tails that erfc flushes to zero
    return math.log1p(-math.exp(_log_tail(-x)))


def phi_tail(x: float) -> TailProb:
    """Upper standard normal tail ``1 - Phi(x)``.

    ``value`` underflows to subnormal/zero above x ~ 37.5; ``log_value``
    stays accurate over the whole supported range.
    """
    x = _check_z(x)
    return TailProb(_tail(x), _log_tail(x))


def log_phi_tail(x: float) -> float:
    """``ln(1 - Phi(x))`` without underflow."""
    return _log_tail(_check_z(x))


def phi_quantile(p: float) -> float:
    """Inverse of ``Phi``: returns ``x`` with ``Phi(x) = p``."""
    p = float(p)
    if not (1e-300 < p < 1.0 - 1e-16):
        raise DomainError(f"probability must lie in (1e-300, 1-1e-16), got {p!r}")
    if p == 0.5:
        return 0.0
    return float(special.ndtri(p))
