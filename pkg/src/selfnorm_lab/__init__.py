"""Monte Carlo laboratory for self-normalized moderate deviations of
martingales, Student's t, block sums and BPRE offspring-mean inference."""

from .errors import (
    ConfigError,
    DegenerateVarianceError,
    DomainError,
    PopulationOverflowError,
    SelfNormError,
)
from .gauss import TailProb, log_phi_tail, phi_quantile, phi_tail
from .stats_core import (
    EnvelopeParams,
    SelfNormStats,
    block_self_normalized,
    chung_transform,
    envelope_remark21,
    envelope_thm21,
    epsilon_n,
    gamma_hat,
    self_normalized,
    student_t,
)

__version__ = "0.1.0"
