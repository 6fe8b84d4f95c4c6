import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from selfnorm_lab import stats_core as sc
from selfnorm_lab.errors import DegenerateVarianceError, DomainError

# values whose squares underflow would make the bracket vanish for a nonzero sample
finite = st.floats(min_value=-1e3, max_value=1e3).filter(lambda v: v == 0 or abs(v) > 1e-100)
samples = st.lists(finite, min_size=2, max_size=40)


def test_self_normalized_worked_example():
    s = sc.self_normalized([1, -1, 1])
    assert s.sum == 1 and s.bracket == 3
    assert s.w == pytest.approx(1 / math.sqrt(3), rel=1e-15)


def test_self_normalized_constant_hits_sqrt_n():
    assert sc.self_normalized([2.5] * 9).w == pytest.approx(3.0, rel=1e-15)


def test_self_normalized_zero_sum():
    assert sc.self_normalized([1, -1]).w == 0.0


def test_all_zero_sample_is_degenerate():
    with pytest.raises(DegenerateVarianceError):
        sc.self_normalized([0.0, 0.0, 0.0])


@pytest.mark.parametrize("bad", [[], [1.0, math.nan], [math.inf]])
def test_bad_samples(bad):
    with pytest.raises(DomainError):
        sc.self_normalized(bad)


def test_student_t_worked_example():
    assert sc.student_t([2, 3, 4]) == pytest.approx(3 * math.sqrt(3), rel=1e-14)


def test_student_t_constant_is_degenerate():
    with pytest.raises(DegenerateVarianceError):
        sc.student_t([1, 1, 1])


def test_student_t_needs_two():
    with pytest.raises(DomainError):
        sc.student_t([1.0])


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 17))
    w = sc.self_normalized_batch(x)[2]
    t = sc.student_t_batch(x)
    for i in range(50):
        assert w[i] == sc.self_normalized(x[i]).w
        assert t[i] == sc.student_t(x[i])


@pytest.mark.parametrize("x,n,expected", [(1.0, 17, 1.0), (2.0, 4, 2 * math.sqrt(4 / 7)), (0.0, 5, 0.0)])
def test_chung_examples(x, n, expected):
    assert sc.chung_transform(x, n) == pytest.approx(expected, rel=1e-15, abs=0)


def test_chung_rejects_negative_and_small_n():
    with pytest.raises(DomainError):
        sc.chung_transform(-0.1, 5)
    with pytest.raises(DomainError):
        sc.chung_transform(1.0, 1)


@given(st.integers(2, 10**6), st.floats(0, 100))
def test_chung_increasing_and_bounded(n, x):
    y = sc.chung_transform(x, n)
    assert y < math.sqrt(n)
    assert sc.chung_transform(x + 1e-3, n) > y


@settings(max_examples=300)
@given(samples, st.floats(0, 10))
def test_chung_equivalence(xs, x):
    x_arr = np.array(xs)
    assume(np.std(x_arr) > 1e-6 * (1 + np.max(np.abs(x_arr))))
    n = len(xs)
    t = sc.student_t(xs)
    w = sc.self_normalized(xs).w
    xn = sc.chung_transform(x, n)
    # skip only the measure-zero boundary where rounding decides the side
    assume(abs(t - x) > 1e-9 * (1 + abs(x)))
    assert (t >= x) == (w >= xn)


@given(samples, st.floats(1e-3, 1e3))
def test_scale_invariance(xs, c):
    assume(any(v != 0 for v in xs))
    a = sc.self_normalized(xs).w
    b = sc.self_normalized([c * v for v in xs]).w
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


@given(samples)
def test_cauchy_schwarz(xs):
    assume(any(v != 0 for v in xs))
    assert abs(sc.self_normalized(xs).w) <= math.sqrt(len(xs)) * (1 + 1e-15)


def test_block_examples():
    assert sc.block_self_normalized([1, -1, 2, -2, 1, 1], 2).w == 1.0
    assert sc.block_self_normalized([1, 1, 1, 1], 4).w == 1.0


def test_block_drops_trailing_remainder():
    s = sc.block_self_normalized([1, 2, 3, 4, 100], 2)
    assert s.sum == 10 and s.bracket == 9 + 49


def test_block_all_zero_is_degenerate():
    with pytest.raises(DegenerateVarianceError):
        sc.block_self_normalized([1, -1, 2, -2], 2)


@given(samples)
def test_block_one_is_plain(xs):
    assume(any(v != 0 for v in xs))
    assert sc.block_self_normalized(xs, 1) == sc.self_normalized(xs)


def test_block_spec():
    blocks = sc.BlockSpec.for_length(10, 3)
    assert (blocks.m, blocks.k) == (3, 3)
    with pytest.raises(DomainError):
        sc.BlockSpec.for_length(3, 4)


def test_gamma_hat_examples():
    assert sc.gamma_hat(1 / 16, 1.0, 1.0) == pytest.approx(0.25, rel=1e-15)
    assert sc.gamma_hat(0.01, 0.0, 1.0) == pytest.approx(0.01**0.25, rel=1e-15)
    assert sc.gamma_hat(1e-40, 2.0, 0.5) < 1e-7


@given(st.floats(1e-6, 0.25), st.floats(0, 50), st.floats(0.01, 1.0))
def test_gamma_hat_monotone(g, x, rho):
    assert sc.gamma_hat(g, x + 0.5, rho) <= sc.gamma_hat(g, x, rho)
    assert sc.gamma_hat(g * 0.5, x, rho) <= sc.gamma_hat(g, x, rho)


def test_envelope_examples():
    quarter = sc.EnvelopeParams(1.0, 0.25, 0.25, 1.0)
    sixteenth = sc.EnvelopeParams(1.0, 1 / 16, 1 / 16, 1.0)
    assert sc.envelope_thm21(0.0, quarter) == pytest.approx(0.5**0.5 + 0.25 * math.log(4), rel=1e-14)
    assert sc.envelope_thm21(1.0, sixteenth) == pytest.approx(0.125 + 2 * (0.25 + math.log(16) / 16), rel=1e-14)
    assert sc.envelope_remark21(0.0, quarter) == sc.envelope_thm21(0.0, quarter)
    # 1/2 + 1/2 + 3 (gamma_hat(2) + ln16/16), gamma_hat(2) = 0.5/(1 + 2^0.75)
    expected = 1.0 + 3 * (0.5 / (1 + 2**0.75) + math.log(16) / 16)
    assert sc.envelope_remark21(2.0, sixteenth) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(2.0791877, abs=1e-7)


def test_envelope_zero_constant():
    p = sc.EnvelopeParams(0.5, 0.1, 0.1, 0.0)
    for x in (0.0, 1.0, 7.0):
        assert sc.envelope_thm21(x, p) == 0.0
        assert sc.envelope_remark21(x, p) == 0.0


@pytest.mark.parametrize("kw", [dict(rho=0.0), dict(rho=1.5), dict(gamma_n=0.3), dict(delta_n=0.0), dict(c=-1.0)])
def test_envelope_params_validation(kw):
    base = dict(rho=1.0, gamma_n=0.1, delta_n=0.1, c=1.0)
    base.update(kw)
    with pytest.raises(DomainError):
        sc.EnvelopeParams(**base)


def test_epsilon_examples():
    seq = [(4 * j) ** -0.5 for j in range(1, 5)]
    assert sc.epsilon_n(seq) == pytest.approx(sum(0.5 / j for j in range(1, 5)) / 2, rel=1e-14)
    assert sc.epsilon_n([0.3]) == 0.3
    assert sc.epsilon_n([0.1] * 4) == pytest.approx(0.139223, abs=1e-6)
    with pytest.raises(DomainError):
        sc.epsilon_n([])


def test_compensated_sum_is_order_free():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(200_000) * 10.0 ** rng.integers(-8, 8, 200_000)
    fwd = sc.self_normalized(x)
    rev = sc.self_normalized(x[::-1])
    assert fwd.sum == pytest.approx(rev.sum, rel=1e-15, abs=1e-9)
    assert fwd.bracket == pytest.approx(rev.bracket, rel=1e-15)
