import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from selfnorm_lab import mc_lab as mc
from selfnorm_lab import models as md
from selfnorm_lab.errors import ConfigError, DegenerateVarianceError, DomainError, UnsupportedModelError
from selfnorm_lab.gauss import phi_tail
from selfnorm_lab.stats_core import EnvelopeParams, chung_transform

RAD = md.Rademacher()


def mixed_env():
    return md.BpreModel((md.Environment(0.5, {1: 0.5, 2: 0.5}), md.Environment(0.5, {3: 1.0})))


def cfg(**kw):
    base = dict(model=RAD, n=21, replications=5000, x_grid=(0.0, 0.5, 1.0, 1.5), seed=5, min_expected_hits=0)
    base.update(kw)
    return mc.ExperimentConfig(**base)


@given(st.integers(0, 500), st.integers(1, 500))
def test_wilson_contains_phat(k, extra):
    total = k + extra
    lo, hi = mc.wilson_interval(k, total)
    assert 0.0 <= lo <= k / total <= hi <= 1.0


def test_enumeration_matches_brute_force():
    for n in (3, 5, 7):
        thresholds = (0.0, 0.5, 1.0, math.sqrt(3))
        curve = mc.estimate_tail_curve(cfg(n=n, replications=2**n, enumerate=True, x_grid=thresholds))
        for p in curve.points:
            brute = sum(
                sum(s) / math.sqrt(n) >= p.x - 1e-12 for s in itertools.product((-1, 1), repeat=n)
            )
            assert p.count == brute
    curve = mc.estimate_tail_curve(cfg(n=3, replications=8, enumerate=True, x_grid=(math.sqrt(3),)))
    assert curve.points[0].phat == 0.125


def test_odd_n_zero_threshold_is_half():
    curve = mc.estimate_tail_curve(cfg(n=101, replications=20000, x_grid=(0.0,)))
    p = curve.points[0]
    se = math.sqrt(0.25 / 20000)
    assert abs(p.ratio - 1.0) <= 3 * se / 0.5


def test_curve_invariants():
    curve = mc.estimate_tail_curve(cfg(envelope=mc.EnvelopeSpec("thm21", 1.0)))
    counts = [p.count for p in curve.points]
    assert counts == sorted(counts, reverse=True)
    for p in curve.points:
        assert isinstance(p.count, int) and 0 <= p.count <= 5000
        assert p.wilson_lo <= p.phat <= p.wilson_hi
        assert p.ratio * phi_tail(p.x).value == pytest.approx(p.phat, rel=1e-15)
        assert math.isfinite(p.envelope)


def test_min_expected_hits_excludes():
    curve = mc.estimate_tail_curve(cfg(replications=1000, x_grid=(1.0, 3.0), min_expected_hits=50))
    assert [p.x for p in curve.points] == [1.0]
    assert curve.excluded == [3.0]


def test_worker_count_does_not_change_counts():
    c = cfg(n=64, replications=3 * mc.BLOCK_SIZE + 17)
    one = mc.estimate_tail_curve(c, workers=1)
    four = mc.estimate_tail_curve(c, workers=4)
    assert [p.count for p in one.points] == [p.count for p in four.points]


def test_chung_cross_check():
    n = 12
    law = md.Uniform(1.0)
    xs = (0.0, 0.5, 1.0, 2.0)
    t = mc.simulate_statistic(cfg(model=law, n=n, statistic="T"))
    w = mc.simulate_statistic(cfg(model=law, n=n, statistic="W"))
    for x in xs:
        assert np.count_nonzero(t.values >= x) == np.count_nonzero(w.values >= chung_transform(x, n))


def test_block_one_equals_plain():
    a = mc.simulate_statistic(cfg(model=md.MdsModel(0.5), n=40))
    b = mc.simulate_statistic(cfg(model=md.MdsModel(0.5), n=40, statistic="W_block", block_length=1))
    assert np.array_equal(a.values, b.values)


def test_degenerate_policy():
    # n = 2, m = 2: the single block sum is zero on half of the sign vectors
    c = cfg(n=2, statistic="W_block", block_length=2, replications=4, enumerate=True, x_grid=(0.0,))
    curve = mc.estimate_tail_curve(c)
    assert curve.degenerate == 2 and curve.replications == 2
    with pytest.raises(DegenerateVarianceError):
        mc.simulate_statistic(mc.ExperimentConfig(**{**c.__dict__, "degenerate_policy": "error"}))


def test_lower_tail():
    curve = mc.estimate_tail_curve(cfg(n=101, replications=20000, x_grid=(1.0,), tail="lower"))
    assert 0.85 < curve.points[0].ratio < 1.15


@pytest.mark.parametrize(
    "kw",
    [dict(x_grid=(1.0, 0.5)), dict(statistic="N"), dict(replications=0), dict(tail="both"),
     dict(enumerate=True), dict(statistic="W_block", block_length=50)],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        cfg(**kw)


def test_log_ratio_curve():
    x = 1.0
    p = phi_tail(x).value
    point = mc.TailPoint(x, 10, p, 0, 1, 1.0, 0.0, math.nan)
    zero = mc.TailPoint(2.0, 0, 0.0, 0, 1, 0.0, -math.inf, math.nan)
    curve = mc.TailCurve([point, zero], 10, 100, "W", "upper", 0, [], None, "thm21")
    out = mc.log_ratio_curve(curve)
    assert out.points == [(1.0, pytest.approx(1.0, rel=1e-15))]
    assert out.excluded == [2.0]


def _synthetic_curve(log_ratios, xs=(0.5, 1.0, 1.5, 2.0)):
    pts = [mc.TailPoint(x, 5, 0.1, 0, 1, 1.0, lr, math.nan) for x, lr in zip(xs, log_ratios)]
    return mc.TailCurve(pts, 100, 1000, "W", "upper", 0, [], EnvelopeParams(1.0, 0.1, 0.1, 1.0), "thm21")


def test_fit_constant_by_construction():
    shape = lambda x: 0.1 + x
    c, viol = mc.fit_envelope_constant(_synthetic_curve([2 * shape(x) for x in (0.5, 1, 1.5, 2)]), shape)
    assert c == pytest.approx(2.0) and viol == 0.0
    c, _ = mc.fit_envelope_constant(_synthetic_curve([0.0] * 4), shape)
    assert c == 0.0


def test_fit_constant_shape_mismatch():
    from selfnorm_lab.errors import EnvelopeShapeMismatch

    with pytest.raises(EnvelopeShapeMismatch):
        mc.fit_envelope_constant(_synthetic_curve([0.1] * 4), lambda x: 0.0)
    with pytest.raises(DomainError):
        mc.fit_envelope_constant(_synthetic_curve([0.1, 0.1], xs=(1.0, 2.0)), lambda x: 1.0)


def test_uniformity_check():
    curve = _synthetic_curve([0.05] * 4)
    worst = mc.check_envelope_uniformity(1.0, [curve])
    assert 0 < worst[100] < 1


def test_mdp_synthetic_injection():
    a_values = [0.5, 1.0, 2.0, 4.0]
    rates = mc.mdp_rates(a_values, [-(a * a) / 2 for a in a_values])
    assert all(r == -0.5 for _, r in rates)
    b = 1.3
    rates = mc.mdp_rates([3.0, 7.0], [-(a * a) * b * b / 2 for a in (3.0, 7.0)])
    assert all(r == pytest.approx(-b * b / 2, rel=1e-15) for _, r in rates)
    assert mc.mdp_rates([0.0, 1.0], [-1.0, -2.0]) == [(1.0, -2.0)]


def test_mdp_excludes_a_zero():
    diag = mc.mdp_diagnostic(cfg(n=50), [0.0, 1.0], 1.0)
    assert [r["a"] for r in diag.rows] == [1.0]
    assert diag.excluded[0]["a"] == 0.0


def test_ks_examples():
    assert mc.ks_distance([0.0]).d == 0.5
    r = 20000
    d = mc.ks_distance(np.random.default_rng(0).standard_normal(r)).d
    assert d <= 1.63 / math.sqrt(r)
    with pytest.raises(DomainError):
        mc.kolmogorov_distance(cfg(replications=50))


def test_probe_iid_is_exact():
    curve = mc.probe_condition_a1(cfg(x_grid=(0.01, 0.1)))
    assert all(c == 0 for _, c, _ in curve.points)


def test_probe_mds_decays():
    curve = mc.probe_condition_a1(cfg(model=md.MdsModel(0.5), n=100, x_grid=(0.05, 0.1, 0.15, 0.2)))
    counts = [c for _, c, _ in curve.points]
    assert counts == sorted(counts, reverse=True)
    assert curve.slope is not None and curve.slope < 0


def test_probe_bpre_records_reference():
    curve = mc.probe_condition_a1(cfg(model=mixed_env(), n=200, replications=20000, x_grid=(0.01, 0.03, 0.05)))
    assert "median_harmonic" in curve.reference
    assert curve.points[-1][2] < 1e-2


def test_probe_unsupported():
    with pytest.raises(UnsupportedModelError):
        mc.ln_z_tail_probe(cfg())


def test_ln_z_probe():
    curve = mc.ln_z_tail_probe(cfg(model=mixed_env(), n=400, replications=10000, x_grid=(0.0, 1.0, 2.0, 3.0)))
    phats = [p for _, _, p in curve.points]
    assert phats[0] == 1.0
    assert phats == sorted(phats, reverse=True)
    assert 0.02 <= phats[2] <= 0.08
    with pytest.raises(DegenerateVarianceError):
        mc.ln_z_tail_probe(cfg(model=md.BpreModel.deterministic({2: 1.0}), n=10))


def test_coverage_levels():
    c = cfg(model=mixed_env(), statistic="N", n=200, replications=10000, x_grid=())
    half = mc.coverage_experiment(c, 0.5)
    assert abs(half.coverage - 0.5) <= (half.hi - half.lo) / 2 + 0.02
    high = mc.coverage_experiment(c, 0.99999)
    assert high.coverage > 0.999


def test_coverage_degenerate_env():
    c = cfg(model=md.BpreModel.deterministic({2: 1.0}), statistic="N", n=20, replications=100, x_grid=())
    with pytest.raises(DegenerateVarianceError):
        mc.coverage_experiment(c, 0.95)


def test_martingale_increments_centred():
    c = cfg(model=mixed_env(), statistic="N", n=10, replications=20000, x_grid=())
    means, se = mc.martingale_increment_means(c)
    assert np.all(np.abs(means) <= 3.5 * se)
