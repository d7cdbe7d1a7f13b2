"""Ergodic rate estimators, paired sweeps and rate-distortion helpers."""

import io
import math

import numpy as np
import pytest
from scipy.integrate import quad

from misobc import capacity, core
from misobc.capacity import MCConfig, PowerGrid
from misobc.core import DomainError

# Closed-form values of E log2(1 + (P/2) x), x ~ Gamma(2, 1), computed with
# 40-digit arithmetic from (1 + (1 - 2/P) e^{2/P} E1(2/P)) / ln 2 and frozen
# before the estimators were written.  At P = 2 the special value is 1/ln 2.
GOLDEN_C21 = {
    0.01: 0.014320164556233963,
    1.0: 0.92140803717305653,
    2.0: 1.4426950408889634,
    10.0: 3.1662525061024752,
    100.0: 6.2815343559427342,
    10000.0: 12.89794953860777,
}

FAST = MCConfig(samples=200_000, seed=901)


def test_oracle_matches_golden_values():
    for power, expect in GOLDEN_C21.items():
        assert capacity.c21_oracle(power) == pytest.approx(expect, abs=1e-10)


def test_oracle_edge_cases():
    assert capacity.c21_oracle(0.0) == 0.0
    with pytest.raises(ValueError):
        capacity.c21_oracle(-1.0)
    with pytest.raises(ValueError):
        capacity.c21_oracle(math.inf)


def test_c21_estimator_tracks_oracle():
    for power in (1.0, 10.0):
        est = capacity.c21(power, FAST)
        assert est.samples == FAST.samples
        assert est.seed == FAST.seed
        assert abs(est.value - GOLDEN_C21[power]) < 5.0 * est.stderr


def test_c21_estimator_is_deterministic():
    a = capacity.c21(2.0, FAST)
    b = capacity.c21(2.0, FAST)
    assert a == b


def test_c21_zero_power():
    est = capacity.c21(0.0, MCConfig(samples=1000))
    assert est.value == 0.0
    assert est.stderr == 0.0


def test_worker_partitioning_is_deterministic():
    mc2 = MCConfig(samples=100_000, seed=11, workers=2)
    a = capacity.c21(5.0, mc2)
    b = capacity.c21(5.0, mc2)
    assert a == b
    # chunk layout is part of the estimate's identity, so a different
    # worker count may move the value within its error bar
    one = capacity.c21(5.0, MCConfig(samples=100_000, seed=11, workers=1))
    assert abs(a.value - one.value) < 5.0 * (a.stderr + one.stderr)


def test_chunk_sizes_cover_samples():
    for total, workers in ((11, 4), (3, 8), (10**6, 7), (1, 1)):
        sizes = capacity._chunk_sizes(total, workers)
        assert sum(sizes) == total
        assert all(s > 0 for s in sizes)
        assert max(sizes) - min(sizes) <= 1


def test_c22d_zero_distortion_is_classical_capacity():
    # with D = 0 the second row is as clean as the first; cross-check the
    # estimator against a direct log-det average on its own draws
    mc = MCConfig(samples=200_000, seed=42)
    est = capacity.c22d(5.0, 0.0, mc)
    rng = core.stream(991, 0)
    h = core.sample_cn01(rng, (200_000, 2, 2))
    vals = core.logdet_capacity_term(h, 5.0, (1.0, 1.0))
    direct = float(np.mean(vals))
    direct_se = float(np.std(vals, ddof=1) / math.sqrt(vals.size))
    assert abs(est.value - direct) < 4.0 * math.hypot(est.stderr, direct_se)


def test_c22d_decreases_with_distortion():
    vals = [capacity.c22d(10.0, d, FAST).value for d in (0.0, 1.0, 4.0, 16.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_c22d_sits_between_c21_and_twice_c21():
    for d in (1.0, 4.0):
        for power in (0.5, 10.0, 1000.0):
            lo = capacity.c21(power, FAST)
            hi = capacity.c22d(power, d, FAST)
            assert lo.value < hi.value < 2.0 * lo.value


def test_rq_matches_quadrature():
    # |g|^2 + |h|^2 sums four unit-variance squared magnitudes: Gamma(4, 1)
    power, d = 10.0, 4.0
    b = power / (2.0 * d)

    def integrand(x):
        return math.log1p(b * x) * x**3 * math.exp(-x) / 6.0 / math.log(2.0)

    expect = quad(integrand, 0.0, np.inf, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
    est = capacity.rq(power, d, FAST)
    assert abs(est.value - expect) < 5.0 * est.stderr


def test_rq_needs_positive_distortion():
    with pytest.raises(ValueError):
        capacity.rq(1.0, 0.0, FAST)
    with pytest.raises(ValueError):
        capacity.rq(1.0, -1.0, FAST)


def test_c21_rejects_distortion():
    with pytest.raises(ValueError):
        capacity.sweep("c21", PowerGrid.single(1.0), FAST, distortion=4.0)


def test_unknown_quantity_rejected():
    with pytest.raises(ValueError):
        capacity.sweep("c23", PowerGrid.single(1.0), FAST)


def test_power_grid_validation():
    with pytest.raises(ValueError):
        PowerGrid(())
    with pytest.raises(ValueError):
        PowerGrid((1.0, 1.0))
    with pytest.raises(ValueError):
        PowerGrid((2.0, 1.0))
    with pytest.raises(ValueError):
        PowerGrid((-1.0, 1.0))
    grid = PowerGrid.default()
    assert len(grid.points) == 50
    assert grid.points[0] == pytest.approx(1e-2)
    assert grid.points[-1] == pytest.approx(1e4)
    assert PowerGrid((0.0, 1.0)).points == (0.0, 1.0)


def test_mcconfig_validation():
    with pytest.raises(ValueError):
        MCConfig(samples=0)
    with pytest.raises(ValueError):
        MCConfig(workers=0)


def test_sweep_shares_draws_across_powers():
    # common random numbers make each per-sample curve monotone in P, so
    # the estimated curve is exactly monotone too
    grid = PowerGrid((0.0, 0.1, 1.0, 10.0, 100.0))
    table = capacity.sweep("c21", grid, MCConfig(samples=20_000, seed=3))
    vals = [row.estimate.value for row in table.rows]
    assert vals[0] == 0.0
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_sweep_csv_format():
    table = capacity.sweep("c21", PowerGrid((1.0, 2.0)), MCConfig(samples=1000, seed=5))
    buf = io.StringIO()
    table.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "P,value,stderr,samples,seed"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert float(first[0]) == 1.0
    assert int(first[3]) == 1000
    assert int(first[4]) == 5


def test_sweep_json_rows():
    table = capacity.sweep("c22d", PowerGrid.single(2.0), MCConfig(samples=1000, seed=5),
                           distortion=4.0)
    rows = table.to_json()
    assert len(rows) == 1
    assert set(rows[0]) == {"P", "value", "stderr", "samples", "seed"}
    assert rows[0]["P"] == 2.0


def test_paired_sweep_covariance_is_positive():
    pairs = capacity.paired_sweep("c21", "c22d", PowerGrid.single(10.0),
                                  MCConfig(samples=50_000, seed=8), distortion=4.0)
    assert len(pairs) == 1
    assert pairs[0].mean_cov > 0.0


def test_ratio_sweep_pairing_tightens_errors():
    grid = PowerGrid((0.5, 5.0, 500.0))
    table = capacity.ratio_sweep(4.0, grid, MCConfig(samples=50_000, seed=8))
    for row in table.rows:
        assert row.ratio == row.rq.value / row.c21.value
        naive = math.hypot(row.rq.stderr / row.c21.value,
                           row.rq.value * row.c21.stderr / row.c21.value**2)
        assert row.ratio_stderr < naive
    assert table.max_row().ratio == max(r.ratio for r in table.rows)


def test_ratio_sweep_rejects_zero_power():
    with pytest.raises(ValueError):
        capacity.ratio_sweep(4.0, PowerGrid((0.0, 1.0)), FAST)


def test_ratio_csv_format():
    table = capacity.ratio_sweep(4.0, PowerGrid.single(1.0), MCConfig(samples=1000))
    buf = io.StringIO()
    table.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "P,rq,c21,ratio,ratio_stderr"
    assert len(lines) == 2


# ---------------------------------------------------------------------------
# rate-distortion helpers


def test_waterfill_single_variance_exact():
    assert capacity.rd_reverse_waterfill([4.0], 1.0) == 2.0
    assert capacity.rd_reverse_waterfill([1.0], 1.0) == 0.0
    assert capacity.rd_reverse_waterfill([1.0], 2.0) == 0.0


def test_waterfill_equal_variances_exact():
    # all components identical: level = budget, rate = log2(v / budget)
    assert capacity.rd_reverse_waterfill([1.0] * 7, 0.25) == 2.0
    got = capacity.rd_reverse_waterfill([3.0] * 5, 0.75)
    assert got == pytest.approx(2.0, rel=1e-14)


def test_waterfill_two_level_fixture():
    # variances {1, 4} with unit budget: level sits at 1, only the second
    # component is coded, rate = log2(4)/2 = 1 bit
    assert capacity.rd_reverse_waterfill([1.0, 4.0], 1.0) == 1.0


def test_waterfill_level_below_smallest_variance():
    # budget below every variance: level = budget for all components
    got = capacity.rd_reverse_waterfill([1.0, 4.0], 0.5)
    assert got == pytest.approx(0.5 * (math.log2(2.0) + math.log2(8.0)), rel=1e-13)


def test_waterfill_never_exceeds_suboptimal():
    rng = np.random.default_rng(2718)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        v = rng.lognormal(0.0, 1.2, size=n)
        budget = float(rng.uniform(0.05, 1.2) * v.mean())
        wf = capacity.rd_reverse_waterfill(v, budget)
        sub = capacity.rd_suboptimal(v, budget)
        assert wf <= sub


def test_waterfill_two_level_matches_dense_scan():
    # independent search: locate the water level by two-stage dense scan
    # over mean(min(v, L)) = budget, then price the active components
    rng = np.random.default_rng(31)
    for _ in range(25):
        v = np.concatenate([
            np.full(int(rng.integers(1, 6)), float(rng.uniform(0.2, 2.0))),
            np.full(int(rng.integers(1, 6)), float(rng.uniform(2.5, 9.0))),
        ])
        budget = float(rng.uniform(0.3, 0.95) * v.mean())

        lo, hi = budget, float(v.max())
        for _ in range(2):
            levels = np.linspace(lo, hi, 10_001)
            err = np.abs(np.mean(np.minimum(v[None, :], levels[:, None]), axis=1) - budget)
            k = int(np.argmin(err))
            lo = levels[max(k - 1, 0)]
            hi = levels[min(k + 1, len(levels) - 1)]
        level = 0.5 * (lo + hi)
        brute = float(np.sum(np.log2(v[v > level] / level)) / v.size)
        exact = capacity.rd_reverse_waterfill(v, budget)
        assert exact == pytest.approx(brute, abs=1e-6)


def test_waterfill_validation():
    with pytest.raises(ValueError):
        capacity.rd_reverse_waterfill([], 1.0)
    with pytest.raises(ValueError):
        capacity.rd_reverse_waterfill([1.0, -2.0], 1.0)
    with pytest.raises(ValueError):
        capacity.rd_reverse_waterfill([1.0], 0.0)
    with pytest.raises(ValueError):
        capacity.rd_reverse_waterfill([math.inf], 1.0)


def test_suboptimal_closed_form():
    assert capacity.rd_suboptimal([1.0], 1.0) == 1.0
    got = capacity.rd_suboptimal([3.0, 3.0], 1.0)
    assert got == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValueError):
        capacity.rd_suboptimal([1.0], -1.0)


def test_wyner_zero_gain_recovers_plain_rate():
    # a = 0: the side observation is pure noise, conditional variance is
    # the source variance itself
    mc = MCConfig(samples=1000, seed=4)
    got = capacity.ergodic_wyner_rate(2.0, 3.0, 0.5, capacity.constant_gain(0.0), mc)
    assert got == 2.0


def test_wyner_distortion_at_conditional_variance_is_free():
    cv = 1.0 * 1.0 / (1.0 + 1.0)
    mc = MCConfig(samples=1000, seed=4)
    assert capacity.ergodic_wyner_rate(1.0, 1.0, cv, capacity.constant_gain(1.0), mc) == 0.0


def test_wyner_constant_gain_static_formula():
    sv, nv, a = 1.5, 0.75, 2.0
    cv = sv * nv / (a * a * sv + nv)
    mc = MCConfig(samples=1000, seed=4)
    got = capacity.ergodic_wyner_rate(sv, nv, cv / 2.0, capacity.constant_gain(a), mc)
    assert got == pytest.approx(1.0, abs=1e-15)
    # halving the distortion costs exactly one more bit
    got2 = capacity.ergodic_wyner_rate(sv, nv, cv / 4.0, capacity.constant_gain(a), mc)
    assert got2 == pytest.approx(2.0, abs=1e-14)


def test_wyner_rejects_excess_distortion():
    with pytest.raises(DomainError):
        capacity.ergodic_wyner_rate(1.0, 1.0, 0.6, capacity.constant_gain(1.0),
                                    MCConfig(samples=100, seed=4))
    with pytest.raises(DomainError):
        capacity.ergodic_wyner_rate(1.0, 1.0, 0.0, capacity.constant_gain(1.0),
                                    MCConfig(samples=100, seed=4))


def test_wyner_random_gain_monotone_in_distortion():
    mc = MCConfig(samples=20_000, seed=12)
    r1 = capacity.ergodic_wyner_rate(1.0, 1.0, 0.05, capacity.rayleigh_gain(), mc)
    r2 = capacity.ergodic_wyner_rate(1.0, 1.0, 0.02, capacity.rayleigh_gain(), mc)
    assert 0.0 < r1 < r2


def test_wyner_sampler_contract_enforced():
    mc = MCConfig(samples=100, seed=4)
    with pytest.raises(ValueError):
        capacity.ergodic_wyner_rate(1.0, 1.0, 0.1,
                                    lambda rng, n: np.zeros((n, 2)), mc)
    with pytest.raises(ValueError):
        capacity.ergodic_wyner_rate(1.0, 1.0, 0.1,
                                    lambda rng, n: np.full(n, -1.0), mc)
    with pytest.raises(ValueError):
        capacity.constant_gain(-2.0)
