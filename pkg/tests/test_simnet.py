import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from lrdprobe import estimation as est
from lrdprobe.errors import ValidationError
from lrdprobe.experiments import reference_node
from lrdprobe.probe import probe_pattern
from lrdprobe.sampling import Geometric, SamplingPattern
from lrdprobe.simnet import NodeConfig, PathConfig, _clip_shift, compose_cov, or_compose, simulate_path
from lrdprobe.traffic import LrdModel, Trace, TraceKind, fgn_autocov, gen_fgn


def _full_pattern(T):
    return SamplingPattern(Trace(np.ones(T), 1e-3, TraceKind.BINARY), Geometric(1.0), 0)


def _trace_node(y, **kw):
    return NodeConfig(capacity=kw.pop("capacity", 1.0), cross_trace=np.asarray(y, dtype=float), **kw)


class TestSimulate:
    def test_zero_cross_traffic(self):
        path = PathConfig([NodeConfig(generator="none"), NodeConfig(generator="none", capacity=3.0)])
        res = simulate_path(path, probe_pattern(Geometric(0.1), 500, 1), seed=3)
        assert np.all(res.delays == res.d_min) and res.d_min == 0.0
        assert all(np.all(b.values == 0) for b in res.busy)

    def test_single_burst_drains_over_two_slots(self):
        y = np.zeros(10)
        y[3] = 2.0
        res = simulate_path(PathConfig([_trace_node(y)]), _full_pattern(10))
        assert res.busy[0].values.tolist() == [0, 0, 0, 1, 1, 0, 0, 0, 0, 0]
        assert res.delays[3] == pytest.approx(2.0) and res.delays[4] == pytest.approx(1.0)

    def test_constant_half_load_pair(self):
        T, g_s = 100, 0.01
        res = simulate_path(PathConfig([_trace_node(np.full(T, 0.5))]), _full_pattern(T), "pair", pair_gap=g_s)
        assert np.allclose(res.dispersions - g_s, 0.5 * g_s, rtol=1e-12)
        assert np.all(res.pair_valid)

    def test_work_conservation(self):
        rng = np.random.default_rng(0)
        y = rng.exponential(0.9, 20000) * (rng.random(20000) < 0.9)
        res = simulate_path(PathConfig([_trace_node(y, buffer=3.0)]), _full_pattern(y.size))
        s = res.node_stats[0]
        assert s.dropped > 0
        assert s.served == pytest.approx(s.arrived - s.final_backlog - s.dropped, rel=1e-12)
        assert res.dropped.any()

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0, 5), min_size=1, max_size=300), st.floats(0.5, 3.0),
           st.one_of(st.none(), st.floats(0, 4)))
    def test_work_conservation_property(self, y, cap, buf):
        res = simulate_path(PathConfig([_trace_node(y, capacity=cap, buffer=buf)]), _full_pattern(len(y)))
        s = res.node_stats[0]
        assert s.served == pytest.approx(s.arrived - s.final_backlog - s.dropped, rel=1e-9, abs=1e-9)

    def test_delays_at_least_dmin(self):
        path = PathConfig([reference_node(0.8, rate_interval=1, latency=0.5),
                           reference_node(0.7, rate_interval=1)])
        res = simulate_path(path, probe_pattern(Geometric(0.1), 2000, 2), seed=4)
        ok = ~res.dropped
        assert res.d_min == 0.5 and np.all(res.delays[ok] >= res.d_min)

    def test_deterministic(self):
        path = PathConfig([reference_node(0.8), reference_node(0.6)])
        pat = probe_pattern(Geometric(0.1), 5000, 5)
        a = simulate_path(path, pat, "pair", seed=9)
        b = simulate_path(path, pat, "pair", seed=9)
        assert np.array_equal(a.delays, b.delays, equal_nan=True)
        assert np.array_equal(a.dispersions, b.dispersions, equal_nan=True)
        assert all(np.array_equal(x.values, y.values) for x, y in zip(a.busy, b.busy))
        c = simulate_path(path, pat, "pair", seed=10)
        assert not np.array_equal(a.delays, c.delays, equal_nan=True)

    def test_unstable_warns(self):
        with pytest.warns(RuntimeWarning):
            res = simulate_path(PathConfig([_trace_node(np.full(50, 1.2), buffer=None)]), _full_pattern(50))
        assert res.unstable

    def test_bad_kind(self):
        with pytest.raises(ValidationError):
            simulate_path(PathConfig([NodeConfig(generator="none")]), _full_pattern(5), "burst")

    def test_fgn_mean_after_clip(self):
        # short-memory traffic so the sample mean is sharp; the level shift makes the
        # post-clip mean match the configured load
        node = reference_node(0.5, util=0.3, rate_interval=1)
        res = simulate_path(PathConfig([node]), _full_pattern(10**6), seed=1)
        assert res.node_stats[0].utilization == pytest.approx(0.3, rel=0.01)
        level = _clip_shift(0.3, 1.0)
        assert level * norm.cdf(level) + norm.pdf(level) == pytest.approx(0.3, rel=1e-12)
        assert res.node_stats[0].clipped_fraction == pytest.approx(norm.cdf(-level), abs=0.005)

    def test_path_json_roundtrip(self):
        path = PathConfig([reference_node(0.8, seed=5), NodeConfig(generator="none", capacity=2.0, buffer=None)])
        back = PathConfig.from_json(path.to_json())
        assert back.to_json() == path.to_json()

    def test_probe_csv(self, tmp_path):
        path = PathConfig([_trace_node(np.r_[0.0, 2.0, 0.0, 0.0], buffer=0.5)])
        res = simulate_path(path, _full_pattern(4))
        p = tmp_path / "probes.csv"
        res.write_probe_csv(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "send_slot,delay_slots,dropped"
        assert lines[2] == "1,,1"

    def test_busy_lrd_preserved(self):
        # single node, utilization 0.5, H=0.8: busy indicator keeps the covariance decay
        T = 10**7
        res = simulate_path(PathConfig([reference_node(0.8)]), _full_pattern(T), seed=21)
        c = est.sample_autocov(res.busy[0], est.log_lags(1, 1000))
        assert est.hurst_cov_slope(c).value == pytest.approx(0.8, abs=0.07)


class TestOrCompose:
    def test_truth_table(self):
        out = or_compose([Trace(np.array([0.0, 1, 0, 1]), kind=TraceKind.BINARY),
                          Trace(np.array([0.0, 0, 1, 1]), kind=TraceKind.BINARY)])
        assert out.values.tolist() == [0, 1, 1, 1] and out.kind == TraceKind.BINARY

    def test_single_input(self):
        x = Trace(np.array([1.0, 0, 1]), kind=TraceKind.BINARY)
        assert np.array_equal(or_compose([x]).values, x.values)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 5))
    def test_matches_logical_or(self, seed, k):
        rng = np.random.default_rng(seed)
        xs = [(rng.random(10**4) < rng.random()).astype(float) for _ in range(k)]
        assert np.array_equal(or_compose(xs).values, np.logical_or.reduce(xs).astype(float))

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            or_compose([np.zeros(3), np.zeros(4)])


def _pair_pmf(mu, c):
    # joint pmf of (X_t, X_{t+tau}) for a stationary binary process
    p11 = mu**2 + c
    return {(1, 1): p11, (1, 0): mu - p11, (0, 1): mu - p11, (0, 0): 1 - 2 * mu + p11}


def _or_cov_exhaustive(mus, cs):
    pmfs = [_pair_pmf(m, c) for m, c in zip(mus, cs)]
    e_ab = e_a = 0.0
    for combo in itertools.product(*[list(p.items()) for p in pmfs]):
        prob = np.prod([pr for _, pr in combo])
        a = max(v[0] for v, _ in combo)
        b = max(v[1] for v, _ in combo)
        e_ab += prob * a * b
        e_a += prob * a
    return e_ab - e_a**2


class TestComposeCov:
    def test_memoryless(self):
        assert compose_cov([0.0, 0.0], [0.3, 0.6]) == 0.0

    def test_example(self):
        assert compose_cov([0.1, 0.05], [0.5, 0.5]) == pytest.approx(0.0425, rel=1e-12)

    @given(st.lists(st.tuples(st.floats(0.05, 0.95), st.floats(0.0, 1.0)), min_size=1, max_size=4))
    def test_exhaustive_joint_distribution(self, params):
        mus = [m for m, _ in params]
        # nonnegative covariances up to mu(1-mu) keep every pmf entry valid
        cs = [f * m * (1 - m) for m, f in params]
        assert compose_cov(cs, mus) == pytest.approx(_or_cov_exhaustive(mus, cs), rel=1e-9, abs=1e-12)

    def test_series_lookup(self):
        a = est.CovarianceSeries([1, 2], [0.1, 0.2], 100)
        b = est.CovarianceSeries([1, 2], [0.05, 0.01], 100)
        assert compose_cov([a, b], [0.5, 0.5], tau=1) == pytest.approx(0.0425)
        with pytest.raises(ValidationError):
            compose_cov([a, b], [0.5, 0.5])

    def test_bad_mean(self):
        with pytest.raises(ValidationError):
            compose_cov([0.1, 0.1], [0.5, 1.2])

    @pytest.mark.parametrize("h1,h2", [(0.6, 0.9), (0.9, 0.6), (0.6, 0.6), (0.9, 0.9), (0.7, 0.9)])
    def test_dominance_two_node_pairs(self, h1, h2):
        lags = np.logspace(2, 4, 30)
        out = compose_cov([0.25 * lags ** (2 * h - 2) for h in (h1, h2)], [0.5, 0.5])
        assert est.loglog_fit(lags, out).slope == pytest.approx(2 * max(h1, h2) - 2, abs=0.05)

    @given(st.floats(0.55, 0.95), st.one_of(st.just(0.0), st.floats(0.2, 0.4)), st.floats(0.05, 0.5))
    def test_dominance(self, h1, gap, m):
        # equally loaded indicators (mean <= 1/2) whose H are equal or >= 0.2 apart
        h2 = h1 - gap if h1 - gap > 0.5 else h1
        lags = np.logspace(2, 4, 30)
        out = compose_cov([m * (1 - m) * lags ** (2 * h - 2) for h in (h1, h2)], [m, m])
        assert est.loglog_fit(lags, out).slope == pytest.approx(2 * max(h1, h2) - 2, abs=0.05)

    def test_close_hurst_mixture(self):
        # with close H or unequal loads both terms matter over [1e2, 1e4] and the
        # slope sits between the two power laws
        lags = np.logspace(2, 4, 30)
        cs = [m * (1 - m) * lags ** (2 * h - 2) for h, m in ((0.75, 0.5), (0.625, 0.75))]
        slope = est.loglog_fit(lags, compose_cov(cs, [0.5, 0.75])).slope
        assert 2 * 0.625 - 2 < slope < 2 * 0.75 - 2 - 0.05

    def test_monte_carlo_threshold_fgn(self):
        # sign indicators of independent fGn: c(tau) = arcsin(rho(tau)) / (2 pi), mean 1/2
        T, lags = 10**5, np.array([1, 10, 100])
        m1, m2 = LrdModel(0.8), LrdModel(0.7)
        c1 = np.arcsin(fgn_autocov(m1, lags)) / (2 * np.pi)
        c2 = np.arcsin(fgn_autocov(m2, lags)) / (2 * np.pi)
        want = compose_cov([c1, c2], [0.5, 0.5])
        got = []
        for s in range(30):
            a = (gen_fgn(m1, T, 2 * s).values > 0).astype(float)
            b = (gen_fgn(m2, T, 2 * s + 1).values > 0).astype(float)
            got.append(est.sample_autocov(or_compose([a, b]), lags, mean_mode=0.75).values)
        got = np.array(got)
        se = got.std(axis=0, ddof=1) / np.sqrt(got.shape[0])
        assert np.all(np.abs(got.mean(axis=0) - want) <= 3 * se + 1e-12), (got.mean(axis=0), want, se)
