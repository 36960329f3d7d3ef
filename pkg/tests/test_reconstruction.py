import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lrdprobe import estimation as est
from lrdprobe.errors import AliasingError, UnsupportedInversionError, ValidationError
from lrdprobe.reconstruction import (TrafficMoments, aggvar_from_autocov, estimate_moments, forward_aggvar,
                                     forward_cov, reconstruct_aggvar, reconstruct_cov, reconstruct_psd)
from lrdprobe.sampling import Gamma, Geometric, Periodic, Uniform, apply, draw_pattern
from lrdprobe.traffic import LrdModel, Trace, fgn_autocov, gen_fgn

T = 10**6


def _cy(lags, h=0.8):
    lags = np.asarray(lags)
    return est.CovarianceSeries(lags, fgn_autocov(LrdModel(h), lags), T)


class TestForward:
    def test_geometric(self):
        c = forward_cov(est.CovarianceSeries([3], [0.5], T), Geometric(0.1), 7.0)
        assert c.values[0] == pytest.approx(0.005)

    def test_periodic(self):
        c = forward_cov(est.CovarianceSeries([10], [0.5], T), Periodic(10), 2.0)
        assert c.values[0] == pytest.approx(0.41)

    @pytest.mark.parametrize("spec", [Geometric(0.1), Periodic(10), Gamma(2, 0.1), Gamma(4, 0.1), Uniform(20)])
    def test_uncorrelated_traffic(self, spec):
        lags = np.arange(1, 20)
        c = forward_cov(est.CovarianceSeries(lags, np.zeros(lags.size), T), spec, 3.0)
        assert np.allclose(c.values, spec.autocov(lags) * 9.0, rtol=1e-14, atol=0)


class TestReconstructCov:
    def test_geometric(self):
        c = reconstruct_cov(est.CovarianceSeries([5], [0.005], T), Geometric(0.1))
        assert c.values[0] == pytest.approx(0.5) and c.source == "reconstructed"

    def test_periodic(self):
        c = reconstruct_cov(est.CovarianceSeries([10], [0.41], T), Periodic(10), TrafficMoments(2.0, 1.0))
        assert c.values[0] == pytest.approx(0.5)

    @pytest.mark.parametrize("spec,lags", [
        (Geometric(0.1), np.arange(1, 2000)),
        (Periodic(10), np.arange(10, 2000, 10)),
        (Gamma(2, 0.1), np.arange(1, 2000)),
        (Gamma(4, 0.1), np.arange(1, 2000)),
        (Uniform(20), np.arange(1, 21)),
    ])
    @pytest.mark.parametrize("mu_y", [0.0, 1.0, 5.0])
    def test_roundtrip_identity(self, spec, lags, mu_y):
        cy = _cy(lags)
        back = reconstruct_cov(forward_cov(cy, spec, mu_y), spec, TrafficMoments(mu_y, 1.0))
        assert np.array_equal(back.lags, lags)
        assert np.allclose(back.values, cy.values, rtol=1e-12, atol=0)

    def test_lag_zero_roundtrip(self):
        cy = _cy(np.arange(0, 50))
        for spec in (Geometric(0.1), Gamma(2, 0.1)):
            back = reconstruct_cov(forward_cov(cy, spec, 2.0), spec, TrafficMoments(2.0, 1.0))
            assert back.values[0] == pytest.approx(1.0, rel=1e-12)

    def test_periodic_inadmissible(self):
        c = est.CovarianceSeries([5, 10], [0.1, 0.1], T)
        with pytest.raises(ValidationError):
            reconstruct_cov(c, Periodic(10), TrafficMoments(1.0, 1.0))
        kept = reconstruct_cov(c, Periodic(10), TrafficMoments(1.0, 1.0), drop_inadmissible=True)
        assert kept.lags.tolist() == [10] and kept.meta["dropped_lags"] == 1

    def test_uniform_beyond_support(self):
        with pytest.raises(ValidationError):
            reconstruct_cov(est.CovarianceSeries([25], [0.1], T), Uniform(20), TrafficMoments(1.0, 1.0))

    def test_non_geometric_needs_moments(self):
        with pytest.raises(ValidationError):
            reconstruct_cov(est.CovarianceSeries([4], [0.1], T), Gamma(2, 0.1))

    @given(st.floats(0.51, 0.99), st.floats(1e-3, 1e3), st.floats(0.01, 1.0))
    def test_geometric_preserves_loglog_slope(self, h, scale, p):
        lags = est.log_lags(1, 1000)
        cw = est.CovarianceSeries(lags, scale * lags ** (2 * h - 2), T)
        cy = reconstruct_cov(cw, Geometric(p))
        a = est.loglog_fit(cw.lags, cw.values).slope
        b = est.loglog_fit(cy.lags, cy.values).slope
        assert b == pytest.approx(a, abs=1e-9)


class TestMoments:
    def test_constant(self):
        spec = Geometric(0.1)
        w = apply(draw_pattern(spec, 10**5, 0), Trace(np.full(10**5, 4.0)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            m = estimate_moments(w, spec)
        assert m.mean == pytest.approx(4.0, rel=0.05)
        # only the intensity estimation error leaks into the variance
        assert 0.0 <= m.variance < 0.02 * 16.0

    def test_constant_exact_intensity(self):
        # with the empirical intensity in place of mu_A the variance is exactly 0
        spec = Geometric(0.1)
        pat = draw_pattern(spec, 10**5, 1)
        mu_hat = pat.indicator.values.mean()
        w = apply(pat, Trace(np.full(10**5, 4.0)))
        m = estimate_moments(w, Geometric(mu_hat))
        assert m.mean == pytest.approx(4.0, rel=1e-12)
        assert m.variance == pytest.approx(0.0, abs=1e-9)

    def test_zero(self):
        m = estimate_moments(Trace(np.zeros(1000)), Geometric(0.1))
        assert m.mean == 0 and m.variance == 0 and not m.approximate

    def test_approximate_flag(self):
        with pytest.warns(RuntimeWarning):
            m = estimate_moments(Trace(np.ones(1000)), Periodic(10))
        assert m.approximate

    def test_monte_carlo(self):
        # a single H=0.8 run hits 2% / 10% with probability ~0.88 (LRD sample-mean sd
        # T^(H-1) ~ 0.063 on mean 5), so check the hit rate and the 20-seed average
        spec = Geometric(0.1)
        means, variances = [], []
        for s in range(20):
            y = gen_fgn(LrdModel(0.8, 1.0, 5.0), T, 100 + s)
            m = estimate_moments(apply(draw_pattern(spec, T, 200 + s), y), spec)
            means.append(m.mean)
            variances.append(m.variance)
        means, variances = np.array(means), np.array(variances)
        assert np.mean(np.abs(means / 5.0 - 1) < 0.02) >= 0.7
        assert np.mean(np.abs(variances - 1.0) < 0.10) >= 0.7
        assert means.mean() == pytest.approx(5.0, rel=0.02)
        assert variances.mean() == pytest.approx(1.0, rel=0.10)

    def test_negative_variance_clipped(self):
        with pytest.warns(RuntimeWarning):
            m = estimate_moments(Trace(np.ones(1000)), Geometric(0.5))
        assert m.variance == 0.0


class TestAggvar:
    def test_block_identity_helper(self):
        assert aggvar_from_autocov([2.0, 0.0, 0.0], 3) == pytest.approx(2.0 / 3)
        with pytest.raises(ValidationError):
            aggvar_from_autocov([1.0], 3)

    def test_m1_geometric(self):
        spec = Geometric(0.1)
        var_y = est.AggVarSeries([1], [1.0], T)
        v = forward_aggvar(var_y, spec, 2.0, est.CovarianceSeries([0], [1.0], T))
        assert v.variances[0] == pytest.approx(0.09 * 4 + 0.1 * 1.0)

    def test_deterministic_traffic(self):
        m = np.array([1, 5, 20])
        for spec in (Geometric(0.1), Gamma(2, 0.1), Periodic(10)):
            cy = est.CovarianceSeries(np.arange(20), np.zeros(20), T)
            v = forward_aggvar(est.AggVarSeries(m, np.zeros(3), T), spec, 3.0, cy)
            want = [9.0 * aggvar_from_autocov(spec.autocov(np.arange(k)), k) for k in m]
            assert np.allclose(v.variances, want, rtol=1e-12)

    def test_geometric_cross_term_vanishes(self):
        # geometric result depends on c_Y only through lag 0
        spec = Geometric(0.2)
        m = np.array([4, 16])
        var_y = est.AggVarSeries(m, [0.5, 0.3], T)
        a = forward_aggvar(var_y, spec, 1.0, est.CovarianceSeries([0], [1.0], T))
        b = forward_aggvar(var_y, spec, 1.0, est.CovarianceSeries(np.arange(16), np.r_[1.0, np.ones(15) * 0.7], T))
        assert np.array_equal(a.variances, b.variances)

    def test_missing_lags(self):
        var_y = est.AggVarSeries([10], [0.5], T)
        with pytest.raises(ValidationError):
            forward_aggvar(var_y, Gamma(2, 0.1), 1.0, est.CovarianceSeries([0, 1], [1.0, 0.5], T))
        with pytest.raises(ValidationError):
            forward_aggvar(var_y, Geometric(0.1), 1.0, est.CovarianceSeries([1], [0.5], T))

    def test_roundtrip_geometric(self):
        spec = Geometric(0.1)
        m = est.default_block_sizes(T)
        model = LrdModel(0.8)
        lags = np.arange(0, int(m.max()))
        cy = est.CovarianceSeries(lags, fgn_autocov(model, lags), T)
        var_y = est.AggVarSeries(m, [aggvar_from_autocov(cy.values, int(k)) for k in m], T)
        mom = TrafficMoments(2.0, 1.0)
        back = reconstruct_aggvar(forward_aggvar(var_y, spec, mom.mean, cy), spec, mom)
        assert np.allclose(back.variances, var_y.variances, rtol=1e-9, atol=0)
        assert back.meta["source"] == "reconstructed"

    @pytest.mark.parametrize("spec", [Periodic(10), Gamma(2, 0.1), Uniform(20)])
    def test_non_geometric_unsupported(self, spec):
        with pytest.raises(UnsupportedInversionError):
            reconstruct_aggvar(est.AggVarSeries([10], [0.1], T), spec, TrafficMoments(1.0, 1.0))

    def test_pipeline_slope(self):
        spec = Geometric(0.1)
        m = est.default_block_sizes(T)
        slopes = []
        for s in range(5):
            y = gen_fgn(LrdModel(0.8, 1.0, 1.0), T, 20 + s)
            w = apply(draw_pattern(spec, T, 40 + s), y)
            av = reconstruct_aggvar(est.aggregate_variance(w, m), spec, estimate_moments(w, spec))
            slopes.append(est.loglog_fit(av.block_sizes, av.variances).slope)
        assert np.median(slopes) == pytest.approx(-0.4, abs=0.05)


class TestPsd:
    def test_example(self):
        ps = est.SpectrumSeries(np.array([0.01]), np.array([0.25]), T)
        out = reconstruct_psd(ps, Geometric(0.1), TrafficMoments(1.0, 1.0))
        assert out.densities[0] == pytest.approx(5.0)

    def test_floor_gives_zero(self):
        f = np.linspace(0.01, 0.5, 50)
        ps = est.SpectrumSeries(f, np.full(50, 0.1 * 2.0), T)
        out = reconstruct_psd(ps, Geometric(0.1), TrafficMoments(1.0, 1.0))
        assert np.allclose(out.densities, 0.0, atol=1e-12)

    def test_negative_floored_and_counted(self):
        ps = est.SpectrumSeries(np.array([0.1, 0.2]), np.array([0.1, 0.3]), T)
        out = reconstruct_psd(ps, Geometric(0.1), TrafficMoments(1.0, 1.0))
        assert out.densities[0] == 0.0 and out.meta["floored_bins"] == 1

    def test_periodic_aliasing(self):
        with pytest.raises(AliasingError):
            reconstruct_psd(est.SpectrumSeries(np.array([0.1]), np.array([1.0]), T), Periodic(10),
                            TrafficMoments(1.0, 1.0))

    @pytest.mark.parametrize("spec", [Gamma(2, 0.1), Uniform(20)])
    def test_unsupported(self, spec):
        with pytest.raises(UnsupportedInversionError):
            reconstruct_psd(est.SpectrumSeries(np.array([0.1]), np.array([1.0]), T), spec,
                            TrafficMoments(1.0, 1.0))
