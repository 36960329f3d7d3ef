"""Reusable experiment recipes shared by the CLI report and the acceptance suite.

Every function is deterministic given its seed arguments.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import estimation as est
from .accuracy import AccuracyInputs, covariance_cone, relative_error, tau_star
from .errors import ValidationError
from .probe import MeasurementConfig, SimnetDriver, analyze, run_measurement
from .reconstruction import estimate_moments, reconstruct_aggvar, reconstruct_cov, reconstruct_psd
from .sampling import Gamma, Geometric, InterSampleSpec, Periodic, Uniform, apply, draw_pattern
from .simnet import NodeConfig, PathConfig
from .traffic import LrdModel, fgn_autocov, gen_fgn

# cross-traffic rate held for this many slots in the probing experiments
PROBE_RATE_INTERVAL = 60


def pattern_seed(seed: int, stream: int) -> int:
    """Independent seed for a sampling pattern drawn alongside traffic seed `seed`."""
    return int(np.random.SeedSequence([int(seed), 7919, int(stream)]).generate_state(1)[0])


def reference_node(hurst: float, util: float = 0.5, capacity: float = 1.0, variance: float | None = None,
                   rate_interval: int = PROBE_RATE_INTERVAL, **kw) -> NodeConfig:
    """Node with fGn cross traffic at the given utilization; variance defaults to capacity^2."""
    var = capacity**2 if variance is None else variance
    return NodeConfig(capacity=capacity, cross=LrdModel(hurst, var, util * capacity),
                      rate_interval=rate_interval, **kw)


def default_distorted_specs(mu_a: float = 0.1):
    """Periodic, Gamma(2) and uniform sampling with the same intensity."""
    gap = int(round(1 / mu_a))
    return [Periodic(gap), Gamma(2, mu_a), Uniform(2 * gap)]


def admissible_lags(spec: InterSampleSpec, lo: float, hi: float, per_decade: int = 20) -> np.ndarray:
    """Log-spaced lags in [lo, hi] that the spec's reconstruction supports."""
    if isinstance(spec, Uniform):
        hi = min(hi, spec.b)
    if hi < lo:
        return np.array([], dtype=np.int64)
    lags = est.log_lags(lo, hi, per_decade)
    if isinstance(spec, Periodic):
        lags = np.unique((lags // spec.delta) * spec.delta)
        lags = lags[lags >= max(lo, spec.delta)]
    return lags


@dataclass
class ReconstructionRun:
    spec: InterSampleSpec
    lags: np.ndarray
    reconstructed: np.ndarray
    truth: np.ndarray
    cone: np.ndarray
    tau_star: float

    @property
    def inside(self) -> np.ndarray:
        return np.abs(self.reconstructed - self.truth) <= self.cone


def reconstruct_from_traffic(y, model: LrdModel, spec: InterSampleSpec, seed: int, lags,
                             cone_inputs: AccuracyInputs | None = None) -> ReconstructionRun:
    """Sample y with spec, reconstruct c_Y from estimated moments and compare to the model."""
    T = len(y)
    pat = draw_pattern(spec, T, seed, y.slot_seconds)
    w = apply(pat, y)
    cw = est.sample_autocov(w, lags)
    moments = estimate_moments(w, spec)
    cy = reconstruct_cov(cw, spec, moments)
    truth = fgn_autocov(model, cy.lags)
    inp = cone_inputs if cone_inputs is not None else AccuracyInputs.from_model(model, spec, T)
    cone = covariance_cone(inp, cy.lags, truth)
    return ReconstructionRun(spec, cy.lags, cy.values, truth, np.asarray(cone), tau_star(inp))


def geometric_hurst(y, model: LrdModel, p: float, seed: int, lo: float = 1, hi: float = 1000,
                    per_decade: int = 20):
    """Covariance-slope H of geometrically sampled traffic, fit on [lo, min(hi, tau*)]."""
    spec = Geometric(p)
    inp = AccuracyInputs.from_model(model, spec, len(y))
    top = min(hi, tau_star(inp))
    lags = est.log_lags(lo, top, per_decade)
    run = reconstruct_from_traffic(y, model, spec, seed, lags, inp)
    cy = est.CovarianceSeries(run.lags, run.reconstructed, len(y), "reconstructed")
    return est.hurst_cov_slope(cy, (lo, top)), run


def relative_error_study(model: LrdModel, T: int, p: float, seeds, lags, quantile: float = 95.0):
    """Empirical quantile of |c~_W/mu_A^2 - c_Y|/c_Y over seeds, with the predicted 95% error."""
    spec = Geometric(p)
    lags = np.asarray(lags, dtype=np.int64)
    truth = fgn_autocov(model, lags)
    devs = np.empty((len(seeds), lags.size))
    for i, s in enumerate(seeds):
        y = gen_fgn(model, T, s)
        w = apply(draw_pattern(spec, T, pattern_seed(s, 0)), y)
        c = est.sample_autocov(w, lags).values / spec.mean_intensity**2
        devs[i] = np.abs(c - truth) / truth
    emp = np.percentile(devs, quantile, axis=0)
    inp = AccuracyInputs.from_model(model, spec, T)
    pred = np.array([relative_error(inp, int(t), float(c)).value for t, c in zip(lags, truth)])
    return lags, emp, pred


def aggvar_study(model: LrdModel, T: int, p: float, seed: int, m_lo: int = 100, m_hi: int | None = None,
                 y=None):
    """Aggregate variance of traffic, observation and the reconstruction from the observation."""
    spec = Geometric(p)
    y = gen_fgn(model, T, seed) if y is None else y
    m_hi = T // est.MIN_BLOCKS if m_hi is None else m_hi
    sizes = est.log_lags(m_lo, m_hi, 10)
    w = apply(draw_pattern(spec, T, pattern_seed(seed, 1)), y)
    av_y = est.aggregate_variance(y, sizes)
    av_w = est.aggregate_variance(w, sizes)
    av_r = reconstruct_aggvar(av_w, spec, estimate_moments(w, spec))
    return av_y, av_w, av_r


def psd_study(model: LrdModel, T: int, p: float, seed: int, y=None):
    """Periodogram of traffic and observation plus the spectral reconstruction and its H."""
    spec = Geometric(p)
    y = gen_fgn(model, T, seed) if y is None else y
    w = apply(draw_pattern(spec, T, pattern_seed(seed, 2)), y)
    ps_y = est.periodogram(y)
    ps_w = est.periodogram(w)
    ps_r = reconstruct_psd(ps_w, spec, estimate_moments(w, spec))
    return ps_y, ps_w, ps_r, est.hurst_psd(ps_r)


def probe_study(hursts, util: float = 0.5, n_probes: int = 10**6, p: float = 0.1, kind: str = "single",
                seed: int = 42, rate_interval: int = PROBE_RATE_INTERVAL, capacity: float = 1.0,
                reference_mode: str = "min_delay"):
    """Simulate a tandem path with one fGn node per Hurst value and analyze the probes."""
    nodes = [reference_node(h, util, capacity, rate_interval=rate_interval) for h in hursts]
    path = PathConfig(nodes)
    cfg = MeasurementConfig(sampling=Geometric(p), n_probes=n_probes, probe_kind=kind, seed=seed,
                            capacity=capacity, reference_mode=reference_mode)
    driver = SimnetDriver(path, seed=seed, pair_gap=cfg.pair_gap)
    log = run_measurement(driver, cfg)
    return analyze(log, cfg), log, driver.last_result


# ---------------------------------------------------------------------------
# report: plot-ready CSV for the figure analogs

@dataclass
class ReportConfig:
    hursts: list = field(default_factory=lambda: [0.6, 0.7, 0.8, 0.9])
    T: int = 10**6
    p: float = 0.1
    seed: int = 42
    n_seeds_relerr: int = 20
    T_relerr: int = 10**5
    variance: float = 1.0
    mean: float = 1.0

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValidationError(f"unknown report config keys: {unknown}")
        cfg = cls(**known)
        if cfg.T < 10**4 or cfg.T_relerr < 10**4:
            raise ValidationError("report lengths must be >= 1e4")
        return cfg

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def report(config: ReportConfig, outdir) -> list[str]:
    """Write fig2..fig5 CSV files into outdir; returns the file names."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    fig2, fig3, fig5a, fig5b = [], [], [], []
    for k, h in enumerate(config.hursts):
        model = LrdModel(h, config.variance, config.mean)
        s = config.seed + k
        y = gen_fgn(model, config.T, s)
        inp = AccuracyInputs.from_model(model, Geometric(config.p), config.T)
        ts = tau_star(inp)
        lags = est.log_lags(1, min(1000, config.T // est.LAG_GUARD))
        run = reconstruct_from_traffic(y, model, Geometric(config.p), pattern_seed(s, 0), lags, inp)
        cy = est.sample_autocov(y, lags).values
        for t, r, c, tr in zip(run.lags, run.reconstructed, cy, run.truth):
            fig2.append((h, t, c, r, tr, ts))
        for j, spec in enumerate(default_distorted_specs(config.p)):
            lg = admissible_lags(spec, 10, min(1000, config.T // est.LAG_GUARD))
            rr = reconstruct_from_traffic(y, model, spec, pattern_seed(s, 10 + j), lg, inp)
            for t, r, tr, cn in zip(rr.lags, rr.reconstructed, rr.truth, rr.cone):
                fig3.append((h, spec.name, t, r, tr, cn))
        av_y, av_w, av_r = aggvar_study(model, config.T, config.p, s, y=y)
        for m, a, b, c in zip(av_y.block_sizes, av_y.variances, av_w.variances, av_r.variances):
            fig5a.append((h, m, a, b, c))
        ps_y, ps_w, ps_r, hp = psd_study(model, config.T, config.p, s, y=y)
        for f, a, b, c in zip(ps_y.frequencies, ps_y.densities, ps_w.densities, ps_r.densities):
            fig5b.append((h, f, a, b, c))
    _write_rows(os.path.join(outdir, "fig2_geometric_reconstruction.csv"),
                ["hurst", "lag", "c_y_unsampled", "c_y_reconstructed", "c_y_model", "tau_star"], fig2)
    _write_rows(os.path.join(outdir, "fig3_distorted_sampling.csv"),
                ["hurst", "sampling", "lag", "c_y_reconstructed", "c_y_model", "cone_halfwidth"], fig3)
    fig4 = []
    lags = est.log_lags(1, min(1000, config.T_relerr // est.LAG_GUARD), 10)
    seeds = [config.seed + 1000 + i for i in range(config.n_seeds_relerr)]
    for h in config.hursts:
        model = LrdModel(h, config.variance, config.mean)
        lg, emp, pred = relative_error_study(model, config.T_relerr, config.p, seeds, lags)
        for t, e, q in zip(lg, emp, pred):
            fig4.append((h, t, e, q))
    _write_rows(os.path.join(outdir, "fig4_relative_error.csv"),
                ["hurst", "lag", "empirical_p95", "predicted"], fig4)
    _write_rows(os.path.join(outdir, "fig5_aggregate_variance.csv"),
                ["hurst", "block_size", "var_y", "var_w", "var_y_reconstructed"], fig5a)
    _write_rows(os.path.join(outdir, "fig5_spectral_density.csv"),
                ["hurst", "frequency", "psd_y", "psd_w", "psd_y_reconstructed"], fig5b)
    written = ["fig2_geometric_reconstruction.csv", "fig3_distorted_sampling.csv", "fig4_relative_error.csv",
               "fig5_aggregate_variance.csv", "fig5_spectral_density.csv"]
    with open(os.path.join(outdir, "report_config.json"), "w") as fh:
        json.dump(config.to_dict(), fh, sort_keys=True, indent=2)
    return written
