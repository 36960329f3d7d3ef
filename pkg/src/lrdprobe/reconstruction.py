"""Undo the distortion that sampling A(t) imposes on traffic statistics.

For W(t) = A(t) Y(t) with A independent of Y:

    c_W(tau) = (c_A(tau) + mu_A^2) c_Y(tau) + c_A(tau) mu_Y^2

The inverse has closed forms per sampling law. Aggregate-variance and
spectral inversions exist only for geometric (Bernoulli) sampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import AliasingError, UnsupportedInversionError, ValidationError
from .estimation import AggVarSeries, CovarianceSeries, SpectrumSeries
from .sampling import Gamma, Geometric, InterSampleSpec, Periodic, Uniform
from .traffic import _as_values

DENOM_GUARD = 1e-12


@dataclass(frozen=True)
class TrafficMoments:
    mean: float
    variance: float
    approximate: bool = False

    def __post_init__(self):
        if self.variance < 0:
            raise ValidationError("variance must be >= 0")


def forward_cov(c_y: CovarianceSeries, spec: InterSampleSpec, mu_y: float) -> CovarianceSeries:
    """Covariance of the sampled observation given traffic covariance."""
    ca = spec.autocov(c_y.lags)
    mu = spec.mean_intensity
    vals = (ca + mu**2) * c_y.values + ca * mu_y**2
    return CovarianceSeries(c_y.lags, vals, c_y.sample_length, "observation",
                            {**c_y.meta, "sampling": spec.to_json()})


def _admissible(spec, lags):
    if isinstance(spec, Periodic):
        return np.mod(lags, spec.delta) == 0
    if isinstance(spec, Uniform):
        return lags <= spec.b
    return np.ones(lags.shape, dtype=bool)


def reconstruct_cov(c_w: CovarianceSeries, spec: InterSampleSpec, moments: TrafficMoments | None = None,
                    drop_inadmissible: bool = False) -> CovarianceSeries:
    """Traffic covariance from the observation covariance.

    Periodic sampling only admits lags that are multiples of delta and
    uniform sampling only lags <= b. Inadmissible lags raise unless
    drop_inadmissible is set. Lags whose denominator vanishes (relative to
    mu_A^2) are always dropped; their count is kept in meta.
    """
    lags = c_w.lags.astype(np.float64)
    cw = c_w.values
    mu = spec.mean_intensity
    ok = _admissible(spec, c_w.lags)
    if not ok.all() and not drop_inadmissible:
        bad = c_w.lags[~ok]
        raise ValidationError(f"lags {bad[:5].tolist()} not admissible for {spec.name} sampling")
    if moments is None:
        if not isinstance(spec, Geometric):
            raise ValidationError(f"{spec.name} reconstruction needs traffic moments")
        mu_y = 0.0
    else:
        mu_y = moments.mean

    if isinstance(spec, Geometric):
        denom = np.full_like(lags, mu**2)
        cy = cw / mu**2
    elif isinstance(spec, Periodic):
        # valid on multiples of delta, where c_A + mu^2 = mu
        denom = np.full_like(lags, mu)
        cy = (cw - mu * mu_y**2 * (1.0 - mu)) / mu
    elif isinstance(spec, Gamma) and spec.alpha == 2:
        e = np.exp(-4.0 * mu * lags)
        denom = mu**2 * (1.0 - e)
        with np.errstate(divide="ignore", invalid="ignore"):
            cy = (cw + mu**2 * mu_y**2 * e) / denom
    elif isinstance(spec, Uniform):
        g = 0.5 * np.exp(mu * lags / 2.0)
        denom = mu**2 * g
        cy = (cw - mu**2 * mu_y**2 * (g - 1.0)) / denom
    else:
        ca = spec.autocov(lags)
        denom = ca + mu**2
        with np.errstate(divide="ignore", invalid="ignore"):
            cy = (cw - ca * mu_y**2) / denom
    zero = lags == 0
    if zero.any():
        # the per-law forms hold for tau > 0; at lag 0 c_A = sigma_A^2 and
        # the generic inversion yields the traffic variance
        if moments is None:
            raise ValidationError("lag 0 reconstruction needs traffic moments")
        denom = np.where(zero, mu, denom)
        cy = np.where(zero, (cw - spec.variance * mu_y**2) / mu, cy)
    keep = ok & (np.abs(denom) > DENOM_GUARD * mu**2)
    meta = {**c_w.meta, "sampling": spec.to_json(), "dropped_lags": int((~keep).sum())}
    return CovarianceSeries(c_w.lags[keep], cy[keep], c_w.sample_length, "reconstructed", meta)


def estimate_moments(w, spec: InterSampleSpec) -> TrafficMoments:
    """Traffic mean and variance from the observation series."""
    x = _as_values(w)
    mu = spec.mean_intensity
    mw, vw = float(x.mean()), float(x.var())
    mean_y = mw / mu
    var_y = (vw - spec.variance * mean_y**2) / mu
    if var_y < 0:
        warnings.warn(f"negative traffic variance estimate {var_y:.3e} clipped to 0", RuntimeWarning)
        var_y = 0.0
    return TrafficMoments(mean_y, var_y, approximate=not isinstance(spec, Geometric))


def aggvar_from_autocov(c, m: int) -> float:
    """Var of M-block means of a stationary series with autocovariance c[0..M-1]."""
    c = np.asarray(c, dtype=np.float64)
    if c.size < m:
        raise ValidationError(f"need autocovariance at lags 0..{m - 1}")
    tau = np.arange(1, m, dtype=np.float64)
    return float(c[0] / m + 2.0 / m**2 * np.dot(m - tau, c[1:m]))


def _sampling_aggvar(spec, m):
    if isinstance(spec, Geometric):
        return spec.variance / m
    return aggvar_from_autocov(spec.autocov(np.arange(m)), m)


def forward_aggvar(var_y: AggVarSeries, spec: InterSampleSpec, mu_y: float,
                   c_y: CovarianceSeries) -> AggVarSeries:
    """Block-mean variance of W from that of Y (bilinear decomposition).

    c_y must hold lag 0 (the traffic variance). Non-geometric sampling also
    needs c_y at every lag 1..max(M)-1 for the cross term.
    """
    mu = spec.mean_intensity
    try:
        var0 = c_y.at(0)
    except KeyError:
        raise ValidationError("c_y must contain lag 0") from None
    geometric = isinstance(spec, Geometric)
    if not geometric:
        need = np.arange(1, int(var_y.block_sizes.max()))
        if not np.all(np.isin(need, c_y.lags)):
            raise ValidationError("c_y missing lags needed for the cross term")
        cy_full = np.zeros(int(var_y.block_sizes.max()))
        cy_full[c_y.lags[c_y.lags < cy_full.size]] = c_y.values[c_y.lags < cy_full.size]
        ca_full = spec.autocov(np.arange(cy_full.size))
    out = np.empty(var_y.block_sizes.size)
    for i, m in enumerate(var_y.block_sizes):
        m = int(m)
        v = mu_y**2 * _sampling_aggvar(spec, m) + mu**2 * var_y.variances[i] + var0 * spec.variance / m
        if not geometric and m > 1:
            tau = np.arange(1, m, dtype=np.float64)
            v += 2.0 / m**2 * np.dot(m - tau, cy_full[1:m] * ca_full[1:m])
        out[i] = v
    return AggVarSeries(var_y.block_sizes, out, var_y.sample_length, {"sampling": spec.to_json()})


def reconstruct_aggvar(var_w: AggVarSeries, spec: InterSampleSpec, moments: TrafficMoments) -> AggVarSeries:
    """Traffic block-mean variance from the observation's (geometric only)."""
    if not isinstance(spec, Geometric):
        raise UnsupportedInversionError(
            f"aggregate-variance inversion is only available for geometric sampling, not {spec.name}")
    mu = spec.mean_intensity
    m = var_w.block_sizes.astype(np.float64)
    s2a = spec.variance
    out = var_w.variances / mu**2 - (moments.mean**2 * s2a / m + moments.variance * s2a / m) / mu**2
    return AggVarSeries(var_w.block_sizes, out, var_w.sample_length,
                        {**var_w.meta, "sampling": spec.to_json(), "source": "reconstructed"})


def reconstruct_psd(psd_w: SpectrumSeries, spec: InterSampleSpec, moments: TrafficMoments) -> SpectrumSeries:
    """Traffic spectral density from the observation's (geometric only).

    Psi_Y = (Psi_W - lam (var + mean^2)) / lam^2 with lam = mu_A; values
    falling below zero are floored at 0 and counted.
    """
    if isinstance(spec, Periodic):
        raise AliasingError("periodic sampling aliases the spectrum irreversibly; "
                            "spectral inversion is not possible")
    if not isinstance(spec, Geometric):
        raise UnsupportedInversionError(f"no spectral inversion for {spec.name} sampling")
    lam = spec.mean_intensity
    floor = lam * (moments.variance + moments.mean**2)
    dens = (psd_w.densities - floor) / lam**2
    neg = dens < 0
    dens = np.where(neg, 0.0, dens)
    return SpectrumSeries(psd_w.frequencies, dens, psd_w.sample_length,
                          {**psd_w.meta, "floored_bins": int(neg.sum()), "source": "reconstructed"})
