"""Finite-sample accuracy of covariance estimates under Bernoulli sampling.

All bands are two-standard-deviation Gaussian (CLT) approximations that
assume T >> tau; results for T < 10 tau are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .sampling import InterSampleSpec
from .traffic import LrdModel

MIN_T = 1000
CLT_RATIO = 10


@dataclass(frozen=True)
class AccuracyInputs:
    hurst: float
    variance: float
    mean: float
    mu_a: float
    sigma_a2: float
    T: int
    prefactor: float = 1.0

    def __post_init__(self):
        if self.T < 1:
            raise ValidationError("T must be >= 1")
        if not (0.0 < self.mu_a <= 1.0):
            raise ValidationError("mu_a must lie in (0, 1]")
        if self.variance < 0 or self.sigma_a2 < 0:
            raise ValidationError("variances must be >= 0")

    @classmethod
    def from_model(cls, model: LrdModel, spec: InterSampleSpec, T: int):
        return cls(model.hurst, model.variance, model.mean_rate, spec.mean_intensity,
                   spec.variance, int(T), model.prefactor)

    def model_cov(self, tau):
        """Asymptotic model covariance K var tau^(2H-2)."""
        tau = np.asarray(tau, dtype=np.float64)
        return self.prefactor * self.variance * tau ** (2 * self.hurst - 2)


def _floor_root(inp: AccuracyInputs) -> float:
    # sqrt of the iid-observation variance term, times sqrt(T)
    a = inp.sigma_a2 * inp.mean**2 + inp.mu_a * inp.variance
    return np.sqrt(a**2 + 4 * inp.mu_a**2 * inp.mean**2 * a)


def noise_floor(inp: AccuracyInputs) -> float:
    """Half-width of the 95% band of c~_W(tau) for iid Gaussian traffic."""
    if inp.T < MIN_T:
        raise ValidationError(f"noise floor needs T >= {MIN_T}")
    return float(2.0 * _floor_root(inp) / np.sqrt(inp.T))


def tau_star(inp: AccuracyInputs) -> float:
    """Lag at which the sampled model covariance meets the noise floor."""
    if not (0.5 < inp.hurst < 1.0):
        raise ValidationError("tau_star needs 0.5 < H < 1")
    root = _floor_root(inp)
    if root == 0:
        return float("inf")
    base = inp.prefactor * inp.variance * inp.mu_a**2 * np.sqrt(inp.T) / (2.0 * root)
    return float(base ** (1.0 / (2.0 - 2.0 * inp.hurst)))


def sampling_cov_ci(mu_a: float, sigma_a2: float, T: int, tau) -> float:
    """Half-width of the 95% band of the sampling autocovariance c~_A(tau)."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau >= T) or np.any(tau < 0):
        raise ValidationError("need 0 <= tau < T")
    sa = np.sqrt(sigma_a2)
    out = 2.0 * sa * np.sqrt(sigma_a2 + 4 * mu_a**2) / np.sqrt(T - tau)
    return float(out) if out.ndim == 0 else out


def covariance_cone(inp: AccuracyInputs, tau, c_y):
    """Half-width of the 95% band of c~_W/mu_A^2 around c_Y (noise cone)."""
    ca = sampling_cov_ci(inp.mu_a, inp.sigma_a2, inp.T, tau)
    return ca * (np.asarray(c_y) + inp.mean**2) / inp.mu_a**2


@dataclass(frozen=True)
class RelativeError:
    value: float
    asymptote: float | None = None
    ratio: float | None = None


def _rel_prefactor(inp, tau):
    sa = np.sqrt(inp.sigma_a2)
    return 2.0 * sa * np.sqrt(inp.sigma_a2 + 4 * inp.mu_a**2) / (np.sqrt(inp.T - tau) * inp.mu_a**2)


def relative_error(inp: AccuracyInputs, tau: float, c_y: float) -> RelativeError:
    """Relative 95% error of c~_W/mu_A^2 as an estimate of c_Y(tau).

    When c_Y is below mean^2/100 the large-lag power-law asymptote (using
    the model covariance K var tau^(2H-2)) and the ratio exact/asymptote
    are reported as well.
    """
    if c_y <= 0:
        raise ValidationError("c_Y must be > 0")
    if not 0 <= tau < inp.T:
        raise ValidationError("need 0 <= tau < T")
    pre = _rel_prefactor(inp, tau)
    val = float(pre * (1.0 + inp.mean**2 / c_y))
    if c_y < inp.mean**2 / 100.0 and tau > 0:
        asym = float(pre * inp.mean**2 / inp.model_cov(tau))
        return RelativeError(val, asym, val / asym)
    return RelativeError(val)


def required_duration(inp: AccuracyInputs, tau: float, target_eps: float) -> float:
    """Sample length T that brings the large-lag relative error down to target_eps."""
    if target_eps <= 0:
        raise ValidationError("target error must be > 0")
    sa = np.sqrt(inp.sigma_a2)
    root = (2.0 * sa * np.sqrt(inp.sigma_a2 + 4 * inp.mu_a**2) * inp.mean**2 * tau ** (2 - 2 * inp.hurst)
            / (target_eps * inp.mu_a**2 * inp.prefactor * inp.variance))
    return float(tau + root**2)


def bias_y(inp: AccuracyInputs, tau: float) -> float:
    """Approximate bias of the per-window-mean estimator c~_Y(tau)."""
    if not 0 <= tau < inp.T:
        raise ValidationError("need 0 <= tau < T")
    return float(-inp.variance / (inp.T - tau) ** (2 - 2 * inp.hurst))


def bias_w(c_w, T: int, tau: int) -> float:
    """Bias of c~_W(tau): minus the variance of a (T - tau)-sample mean.

    c_w is a CovarianceSeries or array holding c_W at lags 0..T-tau-1.
    """
    n = int(T - tau)
    if n < 1:
        raise ValidationError("need tau < T")
    if hasattr(c_w, "lags"):
        if c_w.lags.size < n or not np.array_equal(c_w.lags[:n], np.arange(n)):
            raise ValidationError(f"c_W must cover lags 0..{n - 1}")
        vals = c_w.values[:n]
    else:
        vals = np.asarray(c_w, dtype=np.float64)
        if vals.size < n:
            raise ValidationError(f"c_W must cover lags 0..{n - 1}")
        vals = vals[:n]
    t = np.arange(1, n, dtype=np.float64)
    return float(-vals[0] / n - 2.0 / n**2 * np.dot(n - t, vals[1:n]))


@dataclass
class AccuracyReport:
    inputs: AccuracyInputs
    tau_star: float
    noise_floor_halfwidth: float
    c_y_source: str = "model"

    @classmethod
    def build(cls, inp: AccuracyInputs, c_y_source: str = "model"):
        ts = tau_star(inp) if 0.5 < inp.hurst < 1 else float("nan")
        return cls(inp, ts, noise_floor(inp), c_y_source)

    def sampling_ci_halfwidth(self, tau):
        return sampling_cov_ci(self.inputs.mu_a, self.inputs.sigma_a2, self.inputs.T, tau)

    def relative_error(self, tau, c_y=None):
        c = float(self.inputs.model_cov(tau)) if c_y is None else c_y
        return relative_error(self.inputs, tau, c)

    def bias_y(self, tau):
        return bias_y(self.inputs, tau)

    def required_T(self, tau, eps):
        return required_duration(self.inputs, tau, eps)

    def to_dict(self, lags=(1, 10, 100, 1000), eps=0.1):
        inp = self.inputs
        rows = []
        for tau in lags:
            if tau >= inp.T:
                continue
            re = self.relative_error(tau)
            rows.append({"tau": int(tau),
                         "sampling_ci_halfwidth": self.sampling_ci_halfwidth(tau),
                         "relative_error": re.value,
                         "relative_error_asymptote": re.asymptote,
                         "bias_y": self.bias_y(tau),
                         "required_T": self.required_T(tau, eps),
                         "clt_valid": bool(inp.T >= CLT_RATIO * tau)})
        return {"inputs": {"hurst": inp.hurst, "variance": inp.variance, "mean": inp.mean,
                           "prefactor": inp.prefactor, "mu_a": inp.mu_a, "sigma_a2": inp.sigma_a2,
                           "T": int(inp.T)},
                "tau_star": self.tau_star, "noise_floor_halfwidth": self.noise_floor_halfwidth,
                "c_y_source": self.c_y_source, "target_eps": eps, "per_lag": rows}
