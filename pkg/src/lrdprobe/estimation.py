"""Sample autocovariance, aggregate variance, periodogram and log-log fits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal, stats

from .errors import ValidationError
from .traffic import Trace, _as_values

# a lag tau needs T >= LAG_GUARD * tau samples
LAG_GUARD = 10
MIN_BLOCKS = 100
MIN_PSD_LENGTH = 2**12
PSD_SEGMENTS = 32


def log_lags(lo: float = 1, hi: float = 1000, per_decade: int = 20) -> np.ndarray:
    """Integer lags spaced roughly uniformly in log scale (duplicates removed)."""
    if lo < 1 or hi < lo:
        raise ValidationError("need 1 <= lo <= hi")
    n = max(int(np.ceil(np.log10(hi / lo) * per_decade)) + 1, 2)
    return np.unique(np.rint(np.logspace(np.log10(lo), np.log10(hi), n)).astype(np.int64))


def _write_csv(path, header: str, cols, meta: dict):
    with open(path, "w") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}={meta[k]}\n")
        fh.write(header + "\n")
        for row in zip(*cols):
            fh.write(",".join(repr(int(v)) if isinstance(v, (np.integer, int)) else repr(float(v))
                              for v in row) + "\n")


def _read_csv(path):
    meta, rows = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
            elif line[0].isalpha():
                continue
            else:
                rows.append([float(x) for x in line.split(",")])
    return meta, np.array(rows, dtype=np.float64).reshape(-1, 2)


@dataclass
class CovarianceSeries:
    lags: np.ndarray
    values: np.ndarray
    sample_length: int
    source: str = "traffic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lags = np.asarray(self.lags, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.lags.shape != self.values.shape:
            raise ValidationError("lags and values differ in shape")
        if self.lags.size and (np.any(np.diff(self.lags) <= 0) or self.lags[0] < 0):
            raise ValidationError("lags must be non-negative and strictly increasing")
        if self.lags.size and self.lags[-1] >= self.sample_length:
            raise ValidationError("max lag must be below the sample length")

    def at(self, lag) -> float:
        i = np.searchsorted(self.lags, lag)
        if i >= self.lags.size or self.lags[i] != lag:
            raise KeyError(f"lag {lag} not in series")
        return float(self.values[i])

    def to_csv(self, path):
        _write_csv(path, "lag,value", (self.lags, self.values),
                   {"T": self.sample_length, "source": self.source, **self.meta})

    @classmethod
    def from_csv(cls, path):
        meta, rows = _read_csv(path)
        T = int(meta.pop("T"))
        src = meta.pop("source", "traffic")
        return cls(rows[:, 0].astype(np.int64), rows[:, 1], T, src, meta)


@dataclass
class AggVarSeries:
    block_sizes: np.ndarray
    variances: np.ndarray
    sample_length: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.block_sizes = np.asarray(self.block_sizes, dtype=np.int64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if np.any(self.block_sizes < 1):
            raise ValidationError("block sizes must be >= 1")

    def to_csv(self, path):
        _write_csv(path, "M,variance", (self.block_sizes, self.variances),
                   {"T": self.sample_length, **self.meta})

    @classmethod
    def from_csv(cls, path):
        meta, rows = _read_csv(path)
        T = int(meta.pop("T"))
        return cls(rows[:, 0].astype(np.int64), rows[:, 1], T, meta)


@dataclass
class SpectrumSeries:
    frequencies: np.ndarray
    densities: np.ndarray
    sample_length: int
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        _write_csv(path, "freq,density", (self.frequencies, self.densities),
                   {"T": self.sample_length, **self.meta})

    @classmethod
    def from_csv(cls, path):
        meta, rows = _read_csv(path)
        T = int(meta.pop("T"))
        return cls(rows[:, 0], rows[:, 1], T, meta)


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    stderr: float
    n_used: int
    n_excluded: int
    fit_range: tuple


@dataclass(frozen=True)
class HurstEstimate:
    value: float
    slope: float
    slope_stderr: float
    method: str
    fit_range: tuple
    out_of_range: bool = False
    n_excluded: int = 0

    def to_dict(self):
        return {"value": self.value, "slope": self.slope, "slope_stderr": self.slope_stderr,
                "method": self.method, "range": [float(self.fit_range[0]), float(self.fit_range[1])],
                "out_of_range": self.out_of_range, "n_excluded": self.n_excluded}


def sample_autocov(series, lags, mean_mode="per_window", guard: bool = True) -> CovarianceSeries:
    """Sample autocovariance at the requested lags.

    mean_mode:
        "per_window" -- subtract the means of the two overlapping windows
                        x[0:T-tau] and x[tau:T] separately
        "global"     -- subtract the overall sample mean
        float        -- subtract a known population mean
    All modes normalize by T - tau.
    """
    x = _as_values(series)
    T = x.size
    lags = np.atleast_1d(np.asarray(lags, dtype=np.int64))
    if lags.size == 0:
        raise ValidationError("no lags requested")
    if lags.min() < 0 or lags.max() >= T:
        raise ValidationError(f"lags must lie in [0, {T})")
    if guard and LAG_GUARD * lags.max() > T:
        raise ValidationError(f"lag {lags.max()} too large for T={T} (need T >= {LAG_GUARD} * lag)")
    if isinstance(mean_mode, str):
        mode = mean_mode
        if mode not in ("per_window", "global"):
            raise ValidationError(f"unknown mean mode '{mean_mode}'")
        ref = x.mean()
    else:
        mode = "known"
        ref = float(mean_mode)
    y = x - ref
    csum = np.concatenate([[0.0], np.cumsum(y)]) if mode == "per_window" else None
    out = np.empty(lags.size)
    for i, tau in enumerate(lags):
        n = T - tau
        a, b = y[:n], y[tau:]
        c = np.dot(a, b) / n
        if mode == "per_window":
            m0 = csum[n] / n
            m1 = (csum[T] - csum[tau]) / n
            c -= m0 * m1
        out[i] = c
    meta = {"mean_mode": mode}
    if isinstance(series, Trace) and "seed" in series.meta:
        meta["seed"] = series.meta["seed"]
    return CovarianceSeries(lags, out, T, "traffic", meta)


def aggregate_variance(series, block_sizes, min_blocks: int = MIN_BLOCKS) -> AggVarSeries:
    """Variance of non-overlapping block means for each block size M."""
    x = _as_values(series)
    T = x.size
    sizes = np.atleast_1d(np.asarray(block_sizes, dtype=np.int64))
    if sizes.min() < 1:
        raise ValidationError("block sizes must be >= 1")
    if sizes.max() * min_blocks > T:
        raise ValidationError(f"block size {sizes.max()} leaves fewer than {min_blocks} blocks (T={T})")
    y = x - x.mean()
    out = np.empty(sizes.size)
    for i, m in enumerate(sizes):
        k = T // m
        means = y[: k * m].reshape(k, m).mean(axis=1)
        out[i] = means.var()
    return AggVarSeries(sizes, out, T)


def default_block_sizes(T: int, m_low: int = 100, per_decade: int = 10) -> np.ndarray:
    m_up = T // MIN_BLOCKS
    if m_up < m_low:
        raise ValidationError(f"T={T} too short for block sizes starting at {m_low}")
    return log_lags(m_low, m_up, per_decade)


def periodogram(series, segments: int = PSD_SEGMENTS) -> SpectrumSeries:
    """Welch spectral density over positive frequencies (cycles/slot).

    Two-sided normalization: a zero-mean iid series of variance s2 has a
    flat density s2.
    """
    x = _as_values(series)
    T = x.size
    if T < MIN_PSD_LENGTH:
        raise ValidationError(f"periodogram needs T >= {MIN_PSD_LENGTH}, got {T}")
    nper = T // segments
    f, pxx = signal.welch(x, fs=1.0, window="hann", nperseg=nper, noverlap=nper // 2,
                          detrend="constant", return_onesided=True, scaling="density")
    keep = f > 0
    dens = pxx[keep] / 2.0
    if nper % 2 == 0:
        # the Nyquist bin is not doubled by the one-sided convention
        dens[-1] *= 2.0
    return SpectrumSeries(f[keep], dens, T, {"nperseg": nper, "segments": segments})


def loglog_fit(x, y, fit_range=None, min_points: int = 5) -> LogLogFit:
    """OLS of log10(y) on log10(x) over fit_range; y <= 0 points are dropped."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if fit_range is None:
        fit_range = (x.min(), x.max())
    lo, hi = fit_range
    inside = (x >= lo) & (x <= hi) & (x > 0) & np.isfinite(y)
    usable = inside & (y > 0)
    n_used = int(usable.sum())
    n_excl = int(inside.sum()) - n_used
    if n_used < min_points:
        raise ValidationError(f"only {n_used} usable points with y > 0 in range {fit_range} "
                              f"({n_excl} excluded)")
    lx, ly = np.log10(x[usable]), np.log10(y[usable])
    res = stats.linregress(lx, ly)
    stderr = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    return LogLogFit(float(res.slope), float(res.intercept), stderr, n_used, n_excl,
                     (float(lo), float(hi)))


_METHODS = ("cov_slope", "agg_var", "psd")


def hurst_from_slope(slope: float, method: str, slope_stderr: float = 0.0,
                     fit_range=(np.nan, np.nan), n_excluded: int = 0) -> HurstEstimate:
    if method not in _METHODS:
        raise ValidationError(f"unknown method '{method}'")
    if not np.isfinite(slope):
        raise ValidationError("slope must be finite")
    if method == "psd":
        h, err = (1.0 - slope) / 2.0, slope_stderr / 2.0
    else:
        h, err = 1.0 + slope / 2.0, slope_stderr / 2.0
    eps = 1e-9
    bad = not (0.0 < h < 1.0)
    h = float(np.clip(h, eps, 1.0 - eps))
    return HurstEstimate(h, float(slope), float(slope_stderr), method, tuple(fit_range), bad, n_excluded)


def hurst_from_fit(fit: LogLogFit, method: str) -> HurstEstimate:
    return hurst_from_slope(fit.slope, method, fit.stderr, fit.fit_range, fit.n_excluded)


def psd_fit_range(freqs, decades: float = 1.5, skip_lowest: int = 3):
    """Lowest `decades` of the available frequencies after dropping leakage bins."""
    f = np.sort(np.asarray(freqs))
    lo = f[min(skip_lowest, f.size - 1)]
    hi = min(lo * 10**decades, f[-1])
    return float(lo), float(hi)


def hurst_cov_slope(cov: CovarianceSeries, fit_range=(1, 1000)) -> HurstEstimate:
    fit = loglog_fit(cov.lags, cov.values, fit_range)
    return hurst_from_fit(fit, "cov_slope")


def hurst_agg_var(av: AggVarSeries, fit_range=None) -> HurstEstimate:
    fit = loglog_fit(av.block_sizes, av.variances, fit_range)
    return hurst_from_fit(fit, "agg_var")


def hurst_psd(spec: SpectrumSeries, fit_range=None) -> HurstEstimate:
    if fit_range is None:
        fit_range = psd_fit_range(spec.frequencies)
    fit = loglog_fit(spec.frequencies, spec.densities, fit_range)
    return hurst_from_fit(fit, "psd")
