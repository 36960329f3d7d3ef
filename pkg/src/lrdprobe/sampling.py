"""Sampling point processes A(t) and their analytic autocovariances.

A pattern is a binary per-slot indicator whose inter-sample gaps are iid.
The four supported gap laws are geometric, periodic, Gamma (shape 2 or 4)
and uniform on [0, b].
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .traffic import Trace, TraceKind


class InterSampleSpec:
    """Base class for inter-sample-time distributions."""

    name = ""

    @property
    def mean_intensity(self) -> float:
        raise NotImplementedError

    @property
    def variance(self) -> float:
        mu = self.mean_intensity
        return mu * (1.0 - mu)

    def autocov(self, lags) -> np.ndarray:
        """c_A at the given lags (vectorized)."""
        lags = np.abs(np.asarray(lags, dtype=np.float64))
        out = self._autocov_positive(lags)
        return np.where(lags == 0, self.variance, out)

    def approximate_mask(self, lags) -> np.ndarray:
        return np.zeros(np.shape(lags), dtype=bool)

    def _autocov_positive(self, lags):
        raise NotImplementedError

    def draw_gaps(self, rng, n) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass(frozen=True)
class Geometric(InterSampleSpec):
    p: float = 0.1
    name = "geometric"

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise ValidationError(f"geometric p must lie in (0, 1], got {self.p}")

    @property
    def mean_intensity(self):
        return float(self.p)

    def _autocov_positive(self, lags):
        return np.zeros_like(lags)

    def draw_gaps(self, rng, n):
        return rng.geometric(self.p, size=n).astype(np.int64)

    def to_dict(self):
        return {"dist": self.name, "p": self.p}


@dataclass(frozen=True)
class Periodic(InterSampleSpec):
    delta: int = 10
    name = "periodic"

    def __post_init__(self):
        if int(self.delta) != self.delta or self.delta < 1:
            raise ValidationError(f"periodic delta must be an integer >= 1, got {self.delta}")
        object.__setattr__(self, "delta", int(self.delta))

    @property
    def mean_intensity(self):
        return 1.0 / self.delta

    def _autocov_positive(self, lags):
        d = float(self.delta)
        on_grid = np.mod(lags, d) == 0
        return np.where(on_grid, 1.0 / d - 1.0 / d**2, -1.0 / d**2)

    def draw_gaps(self, rng, n):
        return np.full(n, self.delta, dtype=np.int64)

    def to_dict(self):
        return {"dist": self.name, "delta": self.delta}


@dataclass(frozen=True)
class Gamma(InterSampleSpec):
    alpha: int = 2
    mu: float = 0.1
    name = "gamma"

    def __post_init__(self):
        if self.alpha not in (2, 4):
            raise ValidationError(f"gamma shape must be 2 or 4, got {self.alpha}")
        if not (0.0 < self.mu < 1.0):
            raise ValidationError(f"gamma mean intensity must lie in (0, 1), got {self.mu}")
        object.__setattr__(self, "alpha", int(self.alpha))

    @property
    def mean_intensity(self):
        return float(self.mu)

    @property
    def rate(self):
        # beta such that the gap mean alpha/beta equals 1/mu
        return self.alpha * self.mu

    def _autocov_positive(self, lags):
        mu2 = self.mu**2
        x = self.rate * lags
        if self.alpha == 2:
            return -mu2 * np.exp(-2.0 * x)
        return -mu2 * (np.exp(-2.0 * x) + 2.0 * np.sin(x) * np.exp(-x))

    def draw_gaps(self, rng, n):
        g = rng.gamma(self.alpha, 1.0 / self.rate, size=n)
        return np.maximum(np.rint(g), 1).astype(np.int64)

    def to_dict(self):
        return {"dist": self.name, "alpha": self.alpha, "mean_intensity": self.mu}


@dataclass(frozen=True)
class Uniform(InterSampleSpec):
    b: float = 20.0
    name = "uniform"

    def __post_init__(self):
        if not self.b > 0:
            raise ValidationError(f"uniform support b must be > 0, got {self.b}")
        if 2.0 / self.b > 1.0:
            raise ValidationError("uniform support b must be >= 2 so that the intensity is <= 1")

    @property
    def mean_intensity(self):
        return 2.0 / self.b

    def _autocov_positive(self, lags):
        mu = self.mean_intensity
        inside = mu**2 * (0.5 * np.exp(mu * np.minimum(lags, self.b) / 2.0) - 1.0)
        return np.where(lags <= self.b, inside, 0.0)

    def approximate_mask(self, lags):
        return np.abs(np.asarray(lags, dtype=np.float64)) > self.b

    def draw_gaps(self, rng, n):
        g = rng.uniform(0.0, self.b, size=n)
        return np.maximum(np.rint(g), 1).astype(np.int64)

    def to_dict(self):
        return {"dist": self.name, "support_b": self.b}


def spec_from_dict(d: dict) -> InterSampleSpec:
    d = dict(d)
    dist = str(d.pop("dist", "")).lower()
    try:
        if dist == "geometric":
            return Geometric(float(d["p"]))
        if dist == "periodic":
            return Periodic(d["delta"])
        if dist == "gamma":
            return Gamma(int(d["alpha"]), float(d["mean_intensity"]))
        if dist == "uniform":
            return Uniform(float(d["support_b"]))
    except KeyError as exc:
        raise ValidationError(f"sampling spec '{dist}' misses parameter {exc}") from None
    raise ValidationError(f"unknown sampling distribution '{dist}'")


def spec_from_json(text: str) -> InterSampleSpec:
    return spec_from_dict(json.loads(text))


@dataclass
class SamplingPattern:
    indicator: Trace
    spec: InterSampleSpec
    seed: int

    @property
    def slots(self) -> np.ndarray:
        return np.flatnonzero(self.indicator.values)

    def __len__(self):
        return len(self.indicator)


def _renewal_slots(spec, length, rng):
    # Start the renewal process well before slot 0 so the retained part is
    # close to stationary; the Gamma/uniform renewal densities settle after
    # a few mean gaps.
    mean_gap = 1.0 / spec.mean_intensity
    burn = int(np.ceil(50 * mean_gap))
    chunks, pos = [], -burn
    while pos < length:
        n = int(np.ceil((length - pos) / mean_gap * 1.05)) + 64
        gaps = spec.draw_gaps(rng, n)
        t = pos + np.cumsum(gaps)
        chunks.append(t)
        pos = int(t[-1])
    t = np.concatenate(chunks)
    return t[(t >= 0) & (t < length)]


def draw_pattern(spec: InterSampleSpec, length: int, seed: int, slot_seconds: float = 1e-3) -> SamplingPattern:
    """Draw a binary sampling pattern of the given length."""
    length = int(length)
    if length < 1:
        raise ValidationError("length must be >= 1")
    rng = np.random.default_rng(seed)
    a = np.zeros(length, dtype=np.float64)
    if isinstance(spec, Geometric):
        # iid Bernoulli slots, i.e. geometric gaps, stationary from slot 0
        a[rng.random(length) < spec.p] = 1.0
    elif isinstance(spec, Periodic):
        a[int(rng.integers(spec.delta))::spec.delta] = 1.0
    else:
        a[_renewal_slots(spec, length, rng)] = 1.0
    return SamplingPattern(Trace(a, slot_seconds, TraceKind.BINARY), spec, int(seed))


def analytic_autocov(spec: InterSampleSpec, lag, with_flag: bool = False):
    """Analytic c_A(lag). With with_flag=True also return whether the value
    is only an approximation (uniform sampling beyond its support)."""
    value = spec.autocov(lag)
    flag = spec.approximate_mask(lag)
    if np.ndim(lag) == 0:
        value, flag = float(value), bool(flag)
    return (value, flag) if with_flag else value


def apply(pattern: SamplingPattern, traffic: Trace) -> Trace:
    """Observation W(t) = A(t) Y(t)."""
    a = pattern.indicator
    if len(a) != len(traffic):
        raise ValidationError(f"pattern length {len(a)} != traffic length {len(traffic)}")
    if not np.isclose(a.slot_seconds, traffic.slot_seconds, rtol=1e-12):
        raise ValidationError("pattern and traffic slot durations differ")
    return Trace(a.values * traffic.values, traffic.slot_seconds, TraceKind.OBSERVATION,
                 traffic.clipped_fraction, meta={"sampling": pattern.spec.to_dict(), "sampling_seed": pattern.seed})
