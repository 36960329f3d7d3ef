"""Synthetic long-range-dependent traffic and trace persistence.

Two generators are provided: exact fractional Gaussian noise (circulant
embedding) and a superposition of heavy-tailed on-off sources.
"""

from __future__ import annotations

import enum
import functools
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import TraceFormatError, ValidationError

MAGIC = b"LRDT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHQdd")

# Rough ceiling on the scratch memory used by the circulant embedding.
DEFAULT_MEMORY_BUDGET = 3 * 2**30


class TraceKind(enum.IntEnum):
    INCREMENTS = 0
    BINARY = 1
    OBSERVATION = 2


@dataclass(frozen=True)
class LrdModel:
    """Second-order description of an LRD increment process.

    hurst       -- Hurst parameter, 0.5 < H < 1 (H = 0.5 accepted as the
                   short-memory boundary, i.e. white noise)
    variance    -- per-slot variance of the increments
    mean_rate   -- mean increment per slot
    prefactor   -- K in the asymptote c(tau) ~ K var tau^(2H-2)
    """

    hurst: float
    variance: float = 1.0
    mean_rate: float = 0.0
    prefactor: float = 1.0

    def __post_init__(self):
        if not (0.5 <= self.hurst < 1.0):
            raise ValidationError(f"hurst must lie in [0.5, 1), got {self.hurst}")
        if not self.variance > 0:
            raise ValidationError(f"variance must be > 0, got {self.variance}")
        if not self.mean_rate >= 0:
            raise ValidationError(f"mean_rate must be >= 0, got {self.mean_rate}")
        if not self.prefactor > 0:
            raise ValidationError(f"prefactor must be > 0, got {self.prefactor}")

    def to_dict(self):
        return {"hurst": self.hurst, "variance": self.variance,
                "mean_rate": self.mean_rate, "prefactor": self.prefactor}


@dataclass
class Trace:
    """Discrete-time series with its slot duration (seconds)."""

    values: np.ndarray
    slot_seconds: float = 1e-3
    kind: TraceKind = TraceKind.INCREMENTS
    clipped_fraction: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.kind = TraceKind(self.kind)
        if self.values.ndim != 1 or self.values.size < 1:
            raise ValidationError("trace must be a non-empty 1-d series")
        if not self.slot_seconds > 0:
            raise ValidationError("slot_seconds must be > 0")
        if self.kind == TraceKind.BINARY and not np.all((self.values == 0) | (self.values == 1)):
            raise ValidationError("binary trace may only contain 0 and 1")

    def __len__(self):
        return self.values.size


def _as_values(series) -> np.ndarray:
    if isinstance(series, Trace):
        return series.values
    return np.asarray(series, dtype=np.float64)


SERIES_LAG = 100
SERIES_TERMS = 8


def _fgn_row(k, hurst):
    """Unit-variance fGn autocovariance at lags k >= 0.

    The second difference (k+1)^2H - 2k^2H + (k-1)^2H cancels badly for
    large k. Small lags use k^2H [((1+1/k)^2H - 1) + ((1-1/k)^2H - 1)]/2
    via expm1/log1p; lags >= SERIES_LAG use the even binomial series
    k^2H sum_j C(2H, 2j) k^-2j, which has no cancellation.
    """
    k = np.abs(np.asarray(k, dtype=np.float64))
    h2 = 2.0 * hurst
    out = np.ones_like(k)
    if hurst == 0.5:
        out[k > 0] = 0.0
        return out
    near = (k > 0) & (k < SERIES_LAG)
    kn = k[near]
    inv = 1.0 / kn
    with np.errstate(divide="ignore"):
        lo = np.expm1(h2 * np.log1p(-inv))
    out[near] = 0.5 * kn**h2 * (np.expm1(h2 * np.log1p(inv)) + lo)
    far = k >= SERIES_LAG
    if far.any():
        kf = k[far]
        x2 = kf**-2.0
        coef = 1.0
        total = np.zeros_like(kf)
        power = np.ones_like(kf)
        for n in range(1, 2 * SERIES_TERMS + 1):
            coef *= (h2 - n + 1) / n
            if n % 2 == 0:
                power *= x2
                total += coef * power
        out[far] = kf**h2 * total
    return out


def fgn_autocov(model: LrdModel, lag):
    """Exact fGn autocovariance at integer lag(s); accepts scalars or arrays."""
    out = model.variance * _fgn_row(lag, model.hurst)
    return float(out) if out.ndim == 0 else out


@functools.lru_cache(maxsize=2)
def _embedding_scale(length: int, hurst: float) -> np.ndarray:
    # sqrt(eigenvalues / m) of the 2n-circulant holding the unit-variance fGn row
    m = 2 * length
    row = _fgn_row(np.arange(length + 1), hurst)
    circ = np.concatenate([row, row[-2:0:-1]])
    lam = np.fft.rfft(circ).real
    if lam.min() < -1e-8 * lam.max():
        raise RuntimeError(f"circulant embedding has negative eigenvalue {lam.min():.3e}")
    lam = np.clip(lam, 0.0, None)
    full = np.concatenate([lam, lam[-2:0:-1]])
    scale = np.sqrt(full / m)
    scale.setflags(write=False)
    return scale


def gen_fgn(model: LrdModel, length: int, seed: int, clip: bool = False,
            slot_seconds: float = 1e-3, memory_budget: int = DEFAULT_MEMORY_BUDGET) -> Trace:
    """Exact fractional Gaussian noise of the given model.

    The circulant embedding of the covariance row is exact for 0.5 <= H < 1.
    The output is shifted by model.mean_rate; with clip=True negative values
    are set to zero and the affected fraction is stored on the trace.
    """
    length = int(length)
    if length < 2:
        raise ValidationError("length must be >= 2")
    # complex workspace + embedding + output, in bytes
    need = 2 * length * (16 + 8) + 8 * length
    if need > memory_budget:
        raise ValidationError(f"length {length} needs ~{need / 2**30:.1f} GiB, over the memory budget")
    scale = _embedding_scale(length, float(model.hurst))
    m = scale.size
    rng = np.random.default_rng(seed)
    z = np.empty(m, dtype=np.complex128)
    z.real = rng.standard_normal(m)
    z.imag = rng.standard_normal(m)
    z *= scale
    x = np.fft.fft(z).real[:length].copy()
    del z
    if model.variance != 1.0:
        x *= np.sqrt(model.variance)
    x += model.mean_rate
    frac = 0.0
    if clip:
        neg = x < 0
        frac = float(neg.mean())
        x[neg] = 0.0
    return Trace(x, slot_seconds, TraceKind.INCREMENTS, frac,
                 meta={"generator": "fgn", "seed": int(seed), **model.to_dict()})


@njit(cache=True)
def _onoff_counts(seeds, alpha, min_period, length):
    diff = np.zeros(length + 1, dtype=np.int64)
    mean_period = alpha * min_period / (alpha - 1.0)
    for s in range(seeds.size):
        np.random.seed(seeds[s])
        on = np.random.random() < 0.5
        # first period from the equilibrium residual distribution, so the
        # superposition is stationary from slot 0
        u = np.random.random()
        if u > 1.0 / alpha:
            first = mean_period * (1.0 - u)
        else:
            first = min_period * (alpha * u) ** (-1.0 / (alpha - 1.0))
        t = 0
        d = int(np.ceil(first))
        if d < 1:
            d = 1
        while t < length:
            end = t + d
            if end > length:
                end = length
            if on:
                diff[t] += 1
                diff[end] -= 1
            t = end
            on = not on
            d = int(np.ceil(min_period * np.random.random() ** (-1.0 / alpha)))
    return np.cumsum(diff[:length])


def gen_onoff(n_sources: int, tail_index: float, mean_rate: float, length: int, seed: int,
              min_period: float = 1.0, slot_seconds: float = 1e-3) -> Trace:
    """Superposition of on-off sources with Pareto(tail_index) periods.

    On and off periods share the same Pareto law (scale min_period slots,
    rounded up to whole slots). The aggregate count is scaled so that its
    sample mean equals mean_rate; the target Hurst parameter is
    (3 - tail_index) / 2.
    """
    if not (1.0 < tail_index < 2.0):
        raise ValidationError(f"tail_index must lie in (1, 2), got {tail_index}")
    if n_sources < 1 or length < 1:
        raise ValidationError("n_sources and length must be >= 1")
    if mean_rate < 0:
        raise ValidationError("mean_rate must be >= 0")
    seeds = np.random.SeedSequence(seed).generate_state(int(n_sources)).astype(np.int64)
    counts = _onoff_counts(seeds, float(tail_index), float(min_period), int(length)).astype(np.float64)
    total = counts.sum()
    if total > 0:
        counts *= mean_rate * length / total
    return Trace(counts, slot_seconds, TraceKind.INCREMENTS, 0.0,
                 meta={"generator": "onoff", "seed": int(seed), "n_sources": int(n_sources),
                       "tail_index": float(tail_index), "target_hurst": (3.0 - tail_index) / 2.0})


def onoff_hurst(tail_index: float) -> float:
    return (3.0 - tail_index) / 2.0


def store_trace(trace: Trace, path) -> None:
    values = np.asarray(trace.values, dtype="<f8")
    if values.size == 0:
        raise ValidationError("refusing to store an empty trace")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, int(trace.kind), values.size,
                          float(trace.slot_seconds), float(trace.clipped_fraction))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())


def load_trace(path) -> Trace:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TraceFormatError(f"{path}: truncated header")
    magic, version, kind, n, slot, clipped = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TraceFormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise TraceFormatError(f"{path}: unsupported version {version}")
    if kind not in TraceKind._value2member_map_:
        raise TraceFormatError(f"{path}: unknown kind {kind}")
    if n == 0:
        raise TraceFormatError(f"{path}: empty trace")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * n:
        raise TraceFormatError(f"{path}: expected {8 * n} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    try:
        return Trace(values, slot, TraceKind(kind), clipped)
    except ValidationError as exc:
        raise TraceFormatError(f"{path}: {exc}") from exc


def export_csv(trace: Trace, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"# slot_seconds={trace.slot_seconds!r}\n")
        np.savetxt(fh, trace.values, fmt="%.17g")


def import_csv(path, kind=TraceKind.INCREMENTS) -> Trace:
    slot = 1e-3
    with open(path) as fh:
        first = fh.readline()
        if first.startswith("# slot_seconds="):
            slot = float(first.split("=", 1)[1])
    values = np.loadtxt(path, comments="#", ndmin=1)
    return Trace(values, slot, kind)
