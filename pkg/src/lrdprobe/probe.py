"""Active-probing measurement: probe records to observations to H estimates.

Single probes yield a binary busy observation (delay above the idle-path
reference, or lost). Packet pairs yield a cross-traffic intensity sample
from the dispersion g_r of a pair sent g_s apart. Either observation is a
sampled process W = A Y and goes through the geometric reconstruction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Protocol

import numpy as np

from . import estimation as est
from .accuracy import AccuracyInputs, AccuracyReport
from .errors import DriverError, ValidationError
from .reconstruction import estimate_moments, reconstruct_aggvar, reconstruct_cov
from .sampling import Geometric, InterSampleSpec, SamplingPattern, spec_from_dict
from .simnet import PathConfig, SimResult, simulate_path
from .traffic import Trace, TraceKind

REL_TOL = 1e-9


class ProbeRecord(NamedTuple):
    send_slot: int
    delay: float | None
    lost: bool = False
    pair_dispersion: float | None = None


@dataclass
class ProbeLog:
    """Columnar probe records; delays/dispersions are NaN where absent."""

    send_slots: np.ndarray
    delays: np.ndarray
    lost: np.ndarray
    dispersions: np.ndarray | None = None
    pattern_length: int | None = None
    pair_gap: float | None = None

    def __post_init__(self):
        self.send_slots = np.asarray(self.send_slots, dtype=np.int64)
        self.delays = np.asarray(self.delays, dtype=np.float64)
        self.lost = np.asarray(self.lost, dtype=bool)
        if self.dispersions is not None:
            self.dispersions = np.asarray(self.dispersions, dtype=np.float64)
        if np.any(np.diff(self.send_slots) <= 0):
            raise ValidationError("send slots must be strictly increasing")
        ok = ~self.lost
        if np.any(self.delays[ok] < 0) or np.any(np.isnan(self.delays[ok])):
            raise ValidationError("delays of delivered probes must be >= 0")
        if self.pattern_length is None and self.send_slots.size:
            self.pattern_length = int(self.send_slots[-1]) + 1

    def __len__(self):
        return self.send_slots.size

    def __iter__(self):
        disp = self.dispersions
        for i in range(self.send_slots.size):
            d = None if self.lost[i] else float(self.delays[i])
            g = None if disp is None or np.isnan(disp[i]) else float(disp[i])
            yield ProbeRecord(int(self.send_slots[i]), d, bool(self.lost[i]), g)

    @classmethod
    def from_records(cls, records, pattern_length=None, pair_gap=None):
        records = list(records)
        slots = [r.send_slot for r in records]
        lost = [r.lost or r.delay is None for r in records]
        delays = [np.nan if lo else r.delay for r, lo in zip(records, lost)]
        disp = None
        if any(r.pair_dispersion is not None for r in records):
            disp = [np.nan if r.pair_dispersion is None else r.pair_dispersion for r in records]
        return cls(slots, delays, lost, disp, pattern_length, pair_gap)

    @classmethod
    def from_sim(cls, res: SimResult, pattern_length: int):
        return cls(res.send_slots, res.delays, res.dropped, res.dispersions, pattern_length, res.pair_gap)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"# pattern_length={self.pattern_length}\n")
            if self.pair_gap is not None:
                fh.write(f"# pair_gap={self.pair_gap!r}\n")
            fh.write("send_slot,delay_slots,lost,pair_dispersion\n")
            disp = self.dispersions
            for i in range(self.send_slots.size):
                d = "" if self.lost[i] else repr(float(self.delays[i]))
                g = "" if disp is None or np.isnan(disp[i]) else repr(float(disp[i]))
                fh.write(f"{int(self.send_slots[i])},{d},{int(self.lost[i])},{g}\n")

    @classmethod
    def from_csv(cls, path):
        meta, slots, delays, lost, disp = {}, [], [], [], []
        with open(path) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition("=")
                    meta[k] = v
                    continue
                if not line or line.startswith("send_slot"):
                    continue
                s, d, lo, g = line.split(",")
                slots.append(int(s))
                lost.append(bool(int(lo)))
                delays.append(np.nan if d == "" else float(d))
                disp.append(np.nan if g == "" else float(g))
        has_disp = any(not np.isnan(g) for g in disp)
        plen = int(meta["pattern_length"]) if meta.get("pattern_length", "None") != "None" else None
        gap = float(meta["pair_gap"]) if "pair_gap" in meta else None
        return cls(slots, delays, lost, disp if has_disp else None, plen, gap)


@dataclass
class MeasurementConfig:
    sampling: InterSampleSpec = field(default_factory=lambda: Geometric(0.1))
    slot_seconds: float = 1e-3
    n_probes: int = 10**6
    reference_mode: str = "min_delay"
    probe_kind: str = "single"
    pair_gap: float = 0.01
    capacity: float | None = None
    seed: int = 42
    fit_range: tuple = (1, 1000)
    m_low_seconds: float = 0.1

    def __post_init__(self):
        if self.n_probes < 1:
            raise ValidationError("n_probes must be >= 1")
        if self.reference_mode not in ("min_delay", "mean_delay"):
            raise ValidationError(f"unknown reference mode '{self.reference_mode}'")
        if self.probe_kind not in ("single", "pair"):
            raise ValidationError(f"unknown probe kind '{self.probe_kind}'")

    def to_dict(self):
        return {"sampling": self.sampling.to_dict(), "slot_seconds": self.slot_seconds,
                "n_probes": self.n_probes, "reference_mode": self.reference_mode,
                "probe_kind": self.probe_kind, "pair_gap": self.pair_gap, "capacity": self.capacity,
                "seed": self.seed, "fit_range": list(self.fit_range), "m_low_seconds": self.m_low_seconds}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "sampling" in d:
            d["sampling"] = spec_from_dict(d["sampling"])
        if "fit_range" in d:
            d["fit_range"] = tuple(d["fit_range"])
        return cls(**d)


def probe_pattern(spec: InterSampleSpec, n_probes: int, seed: int, slot_seconds: float = 1e-3) -> SamplingPattern:
    """Pattern holding exactly n_probes events; its length ends at the last one."""
    rng = np.random.default_rng(seed)
    gaps = spec.draw_gaps(rng, int(n_probes))
    slots = np.cumsum(gaps) - 1
    if not isinstance(spec, Geometric):
        # random phase within the first gap
        slots = slots - int(rng.integers(gaps[0]))
    a = np.zeros(int(slots[-1]) + 1)
    a[slots] = 1.0
    return SamplingPattern(Trace(a, slot_seconds, TraceKind.BINARY), spec, int(seed))


class PathDriver(Protocol):
    """Contract for measurement back ends.

    probe(send_slot, kind) sends one probe (or a pair) at the given slot and
    returns (delay_slots or None if lost, g_r or None). Drivers may also
    offer measure(pattern, kind) -> ProbeLog to handle a whole pattern at
    once; records must come back in send order. A live ICMP implementation
    would send at wall-clock slot boundaries and report one-way delay or RTT.
    """

    def probe(self, send_slot: int, kind: str) -> tuple: ...


class SimnetDriver:
    """Probes a simulated tandem path."""

    def __init__(self, path: PathConfig, seed: int = 0, pair_gap: float = 0.01, probe_volume: float = 0.0):
        self.path = path
        self.seed = seed
        self.pair_gap = pair_gap
        self.probe_volume = probe_volume
        self.last_result: SimResult | None = None

    def measure(self, pattern: SamplingPattern, kind: str) -> ProbeLog:
        res = simulate_path(self.path, pattern, kind, self.seed, self.pair_gap, self.probe_volume)
        self.last_result = res
        return ProbeLog.from_sim(res, len(pattern))

    def probe(self, send_slot, kind):
        raise NotImplementedError("the simulator driver works on whole patterns; use measure()")


class TraceReplayDriver:
    """Replays probe records previously stored as CSV."""

    def __init__(self, source):
        self.log = source if isinstance(source, ProbeLog) else ProbeLog.from_csv(source)
        self._index = {int(s): i for i, s in enumerate(self.log.send_slots)}

    def send_slots(self):
        return self.log.send_slots

    def probe(self, send_slot, kind):
        i = self._index.get(int(send_slot))
        if i is None:
            raise KeyError(f"no stored record for slot {send_slot}")
        d = None if self.log.lost[i] else float(self.log.delays[i])
        disp = self.log.dispersions
        g = None if disp is None or np.isnan(disp[i]) else float(disp[i])
        return d, g


def run_measurement(driver, config: MeasurementConfig, pattern: SamplingPattern | None = None) -> ProbeLog:
    """Probe the path at every 1-slot of the sampling pattern, in order."""
    if pattern is None:
        if hasattr(driver, "send_slots"):
            slots = np.asarray(driver.send_slots(), dtype=np.int64)
            a = np.zeros(int(slots[-1]) + 1)
            a[slots] = 1.0
            pattern = SamplingPattern(Trace(a, config.slot_seconds, TraceKind.BINARY), config.sampling, config.seed)
        else:
            pattern = probe_pattern(config.sampling, config.n_probes, config.seed, config.slot_seconds)
    if hasattr(driver, "measure"):
        return driver.measure(pattern, config.probe_kind)
    slots = pattern.slots
    recs = []
    for s in slots:
        try:
            d, g = driver.probe(int(s), config.probe_kind)
        except Exception as exc:
            raise DriverError(int(s), exc) from exc
        recs.append(ProbeRecord(int(s), d, d is None, g))
    return ProbeLog.from_records(recs, len(pattern), config.pair_gap if config.probe_kind == "pair" else None)


def _length(log: ProbeLog, pattern):
    if pattern is None:
        return int(log.pattern_length)
    slots = pattern.slots
    if slots.size != log.send_slots.size or not np.array_equal(slots, log.send_slots):
        raise ValidationError("probe records do not align with the pattern's sampling slots")
    return len(pattern)


def busy_from_delays(log: ProbeLog, pattern: SamplingPattern | None = None, mode: str = "min_delay",
                     slot_seconds: float = 1e-3) -> Trace:
    """Binary observation: 1 where a probe saw a busy path (or was lost)."""
    T = _length(log, pattern)
    ok = ~log.lost
    if not ok.any():
        raise ValidationError("no successful probes")
    d = log.delays[ok]
    ref = d.min() if mode in ("min_delay", "min") else d.mean()
    thresh = ref + REL_TOL * abs(ref)
    hit = log.lost.copy()
    hit[ok] = d > thresh
    w = np.zeros(T)
    w[log.send_slots] = hit
    slot = pattern.indicator.slot_seconds if pattern is not None else slot_seconds
    return Trace(w, slot, TraceKind.OBSERVATION, meta={"reference": float(ref), "mode": mode})


def pair_intensity(log: ProbeLog, pattern: SamplingPattern | None = None, g_s: float | None = None,
                   capacity: float | None = None, slot_seconds: float = 1e-3) -> Trace:
    """Cross-traffic intensity samples from pair dispersion; lost pairs give 0."""
    g_s = log.pair_gap if g_s is None else g_s
    if g_s is None or not g_s > 0:
        raise ValidationError("g_s must be > 0")
    if log.dispersions is None:
        raise ValidationError("records carry no pair dispersions")
    T = _length(log, pattern)
    g = log.dispersions
    val = (g - g_s) / g_s * capacity if capacity is not None else g - g_s
    val = np.where(np.isnan(g) | log.lost, 0.0, val)
    w = np.zeros(T)
    w[log.send_slots] = val
    slot = pattern.indicator.slot_seconds if pattern is not None else slot_seconds
    return Trace(w, slot, TraceKind.OBSERVATION)


@dataclass
class AnalysisResult:
    covariance: est.CovarianceSeries
    hurst: dict
    accuracy: AccuracyReport | None
    aggvar: est.AggVarSeries | None
    diagnostics: dict

    def to_dict(self):
        return {"hurst": {k: v.to_dict() for k, v in self.hurst.items()},
                "diagnostics": self.diagnostics,
                "accuracy": self.accuracy.to_dict() if self.accuracy is not None else None}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def analyze_observation(w: Trace, spec: InterSampleSpec, fit_range=(1, 1000), m_low: int = 100,
                        per_decade: int = 20) -> AnalysisResult:
    """Geometric-sampling analysis of an observation series W."""
    if not isinstance(spec, Geometric):
        raise ValidationError("analysis requires geometric sampling")
    T = len(w)
    lo, hi = fit_range
    hi_eff = min(hi, T // est.LAG_GUARD)
    lags = est.log_lags(lo, hi_eff, per_decade)
    c_w = est.sample_autocov(w, lags)
    c_y = reconstruct_cov(c_w, spec)
    fit = est.loglog_fit(c_y.lags, c_y.values, (lo, hi_eff))
    hurst = {"cov_slope": est.hurst_from_fit(fit, "cov_slope")}
    moments = estimate_moments(w, spec)
    diag = {"T": T, "n_samples": int(np.count_nonzero(w.values)) if w.kind != TraceKind.OBSERVATION else None,
            "mean_w": float(w.values.mean()), "traffic_mean": moments.mean,
            "traffic_variance": moments.variance, "cov_fit": {"n_used": fit.n_used, "n_excluded": fit.n_excluded,
                                                               "intercept": fit.intercept}}
    av_y = None
    if T // est.MIN_BLOCKS >= m_low:
        sizes = est.log_lags(m_low, T // est.MIN_BLOCKS, 10)
        if sizes.size >= 5:
            av_w = est.aggregate_variance(w, sizes)
            av_y = reconstruct_aggvar(av_w, spec, moments)
            try:
                hurst["agg_var"] = est.hurst_agg_var(av_y)
            except ValidationError as exc:
                diag["agg_var_error"] = str(exc)
    report = None
    h = hurst["cov_slope"].value
    if moments.variance > 0 and T >= 1000 and 0.5 < h < 1:
        k = 10**fit.intercept / moments.variance
        inp = AccuracyInputs(h, moments.variance, moments.mean, spec.mean_intensity, spec.variance, T, k)
        report = AccuracyReport.build(inp, c_y_source="fit")
        ts = report.tau_star
        diag["tau_star"] = ts
        if ts < hi_eff:
            try:
                f2 = est.loglog_fit(c_y.lags, c_y.values, (lo, ts))
                hurst["cov_slope_tau_star"] = est.hurst_from_fit(f2, "cov_slope")
            except ValidationError as exc:
                diag["tau_star_fit_error"] = str(exc)
    return AnalysisResult(c_y, hurst, report, av_y, diag)


def analyze(log: ProbeLog, config: MeasurementConfig, fit_range=None, pattern=None) -> AnalysisResult:
    """Full pipeline on probe records: observation, reconstruction, H fits."""
    fit_range = config.fit_range if fit_range is None else fit_range
    if config.probe_kind == "pair":
        w = pair_intensity(log, pattern, log.pair_gap or config.pair_gap, config.capacity, config.slot_seconds)
    else:
        w = busy_from_delays(log, pattern, config.reference_mode, config.slot_seconds)
    m_low = max(1, int(round(config.m_low_seconds / config.slot_seconds)))
    res = analyze_observation(w, config.sampling, fit_range, m_low)
    res.diagnostics["probes"] = len(log)
    res.diagnostics["lost"] = int(log.lost.sum())
    res.diagnostics["probe_kind"] = config.probe_kind
    return res
