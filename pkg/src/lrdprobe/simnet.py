"""Discrete-time tandem FIFO queues with LRD cross traffic.

Each node is a fluid queue served at `capacity` units per slot:

    v(t) = q(t) + y(t)            work present during slot t
    q(t+1) = min(max(v(t) - C, 0), buffer)

A node is busy in slot t iff v(t) > 0. Probes are zero-volume observers by
default: a probe reaching node i in slot t waits v_i(t)/C_i there.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import optimize, stats

from .errors import ValidationError
from .estimation import CovarianceSeries
from .sampling import SamplingPattern
from .traffic import LrdModel, Trace, TraceKind, gen_fgn, gen_onoff


@dataclass
class NodeConfig:
    """One FIFO node and its cross traffic.

    cross.mean_rate is the mean cross-traffic volume per slot; for the fGn
    generator the Gaussian level is shifted so that the mean *after*
    clipping at zero equals it (match_mean=True). rate_interval holds each
    cross-traffic rate for that many slots, i.e. the traffic process is
    defined on a coarser time scale than the probing slot.
    """

    capacity: float = 1.0
    cross: LrdModel | None = None
    generator: str = "fgn"
    seed: int | None = None
    buffer: float | None = 5000.0
    rate_interval: int = 1
    latency: float = 0.0
    match_mean: bool = True
    tail_index: float | None = None
    n_sources: int = 1000
    cross_trace: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValidationError("capacity must be > 0")
        if self.buffer is not None and self.buffer < 0:
            raise ValidationError("buffer must be >= 0 or None")
        if self.rate_interval < 1:
            raise ValidationError("rate_interval must be >= 1")
        if self.latency < 0:
            raise ValidationError("latency must be >= 0")
        if self.generator not in ("fgn", "onoff", "none"):
            raise ValidationError(f"unknown generator '{self.generator}'")
        if self.cross is None and self.cross_trace is None and self.generator != "none":
            raise ValidationError("node needs a cross-traffic model, an explicit trace, or generator='none'")

    @property
    def utilization(self) -> float:
        if self.cross_trace is not None:
            return float(np.mean(self.cross_trace)) / self.capacity
        if self.cross is None:
            return 0.0
        return self.cross.mean_rate / self.capacity

    def to_dict(self):
        d = {"capacity": self.capacity, "generator": self.generator, "seed": self.seed,
             "buffer": self.buffer, "rate_interval": self.rate_interval, "latency": self.latency,
             "match_mean": self.match_mean}
        if self.cross is not None:
            d["cross"] = self.cross.to_dict()
        if self.generator == "onoff":
            d["tail_index"] = self.tail_index
            d["n_sources"] = self.n_sources
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        cross = d.pop("cross", None)
        if cross is not None:
            cross = LrdModel(**cross)
        return cls(cross=cross, **d)


@dataclass
class PathConfig:
    nodes: list

    def __post_init__(self):
        if len(self.nodes) < 1:
            raise ValidationError("a path needs at least one node")

    def to_json(self) -> str:
        return json.dumps({"nodes": [n.to_dict() for n in self.nodes]}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls([NodeConfig.from_dict(n) for n in json.loads(text)["nodes"]])


@dataclass
class NodeStats:
    arrived: float
    served: float
    dropped: float
    final_backlog: float
    utilization: float
    clipped_fraction: float
    unstable: bool


@dataclass
class SimResult:
    busy: list
    send_slots: np.ndarray
    delays: np.ndarray
    dropped: np.ndarray
    d_min: float
    node_stats: list
    probe_kind: str = "single"
    dispersions: np.ndarray | None = None
    pair_valid: np.ndarray | None = None
    pair_gap: float | None = None

    @property
    def probe_delays(self):
        return list(zip(self.send_slots.tolist(), self.delays.tolist(), self.dropped.tolist()))

    @property
    def pair_dispersions(self):
        if self.dispersions is None:
            return []
        return list(zip(self.send_slots.tolist(), self.dispersions.tolist()))

    @property
    def unstable(self):
        return any(s.unstable for s in self.node_stats)

    def write_probe_csv(self, path):
        with open(path, "w") as fh:
            fh.write("send_slot,delay_slots,dropped\n")
            for s, d, x in zip(self.send_slots, self.delays, self.dropped):
                fh.write(f"{int(s)},{'' if x else repr(float(d))},{int(bool(x))}\n")


@njit(cache=True)
def _fluid_queue(y, capacity, buffer):
    n = y.size
    work = np.empty(n)
    overflow = np.zeros(n, dtype=np.bool_)
    q = 0.0
    served = 0.0
    dropped = 0.0
    for t in range(n):
        v = q + y[t]
        work[t] = v
        s = v if v < capacity else capacity
        served += s
        r = v - s
        if r > buffer:
            dropped += r - buffer
            overflow[t] = True
            r = buffer
        q = r
    return work, overflow, served, dropped, q


def _clip_shift(mean_post, sigma):
    # Gaussian level m with E[max(m + sigma Z, 0)] = mean_post
    def excess(m):
        z = m / sigma
        return m * stats.norm.cdf(z) + sigma * stats.norm.pdf(z) - mean_post
    if mean_post <= 0:
        return -10.0 * sigma
    return optimize.brentq(excess, -10 * sigma - 10 * mean_post, mean_post + 10 * sigma, xtol=1e-14)


def node_seed(sim_seed, index):
    return int(np.random.SeedSequence([int(sim_seed), int(index)]).generate_state(1)[0])


def cross_traffic(node: NodeConfig, length: int, seed: int) -> tuple[np.ndarray, float]:
    """Per-slot cross-traffic volumes for a node and the clipped fraction."""
    if node.cross_trace is not None:
        y = np.asarray(node.cross_trace, dtype=np.float64)
        if y.size != length:
            raise ValidationError(f"cross_trace length {y.size} != pattern length {length}")
        if np.any(y < 0):
            raise ValidationError("cross traffic must be >= 0")
        return y, 0.0
    if node.generator == "none":
        return np.zeros(length), 0.0
    u = int(node.rate_interval)
    n = -(-length // u)
    model = node.cross
    if node.generator == "fgn":
        level = _clip_shift(model.mean_rate, np.sqrt(model.variance)) if node.match_mean else model.mean_rate
        base = LrdModel(model.hurst, model.variance, 0.0, model.prefactor)
        tr = gen_fgn(base, max(n, 2), seed)
        coarse = tr.values[:n] + level
        neg = coarse < 0
        clipped = float(neg.mean())
        coarse[neg] = 0.0
    else:
        alpha = node.tail_index if node.tail_index is not None else 3.0 - 2.0 * model.hurst
        coarse = gen_onoff(node.n_sources, alpha, model.mean_rate, n, seed).values
        clipped = 0.0
    y = np.repeat(coarse, u)[:length] if u > 1 else coarse
    return y, clipped


def simulate_path(path: PathConfig, probe_pattern: SamplingPattern, probe_kind: str = "single",
                  seed: int = 0, pair_gap: float = 0.01, probe_volume: float = 0.0,
                  keep_work: bool = False) -> SimResult:
    """Run the tandem queue over the pattern's horizon and probe it.

    Single probes record the end-to-end delay (slots) and whether a finite
    buffer overflowed in the slot they met at some node. Pair probes send a
    second zero-perturbation packet pair_gap slots after the first; both
    members have volume bottleneck_capacity * pair_gap for the dispersion
    rule, and the dispersion g_r at the receiver follows the fluid FIFO rule.
    """
    if probe_kind not in ("single", "pair"):
        raise ValidationError(f"unknown probe kind '{probe_kind}'")
    if pair_gap <= 0:
        raise ValidationError("pair_gap must be > 0")
    T = len(probe_pattern)
    send = probe_pattern.slots.astype(np.int64)
    busy, stats_, works, overflows, inputs = [], [], [], [], []
    for i, node in enumerate(path.nodes):
        s = node.seed if node.seed is not None else node_seed(seed, i)
        y, clipped = cross_traffic(node, T, s)
        buf = np.inf if node.buffer is None else float(node.buffer)
        work, overflow, served, dropped, q = _fluid_queue(y, float(node.capacity), buf)
        arrived = float(y.sum())
        util = arrived / T / node.capacity
        unstable = util >= 1.0
        if unstable:
            warnings.warn(f"node {i} utilization {util:.3f} >= 1: queue is unstable", RuntimeWarning)
        busy.append(Trace((work > 0).astype(np.float64), probe_pattern.indicator.slot_seconds, TraceKind.BINARY))
        stats_.append(NodeStats(arrived, float(served), float(dropped), float(q), util, clipped, unstable))
        works.append(work)
        overflows.append(overflow)
        if probe_kind == "pair":
            inputs.append(y)
        del y

    caps = np.array([n.capacity for n in path.nodes])
    lat = np.array([n.latency for n in path.nodes])
    service = probe_volume / caps
    d_min = float(np.sum(service + lat))
    acc = np.zeros(send.size)
    lost = np.zeros(send.size, dtype=bool)
    # pair state
    gap = np.full(send.size, float(pair_gap))
    valid = np.ones(send.size, dtype=bool)
    pair_volume = caps.min() * pair_gap
    for i in range(len(path.nodes)):
        slot = send + np.floor(acc).astype(np.int64)
        beyond = slot >= T
        lost |= beyond
        slot = np.minimum(slot, T - 1)
        w = works[i][slot]
        lost |= overflows[i][slot]
        if probe_kind == "pair":
            c = caps[i]
            # cross traffic arriving between the members, at the slot's rate
            yrate = inputs[i][slot]
            ahead = w + pair_volume - c * gap
            valid &= ahead >= 0
            gap = gap + (np.maximum(ahead, 0.0) + yrate * gap - w) / c
            nxt = np.minimum(slot + 1, T - 1)
            lost |= overflows[i][nxt] & (np.floor(acc + pair_gap) > np.floor(acc))
        acc = acc + w / caps[i] + service[i] + lat[i]
    delays = np.where(lost, np.nan, acc)
    res = SimResult(busy, send, delays, lost, d_min, stats_, probe_kind)
    if probe_kind == "pair":
        res.dispersions = np.where(lost, np.nan, gap)
        res.pair_valid = valid & ~lost
        res.pair_gap = float(pair_gap)
    if keep_work:
        res.work = works
    return res


def or_compose(indicators) -> Trace:
    """Logical OR of binary indicators via W_i = W_{i-1} + Y_i - W_{i-1} Y_i."""
    if len(indicators) == 0:
        raise ValidationError("need at least one indicator")
    vals = [x.values if isinstance(x, Trace) else np.asarray(x, dtype=np.float64) for x in indicators]
    n = vals[0].size
    if any(v.size != n for v in vals):
        raise ValidationError("indicator lengths differ")
    w = vals[0].copy()
    for v in vals[1:]:
        w = w + v - w * v
    slot = indicators[0].slot_seconds if isinstance(indicators[0], Trace) else 1e-3
    return Trace(w, slot, TraceKind.BINARY)


def compose_cov(c_list, mu_list, tau=None) -> float:
    """Autocovariance at lag tau of the OR of independent binary processes.

    c_list holds per-process covariances at tau, either numbers or
    CovarianceSeries (looked up at tau).
    """
    if len(c_list) != len(mu_list) or len(c_list) == 0:
        raise ValidationError("c_list and mu_list must be non-empty and of equal length")
    mus = [float(m) for m in mu_list]
    if any(not (0.0 <= m <= 1.0) for m in mus):
        raise ValidationError("means of binary processes must lie in [0, 1]")
    cs = []
    for c in c_list:
        if isinstance(c, CovarianceSeries):
            if tau is None:
                raise ValidationError("tau required with CovarianceSeries inputs")
            cs.append(c.at(tau))
        else:
            cs.append(np.asarray(c, dtype=np.float64))
    cw, mw = cs[0], mus[0]
    for c, m in zip(cs[1:], mus[1:]):
        cw = cw * c + cw * (1.0 - m) ** 2 + c * (1.0 - mw) ** 2
        mw = mw + m - mw * m
    return float(cw) if np.ndim(cw) == 0 else cw
