"""Command-line front end.

Each command writes its primary outputs into <outdir>/<command>-<seed>/
together with meta.json (resolved configuration and tool version). Wall
clock information goes to run_info.json only, so primary outputs are
byte-identical across repeated runs with the same flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import estimation as est
from .accuracy import AccuracyInputs, AccuracyReport
from .errors import LrdError
from .experiments import PROBE_RATE_INTERVAL, ReportConfig, reference_node, report
from .probe import MeasurementConfig, ProbeLog, SimnetDriver, analyze, probe_pattern, run_measurement
from .reconstruction import (TrafficMoments, estimate_moments, reconstruct_aggvar, reconstruct_cov,
                             reconstruct_psd)
from .sampling import Gamma, Geometric, Periodic, Uniform, apply, draw_pattern, spec_from_dict
from .simnet import NodeConfig, PathConfig
from .traffic import (LrdModel, Trace, TraceKind, export_csv, gen_fgn, gen_onoff, import_csv, load_trace,
                      store_trace)

DEFAULT_SEED = 42
OUTDIR_ENV = "LRDPROBE_OUTDIR"
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# helpers

class MissingFileError(LrdError):
    def __init__(self, path):
        super().__init__(f"file not found: {path}")


def _read_trace(path, kind=TraceKind.INCREMENTS) -> Trace:
    if not os.path.exists(path):
        raise MissingFileError(path)
    if path.endswith(".csv"):
        return import_csv(path, kind)
    return load_trace(path)


def _write_trace(trace: Trace, path):
    if path.endswith(".csv"):
        export_csv(trace, path)
    else:
        store_trace(trace, path)


def _spec_from_args(args):
    dist = args.dist
    if dist is None:
        return None
    if dist == "geometric":
        return Geometric(args.p)
    if dist == "periodic":
        return Periodic(args.delta if args.delta is not None else int(round(1 / args.p)))
    if dist == "gamma":
        return Gamma(args.alpha, args.p)
    if dist == "uniform":
        return Uniform(args.b if args.b is not None else 2.0 / args.p)
    raise UsageError(f"unknown distribution '{dist}'")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not np.isfinite(o):
        return None
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(obj):
    # JSON has no inf/nan; map them to None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    return obj


class _Run:
    """Output directory bookkeeping for one command invocation."""

    def __init__(self, args, command):
        base = args.outdir or os.environ.get(OUTDIR_ENV) or "lrdprobe-out"
        self.dir = os.path.join(base, f"{command}-{args.seed}")
        os.makedirs(self.dir, exist_ok=True)
        self.command = command
        self.args = args
        self.started = time.time()

    def path(self, name):
        return os.path.join(self.dir, name)

    def write_json(self, name, obj):
        with open(self.path(name), "w") as fh:
            fh.write(_dumps(_clean(obj)))

    def finish(self, resolved: dict):
        meta = {"command": self.command, "version": __version__, "seed": self.args.seed, "config": resolved}
        self.write_json("meta.json", meta)
        with open(self.path("run_info.json"), "w") as fh:
            fh.write(_dumps({"started_unix": self.started, "finished_unix": time.time(),
                             "argv": sys.argv[1:]}))


def _resolved(args):
    skip = {"func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _parse_nodes(text, rate_interval):
    """'H=0.6:util=0.5,H=0.9:util=0.5' -> list of NodeConfig."""
    nodes = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        kv = {}
        for part in chunk.split(":"):
            if "=" not in part:
                raise UsageError(f"bad node spec '{chunk}' (expected key=value pairs joined by ':')")
            k, v = part.split("=", 1)
            kv[k.strip().lower()] = v.strip()
        unknown = set(kv) - {"h", "util", "cap", "var", "u", "buffer", "latency"}
        if unknown:
            raise UsageError(f"unknown node keys {sorted(unknown)} in '{chunk}'")
        if "h" not in kv:
            raise UsageError(f"node spec '{chunk}' needs H=")
        cap = float(kv.get("cap", 1.0))
        extra = {}
        if "buffer" in kv:
            extra["buffer"] = None if kv["buffer"] in ("inf", "none") else float(kv["buffer"])
        if "latency" in kv:
            extra["latency"] = float(kv["latency"])
        nodes.append(reference_node(float(kv["h"]), float(kv.get("util", 0.5)), cap,
                                float(kv["var"]) if "var" in kv else None,
                                int(kv.get("u", rate_interval)), **extra))
    if not nodes:
        raise UsageError("--nodes is empty")
    return nodes


# ---------------------------------------------------------------------------
# commands

def cmd_generate(args):
    run = _Run(args, "generate")
    if args.generator == "fgn":
        model = LrdModel(args.hurst, args.variance, args.mean)
        tr = gen_fgn(model, args.len, args.seed, clip=args.clip, slot_seconds=args.slot)
    else:
        alpha = args.tail_index if args.tail_index is not None else 3.0 - 2.0 * args.hurst
        tr = gen_onoff(args.sources, alpha, args.mean, args.len, args.seed)
    out = args.output or run.path("trace.trc")
    _write_trace(tr, out)
    summary = {"length": len(tr), "mean": float(tr.values.mean()), "variance": float(tr.values.var()),
               "clipped_fraction": tr.clipped_fraction, "output": out}
    run.write_json("summary.json", summary)
    run.finish(_resolved(args))
    return summary


def cmd_sample(args):
    run = _Run(args, "sample")
    y = _read_trace(args.trace)
    spec = _spec_from_args(args)
    pat = draw_pattern(spec, len(y), args.seed, y.slot_seconds)
    w = apply(pat, y)
    out = args.output or run.path("observation.trc")
    _write_trace(w, out)
    with open(run.path("sampling.json"), "w") as fh:
        fh.write(_dumps(spec.to_dict()))
    summary = {"sampling": spec.to_dict(), "samples": int(pat.slots.size), "length": len(w), "output": out}
    run.finish(_resolved(args))
    return summary


def cmd_estimate(args):
    spec = _spec_from_args(args)
    if args.method == "psd" and spec is not None and not isinstance(spec, Geometric):
        # refuse before touching data
        reconstruct_psd(est.SpectrumSeries(np.zeros(1), np.zeros(1), 1), spec, TrafficMoments(0.0, 0.0))
    run = _Run(args, "estimate")
    kind = TraceKind.OBSERVATION if spec is not None else TraceKind.INCREMENTS
    x = _read_trace(args.trace, kind)
    T = len(x)
    moments = estimate_moments(x, spec) if spec is not None else None
    result = {"method": args.method, "length": T, "sampling": spec.to_dict() if spec else None}
    if args.method == "cov":
        hi = min(args.fit_hi, T // est.LAG_GUARD)
        lags = est.log_lags(args.fit_lo, hi)
        c = est.sample_autocov(x, lags)
        if spec is not None:
            c = reconstruct_cov(c, spec, moments, drop_inadmissible=True)
        h = est.hurst_cov_slope(c, (args.fit_lo, hi))
        c.to_csv(run.path("covariance.csv"))
    elif args.method == "aggvar":
        sizes = est.log_lags(args.m_low, T // est.MIN_BLOCKS, 10)
        av = est.aggregate_variance(x, sizes)
        if spec is not None:
            av = reconstruct_aggvar(av, spec, moments)
        h = est.hurst_agg_var(av)
        av.to_csv(run.path("aggvar.csv"))
    else:
        ps = est.periodogram(x)
        if spec is not None:
            ps = reconstruct_psd(ps, spec, moments)
        h = est.hurst_psd(ps)
        ps.to_csv(run.path("spectrum.csv"))
    result["hurst"] = h.to_dict()
    if moments is not None:
        result["moments"] = {"mean": moments.mean, "variance": moments.variance,
                             "approximate": moments.approximate}
    run.write_json("estimate.json", result)
    run.finish(_resolved(args))
    return result


def cmd_reconstruct(args):
    spec = _spec_from_args(args)
    if spec is None:
        raise UsageError("reconstruct needs --dist")
    run = _Run(args, "reconstruct")
    w = _read_trace(args.trace, TraceKind.OBSERVATION)
    T = len(w)
    hi = min(args.lag_hi, T // est.LAG_GUARD)
    lags = np.unique(np.concatenate([[0], est.log_lags(args.lag_lo, hi)]))
    moments = estimate_moments(w, spec)
    c_w = est.sample_autocov(w, lags)
    c_y = reconstruct_cov(c_w, spec, moments, drop_inadmissible=True)
    c_w.to_csv(run.path("c_w.csv"))
    c_y.to_csv(run.path("c_y.csv"))
    result = {"sampling": spec.to_dict(), "lags": int(c_y.lags.size),
              "moments": {"mean": moments.mean, "variance": moments.variance,
                          "approximate": moments.approximate},
              "dropped_lags": c_y.meta.get("dropped_lags", [])}
    run.write_json("reconstruct.json", result)
    run.finish(_resolved(args))
    return result


def cmd_accuracy(args):
    run = _Run(args, "accuracy")
    spec = _spec_from_args(args) or Geometric(args.p)
    inp = AccuracyInputs(args.hurst, args.variance, args.mean, spec.mean_intensity, spec.variance,
                         args.T, args.prefactor)
    rep = AccuracyReport.build(inp)
    lags = [t for t in (1, 10, 100, 1000, 10000) if t < args.T]
    result = rep.to_dict(lags=lags, eps=args.eps)
    run.write_json("accuracy.json", result)
    run.finish(_resolved(args))
    return result


def _path_from_args(args):
    if args.path_config:
        with open(args.path_config) as fh:
            return PathConfig.from_json(fh.read())
    return PathConfig(_parse_nodes(args.nodes, args.rate_interval))


def cmd_simulate(args):
    run = _Run(args, "simulate")
    path = _path_from_args(args)
    spec = _spec_from_args(args) or Geometric(args.p)
    pat = probe_pattern(spec, args.probes, args.seed)
    driver = SimnetDriver(path, seed=args.seed, pair_gap=args.pair_gap)
    log = driver.measure(pat, args.kind)
    log.to_csv(run.path("probes.csv"))
    res = driver.last_result
    with open(run.path("path.json"), "w") as fh:
        fh.write(path.to_json() + "\n")
    result = {"probes": len(log), "lost": int(log.lost.sum()), "d_min": res.d_min,
              "nodes": [s.__dict__ for s in res.node_stats]}
    run.write_json("simulate.json", result)
    run.finish(_resolved(args))
    return result


def cmd_probe_sim(args):
    run = _Run(args, "probe-sim")
    path = _path_from_args(args)
    spec = _spec_from_args(args) or Geometric(args.p)
    cfg = MeasurementConfig(sampling=spec, n_probes=args.probes, probe_kind=args.kind, seed=args.seed,
                            capacity=min(n.capacity for n in path.nodes), reference_mode=args.reference,
                            pair_gap=args.pair_gap, fit_range=(args.fit_lo, args.fit_hi))
    if args.probe_csv:
        log = ProbeLog.from_csv(args.probe_csv)
    else:
        log = run_measurement(SimnetDriver(path, seed=args.seed, pair_gap=args.pair_gap), cfg)
        log.to_csv(run.path("probes.csv"))
    res = analyze(log, cfg)
    res.covariance.to_csv(run.path("covariance.csv"))
    out = res.to_dict()
    out["hurst_value"] = res.hurst["cov_slope"].value
    run.write_json("analysis.json", out)
    with open(run.path("path.json"), "w") as fh:
        fh.write(path.to_json() + "\n")
    run.finish({**_resolved(args), "measurement": cfg.to_dict()})
    return out


def cmd_report(args):
    run = _Run(args, "report")
    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    d.setdefault("seed", args.seed)
    cfg = ReportConfig.from_dict(d)
    files = report(cfg, run.dir)
    run.finish({"report": cfg.to_dict()})
    return {"files": files, "outdir": run.dir}


# ---------------------------------------------------------------------------
# parser

def _add_sampling(p, dist_default=None):
    p.add_argument("--dist", choices=["geometric", "periodic", "gamma", "uniform"], default=dist_default,
                   help="inter-sample distribution")
    p.add_argument("--p", type=float, default=0.1, help="sampling intensity (probes per slot)")
    p.add_argument("--delta", type=int, default=None, help="periodic sampling period in slots")
    p.add_argument("--alpha", type=int, default=2, choices=[2, 4], help="gamma shape")
    p.add_argument("--b", type=float, default=None, help="uniform support in slots")


def _add_path(p):
    p.add_argument("--nodes", default="H=0.8:util=0.5",
                   help="comma-separated nodes, each H=..:util=..[:cap=..][:var=..][:u=..]")
    p.add_argument("--path-config", default=None, help="JSON path configuration (overrides --nodes)")
    p.add_argument("--rate-interval", type=int, default=PROBE_RATE_INTERVAL,
                   help="slots per cross-traffic rate value")
    p.add_argument("--probes", type=int, default=10**6)
    p.add_argument("--kind", choices=["single", "pair"], default="single")
    p.add_argument("--pair-gap", type=float, default=0.01, help="pair spacing in slots")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lrdprobe", description="LRD estimation from sampled traffic and active probes")
    parser.add_argument("--version", action="version", version=f"lrdprobe {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--outdir", default=None, help=f"output directory (default ${OUTDIR_ENV} or ./lrdprobe-out)")
    common.add_argument("--config", default=None, help="JSON file with flag values")
    common.add_argument("--format", choices=["json", "csv"], default="json", help="stdout format")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="synthesize an LRD traffic trace")
    g.add_argument("--hurst", type=float, default=0.8)
    g.add_argument("--len", type=int, default=10**6)
    g.add_argument("--variance", type=float, default=1.0)
    g.add_argument("--mean", type=float, default=0.0)
    g.add_argument("--generator", choices=["fgn", "onoff"], default="fgn")
    g.add_argument("--tail-index", type=float, default=None)
    g.add_argument("--sources", type=int, default=1000)
    g.add_argument("--clip", action="store_true")
    g.add_argument("--slot", type=float, default=1e-3, help="slot duration in seconds")
    g.add_argument("-o", "--output", default=None, help="trace file (.trc binary or .csv)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("sample", parents=[common], help="sample a trace with a point process")
    s.add_argument("trace")
    _add_sampling(s, "geometric")
    s.add_argument("-o", "--output", default=None)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("estimate", parents=[common], help="estimate H from a trace or observation")
    e.add_argument("trace")
    e.add_argument("--method", choices=["cov", "aggvar", "psd"], default="cov")
    _add_sampling(e)
    e.add_argument("--fit-lo", type=float, default=1)
    e.add_argument("--fit-hi", type=float, default=1000)
    e.add_argument("--m-low", type=int, default=100)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("reconstruct", parents=[common], help="recover traffic covariance from an observation")
    r.add_argument("trace")
    _add_sampling(r, "geometric")
    r.add_argument("--lag-lo", type=float, default=1)
    r.add_argument("--lag-hi", type=float, default=1000)
    r.set_defaults(func=cmd_reconstruct)

    a = sub.add_parser("accuracy", parents=[common], help="finite-sample accuracy report")
    a.add_argument("--hurst", type=float, default=0.8)
    a.add_argument("--variance", type=float, default=1.0)
    a.add_argument("--mean", type=float, default=1.0)
    a.add_argument("--prefactor", type=float, default=1.0)
    a.add_argument("--T", type=int, default=10**6)
    a.add_argument("--eps", type=float, default=0.1)
    _add_sampling(a)
    a.set_defaults(func=cmd_accuracy)

    sm = sub.add_parser("simulate", parents=[common], help="simulate a probed path and store probe records")
    _add_path(sm)
    _add_sampling(sm)
    sm.set_defaults(func=cmd_simulate)

    ps = sub.add_parser("probe-sim", parents=[common], help="simulate, probe and estimate H end to end")
    _add_path(ps)
    _add_sampling(ps)
    ps.add_argument("--reference", choices=["min_delay", "mean_delay"], default="min_delay")
    ps.add_argument("--fit-lo", type=float, default=1)
    ps.add_argument("--fit-hi", type=float, default=1000)
    ps.add_argument("--probe-csv", default=None, help="analyze stored probe records instead of simulating")
    ps.set_defaults(func=cmd_probe_sim)

    rp = sub.add_parser("report", parents=[common], help="write figure-analog CSV data")
    rp.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser, argv, args):
    """Values from --config fill in flags that were not given on the command line."""
    if not args.config:
        return args
    if args.command == "report":
        return args
    if not os.path.exists(args.config):
        raise MissingFileError(args.config)
    with open(args.config) as fh:
        conf = json.load(fh)
    if not isinstance(conf, dict):
        raise UsageError("--config must hold a JSON object")
    known = vars(args)
    explicit = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for k, v in conf.items():
        key = k.replace("-", "_")
        if key not in known or key in ("func", "command", "config"):
            raise UsageError(f"unknown config key '{k}'")
        if key not in explicit:
            setattr(args, key, v)
    return args


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage().strip() + "\nlrdprobe: error: a command is required")
        args = _apply_config(parser, argv, args)
        if args.seed is None:
            args.seed = DEFAULT_SEED
        print(f"lrdprobe {args.command}: seed={args.seed}", file=sys.stderr)
        result = args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (LrdError, ValueError, FloatingPointError, OverflowError, json.JSONDecodeError) as exc:
        print(f"lrdprobe: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.format == "csv" and isinstance(result, dict) and "hurst" in result:
        h = result["hurst"]
        rows = h.items() if isinstance(h, dict) and "value" not in h else [("hurst", h)]
        sys.stdout.write("estimator,value\n")
        for name, v in rows:
            sys.stdout.write(f"{name},{v['value']!r}\n")
    else:
        sys.stdout.write(_dumps(_clean(result)))
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
