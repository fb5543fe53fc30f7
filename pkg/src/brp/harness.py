"""Experiment runner: config files, the four desk-scale experiments and their outputs.

Config files are flat ``key = value`` lines; ``#`` starts a comment. See
``KEYS`` for every accepted key and its default.
"""

import csv
import io
import json
import math
import os
import statistics
from dataclasses import dataclass, field, replace

from brp.config import ProtocolConfig, group_id
from brp.netsim import ConfigError, DEFAULT_DELAY, DelayModel, NodeSpec, Scenario, run
from brp.timing import PhyConfig, build_layout, raw_bitrate
from brp.traffic import DataFlow, TrafficSpec, VoiceStream, account

EXPERIMENTS = ("CYCLE_DURATION", "LATENCY", "THROUGHPUT", "MIN_SCALING_SEARCH")
CHANNELS = 50

KEYS = {
    # experiment
    "experiment": "THROUGHPUT",
    "seeds": "0",
    "cycles": "200",
    "warmup_cycles": "5",
    "scaling": "1.0",
    "delay": "none",
    "write_trace": "false",
    # network and traffic; every node gets the same traffic
    "nodes": "1",
    "bounce_back": "true",
    "data_flows": "1",
    "data_per_cycle": "0",
    "data_payload": "40",
    "data_reserve": "0",
    "data_dest": "0",
    "voice_streams": "0",
    "voice_pairs": "1",
    "uplink_loss": "0.0",
    "downlink_loss": "0.0",
    "node_drift_ppm": "0.0",
    "relay_drift_ppm": "0.0",
    # protocol
    "control_slots": str(ProtocolConfig.control_slots),
    "data_slots": str(ProtocolConfig.data_slots),
    "max_requests": str(ProtocolConfig.max_requests),
    "payload_capacity": str(ProtocolConfig.payload_capacity),
    "sticky_limit": str(ProtocolConfig.sticky_limit),
    "per_flow_sticky": "true",
    "ttl": str(ProtocolConfig.ttl),
    "guard": str(ProtocolConfig.guard),
    # radio
    "spreading_factor": "7",
    "bandwidth": "250000",
    "coding_rate": "5",
    "preamble_symbols": "8",
    "explicit_header": "false",
    # breakdown search
    "search_lo": "1.0",
    "search_hi": "20.0",
    "search_resolution": "0.05",
    "search_cycles": "200",
    "search_seeds": "10",
    "error_threshold": "0",
}


@dataclass(frozen=True)
class SearchConfig:
    lo: float = 1.0
    hi: float = 20.0
    resolution: float = 0.05
    cycles: int = 200
    seeds: tuple = tuple(range(10))
    # a scaling works if the violation count stays at or below this
    threshold: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    scenario: Scenario
    seeds: tuple = (0,)
    warmup_cycles: int = 5
    write_trace: bool = False
    search: SearchConfig = SearchConfig()

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")

    def scenario_for(self, seed):
        sc = self.scenario
        return replace(sc, seed=seed, cycles=sc.cycles + self.warmup_cycles)


def _bool(v):
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_seeds(v) -> tuple:
    """``"0,1,2"``, ``"0 1 2"`` or a range ``"0-9"``."""
    out = []
    for tok in v.replace(",", " ").split():
        if "-" in tok[1:]:
            a, b = tok.split("-", 1)
            out += range(int(a), int(b) + 1)
        else:
            out.append(int(tok))
    return tuple(out)


def parse_delay(v) -> DelayModel:
    """``none``, ``default``, ``uniform LO HI`` or ``shifted_exp MIN MEAN`` (seconds)."""
    parts = v.split()
    kind = parts[0].lower()
    if kind == "none" and len(parts) == 1:
        return DelayModel.none()
    if kind == "default" and len(parts) == 1:
        return DEFAULT_DELAY
    if kind in ("uniform", "shifted_exp") and len(parts) == 3:
        a, b = float(parts[1]), float(parts[2])
        return DelayModel.uniform(a, b) if kind == "uniform" else DelayModel.shifted_exp(a, b)
    raise ValueError(f"bad delay spec {v!r}")


def parse_pairs(text: str) -> dict:
    vals = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in KEYS:
            raise ConfigError(f"line {n}: unknown key {k!r}")
        if k in vals:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        vals[k] = v
    return vals


def build_config(vals: dict) -> ExperimentConfig:
    v = dict(KEYS)
    v.update(vals)
    try:
        cfg = ProtocolConfig(
            control_slots=int(v["control_slots"]),
            data_slots=int(v["data_slots"]),
            max_requests=int(v["max_requests"]),
            payload_capacity=int(v["payload_capacity"]),
            sticky_limit=int(v["sticky_limit"]),
            per_flow_sticky=_bool(v["per_flow_sticky"]),
            ttl=int(v["ttl"]),
            guard=float(v["guard"]),
        )
        phy = PhyConfig(
            spreading_factor=int(v["spreading_factor"]),
            bandwidth=float(v["bandwidth"]),
            coding_rate=int(v["coding_rate"]),
            preamble_symbols=int(v["preamble_symbols"]),
            explicit_header=_bool(v["explicit_header"]),
        )
        bounce = _bool(v["bounce_back"])
        n_nodes = int(v["nodes"])
        if n_nodes < 1:
            raise ValueError("nodes must be >= 1")
        # a comma list gives per-node stream counts
        streams = [int(x) for x in v["voice_streams"].split(",")]
        nodes = []
        group = 1
        for i in range(n_nodes):
            voice = []
            for _ in range(streams[i] if i < len(streams) else streams[-1]):
                voice.append(VoiceStream(group_id(group), int(v["voice_pairs"]), cfg.payload_capacity))
                group += 1
            data = []
            if int(v["data_per_cycle"]) or int(v["data_reserve"]):
                for _ in range(int(v["data_flows"])):
                    data.append(DataFlow(int(v["data_dest"]), int(v["data_per_cycle"]), int(v["data_payload"]), int(v["data_reserve"])))
            nodes.append(NodeSpec(2 + i, TrafficSpec(tuple(voice), tuple(data), bounce), drift_ppm=float(v["node_drift_ppm"])))
        loss = {}
        if float(v["uplink_loss"]):
            loss[("*", "relay")] = float(v["uplink_loss"])
        if float(v["downlink_loss"]):
            loss[("relay", "*")] = float(v["downlink_loss"])
        sc = Scenario(
            nodes=tuple(nodes),
            cfg=cfg,
            phy=phy,
            scaling=float(v["scaling"]),
            delay=parse_delay(v["delay"]),
            cycles=int(v["cycles"]),
            relay_drift_ppm=float(v["relay_drift_ppm"]),
            loss=loss,
        )
        search = SearchConfig(
            lo=float(v["search_lo"]),
            hi=float(v["search_hi"]),
            resolution=float(v["search_resolution"]),
            cycles=int(v["search_cycles"]),
            seeds=tuple(range(int(v["search_seeds"]))),
            threshold=int(v["error_threshold"]),
        )
        ec = ExperimentConfig(
            experiment=v["experiment"].strip().upper(),
            scenario=sc,
            seeds=parse_seeds(v["seeds"]),
            warmup_cycles=int(v["warmup_cycles"]),
            write_trace=_bool(v["write_trace"]),
            search=search,
        )
    except ConfigError:
        raise
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None
    sc.validate()
    if not 1 <= search.lo < search.hi or search.resolution <= 0 or not search.seeds:
        raise ConfigError("search needs 1 <= search_lo < search_hi, a positive resolution and seeds")
    return ec


def parse_config(text: str, **overrides) -> ExperimentConfig:
    vals = parse_pairs(text)
    vals.update({k: str(x) for k, x in overrides.items()})
    return build_config(vals)


def load_config(path, **overrides) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read(), **overrides)


# metrics


def summarize(samples) -> dict:
    xs = sorted(samples)
    if not xs:
        return {"n": 0}
    out = {"n": len(xs), "mean": statistics.fmean(xs), "min": xs[0], "max": xs[-1]}
    if len(xs) > 1:
        qs = statistics.quantiles(xs, n=10, method="inclusive")
    else:
        qs = [xs[0]] * 9
    for i, q in enumerate(qs, 1):
        # interpolation can overshoot the range by an ulp
        out[f"p{10 * i}"] = min(max(q, xs[0]), xs[-1])
    return out


def cycle_durations(trace) -> list:
    """Gaps between successive RLY_ANNC receptions, per node, in trace order."""
    last = {}
    out = []
    for r in trace.of("RX"):
        if r["frame"] != "RLY_ANNC" or r["entity"] == "relay":
            continue
        if r["entity"] in last:
            out.append(r["t"] - last[r["entity"]])
        last[r["entity"]] = r["t"]
    return out


def _rate(deliveries) -> float:
    """Bits per second over delivery batches; the first batch opens the clock."""
    if not deliveries:
        return 0.0
    t0 = deliveries[0]["t"]
    t1 = deliveries[-1]["t"]
    if t1 <= t0:
        return 0.0
    bits = sum(8 * r["len"] for r in deliveries if r["t"] > t0)
    return bits / (t1 - t0)


def throughput(trace, after: float = 0.0) -> float:
    """Application bits through the relay per second, each payload counted once."""
    seen = set()
    ds = []
    for r in trace.of("APP_DELIVER"):
        if r["t"] >= after and r["seq"] not in seen:
            seen.add(r["seq"])
            ds.append(r)
    return _rate(ds)


def stream_goodput(trace, after: float = 0.0) -> dict:
    """Per-flow goodput ``{"src->dest/KIND": bps}`` for flows seen in the trace."""
    seen = set()
    per = {}
    for r in trace.of("APP_DELIVER"):
        if r["t"] >= after and r["seq"] not in seen:
            seen.add(r["seq"])
            per.setdefault(f"{r['src']}->{r['dest']:#06x}/{r['kind']}", []).append(r)
    return {k: _rate(v) for k, v in sorted(per.items())}


def spectral_efficiency(throughput_bps: float, phy: PhyConfig = PhyConfig(), channels: int = CHANNELS) -> dict:
    """Throughput over raw bitrate, and the aggregate across orthogonal channels."""
    raw = raw_bitrate(phy)
    ratio = throughput_bps / raw
    return {"ratio": ratio, "raw_bitrate_bps": raw, "channels": channels, "aggregate_bps": ratio * raw * channels}


def violations(scenario: Scenario) -> int:
    return len(run(scenario).violations())


def min_scaling_search(scenario: Scenario, search: SearchConfig = SearchConfig(), log=None) -> float:
    """Smallest scaling on the ``search.resolution`` grid with no more than
    ``search.threshold`` violations over all seeds; ``inf`` if even
    ``search.hi`` fails."""
    step = search.resolution

    def works(k):
        s = k * step
        errors = 0
        for seed in search.seeds:
            errors += violations(replace(scenario, scaling=s, seed=seed, cycles=search.cycles))
            if errors > search.threshold:
                break
        if log is not None:
            log.append((s, errors))
        return errors <= search.threshold

    lo = math.ceil(search.lo / step - 1e-9)
    hi = math.floor(search.hi / step + 1e-9)
    if works(lo):
        return lo * step
    if not works(hi):
        return math.inf
    # invariant: lo fails, hi works
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if works(mid):
            hi = mid
        else:
            lo = mid
    return round(hi * step, 10)


# experiments


@dataclass
class Report:
    experiment: str
    header: tuple
    rows: list
    summary: dict
    traces: dict = field(default_factory=dict)

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])
        return buf.getvalue()

    def cdf_csv(self) -> str:
        xs = sorted(r[-1] for r in self.rows)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("value", "cdf"))
        for i, x in enumerate(xs, 1):
            w.writerow((repr(float(x)), repr(i / len(xs))))
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary, indent=2, sort_keys=True, default=_json_default) + "\n"

    def write(self, out_dir) -> list:
        os.makedirs(out_dir, exist_ok=True)
        name = self.experiment.lower()
        files = {
            f"{name}_samples.csv": self.samples_csv(),
            f"{name}_cdf.csv": self.cdf_csv(),
            f"{name}_summary.json": self.summary_json(),
        }
        for seed, trace in self.traces.items():
            files[f"{name}_trace_seed{seed}.jsonl"] = trace.to_jsonl()
        paths = []
        for fname, text in files.items():
            p = os.path.join(out_dir, fname)
            with open(p, "w") as f:
                f.write(text)
            paths.append(p)
        return paths


def _json_default(x):
    raise TypeError(f"not serializable: {x!r}")


def _finite(x):
    return x if math.isfinite(x) else None


def run_experiment(ec: ExperimentConfig) -> Report:
    if ec.experiment == "MIN_SCALING_SEARCH":
        log = []
        s = min_scaling_search(ec.scenario, ec.search, log)
        rows = [(x, e) for x, e in log]
        summary = {
            "experiment": ec.experiment,
            "min_scaling": _finite(s),
            "infeasible": not math.isfinite(s),
            "evaluations": len(log),
            "threshold": ec.search.threshold,
            "search_cycles": ec.search.cycles,
            "search_seeds": len(ec.search.seeds),
        }
        return Report(ec.experiment, ("scaling", "violations"), rows, summary)

    rows = []
    traces = {}
    total_violations = 0
    goodput = {}
    for seed in ec.seeds:
        sc = ec.scenario_for(seed)
        trace = run(sc)
        if ec.write_trace:
            traces[seed] = trace
        total_violations += len(trace.violations())
        after = ec.warmup_cycles * trace.layout.total
        if ec.experiment == "CYCLE_DURATION":
            rows += [(seed, i, x) for i, x in enumerate(cycle_durations(trace))]
        elif ec.experiment == "LATENCY":
            acct = account(trace)
            for p in sorted(acct.values(), key=lambda p: p.seq):
                if p.submitted >= after and p.delivered is not None:
                    rows.append((seed, p.seq, p.latency))
        elif ec.experiment == "THROUGHPUT":
            rows.append((seed, throughput(trace, after)))
            for k, bps in stream_goodput(trace, after).items():
                goodput.setdefault(k, []).append(bps)
    header = {
        "CYCLE_DURATION": ("seed", "index", "cycle_s"),
        "LATENCY": ("seed", "seq", "latency_s"),
        "THROUGHPUT": ("seed", "throughput_bps"),
    }[ec.experiment]
    summary = {"experiment": ec.experiment, "seeds": list(ec.seeds), "scaling": ec.scenario.scaling, "violations": total_violations}
    summary.update(summarize([r[-1] for r in rows]))
    if ec.experiment == "THROUGHPUT":
        summary["spectral_efficiency"] = spectral_efficiency(summary.get("mean", 0.0), ec.scenario.phy)
        summary["per_stream_bps"] = {k: statistics.fmean(v) for k, v in goodput.items()}
    if ec.experiment in ("LATENCY", "CYCLE_DURATION"):
        sc = ec.scenario
        T = build_layout(sc.cfg, sc.phy, sc.scaling).total
        summary["cycle_s"] = T
        if ec.experiment == "LATENCY" and rows:
            summary["mean_over_cycle"] = summary["mean"] / T
    return Report(ec.experiment, header, rows, summary, traces)
