"""Command-line entry point.

Subcommands: ``ingest`` (build a network from CSVs and report density),
``simulate`` (full closed-loop scenario), ``train`` (federated rounds
only), ``route`` (one-shot assignment), ``report`` (compare against
baseline rows). Every run writes a ``manifest.json`` with the fully
resolved config; re-running from a manifest reproduces the outputs
byte for byte.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import fixtures
from .errors import (
    FairTrafficError,
    MissingFileError,
    RangeViolationError,
    UnknownKeyError,
)
from .federated import FederatedConfig
from .gnn.model import GnnConfig
from .network import (
    assign_regions,
    network_density,
    network_from_topology,
    read_regions_csv,
    read_topology_csv,
)
from .privacy import PrivacyParams
from .routing import ObjectiveWeights, VehicleRequest, assign_routes, assignments_csv_rows
from .sim import (
    DemandModel,
    Scenario,
    evaluate,
    run_scenario,
    state_travel_times,
    train_rounds,
)
from .network import TrafficState, free_flow_state


@dataclass
class RunConfig:
    """Resolved run configuration; JSON keys map one-to-one to fields."""

    topology: str | None = None
    regions: str | None = None
    threshold: float = 1.0
    grid_rows: int = 4
    grid_cols: int = 5
    num_regions: int = 4
    seed: int = 0
    horizon: int = 30
    step_minutes: float = 5.0
    steps_per_round: int = 5
    demand_rate: float = 4.0
    rounds: int = 10
    clients: int = 6
    participation: int | None = None
    local_epochs: int = 3
    lr: float = 0.01
    batch_size: int = 10
    epsilon: float = 1.0
    delta: float = 1e-5
    clip_norm: float = 1.0
    epsilon_budget: float = 50.0
    noise_multiplier: float | None = None
    bits: int = 32
    quantization_mode: str = "stochastic"
    adaptive_bits: bool = False
    hidden_dim: int = 64
    dropout: float = 0.2
    aggregator: str = "attention"
    use_dropout: bool = True
    beta: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    lam: float = 0.5
    alpha_spatial: float = 1.0
    alpha_temporal: float = 0.0
    alpha_demographic: float = 0.0
    candidates_k: int = 3
    diverse_count: int = 2
    samples_per_client: int = 12
    output: str = "out"

    def validate(self) -> None:
        checks = [
            (self.epsilon > 0, "epsilon must be > 0"),
            (0 < self.delta < 1, "delta must be in (0,1)"),
            (self.clip_norm > 0, "clip_norm must be > 0"),
            (self.epsilon_budget > 0, "epsilon_budget must be > 0"),
            (self.rounds >= 1, "rounds must be >= 1"),
            (self.clients >= 1, "clients must be >= 1"),
            (self.horizon >= 1, "horizon must be >= 1"),
            (self.step_minutes > 0, "step_minutes must be > 0"),
            (self.steps_per_round >= 1, "steps_per_round must be >= 1"),
            (self.demand_rate >= 0, "demand_rate must be >= 0"),
            (0 <= self.lam <= 1, "lambda must be in [0,1]"),
            (all(b >= 0 for b in self.beta), "beta weights must be >= 0"),
            (1 <= self.bits <= 32, "bits must be in [1,32]"),
            (0 <= self.dropout < 1, "dropout must be in [0,1)"),
            (self.local_epochs >= 1, "local_epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.lr > 0, "lr must be > 0"),
            (self.hidden_dim >= 1, "hidden_dim must be >= 1"),
            (self.num_regions >= 1, "num_regions must be >= 1"),
            (self.samples_per_client >= 1, "samples_per_client must be >= 1"),
            (
                self.participation is None or 1 <= self.participation <= self.clients,
                "participation must be in [1, clients]",
            ),
            (self.aggregator in ("attention", "mean"), "aggregator must be attention|mean"),
            (
                self.quantization_mode in ("stochastic", "deterministic"),
                "quantization_mode must be stochastic|deterministic",
            ),
        ]
        for ok, msg in checks:
            if not ok:
                raise RangeViolationError(msg)
        for path in (self.topology, self.regions):
            if path is not None and not Path(path).exists():
                raise MissingFileError(f"config references missing file {path!r}")

    def to_json(self) -> str:
        payload = asdict(self)
        payload["beta"] = list(self.beta)
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def parse_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Load, validate, and default-fill a JSON config.

    Unknown keys are rejected by name; flag overrides are applied after
    the file and before validation.
    """
    data: dict = {}
    if path is not None:
        if not Path(path).exists():
            raise MissingFileError(f"config file {path!r} does not exist")
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise RangeViolationError(f"config is not valid JSON: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in known:
            raise UnknownKeyError(f"unknown config key {key!r}")
    if "beta" in data:
        data["beta"] = tuple(data["beta"])
    cfg = RunConfig(**data)
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


def _load_network(cfg: RunConfig):
    """(net, partition, demographics) from CSVs or the built-in grid."""
    if cfg.topology is not None:
        rows = read_topology_csv(cfg.topology)
        net = network_from_topology(rows, distance_threshold=cfg.threshold)
        if cfg.regions is not None:
            mapping, demo = read_regions_csv(cfg.regions)
            partition = assign_regions(net, mapping)
        else:
            partition = fixtures.grid_partition(net, cfg.num_regions)
            demo = fixtures.uniform_demographics(net, cfg.seed)
    else:
        net = fixtures.grid_network(cfg.grid_rows, cfg.grid_cols)
        partition = fixtures.grid_partition(net, cfg.num_regions)
        demo = fixtures.uniform_demographics(net, cfg.seed)
    return net, partition, demo


def _fed_config(cfg: RunConfig) -> FederatedConfig:
    return FederatedConfig(
        num_clients=cfg.clients,
        rounds=cfg.rounds,
        local_epochs=cfg.local_epochs,
        participation=cfg.participation,
        bits=cfg.bits,
        quantization_mode=cfg.quantization_mode,
        adaptive_bits=cfg.adaptive_bits,
        privacy=PrivacyParams(
            epsilon=cfg.epsilon,
            delta=cfg.delta,
            clip_norm=cfg.clip_norm,
            noise_multiplier=cfg.noise_multiplier,
        ),
        epsilon_budget=cfg.epsilon_budget,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        use_dropout=cfg.use_dropout,
    )


def _gnn_config(cfg: RunConfig) -> GnnConfig:
    return GnnConfig(hidden_dim=cfg.hidden_dim, dropout=cfg.dropout, aggregator=cfg.aggregator)


def _weights(cfg: RunConfig) -> ObjectiveWeights:
    return ObjectiveWeights(
        beta=cfg.beta,
        lam=cfg.lam,
        alpha_spatial=cfg.alpha_spatial,
        alpha_temporal=cfg.alpha_temporal,
        alpha_demographic=cfg.alpha_demographic,
    )


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _write_manifest(cfg: RunConfig, outdir: Path) -> None:
    _write(outdir / "manifest.json", cfg.to_json())


def _privacy_lines(rounds, delta: float) -> str:
    lines = [
        json.dumps(
            {
                "round": r.round_index,
                "epsilon_spent": r.epsilon_spent,
                "delta": delta,
                "clip_norm": r.clip_norm,
                "sigma": r.sigma,
            },
            sort_keys=True,
        )
        for r in rounds
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def _cmd_ingest(args) -> int:
    rows = read_topology_csv(args.topology)
    net = network_from_topology(rows, distance_threshold=args.threshold)
    density = network_density(net, args.mode)
    print(
        f"nodes={net.num_nodes} directed_edges={net.num_edges} "
        f"undirected_edges={net.num_edges // 2} density={density:.4f}"
    )
    if args.regions:
        mapping, _ = read_regions_csv(args.regions)
        partition = assign_regions(net, mapping)
        sizes = ",".join(str(partition.size(r)) for r in partition.region_ids)
        print(f"regions={partition.num_regions} sizes={sizes}")
    return 0


def _scenario(cfg: RunConfig, net, partition, demo) -> Scenario:
    return Scenario(
        net=net,
        partition=partition,
        demographics=demo,
        demand=DemandModel(rate=cfg.demand_rate),
        horizon=cfg.horizon,
        step_minutes=cfg.step_minutes,
        steps_per_round=cfg.steps_per_round,
        seed=cfg.seed,
        gnn=_gnn_config(cfg),
        candidates_k=cfg.candidates_k,
        diverse_count=cfg.diverse_count,
    )


def _metrics_lines(report) -> str:
    """Per-round metric records with a running time-weighted Gini."""
    lines = []
    ginis: list[float] = []
    for r, extra in zip(report.rounds, report.summary.get("round_metrics", [])):
        ginis.append(extra["gini"])
        temporal = float(np.mean(ginis))
        lines.append(
            json.dumps(
                {
                    "round": r.round_index,
                    "gini_spatial": extra["gini"],
                    "gini_temporal": temporal,
                    "jain": extra["jain"],
                    "mean_travel_time_min": extra["travel_time_min"],
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + ("\n" if lines else "")


def _steps_csv(report) -> str:
    cols = [
        "step",
        "vehicles",
        "unreachable",
        "gini",
        "jain",
        "mean_travel_time_min",
        "mean_predicted_time_min",
    ]
    out = [",".join(cols)]
    for s in report.steps:
        rec = s.to_dict()
        out.append(",".join(repr(rec[c]) if isinstance(rec[c], float) else str(rec[c]) for c in cols))
    return "\n".join(out) + "\n"


def _cmd_simulate(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    net, partition, demo = _load_network(cfg)
    report = run_scenario(_scenario(cfg, net, partition, demo), _fed_config(cfg), _weights(cfg))
    outdir = Path(cfg.output)
    _write_manifest(cfg, outdir)
    _write(outdir / "report.json", report.to_json() + "\n")
    _write(outdir / "rounds.jsonl", report.round_json_lines())
    _write(outdir / "privacy.jsonl", _privacy_lines(report.rounds, cfg.delta))
    _write(outdir / "metrics.jsonl", _metrics_lines(report))
    if args.emit_csv:
        _write(outdir / "steps.csv", _steps_csv(report))
    print(
        f"simulate: steps={len(report.steps)} rounds={len(report.rounds)} "
        f"travel_time={report.summary['travel_time_min']:.2f}min "
        f"gini={report.summary['gini']:.4f} eps={report.summary['epsilon_spent']:.4f}"
    )
    return 0


def _cmd_train(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    net, partition, demo = _load_network(cfg)
    del demo
    reports, model = train_rounds(
        net,
        partition,
        _fed_config(cfg),
        _gnn_config(cfg),
        samples_per_client=cfg.samples_per_client,
        seed=cfg.seed,
    )
    outdir = Path(cfg.output)
    _write_manifest(cfg, outdir)
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in reports]
    _write(outdir / "rounds.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    _write(outdir / "privacy.jsonl", _privacy_lines(reports, cfg.delta))
    _write(outdir / "model.json", model.to_json() + "\n")
    losses = [r.mean_loss for r in reports]
    print(f"train: rounds={len(reports)} loss_first={losses[0]:.5f} loss_last={losses[-1]:.5f}")
    return 0


def _cmd_route(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    net, partition, demo = _load_network(cfg)
    state = free_flow_state(net)
    preds = state_travel_times(net, state.flow)
    rng = np.random.default_rng([cfg.seed, 0, 11])
    requests = []
    for i in range(args.vehicles):
        origin = int(rng.integers(net.num_nodes))
        dest = origin
        while dest == origin:
            dest = int(rng.integers(net.num_nodes))
        requests.append(VehicleRequest(i, net.nodes[origin], net.nodes[dest]))
    assignments, _ = assign_routes(
        requests,
        state,
        preds,
        _weights(cfg),
        partition,
        net,
        demo,
        k=cfg.candidates_k,
        diverse_count=cfg.diverse_count,
        flow_increment=60.0 / cfg.step_minutes,
    )
    outdir = Path(cfg.output)
    _write_manifest(cfg, outdir)
    rows = assignments_csv_rows(assignments, net)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "assignments.csv", "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    print(f"route: assigned={sum(1 for a in assignments if a.reachable)} of {len(assignments)}")
    return 0


def _cmd_report(args) -> int:
    with open(args.report) as fh:
        payload = json.load(fh)
    summary = payload.get("summary", payload)
    with open(args.baselines) as fh:
        baselines = json.load(fh)
    table = evaluate(summary, baselines)
    out = json.dumps(table, sort_keys=True, indent=2)
    if args.output:
        _write(Path(args.output) / "comparison.json", out + "\n")
    print(out)
    return 0


def _overrides(args) -> dict:
    mapping = {
        "seed": getattr(args, "seed", None),
        "rounds": getattr(args, "rounds", None),
        "epsilon": getattr(args, "epsilon", None),
        "delta": getattr(args, "delta", None),
        "clip_norm": getattr(args, "clip_norm", None),
        "clients": getattr(args, "clients", None),
        "lam": getattr(args, "lam", None),
        "output": getattr(args, "output", None),
    }
    return mapping


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1 per the CLI contract
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
    p.add_argument("--clients", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--emit-csv", dest="emit_csv", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fairtraffic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a network from CSVs and print density")
    p.add_argument("--topology", required=True)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--regions", default=None)
    p.add_argument("--mode", choices=["undirected", "directed"], default="undirected")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("simulate", help="run the closed-loop scenario")
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="federated rounds only, no routing")
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("route", help="one-shot assignment on the free-flow state")
    _add_common(p)
    p.add_argument("--vehicles", type=int, default=10)
    p.set_defaults(func=_cmd_route)

    p = sub.add_parser("report", help="compare a run against baseline rows")
    p.add_argument("--report", required=True)
    p.add_argument("--baselines", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FairTrafficError as exc:
        print(f"fairtraffic: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"fairtraffic: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
