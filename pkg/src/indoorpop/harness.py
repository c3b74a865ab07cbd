"""End-to-end experiment pipeline.

Five stages, each reading/writing plain files in a run directory so they can
be executed separately from the command line or all at once:

1. generate — synthesize a venue, dense ground truth, and sparse records
2. extract  — population snapshots on a uniform grid -> series CSV
3. train    — fit the single-way and multi-way estimators on the series
4. monitor  — drive standing queries for each mode over the test window
5. evaluate — score emissions against ground truth -> report JSON

The report's ``core()`` view strips wall-clock timings; everything else is a
pure function of the config, so identical configs give identical cores.
"""

from __future__ import annotations

import dataclasses
import json
import math
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .demo import demo_venue
from .estimators import (
    MEModel,
    SEModel,
    TrainingConfig,
    average_kl,
    build_feature_windows,
    build_joint_windows,
    load_model,
    me_forward,
    read_population_series,
    save_model,
    se_forward,
    series_from_snapshots,
    split_windows,
    train,
    write_population_series,
)
from .extraction import extract_population
from .monitor import MODES, CmppEngine, CmppQuery, Emission, run_cmpp
from .synth import grid_venue, ring_crowd_movement, ring_venue
from .topology import Topology, adjacency_matrix, dump_topology, load_topology
from .trajectory import (
    MovementConfig,
    generate_movement,
    read_ground_truth,
    read_trajectories,
    true_population,
    write_ground_truth,
    write_trajectories,
)

VENUES = ("grid", "ring", "demo")
MOVEMENTS = ("waypoint", "ring_crowd")

TIMING_KEYS = frozenset({"elapsed_ms", "mean_elapsed_ms", "max_elapsed_ms", "total_elapsed_ms"})


@dataclass
class ExperimentConfig:
    """Everything one experiment run depends on. JSON round-trippable."""

    venue: str = "grid"
    rows: int = 2
    cols: int = 4
    extra_door_prob: float = 0.35
    ring_rooms: int = 6
    movement: str = "waypoint"
    object_count: int = 14
    query_count: int = 10
    duration: float = 21600.0
    speed: float = 1.53
    dwell_range: tuple[float, float] = (1.0, 120.0)
    interval_range: tuple[float, float] = (5.0, 48.0)
    delta: float = 60.0
    n_inputs: int = 10
    hidden_dim: int = 16
    attn_dim: int = 16
    gcn_layers: int = 2
    k_samples: int = 200
    s_max: float = 1.53
    max_hops: int = 8
    lr: float = 0.01
    max_epochs: int = 300
    patience: int = 25
    min_improvement: float = 1e-4
    batch_size: int | None = 64
    loss: str = "wasserstein"
    query_duration: float = 3600.0
    radius: float = 60.0
    theta: float = 2.0
    eta: float = 0.5
    delta_t: float = 60.0
    tick_divisor: int = 4
    validity: float = 120.0
    modes: tuple[str, ...] = ("se", "me", "last")
    seed: int = 0

    def __post_init__(self) -> None:
        if self.venue not in VENUES:
            raise ValueError(f"unknown venue {self.venue!r}; options: {VENUES}")
        if self.movement not in MOVEMENTS:
            raise ValueError(f"unknown movement {self.movement!r}; options: {MOVEMENTS}")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}; options: {MODES}")
        self.modes = tuple(self.modes)
        self.dwell_range = tuple(self.dwell_range)
        self.interval_range = tuple(self.interval_range)
        if self.query_start + self.query_duration > self.duration + 1e-9:
            raise ValueError(
                "query window extends past the simulation horizon; "
                f"start={self.query_start}, duration={self.query_duration}, horizon={self.duration}"
            )

    @property
    def query_start(self) -> float:
        """Queries run in the held-out tail: the first grid time at or past 80%."""
        return math.ceil(0.8 * self.duration / self.delta) * self.delta

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["modes"] = list(self.modes)
        doc["dwell_range"] = list(self.dwell_range)
        doc["interval_range"] = list(self.interval_range)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_venue(config: ExperimentConfig) -> Topology:
    if config.venue == "grid":
        return grid_venue(
            config.rows, config.cols, extra_door_prob=config.extra_door_prob, seed=config.seed
        )
    if config.venue == "ring":
        return ring_venue(config.ring_rooms)
    return demo_venue().topology


# ---------------------------------------------------------------------------
# Report


def _strip_timings(doc):
    if isinstance(doc, dict):
        return {k: _strip_timings(v) for k, v in doc.items() if k not in TIMING_KEYS}
    if isinstance(doc, list):
        return [_strip_timings(v) for v in doc]
    return doc


@dataclass
class Report:
    """Structured experiment outcome; see ``core()`` for the deterministic part."""

    config: dict
    venue: dict
    data: dict
    windows: dict
    training: dict
    monitoring: dict

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "Report":
        return cls(**{f.name: doc[f.name] for f in dataclasses.fields(cls)})

    def core(self) -> dict:
        """The report minus wall-clock timing fields.

        Two runs of the same config must produce equal cores; timings are
        the only fields allowed to differ.
        """
        return _strip_timings(self.to_json())


def f1_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """(precision, recall, f1), micro convention; vacuous cases score 1."""
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * tp / (2 * tp + fp + fn) if 2 * tp + fp + fn else 1.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# Stages


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _simulate(config: ExperimentConfig, topo: Topology):
    """Movement under the configured model; pure function of the config."""
    mcfg = _movement_config(config)
    if config.movement == "ring_crowd":
        return ring_crowd_movement(topo, mcfg)
    return generate_movement(topo, mcfg)


def stage_generate(config: ExperimentConfig, out_dir: Path) -> None:
    """Venue + movement -> topology.json, trajectories.csv, truth.csv."""
    topo = build_venue(config)
    _write(out_dir / "topology.json", dump_topology(topo))
    truth, store = _simulate(config, topo)
    with open(out_dir / "trajectories.csv", "w", newline="") as fh:
        write_trajectories(store, fh)
    with open(out_dir / "truth.csv", "w", newline="") as fh:
        write_ground_truth(truth, fh)


def _load_topology(out_dir: Path) -> Topology:
    return load_topology((out_dir / "topology.json").read_text())


def _load_store(out_dir: Path):
    with open(out_dir / "trajectories.csv", newline="") as fh:
        return read_trajectories(fh)


def _load_truth(out_dir: Path):
    with open(out_dir / "truth.csv", newline="") as fh:
        return read_ground_truth(fh)


def stage_extract(config: ExperimentConfig, out_dir: Path) -> None:
    """Population snapshots on the uniform grid -> series.csv."""
    topo = _load_topology(out_dir)
    store = _load_store(out_dir)
    count = int(round(config.duration / config.delta)) + 1
    snapshots = [
        extract_population(
            store,
            topo,
            None,
            j * config.delta,
            s_max=config.s_max,
            k_samples=config.k_samples,
            seed=config.seed,
            max_hops=config.max_hops,
        )
        for j in range(count)
    ]
    series = series_from_snapshots(snapshots, config.delta)
    write_population_series(out_dir / "series.csv", series)


def _training_config(config: ExperimentConfig) -> TrainingConfig:
    return TrainingConfig(
        lr=config.lr,
        max_epochs=config.max_epochs,
        patience=config.patience,
        min_improvement=config.min_improvement,
        batch_size=config.batch_size,
        seed=config.seed,
        loss=config.loss,
    )


def stage_train(config: ExperimentConfig, out_dir: Path) -> None:
    """Fit requested estimators on the series -> model_{se,me}.json + summary."""
    series = read_population_series(out_dir / "series.csv", delta=config.delta)
    tcfg = _training_config(config)
    summary: dict[str, dict] = {}

    if "se" in config.modes:
        windows = build_feature_windows(series, config.n_inputs)
        tr, va, te = split_windows(windows)
        model = SEModel.build(hidden_dim=config.hidden_dim, n_inputs=config.n_inputs, seed=config.seed + 1)
        result = train(model, tr, va, tcfg)
        save_model(out_dir / "model_se.json", model)
        summary["se"] = {
            "windows": {"train": len(tr), "val": len(va), "test": len(te)},
            "epochs": result.epochs_run,
            "best_epoch": result.best_epoch,
            "best_val": result.best_val,
        }

    if "me" in config.modes:
        topo = _load_topology(out_dir)
        if tuple(series.partitions) != tuple(topo.partition_order):
            raise ValueError("series partitions do not match the venue")
        windows = build_joint_windows(series, config.n_inputs)
        tr, va, te = split_windows(windows)
        model = MEModel.build(
            partitions=series.partitions,
            adjacency=adjacency_matrix(topo),
            n_inputs=config.n_inputs,
            hidden_dim=config.hidden_dim,
            attn_dim=config.attn_dim,
            gcn_layers=config.gcn_layers,
            seed=config.seed + 2,
        )
        result = train(model, tr, va, tcfg)
        save_model(out_dir / "model_me.json", model)
        summary["me"] = {
            "windows": {"train": len(tr), "val": len(va), "test": len(te)},
            "epochs": result.epochs_run,
            "best_epoch": result.best_epoch,
            "best_val": result.best_val,
        }

    _write(out_dir / "train_summary.json", json.dumps(summary, indent=2))


def _query_users(config: ExperimentConfig, store) -> list[str]:
    ids = store.object_ids
    if len(ids) < config.object_count + config.query_count:
        raise ValueError("store holds fewer objects than the config promises")
    return ids[config.object_count : config.object_count + config.query_count]


def _build_engine(config: ExperimentConfig, topo, store, mode: str, out_dir: Path, use_feature_cache: bool = True) -> CmppEngine:
    model = None
    if mode == "se":
        model = load_model(out_dir / "model_se.json")
    elif mode == "me":
        model = load_model(out_dir / "model_me.json")
    return CmppEngine(
        topo,
        store,
        mode,
        model=model,
        delta=config.delta,
        validity=config.validity,
        s_max=config.s_max,
        k_samples=config.k_samples,
        seed=config.seed,
        max_hops=config.max_hops,
        use_feature_cache=use_feature_cache,
    )


def _query(config: ExperimentConfig) -> CmppQuery:
    return CmppQuery(
        start=config.query_start,
        duration=config.query_duration,
        radius=config.radius,
        theta=config.theta,
        eta=config.eta,
        delta_t=config.delta_t,
        tick_divisor=config.tick_divisor,
    )


def _movement_config(config: ExperimentConfig) -> MovementConfig:
    return MovementConfig(
        object_count=config.object_count + config.query_count,
        duration=config.duration,
        speed=config.speed,
        dwell_range=config.dwell_range,
        interval_range=config.interval_range,
        seed=config.seed,
    )


def stage_monitor(config: ExperimentConfig, out_dir: Path) -> None:
    """Run every query instance under every mode -> emissions_{mode}.jsonl.

    The truth CSV only keeps partition intervals, so the dense traces that
    drive the query users' locations are regenerated here — movement is a
    pure function of the config, so this reproduces stage_generate's output.
    """
    topo = _load_topology(out_dir)
    store = _load_store(out_dir)
    truth, _ = _simulate(config, topo)
    users = _query_users(config, store)
    query = _query(config)
    summary: dict[str, dict] = {}
    for mode in config.modes:
        engine = _build_engine(config, topo, store, mode, out_dir)
        with open(out_dir / f"emissions_{mode}.jsonl", "w") as fh:
            for i, uid in enumerate(users):
                emissions = run_cmpp(engine, query, lambda t: truth.location_at(uid, t))
                for e in emissions:
                    fh.write(json.dumps({"instance": i, "user": uid, **e.to_json()}) + "\n")
        summary[mode] = {
            "predict_calls": engine.predict_calls,
            "extract_calls": engine.extract_calls,
            "cache_hits": engine.feature_cache.hits if engine.feature_cache else 0,
            "cache_misses": engine.feature_cache.misses if engine.feature_cache else 0,
        }
    _write(out_dir / "monitor_summary.json", json.dumps(summary, indent=2))


def _read_mode_emissions(out_dir: Path, mode: str) -> list[dict]:
    rows = []
    with open(out_dir / f"emissions_{mode}.jsonl") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def _test_kl(config: ExperimentConfig, out_dir: Path, series, mode: str) -> tuple[float, int]:
    """Divergence of model predictions from extracted targets on test windows."""
    if mode == "se":
        model = load_model(out_dir / "model_se.json")
        _, _, test = split_windows(build_feature_windows(series, config.n_inputs))
        if not test:
            return float("nan"), 0
        xs = np.stack([w.inputs for w in test])
        targets = np.stack([w.target for w in test])
        mu, sig = se_forward(model, xs, training=False)
        return average_kl(targets[:, 0], targets[:, 1], mu.data[:, 0], sig.data[:, 0])
    model = load_model(out_dir / "model_me.json")
    _, _, test = split_windows(build_joint_windows(series, config.n_inputs))
    if not test:
        return float("nan"), 0
    xs = np.stack([w.inputs for w in test])
    targets = np.stack([w.target for w in test])
    mu, sig = me_forward(model, xs, training=False)
    return average_kl(targets[:, :, 0], targets[:, :, 1], mu.data, sig.data)


def stage_evaluate(config: ExperimentConfig, out_dir: Path) -> Report:
    """Score each mode's emissions against ground truth -> report.json."""
    topo = _load_topology(out_dir)
    store = _load_store(out_dir)
    truth = _load_truth(out_dir)
    series = read_population_series(out_dir / "series.csv", delta=config.delta)
    with open(out_dir / "train_summary.json") as fh:
        train_summary = json.load(fh)
    with open(out_dir / "monitor_summary.json") as fh:
        monitor_summary = json.load(fh)

    monitoring: dict[str, dict] = {}
    for mode in config.modes:
        rows = _read_mode_emissions(out_dir, mode)
        tp = fp = fn = 0
        elapsed = []
        for row in rows:
            predicted = set(row["populated"])
            actual = {
                pid
                for pid in row["reached"]
                if true_population(truth, pid, row["t_q"]) > config.theta
            }
            tp += len(predicted & actual)
            fp += len(predicted - actual)
            fn += len(actual - predicted)
            elapsed.append(row["elapsed_ms"])
        precision, recall, f1 = f1_from_counts(tp, fp, fn)
        entry = {
            "emissions": len(rows),
            "tp": tp,
            "fp": fp,
            "fn": fn,
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "mean_elapsed_ms": float(np.mean(elapsed)) if elapsed else 0.0,
            "max_elapsed_ms": float(np.max(elapsed)) if elapsed else 0.0,
            **monitor_summary.get(mode, {}),
        }
        if mode in ("se", "me"):
            kl, skipped = _test_kl(config, out_dir, series, mode)
            entry["test_kl"] = None if math.isnan(kl) else kl
            entry["test_kl_skipped"] = skipped
        monitoring[mode] = entry

    report = Report(
        config=config.to_json(),
        venue={
            "partitions": len(topo.partition_order),
            "doors": len(topo.doors),
            "graph_edges": len(topo.graph_edges),
        },
        data={
            "objects": len(store.object_ids),
            "records": len(store.records()),
            "grid_times": len(series.times),
        },
        windows={
            mode: train_summary[mode]["windows"] for mode in train_summary
        },
        training={
            mode: {k: v for k, v in train_summary[mode].items() if k != "windows"}
            for mode in train_summary
        },
        monitoring=monitoring,
    )
    _write(out_dir / "report.json", json.dumps(report.to_json(), indent=2))
    return report


def run_experiment(config: ExperimentConfig, out_dir=None) -> Report:
    """All five stages in order; uses a temporary directory when none given."""
    if out_dir is None:
        with tempfile.TemporaryDirectory(prefix="indoorpop-") as tmp:
            return run_experiment(config, tmp)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", json.dumps(config.to_json(), indent=2))
    stage_generate(config, out)
    stage_extract(config, out)
    stage_train(config, out)
    stage_monitor(config, out)
    return stage_evaluate(config, out)
