"""Experiment orchestration: grid runner, persistence, resume, comparison.

One cell is a (seed, strategy) pair. Cells are fully independent: every
random draw inside a cell comes from a labelled stream rooted at the cell
seed, and strategy never enters generation labels, so the two strategies of
one seed see identical worlds and pretraining. Metrics rows append after
every round (crash-safe); a checkpoint is rewritten after every round.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .aggregation import FedAvg, UserWeighted, update_global_profile
from .checkpoint import (
    CheckpointError,
    decode_array,
    encode_array,
    read_checkpoint,
    write_checkpoint,
)
from .config import ExperimentConfig, parse_config
from .federated import (
    NodeState,
    PolicyModel,
    build_policy,
    fixed_selector,
    fraction_selector,
    policy_layout,
    run_round,
)
from .lstm import LstmCell, encode_sequence, lstm_cell_layout, train_lstm_autoencoder
from .nn import DivergenceError, ParamVector
from .profile import (
    ProfileDims,
    SessionFeatures,
    StackedProfileModel,
    UserProfile,
    build_profile_model,
    encode_sessions,
    extract_profile,
    model_from_params,
    model_params,
    profile_fingerprint,
    profile_layout,
    train_profile,
)
from .rng import Rng
from .world import (
    SessionParams,
    SessionRecord,
    Teacher,
    build_ground_truth,
    evaluate_policy,
    generate_population,
    generate_session,
)

logger = logging.getLogger("fedlfd")

METRICS_COLUMNS = (
    "seed",
    "strategy",
    "round",
    "test_loss",
    "mean_local_loss",
    "update_norm",
    "shares",
    "wall_time",
)

RngLabel = str


@dataclass
class NodePipeline:
    """Node-local data pipeline for one (node, teacher) pair.

    Holds the raw session records, the frozen per-sensor stream encoders and
    normalization statistics, and the evolving profile model. Only the
    distilled learner view (samples, encodings, profile) leaves this object.
    """

    teacher: Teacher
    records: list[SessionRecord]
    norm: dict[str, tuple[np.ndarray, np.ndarray]]
    encoders: dict[str, LstmCell]
    profile_model: StackedProfileModel
    features: list[SessionFeatures]
    encodings: np.ndarray | None = None
    profile: UserProfile | None = None
    local_params: ParamVector | None = None

    @property
    def node_id(self) -> int:
        return self.teacher.node_id

    @property
    def teacher_id(self) -> int:
        return self.teacher.teacher_id


@dataclass
class CellState:
    seed: int
    rng: Rng
    teachers: list[Teacher]
    ground_truth: object
    session_params: SessionParams
    pipelines: list[NodePipeline]
    model: PolicyModel
    global_profile: UserProfile
    round_index: int = 0


@dataclass
class CellOutcome:
    seed: int
    strategy: str
    status: str  # completed | divergent
    rounds_completed: int
    final_test_loss: float | None
    error: str | None = None


@dataclass
class ExperimentResult:
    exit_code: int
    cells: list[CellOutcome] = field(default_factory=list)
    output_dir: Path | None = None


# ---------------------------------------------------------------------------
# Node-local feature pipeline
# ---------------------------------------------------------------------------


def _norm_stats(streams: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate(streams, axis=0)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-8)
    return mean, std


def _normalize(stream: np.ndarray, stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mean, std = stats
    return (stream - mean) / std


def _profile_dims(config: ExperimentConfig) -> ProfileDims:
    n_sensors = len(config.scenario.catalog.human_sensors)
    return ProfileDims(
        attributes=config.scenario.attribute_dim,
        state=config.scenario.state_dim,
        streams=n_sensors * config.model.representation_dim,
        hidden=config.model.profile_hidden_dim,
        code=config.model.profile_code_dim,
    )


def _session_features(pipeline: NodePipeline, record: SessionRecord, catalog) -> SessionFeatures:
    reps = []
    for sensor in catalog.human_sensors:
        normalized = _normalize(record.streams[sensor.name], pipeline.norm[sensor.name])
        h, _ = encode_sequence(pipeline.encoders[sensor.name], normalized)
        reps.append(h)
    return SessionFeatures(
        attributes=pipeline.teacher.attributes,
        state=record.state,
        streams=np.concatenate(reps),
    )


def _session_label(teacher_id: int, round_index: int, index: int) -> RngLabel:
    return f"sessions/teacher={teacher_id}/round={round_index}/index={index}"


def _generate_node_sessions(
    config: ExperimentConfig, cell: CellState, pipeline: NodePipeline, round_index: int, count: int
) -> list[SessionRecord]:
    records = []
    for i in range(count):
        stream = cell.rng.child(_session_label(pipeline.teacher_id, round_index, i))
        records.append(
            generate_session(
                pipeline.teacher,
                cell.ground_truth,
                config.scenario.catalog,
                cell.session_params,
                len(pipeline.records) + len(records),
                stream,
            )
        )
    return records


def _refresh_profile(config: ExperimentConfig, pipeline: NodePipeline, epochs: int) -> None:
    if epochs > 0:
        pipeline.profile_model, _ = train_profile(
            pipeline.profile_model,
            pipeline.features,
            epochs,
            config.training.profile_learning_rate,
        )
    pipeline.encodings = encode_sessions(pipeline.profile_model, pipeline.features)
    pipeline.profile = extract_profile(pipeline.profile_model)


def _build_cell(config: ExperimentConfig, seed: int) -> CellState:
    """Generate the world and run the node-local pretraining stage."""
    rng = Rng(seed)
    scenario = config.scenario
    world_rng = rng.child("world")
    teachers = generate_population(
        scenario.catalog,
        list(scenario.archetypes),
        list(scenario.archetype_counts),
        scenario.nodes,
        scenario.teachers,
        world_rng.child("population"),
    )
    ground_truth = build_ground_truth(
        list(scenario.archetypes),
        config.policy_dims,
        scenario.ground_truth_scale,
        world_rng.child("ground-truth"),
    )
    session_params = SessionParams(
        length_range=scenario.session_length_range,
        samples_per_session=scenario.samples_per_session,
        coupling=scenario.coupling,
        detector_noise=scenario.detector_noise,
    )
    model = build_policy(config.policy_dims, rng.child("policy-init"))
    dims = _profile_dims(config)
    cell = CellState(
        seed=seed,
        rng=rng,
        teachers=teachers,
        ground_truth=ground_truth,
        session_params=session_params,
        pipelines=[],
        model=model,
        # All profile models start from one shared init so parameter-space
        # distances between users are meaningful; the global profile starts
        # at that same shared point.
        global_profile=extract_profile(build_profile_model(dims, rng.child("profile-init"))),
    )
    for teacher in teachers:
        pipeline = NodePipeline(
            teacher=teacher,
            records=[],
            norm={},
            encoders={},
            profile_model=build_profile_model(dims, rng.child("profile-init")),
            features=[],
        )
        pipeline.records = _generate_node_sessions(
            config, cell, pipeline, 0, scenario.initial_sessions
        )
        for sensor in scenario.catalog.human_sensors:
            pipeline.norm[sensor.name] = _norm_stats(
                [r.streams[sensor.name] for r in pipeline.records]
            )
            seqs = [
                _normalize(r.streams[sensor.name], pipeline.norm[sensor.name])
                for r in pipeline.records
            ]
            auto, _ = train_lstm_autoencoder(
                seqs,
                config.model.representation_dim,
                config.training.lstm_epochs,
                config.training.lstm_learning_rate,
                rng.child(f"lstm/teacher={teacher.teacher_id}/sensor={sensor.name}"),
            )
            pipeline.encoders[sensor.name] = auto.encoder
        pipeline.features = [
            _session_features(pipeline, r, scenario.catalog) for r in pipeline.records
        ]
        if config.training.profile_epochs > 0:
            pipeline.profile_model, _ = train_profile(
                pipeline.profile_model,
                pipeline.features,
                config.training.profile_epochs,
                config.training.profile_learning_rate,
            )
        pipeline.encodings = encode_sessions(pipeline.profile_model, pipeline.features)
        pipeline.profile = extract_profile(pipeline.profile_model)
        cell.pipelines.append(pipeline)
    return cell


def _advance_round(
    config: ExperimentConfig, cell: CellState, round_index: int, strategy_name: str
):
    """Session arrival, profile refresh, global-profile update, one FL round."""
    scenario = config.scenario
    training = config.training
    for pipeline in cell.pipelines:
        new_records = _generate_node_sessions(
            config, cell, pipeline, round_index, scenario.sessions_per_round
        )
        pipeline.records.extend(new_records)
        pipeline.features.extend(
            _session_features(pipeline, r, scenario.catalog) for r in new_records
        )
        _refresh_profile(config, pipeline, training.profile_refresh_epochs)

    nodes = [
        NodeState(
            node_id=p.node_id,
            teacher_id=p.teacher_id,
            session_samples=[list(r.samples) for r in p.records],
            encodings=list(p.encodings),
            profile=p.profile,
            local_lr=training.local_learning_rate,
            local_model=p.local_params,
        )
        for p in cell.pipelines
    ]
    selector = fraction_selector(training.participation_fraction)
    indices = selector(len(nodes), cell.rng.child(f"participation/round={round_index}"))
    participants = sorted(indices, key=lambda i: nodes[i].key)
    cell.global_profile = update_global_profile(
        cell.global_profile,
        [nodes[i].profile for i in participants],
        training.global_profile_learning_rate,
    )
    if strategy_name == "user_weighted":
        strategy = UserWeighted(
            stabilizer=training.aggregation_stabilizer, global_profile=cell.global_profile
        )
    else:
        strategy = FedAvg()
    cell.model, report = run_round(
        cell.model,
        nodes,
        strategy,
        fixed_selector(participants),
        training.global_learning_rate,
        cell.rng.child(f"round={round_index}"),
        local_epochs=training.local_epochs,
        session_stabilizer=training.session_stabilizer,
    )
    for i in participants:
        cell.pipelines[i].local_params = nodes[i].local_model
    test_loss = evaluate_policy(
        cell.model,
        cell.ground_truth,
        training.eval_samples,
        cell.rng.child(f"eval/round={round_index}"),
    )
    cell.round_index = round_index
    return report, test_loss


# ---------------------------------------------------------------------------
# Metrics files
# ---------------------------------------------------------------------------


def metrics_path(out_dir: Path, seed: int, strategy: str) -> Path:
    return Path(out_dir) / f"metrics_seed{seed}_{strategy}.csv"


def checkpoint_path(out_dir: Path, seed: int, strategy: str) -> Path:
    return Path(out_dir) / f"checkpoint_seed{seed}_{strategy}.json"


def _format_shares(shares: dict[tuple[int, int], float] | None) -> str:
    if not shares:
        return ""
    return ";".join(f"{l}/{m}={share!r}" for (l, m), share in sorted(shares.items()))


def _append_metrics_row(path: Path, row: Sequence) -> None:
    new_file = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if new_file:
            writer.writerow(METRICS_COLUMNS)
        writer.writerow(row)
        fh.flush()


def _metrics_row(
    seed: int,
    strategy: str,
    round_index: int,
    test_loss: float,
    report,
    wall_time: float,
) -> list:
    if report is None:
        mean_local = ""
        update_norm = ""
        shares = ""
    else:
        mean_local = repr(report.mean_local_loss)
        update_norm = repr(report.update_norm)
        shares = _format_shares(report.shares)
    return [
        seed,
        strategy,
        round_index,
        repr(float(test_loss)),
        mean_local,
        update_norm,
        shares,
        f"{wall_time:.6f}",
    ]


def read_metrics(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader)


def _truncate_metrics(path: Path, max_round: int) -> None:
    if not path.exists():
        _append_metrics_row_header_only(path)
        return
    rows = read_metrics(path)
    kept = [r for r in rows if int(r["round"]) <= max_round]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for r in kept:
            writer.writerow([r[c] for c in METRICS_COLUMNS])


def _append_metrics_row_header_only(path: Path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(METRICS_COLUMNS)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _cell_payload(
    config: ExperimentConfig, cell: CellState | None, seed: int, strategy: str, status: str,
    error: str | None = None,
) -> dict:
    payload = {
        "kind": "cell",
        "config": config.resolved,
        "config_hash": config.hash,
        "seed": seed,
        "strategy": strategy,
        "status": status,
        "error": error,
        "round": cell.round_index if cell else -1,
        "rounds_total": config.training.rounds,
        "rng": {"scheme": "seed-label-streams", "root_seed": seed},
    }
    if cell is None:
        return payload
    payload["policy_dims"] = list(config.policy_dims)
    payload["global_model"] = {
        "layout": [[name, list(shape)] for name, shape in cell.model.params.layout.fields],
        "values": encode_array(cell.model.params.values),
    }
    payload["global_profile"] = {
        "fingerprint": cell.global_profile.fingerprint,
        "values": encode_array(cell.global_profile.values),
    }
    payload["nodes"] = [
        {
            "node_id": p.node_id,
            "teacher_id": p.teacher_id,
            "profile_model": encode_array(model_params(p.profile_model).values),
            "encoders": {
                name: encode_array(_encoder_values(cell_enc))
                for name, cell_enc in sorted(p.encoders.items())
            },
            "local_model": None
            if p.local_params is None
            else encode_array(p.local_params.values),
        }
        for p in cell.pipelines
    ]
    return payload


def _encoder_values(cell: LstmCell) -> np.ndarray:
    layout = lstm_cell_layout(cell.input_dim, cell.hidden_dim)
    arrays = {}
    for gate in ("input", "forget", "output", "candidate"):
        arrays[f"{gate}.weights"] = cell.weights[gate]
        arrays[f"{gate}.bias"] = cell.biases[gate]
    return ParamVector.pack(layout, arrays).values


def _encoder_from_values(input_dim: int, hidden_dim: int, values: np.ndarray) -> LstmCell:
    layout = lstm_cell_layout(input_dim, hidden_dim)
    pv = ParamVector(layout, values)
    weights = {g: pv.view(f"{g}.weights").copy() for g in ("input", "forget", "output", "candidate")}
    biases = {g: pv.view(f"{g}.bias").copy() for g in ("input", "forget", "output", "candidate")}
    return LstmCell(weights=weights, biases=biases)


def _restore_cell(config: ExperimentConfig, payload: dict) -> CellState:
    """Rebuild a cell bit-exactly from a checkpoint.

    Cheap state (sessions, normalization statistics, derived features) is
    regenerated from the labelled seed streams; trained parameters are
    restored from the checkpoint.
    """
    seed = int(payload["seed"])
    scenario = config.scenario
    rng = Rng(seed)
    world_rng = rng.child("world")
    teachers = generate_population(
        scenario.catalog,
        list(scenario.archetypes),
        list(scenario.archetype_counts),
        scenario.nodes,
        scenario.teachers,
        world_rng.child("population"),
    )
    ground_truth = build_ground_truth(
        list(scenario.archetypes),
        config.policy_dims,
        scenario.ground_truth_scale,
        world_rng.child("ground-truth"),
    )
    session_params = SessionParams(
        length_range=scenario.session_length_range,
        samples_per_session=scenario.samples_per_session,
        coupling=scenario.coupling,
        detector_noise=scenario.detector_noise,
    )
    layout = policy_layout(config.policy_dims)
    model = PolicyModel(
        config.policy_dims, ParamVector(layout, decode_array(payload["global_model"]["values"]))
    )
    dims = _profile_dims(config)
    fingerprint = profile_fingerprint(dims)
    stored_fp = payload["global_profile"]["fingerprint"]
    if stored_fp != fingerprint:
        raise CheckpointError(
            f"profile fingerprint mismatch: checkpoint {stored_fp}, config {fingerprint}"
        )
    cell = CellState(
        seed=seed,
        rng=rng,
        teachers=teachers,
        ground_truth=ground_truth,
        session_params=session_params,
        pipelines=[],
        model=model,
        global_profile=UserProfile(
            values=decode_array(payload["global_profile"]["values"]), fingerprint=fingerprint
        ),
        round_index=int(payload["round"]),
    )
    node_blocks = {int(b["teacher_id"]): b for b in payload["nodes"]}
    rounds_done = cell.round_index
    for teacher in teachers:
        block = node_blocks[teacher.teacher_id]
        pipeline = NodePipeline(
            teacher=teacher,
            records=[],
            norm={},
            encoders={},
            profile_model=model_from_params(
                dims, ParamVector(profile_layout(dims), decode_array(block["profile_model"]))
            ),
            features=[],
        )
        cell.pipelines.append(pipeline)
        pipeline.records = _generate_node_sessions(
            config, cell, pipeline, 0, scenario.initial_sessions
        )
        for r in range(1, rounds_done + 1):
            pipeline.records.extend(
                _generate_node_sessions(config, cell, pipeline, r, scenario.sessions_per_round)
            )
        initial = pipeline.records[: scenario.initial_sessions]
        for sensor in scenario.catalog.human_sensors:
            pipeline.norm[sensor.name] = _norm_stats([r.streams[sensor.name] for r in initial])
            pipeline.encoders[sensor.name] = _encoder_from_values(
                sensor.dim, config.model.representation_dim, decode_array(block["encoders"][sensor.name])
            )
        pipeline.features = [
            _session_features(pipeline, r, scenario.catalog) for r in pipeline.records
        ]
        pipeline.encodings = encode_sessions(pipeline.profile_model, pipeline.features)
        pipeline.profile = extract_profile(pipeline.profile_model)
        if block["local_model"] is not None:
            pipeline.local_params = ParamVector(layout, decode_array(block["local_model"]))
    return cell


# ---------------------------------------------------------------------------
# Cells and runs
# ---------------------------------------------------------------------------

RoundCallback = Callable[[int, str, int], None]


def _run_cell(
    config: ExperimentConfig,
    seed: int,
    strategy: str,
    out_dir: Path,
    on_round_end: RoundCallback | None = None,
) -> CellOutcome:
    mpath = metrics_path(out_dir, seed, strategy)
    cpath = checkpoint_path(out_dir, seed, strategy)
    mpath.unlink(missing_ok=True)
    start = time.perf_counter()
    logger.info("cell seed=%d strategy=%s: building world and pretraining", seed, strategy)
    try:
        cell = _build_cell(config, seed)
    except DivergenceError as exc:
        logger.error("cell seed=%d strategy=%s diverged in pretraining: %s", seed, strategy, exc)
        write_checkpoint(cpath, _cell_payload(config, None, seed, strategy, "divergent", str(exc)))
        return CellOutcome(seed, strategy, "divergent", 0, None, str(exc))
    test_loss = evaluate_policy(
        cell.model, cell.ground_truth, config.training.eval_samples, cell.rng.child("eval/round=0")
    )
    _append_metrics_row(
        mpath, _metrics_row(seed, strategy, 0, test_loss, None, time.perf_counter() - start)
    )
    write_checkpoint(cpath, _cell_payload(config, cell, seed, strategy, "in_progress"))
    return _continue_cell(config, cell, seed, strategy, out_dir, test_loss, on_round_end)


def _continue_cell(
    config: ExperimentConfig,
    cell: CellState,
    seed: int,
    strategy: str,
    out_dir: Path,
    last_loss: float,
    on_round_end: RoundCallback | None = None,
) -> CellOutcome:
    mpath = metrics_path(out_dir, seed, strategy)
    cpath = checkpoint_path(out_dir, seed, strategy)
    rounds = config.training.rounds
    test_loss = last_loss
    for round_index in range(cell.round_index + 1, rounds + 1):
        start = time.perf_counter()
        try:
            report, test_loss = _advance_round(config, cell, round_index, strategy)
        except DivergenceError as exc:
            logger.error(
                "cell seed=%d strategy=%s diverged at round %d: %s", seed, strategy, round_index, exc
            )
            write_checkpoint(
                cpath, _cell_payload(config, cell, seed, strategy, "divergent", str(exc))
            )
            return CellOutcome(seed, strategy, "divergent", cell.round_index, None, str(exc))
        wall = time.perf_counter() - start
        _append_metrics_row(
            mpath, _metrics_row(seed, strategy, round_index, test_loss, report, wall)
        )
        status = "completed" if round_index == rounds else "in_progress"
        write_checkpoint(cpath, _cell_payload(config, cell, seed, strategy, status))
        if on_round_end is not None:
            on_round_end(seed, strategy, round_index)
    if rounds == 0:
        write_checkpoint(cpath, _cell_payload(config, cell, seed, strategy, "completed"))
    logger.info(
        "cell seed=%d strategy=%s: completed %d rounds, test loss %.6g",
        seed,
        strategy,
        rounds,
        test_loss,
    )
    return CellOutcome(seed, strategy, "completed", rounds, float(test_loss))


def _configure_logging(out_dir: Path, quiet: bool) -> list[logging.Handler]:
    handlers: list[logging.Handler] = []
    logger.setLevel(logging.INFO)
    file_handler = logging.FileHandler(out_dir / "run.log")
    file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    logger.addHandler(file_handler)
    handlers.append(file_handler)
    if not quiet:
        console = logging.StreamHandler()
        console.setFormatter(logging.Formatter("%(message)s"))
        logger.addHandler(console)
        handlers.append(console)
    return handlers


def _release_logging(handlers: list[logging.Handler]) -> None:
    for handler in handlers:
        logger.removeHandler(handler)
        handler.close()


def run_experiment(
    config: ExperimentConfig,
    *,
    quiet: bool = False,
    on_round_end: RoundCallback | None = None,
) -> ExperimentResult:
    """Run the full (seed x strategy) grid described by the configuration.

    Writes per-cell metrics files, per-cell checkpoints, a run log and a
    summary into the configured output directory. Returns exit code 0 on
    success and 2 when at least one cell diverged (results are still
    written).
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    handlers = _configure_logging(out_dir, quiet)
    try:
        logger.info("config hash %s", config.hash)
        for line in config.defaults_applied:
            logger.info("default applied: %s", line)
        outcomes = []
        for seed in config.seeds:
            for strategy in config.strategies:
                outcomes.append(_run_cell(config, seed, strategy, out_dir, on_round_end))
        write_summary(config, out_dir)
        exit_code = 2 if any(o.status == "divergent" for o in outcomes) else 0
        return ExperimentResult(exit_code, outcomes, out_dir)
    finally:
        _release_logging(handlers)


def resume(
    checkpoint_file: str | Path,
    config: ExperimentConfig | None = None,
    *,
    output_dir: str | None = None,
    quiet: bool = False,
    on_round_end: RoundCallback | None = None,
) -> ExperimentResult:
    """Continue one cell from its checkpoint, bit-exactly.

    If ``config`` is given its hash must match the checkpoint; otherwise the
    configuration stored inside the checkpoint is used. Metrics rows beyond
    the checkpointed round are discarded and regenerated.
    """
    payload = read_checkpoint(checkpoint_file)
    if payload.get("kind") != "cell":
        raise CheckpointError(f"{checkpoint_file} is not a cell checkpoint")
    if config is not None:
        if config.hash != payload["config_hash"]:
            raise CheckpointError(
                f"config hash mismatch: checkpoint {payload['config_hash']}, config {config.hash}"
            )
    else:
        config = parse_config(payload["config"])
    if output_dir is not None:
        from .config import with_overrides

        config = with_overrides(config, output_dir=str(output_dir))
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    handlers = _configure_logging(out_dir, quiet)
    try:
        seed = int(payload["seed"])
        strategy = str(payload["strategy"])
        status = payload["status"]
        if status == "divergent":
            logger.info("cell seed=%d strategy=%s diverged; nothing to resume", seed, strategy)
            write_summary(config, out_dir)
            return ExperimentResult(2, [CellOutcome(seed, strategy, "divergent", int(payload["round"]), None, payload.get("error"))], out_dir)
        rounds = config.training.rounds
        done = int(payload["round"])
        if status == "completed" or done >= rounds:
            logger.info("cell seed=%d strategy=%s already completed; rewriting summary", seed, strategy)
            write_summary(config, out_dir)
            rows = read_metrics(metrics_path(out_dir, seed, strategy))
            final = float(rows[-1]["test_loss"]) if rows else None
            return ExperimentResult(0, [CellOutcome(seed, strategy, "completed", done, final)], out_dir)
        logger.info("resuming cell seed=%d strategy=%s from round %d", seed, strategy, done)
        cell = _restore_cell(config, payload)
        mpath = metrics_path(out_dir, seed, strategy)
        _truncate_metrics(mpath, done)
        rows = read_metrics(mpath)
        last_loss = float(rows[-1]["test_loss"]) if rows else float("nan")
        outcome = _continue_cell(config, cell, seed, strategy, out_dir, last_loss, on_round_end)
        write_summary(config, out_dir)
        return ExperimentResult(2 if outcome.status == "divergent" else 0, [outcome], out_dir)
    finally:
        _release_logging(handlers)


# ---------------------------------------------------------------------------
# Summary and comparison
# ---------------------------------------------------------------------------


def write_summary(config: ExperimentConfig, out_dir: Path) -> Path:
    """Derive the run summary from the files on disk (deterministic)."""
    out_dir = Path(out_dir)
    lines = ["format = fedlfd-summary-v1", f"config_hash = {config.hash}"]
    lines.append(f"rounds = {config.training.rounds}")
    lines.append("seeds = " + ",".join(str(s) for s in config.seeds))
    lines.append("strategies = " + ",".join(config.strategies))
    statuses = {}
    initial = {}
    final = {}
    for seed in config.seeds:
        for strategy in config.strategies:
            key = (seed, strategy)
            cpath = checkpoint_path(out_dir, seed, strategy)
            if cpath.exists():
                try:
                    payload = read_checkpoint(cpath)
                    statuses[key] = payload["status"]
                except CheckpointError:
                    statuses[key] = "unreadable"
            else:
                statuses[key] = "missing"
            mpath = metrics_path(out_dir, seed, strategy)
            if mpath.exists():
                rows = read_metrics(mpath)
                for row in rows:
                    if int(row["round"]) == 0:
                        initial[key] = row["test_loss"]
                trained = [r for r in rows if int(r["round"]) >= 1]
                if trained:
                    final[key] = max(trained, key=lambda r: int(r["round"]))["test_loss"]
    total = len(config.seeds) * len(config.strategies)
    completed = sum(1 for s in statuses.values() if s == "completed")
    divergent = sum(1 for s in statuses.values() if s == "divergent")
    lines.append(f"cells_total = {total}")
    lines.append(f"cells_completed = {completed}")
    lines.append(f"cells_divergent = {divergent}")
    for seed in config.seeds:
        for strategy in config.strategies:
            key = (seed, strategy)
            lines.append(f"cell_status[seed={seed},strategy={strategy}] = {statuses[key]}")
    for seed in config.seeds:
        for strategy in config.strategies:
            key = (seed, strategy)
            if key in initial:
                lines.append(f"initial_test_loss[seed={seed},strategy={strategy}] = {initial[key]}")
    for seed in config.seeds:
        for strategy in config.strategies:
            key = (seed, strategy)
            if key in final:
                lines.append(f"final_test_loss[seed={seed},strategy={strategy}] = {final[key]}")
    for strategy in config.strategies:
        values = [float(final[(s, strategy)]) for s in config.seeds if (s, strategy) in final]
        if values:
            lines.append(f"mean_final_test_loss[strategy={strategy}] = {float(np.mean(values))!r}")
    path = out_dir / "summary.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


@dataclass
class Comparison:
    strategies: list[str]
    seeds: list[int]
    final_losses: dict[str, dict[int, float]]
    curves: dict[str, dict[int, float]]
    wins: dict[str, int]
    ties: int
    ranking: list[str]
    report_path: Path | None = None
    curves_path: Path | None = None
    figure_paths: list[Path] = field(default_factory=list)


def compare_strategies(
    metrics_dir: str | Path,
    output_dir: str | Path | None = None,
    render_figures: bool = True,
) -> Comparison:
    """Compare strategy outcomes across the metrics files in a directory.

    Requires at least two strategies and two seeds. Writes a structured
    comparison report, a per-round mean-curve CSV, and (by default)
    matplotlib figures next to them.
    """
    metrics_dir = Path(metrics_dir)
    out_dir = Path(output_dir) if output_dir is not None else metrics_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for path in sorted(metrics_dir.glob("metrics_*.csv")):
        rows.extend(read_metrics(path))
    finals: dict[str, dict[int, float]] = {}
    curves_acc: dict[str, dict[int, list[float]]] = {}
    max_round: dict[tuple[str, int], int] = {}
    for row in rows:
        strategy = row["strategy"]
        seed = int(row["seed"])
        round_index = int(row["round"])
        loss = float(row["test_loss"])
        curves_acc.setdefault(strategy, {}).setdefault(round_index, []).append(loss)
        key = (strategy, seed)
        if key not in max_round or round_index > max_round[key]:
            max_round[key] = round_index
            finals.setdefault(strategy, {})[seed] = loss
    strategies = sorted(finals)
    if len(strategies) < 2:
        raise ValueError(f"comparison requires at least 2 strategies, found {len(strategies)}")
    seeds = sorted(set(s for per in finals.values() for s in per))
    common = [s for s in seeds if all(s in finals[st] for st in strategies)]
    if len(common) < 2:
        raise ValueError(f"comparison requires at least 2 seeds shared by all strategies, found {len(common)}")
    wins = {s: 0 for s in strategies}
    ties = 0
    for seed in common:
        values = {s: finals[s][seed] for s in strategies}
        best = min(values.values())
        winners = [s for s, v in values.items() if v == best]
        if len(winners) == 1:
            wins[winners[0]] += 1
        else:
            ties += 1
    curves = {
        s: {r: float(np.mean(v)) for r, v in sorted(per.items())} for s, per in curves_acc.items()
    }
    mean_final = {s: float(np.mean([finals[s][seed] for seed in common])) for s in strategies}
    ranking = sorted(strategies, key=lambda s: mean_final[s])

    lines = ["format = fedlfd-comparison-v1"]
    lines.append("strategies = " + ",".join(strategies))
    lines.append("seeds = " + ",".join(str(s) for s in common))
    for s in strategies:
        values = np.array([finals[s][seed] for seed in common])
        lines.append(f"final_loss_mean[{s}] = {float(values.mean())!r}")
        lines.append(f"final_loss_std[{s}] = {float(values.std())!r}")
        lines.append(f"final_loss_min[{s}] = {float(values.min())!r}")
        lines.append(f"final_loss_max[{s}] = {float(values.max())!r}")
        lines.append(f"final_loss_median[{s}] = {float(np.median(values))!r}")
    for s in strategies:
        lines.append(f"wins[{s}] = {wins[s]}")
    lines.append(f"ties = {ties}")
    for i, s in enumerate(ranking, start=1):
        lines.append(f"rank[{i}] = {s}")

    curves_path = out_dir / "comparison_curves.csv"
    all_rounds = sorted(set(r for per in curves.values() for r in per))
    with open(curves_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round"] + strategies)
        for r in all_rounds:
            writer.writerow([r] + [repr(curves[s][r]) if r in curves[s] else "" for s in strategies])
    lines.append(f"curves_file = {curves_path.name}")

    figure_paths: list[Path] = []
    if render_figures:
        from .report import render_final_losses, render_loss_curves

        curve_fig = out_dir / "loss_curves.png"
        final_fig = out_dir / "final_losses.png"
        render_loss_curves(curves, curve_fig)
        render_final_losses({s: [finals[s][seed] for seed in common] for s in strategies}, final_fig)
        figure_paths = [curve_fig, final_fig]
        for fig in figure_paths:
            lines.append(f"figure = {fig.name}")

    report_path = out_dir / "comparison.txt"
    report_path.write_text("\n".join(lines) + "\n")
    return Comparison(
        strategies=strategies,
        seeds=common,
        final_losses=finals,
        curves=curves,
        wins=wins,
        ties=ties,
        ranking=ranking,
        report_path=report_path,
        curves_path=curves_path,
        figure_paths=figure_paths,
    )
