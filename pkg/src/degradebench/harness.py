"""Closed-loop episode orchestration and run-record handling.

An episode walks a frame sequence turn by turn: the calibrator picks a
severity from the previous turn's feedback, the schedule decides whether the
frame is corrupted, a task is generated against the memory window, the model
answers, the judge scores it, and the outcome feeds back into the
calibrator. Records are JSON lines: a config snapshot first, one line per
turn, per-episode summaries, and an aggregate summary last. Identical
configs and master seeds produce byte-identical record files, which is what
the replay command checks.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calibrate import (
    CalibratorConfig,
    DifficultyCalibrator,
    FeedbackWindow,
    map_to_params,
)
from .degrade import (
    CompressionLevel,
    DegradationSchedule,
    ExternalCodec,
    NoiseParams,
    apply_compression,
    apply_motion_blur,
    apply_sensor_noise,
    corruption_mask,
    linear_trajectory,
    render_psf,
)
from .imaging import Image, load_image, save_image
from .metrics import (
    TemporalConstraint,
    Transcript,
    Turn,
    UndefinedMetricError,
    hallucination_rate,
    judge,
    recovery_rate,
    temporal_consistency,
)
from .models import (
    HttpModelClient,
    ModelEndpoint,
    PerturbableHttpClient,
    TurnContext,
    canonical_json,
    make_mock,
    make_perturbable_mock,
)
from .refine import EnsembleConfig, refine_loop
from .seeds import child_seed
from .tasks import (
    AnnotationParseError,
    AnnotationValidationError,
    MemoryBuffer,
    TaskSettings,
    generate_query,
    ingest_annotations,
)

SCHEMA_VERSION = 1

_IMAGE_PATTERNS = ("*.png", "*.jpg", "*.jpeg")


class ConfigError(ValueError):
    """The run configuration is structurally or referentially invalid."""


@dataclass(frozen=True)
class NoiseSettings:
    read_sigma: float = 0.02
    blur_epsilon_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.read_sigma < 0 or self.blur_epsilon_sigma < 0:
            raise ConfigError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class CodecSettings:
    backend: str = "surrogate"
    quant_steps: dict | None = None
    encoder: str | None = None
    decoder: str | None = None

    def __post_init__(self) -> None:
        if self.backend not in ("surrogate", "external"):
            raise ConfigError(f"codec backend must be surrogate or external, got {self.backend!r}")
        if self.backend == "external" and not (self.encoder and self.decoder):
            raise ConfigError("external codec backend needs encoder and decoder paths")

    def external(self) -> ExternalCodec | None:
        if self.backend == "external":
            return ExternalCodec(self.encoder, self.decoder)
        return None


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Fully parsed run configuration plus its raw snapshot for records."""

    image_dir: Path
    annotations: Path
    schedule: DegradationSchedule
    calibrator: CalibratorConfig
    task_settings: TaskSettings
    noise: NoiseSettings
    codec: CodecSettings
    model_spec: dict
    uir: EnsembleConfig | None
    episodes: int
    context_window: int | None
    uncertainty_focus: tuple
    aliases: dict
    output: Path
    master_seed: int
    snapshot: dict


@dataclass(frozen=True, eq=False)
class EpisodeRecord:
    episode: int
    turns: list
    summary: dict


def _require_keys(section: str, payload: dict, allowed: set) -> None:
    unknown = sorted(set(payload) - allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r} config section: {unknown}")


def _pair(value, name: str) -> tuple:
    try:
        lo, hi = value
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a [min, max] pair, got {value!r}") from None
    return (float(lo), float(hi))


def config_from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a config mapping and resolve referenced paths.

    Relative paths are resolved against ``base_dir`` (the config file's
    directory) and stored resolved in the snapshot so a record can be
    replayed from anywhere on the same machine.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    raw = dict(raw)
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {raw.get('schema_version')!r}, expected {SCHEMA_VERSION}"
        )
    allowed = {
        "schema_version", "sequence", "schedule", "calibrator", "tasks", "noise",
        "codec", "model", "uir", "episodes", "context_window", "aliases",
        "output", "master_seed",
    }
    _require_keys("top-level", raw, allowed)

    base = Path(base_dir) if base_dir is not None else Path.cwd()

    def _resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (base / p).resolve()

    seq = raw.get("sequence")
    if not isinstance(seq, dict) or "image_dir" not in seq or "annotations" not in seq:
        raise ConfigError("config needs sequence.image_dir and sequence.annotations")
    _require_keys("sequence", seq, {"image_dir", "annotations"})
    image_dir = _resolve(seq["image_dir"])
    annotations = _resolve(seq["annotations"])
    if not image_dir.is_dir():
        raise ConfigError(f"sequence.image_dir does not exist: {image_dir}")
    if not annotations.is_file():
        raise ConfigError(f"sequence.annotations does not exist: {annotations}")

    sched = dict(raw.get("schedule") or {})
    _require_keys(
        "schedule", sched,
        {"regime", "length", "boundary", "period", "duty", "severity_overrides", "tags"},
    )
    try:
        schedule = DegradationSchedule(
            regime=sched.get("regime", "early"),
            length=int(sched.get("length", 8)),
            boundary=sched.get("boundary"),
            period=sched.get("period"),
            duty=sched.get("duty"),
            severity_overrides=(
                tuple(sched["severity_overrides"])
                if sched.get("severity_overrides") is not None
                else None
            ),
            tags=tuple(sched.get("tags", ())),
        )
    except ValueError as exc:
        raise ConfigError(f"bad schedule: {exc}") from exc

    cal = dict(raw.get("calibrator") or {})
    _require_keys(
        "calibrator", cal,
        {"alpha", "beta", "motion_sigma_range", "gain_range", "severity_init",
         "accuracy_polarity", "window"},
    )
    try:
        calibrator = CalibratorConfig(
            alpha=float(cal.get("alpha", 0.5)),
            beta=float(cal.get("beta", 0.5)),
            motion_sigma_range=_pair(cal.get("motion_sigma_range", (0.0, 6.0)), "motion_sigma_range"),
            gain_range=_pair(cal.get("gain_range", (50.0, 400.0)), "gain_range"),
            severity_init=float(cal.get("severity_init", 0.0)),
            accuracy_polarity=cal.get("accuracy_polarity", "direct"),
            window=int(cal.get("window", 1)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad calibrator: {exc}") from exc

    tsk = dict(raw.get("tasks") or {})
    _require_keys(
        "tasks", tsk,
        {"kinds", "temperature", "memory_window", "paraphrase", "focus", "focus_boost"},
    )
    try:
        task_settings = TaskSettings(
            kinds=tuple(tsk.get("kinds", TaskSettings().kinds)),
            temperature=float(tsk.get("temperature", 1.0)),
            memory_window=int(tsk.get("memory_window", 8)),
            paraphrase=bool(tsk.get("paraphrase", True)),
            focus_boost=float(tsk.get("focus_boost", 1.0)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad tasks section: {exc}") from exc
    focus = tuple(tsk.get("focus", ()))

    noi = dict(raw.get("noise") or {})
    _require_keys("noise", noi, {"read_sigma", "blur_epsilon_sigma"})
    noise = NoiseSettings(
        read_sigma=float(noi.get("read_sigma", 0.02)),
        blur_epsilon_sigma=float(noi.get("blur_epsilon_sigma", 0.0)),
    )

    cod = dict(raw.get("codec") or {})
    _require_keys("codec", cod, {"backend", "quant_steps", "encoder", "decoder"})
    codec = CodecSettings(
        backend=cod.get("backend", "surrogate"),
        quant_steps=cod.get("quant_steps"),
        encoder=cod.get("encoder"),
        decoder=cod.get("decoder"),
    )

    model_spec = dict(raw.get("model") or {})
    if ("mock" in model_spec) == ("endpoint" in model_spec):
        raise ConfigError("model section must set exactly one of 'mock' or 'endpoint'")
    _require_keys("model", model_spec, {"mock", "endpoint"})

    uir_raw = raw.get("uir")
    uir = None
    if uir_raw is not None:
        uir_raw = dict(uir_raw)
        _require_keys(
            "uir", uir_raw,
            {"runs", "base_dropout", "gain", "hl_weight", "threshold", "max_rounds",
             "noise_grid", "max_dropout"},
        )
        try:
            uir = EnsembleConfig(
                runs=int(uir_raw.get("runs", 5)),
                base_dropout=float(uir_raw.get("base_dropout", 0.1)),
                gain=float(uir_raw.get("gain", 1.0)),
                hl_weight=float(uir_raw.get("hl_weight", 1.0)),
                threshold=float(uir_raw.get("threshold", 0.15)),
                max_rounds=int(uir_raw.get("max_rounds", 3)),
                noise_grid=tuple(uir_raw.get("noise_grid", (0.0, 0.25, 0.5))),
                max_dropout=float(uir_raw.get("max_dropout", 0.9)),
            )
        except ValueError as exc:
            raise ConfigError(f"bad uir section: {exc}") from exc

    episodes = int(raw.get("episodes", 1))
    if episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {episodes}")
    context_window = raw.get("context_window")
    if context_window is not None:
        context_window = int(context_window)
        if context_window < 0:
            raise ConfigError("context_window must be >= 0 or null")
    aliases = dict(raw.get("aliases") or {})
    master_seed = int(raw.get("master_seed", 0))
    output = _resolve(raw.get("output", "run.jsonl"))

    # Snapshot with resolved paths so replay is location independent.
    snapshot = dict(raw)
    snapshot["sequence"] = {"image_dir": str(image_dir), "annotations": str(annotations)}
    snapshot["output"] = str(output)

    return RunConfig(
        image_dir=image_dir,
        annotations=annotations,
        schedule=schedule,
        calibrator=calibrator,
        task_settings=task_settings,
        noise=noise,
        codec=codec,
        model_spec=model_spec,
        uir=uir,
        episodes=episodes,
        context_window=context_window,
        uncertainty_focus=focus,
        aliases=aliases,
        output=output,
        master_seed=master_seed,
        snapshot=snapshot,
    )


def load_config(path, seed=None, out=None, mock=None) -> RunConfig:
    """Load a JSON config file, applying CLI overrides before validation."""
    import json

    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if seed is not None:
        raw["master_seed"] = int(seed)
    if out is not None:
        raw["output"] = str(out)
    if mock is not None:
        raw["model"] = {"mock": str(mock)}
    return config_from_dict(raw, base_dir=path.parent)


def load_sequence(config: RunConfig):
    """Load frame images and annotations, validated against the schedule."""
    files: list = []
    for pattern in _IMAGE_PATTERNS:
        files.extend(config.image_dir.glob(pattern))
    files = sorted(set(files))
    length = config.schedule.length
    if len(files) < length:
        raise ConfigError(
            f"sequence needs {length} frames but {config.image_dir} has {len(files)}"
        )
    frames = [load_image(f) for f in files[:length]]
    first = frames[0]
    for i, frame in enumerate(frames):
        if not frame.same_shape(first):
            raise ConfigError(f"frame {i} shape differs from frame 0")
    try:
        annotations = ingest_annotations(
            config.annotations,
            length=length,
            frame_width=first.width,
            frame_height=first.height,
        )
    except (AnnotationParseError, AnnotationValidationError) as exc:
        raise ConfigError(f"bad annotations: {exc}") from exc
    return frames, annotations


def corrupt_frame(image: Image, params, config: RunConfig, episode: int, t: int):
    """Apply the blur -> sensor noise -> compression stack to one frame."""
    ops = []
    seed_blur = child_seed(config.master_seed, "episode", episode, "frame", t, "blur")
    angle = float(np.random.default_rng(seed_blur).uniform(0.0, 2.0 * math.pi))
    extent = float(params.motion_sigma)
    side = 2 * math.ceil(extent) + 1
    trajectory = linear_trajectory(extent, n_samples=max(2, 4 * math.ceil(extent) or 2), angle=angle)
    psf = render_psf(trajectory, side, depth=1.0)
    image = apply_motion_blur(image, psf, config.noise.blur_epsilon_sigma, seed=seed_blur)
    ops.append(
        {
            "op": "motion_blur",
            "extent": extent,
            "angle": angle,
            "side": side,
            "epsilon_sigma": config.noise.blur_epsilon_sigma,
        }
    )
    seed_sensor = child_seed(config.master_seed, "episode", episode, "frame", t, "sensor")
    image = apply_sensor_noise(
        image,
        NoiseParams(gain=float(params.gain), read_sigma=config.noise.read_sigma, seed=seed_sensor),
    )
    ops.append({"op": "sensor_noise", "gain": float(params.gain), "read_sigma": config.noise.read_sigma})
    level = CompressionLevel(bitrate=int(params.bitrate), backend=config.codec.backend)
    image = apply_compression(image, level, config.codec.quant_steps, config.codec.external())
    ops.append({"op": "compression", "bitrate": int(params.bitrate), "backend": config.codec.backend})
    return image, ops


class _MockDriver:
    uses_network = False

    def __init__(self, mock):
        self._mock = mock

    def answer(self, ctx: TurnContext, image: Image, context, seed: int) -> str:
        return self._mock.respond(ctx)


class _HttpDriver:
    uses_network = True

    def __init__(self, client: HttpModelClient):
        self._client = client

    def answer(self, ctx: TurnContext, image: Image, context, seed: int) -> str:
        return self._client.query(image, ctx.query, context=context, seed=seed)


def build_driver(config: RunConfig):
    if "mock" in config.model_spec:
        try:
            return _MockDriver(make_mock(config.model_spec["mock"]))
        except (ValueError, OSError) as exc:
            raise ConfigError(f"bad mock spec: {exc}") from exc
    endpoint = _endpoint_from_spec(config.model_spec["endpoint"])
    return _HttpDriver(HttpModelClient(endpoint))


def _endpoint_from_spec(spec: dict) -> ModelEndpoint:
    spec = dict(spec)
    _require_keys(
        "model.endpoint", spec,
        {"base_url", "model", "auth_env", "timeout", "max_retries", "backoff_base"},
    )
    try:
        return ModelEndpoint(
            base_url=spec["base_url"],
            model=spec.get("model", "default"),
            auth_env=spec.get("auth_env"),
            timeout=float(spec.get("timeout", 30.0)),
            max_retries=int(spec.get("max_retries", 3)),
            backoff_base=float(spec.get("backoff_base", 0.25)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad endpoint spec: {exc}") from exc


def _assign_error_links(turns: list) -> None:
    """Attach error_id / correction_of links across judged turns, in place.

    A judged-invalid turn opens a pending error on its fact (answer-key
    identity). Later turns on the same fact reference it; a valid one closes
    it as corrected, leaving room for a fresh error afterwards. Only errors
    that were actually revisited receive an error_id, so a mistake the
    benchmark never re-probes does not enter the recovery denominator.
    """
    pending: dict = {}
    candidates: list = []
    for index, turn in enumerate(turns):
        if turn.get("task") is None:
            continue
        key = turn["task"]["answer_key"]
        open_candidate = pending.get(key)
        if open_candidate is not None:
            open_candidate["refs"].append(index)
            if turn["valid"]:
                del pending[key]
        elif not turn["valid"]:
            candidate = {"opened": index, "refs": []}
            pending[key] = candidate
            candidates.append(candidate)
    serial = 0
    for candidate in candidates:
        if not candidate["refs"]:
            continue
        error_id = f"e{serial}"
        serial += 1
        turns[candidate["opened"]]["error_id"] = error_id
        for ref in candidate["refs"]:
            turns[ref]["correction_of"] = error_id


def derive_unchanged_constraints(turns) -> list:
    """Auto-build unchanged-between constraints for repeatedly probed facts.

    Judged turns are grouped by (kind, subject, aspect, answer_key); when
    the same fact was asked more than once while its key stayed the same,
    the model's answers over that span must agree.
    """
    groups: dict = {}
    order: list = []
    for turn in turns:
        task = turn.get("task")
        if task is None:
            continue
        fact = (task["kind"], task["subject"], task["aspect"], task["answer_key"])
        if fact not in groups:
            groups[fact] = []
            order.append(fact)
        groups[fact].append(turn["t"])
    constraints = []
    for n, fact in enumerate(order):
        frames = groups[fact]
        if len(frames) < 2:
            continue
        constraints.append(
            TemporalConstraint(
                cid=f"phi_{n}",
                kind="unchanged-between",
                subjects=(fact[3],),
                window=(min(frames), max(frames)),
            )
        )
    return constraints


def _transcript_from_turns(turns) -> Transcript:
    metric_turns = []
    for turn in turns:
        task = turn.get("task")
        if task is None:
            continue
        metric_turns.append(
            Turn(
                frame=turn["t"],
                query=task["query"],
                answer_key=task["answer_key"],
                model_answer=turn["answer"],
                valid=turn["valid"],
                error_id=turn.get("error_id"),
                correction_of=turn.get("correction_of"),
            )
        )
    return Transcript(tuple(metric_turns))


def _episode_metrics(turns) -> dict:
    transcript = _transcript_from_turns(turns)
    metrics = {}
    try:
        metrics["hallucination_rate"] = hallucination_rate(transcript)
    except UndefinedMetricError:
        metrics["hallucination_rate"] = None
    try:
        metrics["recovery_rate"] = recovery_rate(transcript)
    except UndefinedMetricError:
        metrics["recovery_rate"] = None
    constraints = derive_unchanged_constraints(turns)
    try:
        metrics["temporal_consistency"] = temporal_consistency(transcript, constraints)
    except UndefinedMetricError:
        metrics["temporal_consistency"] = None
    return metrics


def run_episode(config: RunConfig, episode: int, frames, annotations, driver=None) -> EpisodeRecord:
    """Run one closed-loop episode and score it."""
    driver = driver or build_driver(config)
    schedule = config.schedule
    mask = corruption_mask(schedule)
    calibrator = DifficultyCalibrator(config.calibrator)
    window = FeedbackWindow(config.calibrator.window)
    memory = MemoryBuffer(config.task_settings.memory_window)
    turns: list = []
    history: list = []
    incomplete_error = None

    for t in range(schedule.length):
        feedback = window.feedback() if t > 0 else None
        severity, params = calibrator.step(feedback)
        corrupted = bool(mask[t])
        image = frames[t]
        ops: list = []
        if corrupted:
            image, ops = corrupt_frame(image, params, config, episode, t)
        task = generate_query(
            memory,
            annotations[t],
            seed=child_seed(config.master_seed, "episode", episode, "frame", t, "task"),
            uncertainty_focus=config.uncertainty_focus,
            settings=config.task_settings,
        )
        record = {
            "type": "turn",
            "episode": episode,
            "t": t,
            "severity": float(severity),
            "params": {
                "motion_sigma": float(params.motion_sigma),
                "gain": float(params.gain),
                "bitrate": int(params.bitrate),
            },
            "corrupted": corrupted,
            "ops": ops,
            "task": None,
            "answer": None,
            "valid": None,
            "error_id": None,
            "correction_of": None,
            "feedback": (
                None
                if feedback is None
                else {"accuracy": feedback.accuracy, "hallucination": feedback.hallucination}
            ),
        }
        if task is not None:
            if config.context_window is None:
                context = tuple(history)
            elif config.context_window == 0:
                context = ()
            else:
                context = tuple(history[-config.context_window :])
            ctx = TurnContext(
                frame=t,
                query=task.query,
                answer_key=task.answer_key,
                corrupted=corrupted,
                kind=task.kind,
                history=context,
            )
            model_seed = child_seed(config.master_seed, "episode", episode, "frame", t, "model")
            try:
                answer = driver.answer(ctx, image, context, model_seed)
            except Exception as exc:
                incomplete_error = f"{type(exc).__name__}: {exc}"
                turns.append(record)
                break
            valid = judge(answer, task.answer_key, config.aliases)
            window.push(valid)
            history.append((task.query, answer))
            record["task"] = {
                "kind": task.kind,
                "query": task.query,
                "answer_key": task.answer_key,
                "entropy": float(task.entropy),
                "subject": task.subject,
                "aspect": task.aspect,
                "ref_frame": task.ref_frame,
            }
            record["answer"] = answer
            record["valid"] = bool(valid)
        turns.append(record)
        memory.push_frame(annotations[t])

    _assign_error_links(turns)
    judged = [t for t in turns if t["task"] is not None]
    summary = {
        "type": "episode_summary",
        "episode": episode,
        "turns": len(judged),
        "errors": sum(1 for t in judged if t["error_id"] is not None),
        "constraints": len(derive_unchanged_constraints(turns)),
        "metrics": _episode_metrics(turns),
        "severity_trace": [entry["severity"] for entry in calibrator.trail],
        "incomplete": incomplete_error is not None,
    }
    if incomplete_error is not None:
        summary["error"] = incomplete_error
    return EpisodeRecord(episode=episode, turns=turns, summary=summary)


def _aggregate_summary(records) -> dict:
    metrics = {}
    for name in ("hallucination_rate", "recovery_rate", "temporal_consistency"):
        values = [
            r.summary["metrics"][name]
            for r in records
            if r.summary["metrics"][name] is not None
        ]
        metrics[name] = (sum(values) / len(values)) if values else None
    return {
        "type": "summary",
        "episodes": len(records),
        "turns": sum(r.summary["turns"] for r in records),
        "errors": sum(r.summary["errors"] for r in records),
        "metrics": metrics,
        "complete": all(not r.summary["incomplete"] for r in records),
    }


def render_record_bytes(config: RunConfig, records) -> bytes:
    lines = [canonical_json({"type": "config", "schema_version": SCHEMA_VERSION, "config": config.snapshot})]
    for record in records:
        lines.extend(canonical_json(turn) for turn in record.turns)
        lines.append(canonical_json(record.summary))
    lines.append(canonical_json(_aggregate_summary(records)))
    return b"\n".join(lines) + b"\n"


def run_benchmark(config: RunConfig, workers: int = 1):
    """Run all configured episodes and persist the record file.

    Episodes are independent given the master seed, so they may run on a
    worker pool; records are always written in episode order, keeping the
    file bytes independent of scheduling.
    """
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    frames, annotations = load_sequence(config)

    def _one(episode: int) -> EpisodeRecord:
        return run_episode(config, episode, frames, annotations)

    if workers == 1 or config.episodes == 1:
        records = [_one(ep) for ep in range(config.episodes)]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_one, range(config.episodes)))

    payload = render_record_bytes(config, records)
    config.output.parent.mkdir(parents=True, exist_ok=True)
    config.output.write_bytes(payload)
    return records, payload


def read_record(path):
    """Parse a record file into (config snapshot, turn lines, summaries, final)."""
    import json

    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read record {path}: {exc}") from exc
    if not lines:
        raise ConfigError(f"record {path} is empty")
    rows = []
    for n, line in enumerate(lines, start=1):
        try:
            rows.append(json.loads(line))
        except ValueError as exc:
            raise ConfigError(f"record {path} line {n} is not JSON: {exc}") from exc
    if rows[0].get("type") != "config":
        raise ConfigError(f"record {path} does not start with a config line")
    if rows[-1].get("type") != "summary":
        raise ConfigError(f"record {path} does not end with a summary line")
    turns = [r for r in rows if r.get("type") == "turn"]
    episode_summaries = [r for r in rows if r.get("type") == "episode_summary"]
    return rows[0], turns, episode_summaries, rows[-1]


def score_record(path) -> dict:
    """Recompute metrics for a record and compare with its stored summaries."""
    config_line, turn_rows, episode_summaries, final = read_record(path)
    aliases = dict(config_line["config"].get("aliases") or {})
    episodes: dict = {}
    for row in turn_rows:
        episodes.setdefault(row["episode"], []).append(row)
    stored_by_episode = {s["episode"]: s for s in episode_summaries}

    report: dict = {"episodes": {}, "matches": True}
    rescored = []
    for episode in sorted(episodes):
        turns = [dict(t) for t in sorted(episodes[episode], key=lambda r: r["t"])]
        for turn in turns:
            if turn["task"] is not None:
                turn["valid"] = judge(turn["answer"], turn["task"]["answer_key"], aliases)
            turn["error_id"] = None
            turn["correction_of"] = None
        _assign_error_links(turns)
        metrics = _episode_metrics(turns)
        stored = stored_by_episode.get(episode, {}).get("metrics")
        matches = stored == metrics
        report["episodes"][episode] = {"metrics": metrics, "stored": stored, "matches": matches}
        report["matches"] = report["matches"] and matches
        judged = [t for t in turns if t["task"] is not None]
        rescored.append(
            {
                "metrics": metrics,
                "turns": len(judged),
                "errors": sum(1 for t in judged if t["error_id"] is not None),
            }
        )
    aggregate = {}
    for name in ("hallucination_rate", "recovery_rate", "temporal_consistency"):
        values = [r["metrics"][name] for r in rescored if r["metrics"][name] is not None]
        aggregate[name] = (sum(values) / len(values)) if values else None
    report["aggregate"] = aggregate
    report["stored_aggregate"] = final.get("metrics")
    report["matches"] = report["matches"] and (aggregate == final.get("metrics"))
    return report


def replay_record(path):
    """Re-execute a record's config snapshot and byte-compare the output.

    Only mock-model records can be replayed; re-running a live endpoint
    would neither be deterministic nor free.
    """
    config_line, _, _, _ = read_record(path)
    snapshot = config_line["config"]
    if "mock" not in (snapshot.get("model") or {}):
        raise ConfigError("replay requires a record produced with a mock model")
    config = config_from_dict(snapshot, base_dir=Path(path).parent)
    frames, annotations = load_sequence(config)
    records = [run_episode(config, ep, frames, annotations) for ep in range(config.episodes)]
    payload = render_record_bytes(config, records)
    original = Path(path).read_bytes()
    if payload == original:
        return True, None
    old_lines = original.split(b"\n")
    new_lines = payload.split(b"\n")
    for n, (a, b) in enumerate(zip(old_lines, new_lines), start=1):
        if a != b:
            return False, f"first divergence at line {n}"
    return False, f"line count differs: {len(old_lines)} vs {len(new_lines)}"


def generate_assets(config: RunConfig, out_dir) -> dict:
    """Materialize corrupted frames and tasks to disk without any model.

    Severity comes from the schedule's overrides when present, otherwise it
    holds at the calibrator's initial value (there is no feedback loop
    without a model). Returns a small manifest of what was written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames, annotations = load_sequence(config)
    mask = corruption_mask(config.schedule)
    frame_lines = []
    task_lines = []
    frame_count = 0
    for episode in range(config.episodes):
        memory = MemoryBuffer(config.task_settings.memory_window)
        for t in range(config.schedule.length):
            overrides = config.schedule.severity_overrides
            severity = overrides[t] if overrides is not None else config.calibrator.severity_init
            params = map_to_params(config.calibrator, severity)
            image = frames[t]
            ops: list = []
            if mask[t]:
                image, ops = corrupt_frame(image, params, config, episode, t)
            name = f"ep{episode:03d}_frame{t:03d}.png"
            save_image(image, out_dir / name)
            frame_count += 1
            frame_lines.append(
                {
                    "type": "frame",
                    "episode": episode,
                    "t": t,
                    "file": name,
                    "corrupted": bool(mask[t]),
                    "severity": float(severity),
                    "ops": ops,
                }
            )
            task = generate_query(
                memory,
                annotations[t],
                seed=child_seed(config.master_seed, "episode", episode, "frame", t, "task"),
                uncertainty_focus=config.uncertainty_focus,
                settings=config.task_settings,
            )
            if task is not None:
                task_lines.append(
                    {
                        "type": "task",
                        "episode": episode,
                        "t": t,
                        "kind": task.kind,
                        "query": task.query,
                        "answer_key": task.answer_key,
                        "entropy": float(task.entropy),
                        "subject": task.subject,
                        "aspect": task.aspect,
                        "ref_frame": task.ref_frame,
                    }
                )
            memory.push_frame(annotations[t])
    (out_dir / "sequence.jsonl").write_bytes(
        b"\n".join(canonical_json(l) for l in frame_lines) + b"\n"
    )
    (out_dir / "tasks.jsonl").write_bytes(
        b"\n".join(canonical_json(l) for l in task_lines) + (b"\n" if task_lines else b"")
    )
    return {"frames": frame_count, "tasks": len(task_lines), "out_dir": str(out_dir)}


def build_perturbable(config: RunConfig):
    if "mock" in config.model_spec:
        try:
            return make_perturbable_mock(config.model_spec["mock"])
        except ValueError as exc:
            raise ConfigError(f"bad mock spec: {exc}") from exc
    return PerturbableHttpClient(_endpoint_from_spec(config.model_spec["endpoint"]))


def annotate_with_uir(config: RunConfig, frames, tasks, model=None):
    """Refine pseudo-labels for generated tasks via perturbed ensembles.

    Returns (labels, retention): one label row per task carrying the
    consensus answer, the retained flag and the final uncertainty numbers,
    plus the retained fraction.
    """
    if config.uir is None:
        raise ConfigError("uir section missing from config")
    model = model or build_perturbable(config)
    labels = []
    retained = 0
    for index, task in enumerate(tasks):
        label = refine_loop(
            model,
            frames[task.frame],
            task.query,
            config.uir,
            seed=child_seed(config.master_seed, "uir", index),
        )
        retained += bool(label.retained)
        labels.append(
            {
                "type": "pseudo_label",
                "index": index,
                "frame": task.frame,
                "kind": task.kind,
                "query": task.query,
                "answer": label.answer,
                "retained": bool(label.retained),
                "rounds_used": int(label.rounds_used),
                "js": float(label.report.js),
                "var_hl": float(label.report.var_hl),
            }
        )
    retention = (retained / len(labels)) if labels else 0.0
    return labels, retention


def generate_tasks(config: RunConfig, annotations) -> list:
    """One generation pass over the timeline (used by uir-annotate)."""
    memory = MemoryBuffer(config.task_settings.memory_window)
    tasks = []
    for t in range(config.schedule.length):
        task = generate_query(
            memory,
            annotations[t],
            seed=child_seed(config.master_seed, "episode", 0, "frame", t, "task"),
            uncertainty_focus=config.uncertainty_focus,
            settings=config.task_settings,
        )
        if task is not None:
            tasks.append(task)
        memory.push_frame(annotations[t])
    return tasks
