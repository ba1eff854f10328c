"""Round orchestration: the alternating mining / background / retraining loop.

One run:

  1. bank <- human seeds; teacher pre-trains on the sparse labels alone and
     the student starts as its copy; the density curriculum anchors at the
     median round-zero detection density.
  2. for round t = 1..T:
       a. t >= 2: teacher mines confident instances on every scene
          (raw + augmented pass, pooled per-class thresholds) -> bank grows
       b. every scene is broken: suspected foreground deleted at a low
          score threshold without suppression, banked instances refilled
       c. inner loop: sample-from-bank scene generation -> student step ->
          teacher moves by exponential moving average
       d. the student is evaluated and the round is logged
  3. logs serialize to JSON lines; identical config + seed reproduces them
     byte for byte.

The streaming variant bootstraps on an initial sparse pool, then consumes the
remaining scenes in fixed-size batches, carrying a capped memory of generated
fully-annotated scenes between batches.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .background import BrokenScene, MARGIN_DEFAULT, mine_background
from .bank import InstanceBank, bank_init, bank_insert
from .detector import (
    DetectorParams,
    InferOptions,
    LatentIndex,
    OracleDetector,
    build_latent_index,
    ema_update,
    train_student,
)
from .errors import ConfigInvalid, DatasetEmpty
from .evaluate import (
    EvalReport,
    evaluate_detector,
    mean_ap,
    mining_quality,
)
from .mining import (
    CurriculumState,
    build_candidates,
    density_lambda,
    init_density,
    pooled_thresholds,
    select_and_mine,
)
from .scene import CLASS_NAMES, ClassId, Scene
from .scenegen import DEFAULT_PLACEMENT_TARGETS, generate_confident_scene
from .sceneio import load_dataset
from .seeding import derive_rng
from .synthetic import SynthConfig, sparsify, synthesize_dataset


@dataclass(frozen=True)
class StreamingConfig:
    memory_cap: int = 100
    batch: int = 100
    stream_pool: int = 400

    def validate(self) -> None:
        if self.memory_cap < 0 or self.batch <= 0 or self.stream_pool < 0:
            raise ConfigInvalid("streaming sizes must be non-negative (batch positive)")
        if self.memory_cap < self.batch:
            raise ConfigInvalid("memory_cap must be >= batch")


@dataclass
class RunConfig:
    seed: int = 7
    total_rounds: int = 5
    inner_steps: int = 4
    tau_low: float = 0.01
    # desk-scale teacher averaging: the classic 0.999 momentum assumes
    # thousands of updates, while a run here performs total_rounds *
    # inner_steps of them, so the default is far smaller
    alpha: float = 0.6
    gamma: float = 0.5
    t_down: int | None = None  # defaults to ceil(0.8 * total_rounds)
    histogram_bins: int = 20
    dedup_iou: float = 0.3
    mining_score_threshold: float = 0.1
    background_margin: float = MARGIN_DEFAULT
    d_min: dict[ClassId, float] = field(default_factory=lambda: {c: 5.0 for c in ClassId})
    d0_fallback: float = 60.0
    placement_targets: dict[ClassId, int] = field(
        default_factory=lambda: dict(DEFAULT_PLACEMENT_TARGETS)
    )
    mining_enabled: bool = True
    source: str = "synthetic"  # synthetic | native
    dataset_path: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    sparsify_strategy: str = "random"
    sparsify_keep: int = 1
    unlabeled_scenes: int = 0
    eval_scene_count: int = 60
    eval_positions: int = 40
    streaming: StreamingConfig | None = None

    def effective_t_down(self) -> int:
        if self.t_down is not None:
            return self.t_down
        return max(1, math.ceil(0.8 * self.total_rounds))

    def validate(self) -> None:
        if self.total_rounds < 1 or self.inner_steps < 1:
            raise ConfigInvalid("total_rounds and inner_steps must be >= 1")
        if not (0.0 < self.tau_low < 1.0):
            raise ConfigInvalid("tau_low must lie in (0, 1)")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigInvalid("alpha must lie in [0, 1]")
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigInvalid("gamma must lie in [0, 1]")
        if self.t_down is not None and self.t_down < 1:
            raise ConfigInvalid("t_down must be >= 1 when given")
        if self.histogram_bins < 2:
            raise ConfigInvalid("histogram_bins must be >= 2")
        if self.source not in ("synthetic", "native"):
            raise ConfigInvalid(f"unknown dataset source {self.source!r}")
        if self.source == "native" and not self.dataset_path:
            raise ConfigInvalid("native source requires dataset_path")
        if self.eval_positions not in (11, 40):
            raise ConfigInvalid("eval_positions must be 11 or 40")
        if self.streaming is not None:
            self.streaming.validate()
        self.synth.validate()

    # --- JSON round trip -----------------------------------------------------

    def to_json_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "total_rounds": self.total_rounds,
            "inner_steps": self.inner_steps,
            "tau_low": self.tau_low,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "t_down": self.t_down,
            "histogram_bins": self.histogram_bins,
            "dedup_iou": self.dedup_iou,
            "mining_score_threshold": self.mining_score_threshold,
            "background_margin": self.background_margin,
            "d_min": {CLASS_NAMES[c]: v for c, v in sorted(self.d_min.items())},
            "d0_fallback": self.d0_fallback,
            "placement_targets": {
                CLASS_NAMES[c]: v for c, v in sorted(self.placement_targets.items())
            },
            "mining_enabled": self.mining_enabled,
            "source": self.source,
            "dataset_path": self.dataset_path,
            "synth": self.synth.__dict__ | {"class_mix": list(self.synth.class_mix)},
            "sparsify_strategy": self.sparsify_strategy,
            "sparsify_keep": self.sparsify_keep,
            "unlabeled_scenes": self.unlabeled_scenes,
            "eval_scene_count": self.eval_scene_count,
            "eval_positions": self.eval_positions,
            "streaming": None
            if self.streaming is None
            else {
                "memory_cap": self.streaming.memory_cap,
                "batch": self.streaming.batch,
                "stream_pool": self.streaming.stream_pool,
            },
        }
        return d

    @classmethod
    def from_json_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigInvalid("run config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(data)
        name_to_class = {name: cid for cid, name in CLASS_NAMES.items()}
        try:
            if "d_min" in kwargs and isinstance(kwargs["d_min"], dict):
                kwargs["d_min"] = {name_to_class[k]: float(v) for k, v in kwargs["d_min"].items()}
            if "placement_targets" in kwargs and isinstance(kwargs["placement_targets"], dict):
                kwargs["placement_targets"] = {
                    name_to_class[k]: int(v) for k, v in kwargs["placement_targets"].items()
                }
            if "synth" in kwargs and isinstance(kwargs["synth"], dict):
                synth = dict(kwargs["synth"])
                if "class_mix" in synth:
                    synth["class_mix"] = tuple(synth["class_mix"])
                kwargs["synth"] = SynthConfig(**synth)
            if "streaming" in kwargs and isinstance(kwargs["streaming"], dict):
                kwargs["streaming"] = StreamingConfig(**kwargs["streaming"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigInvalid(f"bad config value: {exc}") from exc
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigInvalid(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
        return cls.from_json_dict(data)


@dataclass
class RoundLog:
    round_index: int
    mined_count: int
    bank_total: int
    bank_by_class: dict[ClassId, int]
    thresholds: dict[ClassId, dict[str, float | None]]
    student_competence: dict[ClassId, float]
    report: EvalReport
    # scenes carried between streaming batches; 0 for offline rounds
    memory_size: int = 0

    def to_json_dict(self) -> dict:
        return {
            "round": self.round_index,
            "mined_count": self.mined_count,
            "bank_total": self.bank_total,
            "memory_size": self.memory_size,
            "bank_by_class": {CLASS_NAMES[c]: n for c, n in sorted(self.bank_by_class.items())},
            "thresholds": {
                CLASS_NAMES[c]: self.thresholds[c] for c in sorted(self.thresholds)
            },
            "student_competence": {
                CLASS_NAMES[c]: v for c, v in sorted(self.student_competence.items())
            },
            "report": self.report.to_json_dict(),
        }


def logs_to_jsonl(logs: list[RoundLog]) -> str:
    return "".join(json.dumps(log.to_json_dict()) + "\n" for log in logs)


def _map_scenes(fn, scenes, workers: int):
    if workers <= 1:
        return [fn(s) for s in scenes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, scenes))


@dataclass
class _LoopState:
    teacher: DetectorParams
    student: DetectorParams
    bank: InstanceBank
    curriculum: CurriculumState
    index: LatentIndex
    generated: list[Scene] = field(default_factory=list)


def _prepare_synthetic(cfg: RunConfig) -> tuple[list[Scene], list[Scene], list[Scene]]:
    full = synthesize_dataset(cfg.synth, cfg.seed)
    labeled = sparsify(
        full, strategy=cfg.sparsify_strategy, keep_n=cfg.sparsify_keep, seed=cfg.seed
    )
    unlabeled: list[Scene] = []
    if cfg.unlabeled_scenes > 0:
        pool_cfg = SynthConfig(**(cfg.synth.__dict__ | {"n_scenes": cfg.unlabeled_scenes}))
        unlabeled = [
            s.with_annotations([])
            for s in synthesize_dataset(pool_cfg, cfg.seed + 1, id_prefix="pool")
        ]
    eval_cfg = SynthConfig(**(cfg.synth.__dict__ | {"n_scenes": cfg.eval_scene_count}))
    eval_scenes = [
        s.with_annotations([])
        for s in synthesize_dataset(eval_cfg, cfg.seed + 2, id_prefix="eval")
    ]
    return labeled, unlabeled, eval_scenes


def _load_dataset(cfg: RunConfig) -> tuple[list[Scene], list[Scene], list[Scene]]:
    if cfg.source == "synthetic":
        return _prepare_synthetic(cfg)
    scenes = load_dataset(cfg.dataset_path)
    if not scenes:
        raise DatasetEmpty(f"no scenes found under {cfg.dataset_path}")
    return scenes, [], list(scenes)


def _pretrain(cfg: RunConfig, scenes: list[Scene], index: LatentIndex) -> DetectorParams:
    params = DetectorParams()
    for _ in range(cfg.inner_steps):
        params, _ = train_student(params, scenes, cfg.gamma, index)
    return params


def _mine_one_round(
    cfg: RunConfig,
    state: _LoopState,
    scenes: list[Scene],
    round_index: int,
    workers: int,
) -> tuple[int, dict[ClassId, dict[str, float | None]]]:
    teacher = OracleDetector(state.teacher)
    opts = InferOptions(score_threshold=cfg.mining_score_threshold, nms=True)
    seed = _stage_seed(cfg.seed, "mine", round_index)

    def candidates_for(scene: Scene):
        return build_candidates(teacher, scene, seed, opts)

    per_scene = _map_scenes(candidates_for, scenes, workers)
    pooled = [c for group in per_scene for c in group]
    thresholds = pooled_thresholds(pooled, bins=cfg.histogram_bins)

    logged: dict[ClassId, dict[str, float | None]] = {}
    for cls in ClassId:
        lam_uv = thresholds.get(cls)
        logged[cls] = {
            "lambda_u": None if lam_uv is None else lam_uv[0],
            "lambda_v": None if lam_uv is None else lam_uv[1],
            "lambda_k": density_lambda(state.curriculum, cls),
        }

    mined_total = 0
    for scene, candidates in zip(scenes, per_scene):
        bank_boxes = [e.box for e in state.bank.entries_for(scene.id)]
        mined = select_and_mine(
            scene,
            candidates,
            thresholds,
            state.curriculum,
            bank_boxes,
            round_index,
            dedup_iou=cfg.dedup_iou,
        )
        mined_total += bank_insert(state.bank, scene.id, mined, scene.points, cfg.dedup_iou)
    return mined_total, logged


def _stage_seed(seed: int, stage: str, round_index: int) -> int:
    base = {"mine": 1, "background": 2, "generate": 3, "evaluate": 4}[stage]
    return seed * 1_000_003 + base * 10_007 + round_index


def _inner_cycle(
    cfg: RunConfig,
    state: _LoopState,
    scenes: list[Scene],
    round_index: int,
    workers: int,
) -> None:
    teacher = OracleDetector(state.teacher)
    bg_seed = _stage_seed(cfg.seed, "background", round_index)

    def break_one(scene: Scene) -> BrokenScene:
        return mine_background(
            teacher,
            scene,
            state.bank.entries_for(scene.id),
            bg_seed,
            tau_low=cfg.tau_low,
            margin=cfg.background_margin,
        )

    broken = _map_scenes(break_one, scenes, workers)

    for step in range(cfg.inner_steps):
        generated = [
            generate_confident_scene(
                b,
                state.bank,
                cfg.placement_targets,
                derive_rng(cfg.seed, "generate", round_index, step, b.scene.id),
            )
            for b in broken
        ]
        state.student, _ = train_student(state.student, generated, cfg.gamma, state.index)
        state.teacher = ema_update(state.teacher, state.student, cfg.alpha)
        state.generated = generated


def _evaluate_round(
    cfg: RunConfig,
    state: _LoopState,
    train_scenes: list[Scene],
    eval_scenes: list[Scene],
    round_index: int,
) -> EvalReport:
    student = OracleDetector(state.student)
    ap = evaluate_detector(
        student,
        eval_scenes,
        _stage_seed(cfg.seed, "evaluate", round_index),
        positions=cfg.eval_positions,
    )
    quality = mining_quality(state.bank, train_scenes)
    return EvalReport(
        round_index=round_index,
        ap=ap,
        mining_precision=quality.precision,
        mining_coverage=quality.coverage,
        aggregate_precision=quality.aggregate_precision,
        aggregate_coverage=quality.aggregate_coverage,
        mean_ap=mean_ap(ap),
    )


def _round_log(
    state: _LoopState,
    round_index: int,
    mined: int,
    thresholds,
    report,
    memory_size: int = 0,
) -> RoundLog:
    return RoundLog(
        round_index=round_index,
        mined_count=mined,
        bank_total=state.bank.total(),
        bank_by_class=state.bank.size_by_class(),
        thresholds=thresholds,
        student_competence={c: state.student.competence[c] for c in state.student.classes()},
        report=report,
        memory_size=memory_size,
    )


def _empty_thresholds(state: _LoopState) -> dict[ClassId, dict[str, float | None]]:
    return {
        cls: {
            "lambda_u": None,
            "lambda_v": None,
            "lambda_k": density_lambda(state.curriculum, cls),
        }
        for cls in ClassId
    }


def run(
    cfg: RunConfig,
    workers: int = 1,
    log_path: str | Path | None = None,
) -> list[RoundLog]:
    """Execute the full loop; returns one log per round."""
    cfg.validate()
    labeled, unlabeled, eval_scenes = _load_dataset(cfg)
    logs, _ = _run_rounds(cfg, labeled, unlabeled, eval_scenes, workers)
    if log_path is not None:
        Path(log_path).write_text(logs_to_jsonl(logs))
    return logs


def _run_rounds(
    cfg: RunConfig,
    labeled: list[Scene],
    unlabeled: list[Scene],
    eval_scenes: list[Scene],
    workers: int,
) -> tuple[list[RoundLog], _LoopState]:
    train_scenes = labeled + unlabeled
    if not train_scenes:
        raise DatasetEmpty("no training scenes")
    index = build_latent_index(train_scenes + eval_scenes)
    bank = bank_init(train_scenes)
    teacher = _pretrain(cfg, labeled, index)
    state = _LoopState(
        teacher=teacher,
        student=teacher,
        bank=bank,
        curriculum=init_density(
            OracleDetector(teacher),
            train_scenes,
            _stage_seed(cfg.seed, "mine", 0),
            cfg.d_min,
            cfg.effective_t_down(),
            cfg.d0_fallback,
        ),
        index=index,
    )

    logs: list[RoundLog] = []
    for t in range(1, cfg.total_rounds + 1):
        state.curriculum.t = t
        mined = 0
        thresholds = _empty_thresholds(state)
        if t >= 2 and cfg.mining_enabled:
            mined, thresholds = _mine_one_round(cfg, state, train_scenes, t, workers)
        _inner_cycle(cfg, state, train_scenes, t, workers)
        report = _evaluate_round(cfg, state, train_scenes, eval_scenes, t)
        logs.append(_round_log(state, t, mined, thresholds, report))
    return logs, state


def run_streaming(
    cfg: RunConfig,
    workers: int = 1,
    log_path: str | Path | None = None,
) -> list[RoundLog]:
    """Bootstrap offline, then consume the unlabeled pool in batches.

    Memory holds at most `memory_cap` generated fully-annotated scenes; bank
    entries follow the working set, so evicting a scene also evicts its
    instances.  Each batch advances the curriculum round counter and appends
    one evaluation checkpoint.
    """
    cfg.validate()
    if cfg.streaming is None:
        raise ConfigInvalid("run_streaming requires a streaming section")
    stream = cfg.streaming

    labeled, unlabeled, eval_scenes = _load_dataset(cfg)
    if len(unlabeled) < stream.stream_pool:
        pool_cfg = SynthConfig(**(cfg.synth.__dict__ | {"n_scenes": stream.stream_pool}))
        unlabeled = [
            s.with_annotations([])
            for s in synthesize_dataset(pool_cfg, cfg.seed + 1, id_prefix="pool")
        ]
    stream_scenes = unlabeled[: stream.stream_pool]

    logs, state = _run_rounds(cfg, labeled, [], eval_scenes, workers)
    full_index = build_latent_index(labeled + stream_scenes + eval_scenes)
    state.index = full_index

    memory = _select_memory(state.generated, stream.memory_cap, cfg.seed, 0)
    round_index = cfg.total_rounds
    batch_count = -(-len(stream_scenes) // stream.batch) if stream_scenes else 0

    for b in range(batch_count):
        round_index += 1
        batch = stream_scenes[b * stream.batch : (b + 1) * stream.batch]
        working = batch + memory

        working_ids = {s.id for s in working}
        for sid in list(state.bank.entries):
            if sid not in working_ids:
                state.bank.drop_scene(sid)
        for scene in working:
            state.bank.track_scene(scene.id)

        state.curriculum.t = round_index
        mined, thresholds = _mine_one_round(cfg, state, working, round_index, workers)
        _inner_cycle(cfg, state, working, round_index, workers)
        report = _evaluate_round(cfg, state, working, eval_scenes, round_index)
        memory = _select_memory(state.generated, stream.memory_cap, cfg.seed, b + 1)
        logs.append(
            _round_log(state, round_index, mined, thresholds, report, memory_size=len(memory))
        )

    if log_path is not None:
        Path(log_path).write_text(logs_to_jsonl(logs))
    return logs


def _select_memory(generated: list[Scene], cap: int, seed: int, batch: int) -> list[Scene]:
    if cap <= 0 or not generated:
        return []
    if len(generated) <= cap:
        return list(generated)
    rng = derive_rng(seed, "stream-memory", batch)
    idx = rng.choice(len(generated), size=cap, replace=False)
    return [generated[int(i)] for i in sorted(idx)]
