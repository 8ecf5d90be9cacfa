"""Drives the tune/assess/augment iteration loop over a run directory.

A run directory owns everything one distillation run produces: the pinned
config, phase-granular checkpoints (pool snapshots plus the synthetic
student's skill table when simulating), training exports with loss-mask
sidecars, assessment records, augmentation summaries, and per-iteration
reports. Every phase ends with an atomic checkpoint, so interrupting the
process at any point and resuming reproduces the uninterrupted run exactly
under scripted backends.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shlex
import shutil
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import pools
from .assess import (
    AssessmentResult,
    AssessmentStatus,
    DifficultyClass,
    score_with_swap,
    skipped_result,
)
from .augment import AugmentationBatch, augment_iteration
from .backends.base import (
    BackendError,
    ChatBackend,
    ChatRequest,
    Message,
    RetryPolicy,
    Role,
    Speaker,
    complete_batch,
)
from .backends.scripted import SyntheticStudent, synthetic_student_update
from .backends.wire import WireBackend, WireConfig
from .config import ASSESS_DELTA_ONLY, RunConfig, load_config, save_config
from .pools import PoolState
from .records import (
    AnswerRecord,
    AnswerSource,
    ConversationSample,
    InstructionRecord,
    RecordError,
    content_id,
    read_answers,
    read_conversation_samples,
    read_records,
    to_single_turn,
    write_answers,
)
from .rendering import ImagePosition, RenderError, render_conversation
from .scenario import build_scripted_backends, build_world

log = logging.getLogger(__name__)

PHASE_TUNE = "tune"
PHASE_ASSESS = "assess"
PHASE_AUGMENT = "augment"
PHASES = (PHASE_TUNE, PHASE_ASSESS, PHASE_AUGMENT)

STATUS_FILE = "status.json"
STUDENT_FILE = "student.json"
LATEST_FILE = "LATEST"
LOCK_FILE = ".lock"


class OrchestratorError(RuntimeError):
    pass


class PhaseError(OrchestratorError):
    def __init__(self, phase: str, iteration: int, message: str):
        super().__init__(f"iteration {iteration}, phase {phase}: {message}")
        self.phase = phase
        self.iteration = iteration


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def latest(self) -> Path:
        return self.root / LATEST_FILE

    @property
    def exports(self) -> Path:
        return self.root / "exports"

    @property
    def assessments(self) -> Path:
        return self.root / "assessments"

    @property
    def augments(self) -> Path:
        return self.root / "augments"

    @property
    def answers(self) -> Path:
        return self.root / "answers"

    @property
    def reports(self) -> Path:
        return self.root / "reports"

    @property
    def lock(self) -> Path:
        return self.root / LOCK_FILE

    def export_file(self, iteration: int) -> Path:
        return self.exports / f"iter-{iteration:04d}.jsonl"

    def masks_file(self, iteration: int) -> Path:
        return self.exports / f"iter-{iteration:04d}.masks.jsonl"

    def assessment_file(self, iteration: int) -> Path:
        return self.assessments / f"iter-{iteration:04d}.jsonl"

    def augment_file(self, iteration: int) -> Path:
        return self.augments / f"iter-{iteration:04d}.json"

    def teacher_answers_file(self, iteration: int) -> Path:
        return self.answers / f"iter-{iteration:04d}.teacher.jsonl"

    def report_file(self, iteration: int) -> Path:
        return self.reports / f"iter-{iteration:04d}.json"

    def ensure_layout(self) -> None:
        for directory in (self.root, self.checkpoints, self.exports, self.assessments,
                          self.augments, self.answers, self.reports):
            directory.mkdir(parents=True, exist_ok=True)


@dataclass
class Cursor:
    """What to execute next, persisted inside every checkpoint."""

    next_phase: str
    next_iteration: int
    stopped: bool = False

    def to_dict(self) -> dict:
        return {
            "next_phase": self.next_phase,
            "next_iteration": self.next_iteration,
            "stopped": self.stopped,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cursor":
        return cls(
            next_phase=d["next_phase"],
            next_iteration=int(d["next_iteration"]),
            stopped=bool(d.get("stopped", False)),
        )


@dataclass
class IterationReport:
    iteration: int
    counts: dict = field(default_factory=dict)
    score_histograms: dict = field(default_factory=dict)
    difficult_fraction: float = 0.0
    pool_sizes: dict = field(default_factory=dict)
    wall_time_ms: int = 0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "counts": self.counts,
            "score_histograms": self.score_histograms,
            "difficult_fraction": self.difficult_fraction,
            "pool_sizes": self.pool_sizes,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationReport":
        return cls(
            iteration=int(d["iteration"]),
            counts=d.get("counts", {}),
            score_histograms=d.get("score_histograms", {}),
            difficult_fraction=float(d.get("difficult_fraction", 0.0)),
            pool_sizes=d.get("pool_sizes", {}),
            wall_time_ms=int(d.get("wall_time_ms", 0)),
        )


def _derived_seed(*parts: object) -> int:
    raw = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(raw.encode("utf-8")).digest()[:8], "big")


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# Backends and locking


def build_backends(config: RunConfig, student_skills: dict | None = None) -> dict[Role, ChatBackend]:
    """Instantiate the four role backends described by the config."""
    if config.backend_mode == "scripted":
        world = build_world(config.scenario or {})
        if student_skills is not None:
            world.restore_student(student_skills)
        return build_scripted_backends(world)
    backends: dict[Role, ChatBackend] = {}
    for role in Role:
        spec = config.endpoints[role.value]
        wire_config = WireConfig(
            endpoint=spec["endpoint"],
            model=spec.get("model", ""),
            api_key_env=spec.get("api_key_env", ""),
            timeout_s=float(spec.get("timeout_s", 60.0)),
            max_tokens=int(spec.get("max_tokens", 1024)),
        )
        retry = RetryPolicy(
            max_attempts=int(spec.get("max_attempts", 3)),
            backoff_base_ms=int(spec.get("backoff_base_ms", 250)),
        )
        backends[role] = WireBackend(wire_config, retry)
    return backends


class _RunLock:
    def __init__(self, paths: RunPaths):
        self.path = paths.lock
        self._fd: int | None = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OrchestratorError(
                f"run directory is locked by another process ({self.path}); "
                "remove the lock file if that process is gone"
            ) from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            self.path.unlink(missing_ok=True)
        return False


# ---------------------------------------------------------------------------
# Checkpointing


def _student_backend(backends: dict[Role, ChatBackend]) -> SyntheticStudent | None:
    student = backends.get(Role.STUDENT)
    return student if isinstance(student, SyntheticStudent) else None


def write_checkpoint(
    paths: RunPaths,
    state: PoolState,
    config: RunConfig,
    cursor: Cursor,
    backends: dict[Role, ChatBackend] | None = None,
    checkpoint_id: str | None = None,
) -> PoolState:
    """Write a complete checkpoint directory and flip LATEST to it.

    The directory is staged under a temporary name and renamed into place;
    the LATEST pointer is replaced atomically afterwards, so a crash leaves
    the previous checkpoint current.
    """
    cid = checkpoint_id or state.checkpoint_id
    state = dataclasses.replace(state, checkpoint_id=cid)
    final_dir = paths.checkpoints / cid
    staging = paths.checkpoints / (cid + ".staging")
    if staging.exists():
        shutil.rmtree(staging)
    pools.snapshot(state, staging, config_fingerprint=config.fingerprint())
    (staging / STATUS_FILE).write_text(_canonical(cursor.to_dict()), encoding="utf-8")
    student = _student_backend(backends or {})
    if student is not None:
        (staging / STUDENT_FILE).write_text(
            _canonical({"skills": student.world.snapshot_student()}), encoding="utf-8"
        )
    if final_dir.exists():
        shutil.rmtree(final_dir)
    os.rename(staging, final_dir)

    latest_tmp = paths.root / (LATEST_FILE + ".tmp")
    latest_tmp.write_text(cid + "\n", encoding="utf-8")
    os.replace(latest_tmp, paths.latest)
    return state


def load_latest(paths: RunPaths) -> tuple[PoolState, Cursor, dict | None, dict]:
    """Restore the checkpoint LATEST points at.

    Returns (pool state, cursor, synthetic student skills or None, meta).
    """
    if not paths.latest.exists():
        raise OrchestratorError(f"no run found in {paths.root} (missing {LATEST_FILE})")
    cid = paths.latest.read_text(encoding="utf-8").strip()
    ckpt_dir = paths.checkpoints / cid
    state = pools.restore(ckpt_dir)
    meta = pools.read_meta(ckpt_dir)
    status_path = ckpt_dir / STATUS_FILE
    if not status_path.exists():
        raise OrchestratorError(f"checkpoint {cid} has no {STATUS_FILE}")
    cursor = Cursor.from_dict(json.loads(status_path.read_text(encoding="utf-8")))
    skills = None
    student_path = ckpt_dir / STUDENT_FILE
    if student_path.exists():
        skills = json.loads(student_path.read_text(encoding="utf-8"))["skills"]
    return state, cursor, skills, meta


# ---------------------------------------------------------------------------
# Run initialization


def _load_seed_records(seed_path: str | Path) -> list[InstructionRecord]:
    """Seed file sniffing: conversation samples are expanded to single turns,
    instruction records are taken as-is."""
    seed_path = Path(seed_path)
    first_object = None
    with open(seed_path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                first_object = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{seed_path}: invalid JSON on line {lineno}: {exc.msg}") from exc
            break
    if first_object is None:
        raise RecordError(f"{seed_path}: seed dataset is empty")
    if "conversations" in first_object:
        return to_single_turn(read_conversation_samples(seed_path))
    return read_records(seed_path)


def init_run(
    seed_path: str | Path,
    config: RunConfig,
    run_dir: str | Path,
    force: bool = False,
) -> PoolState:
    """Create a run directory with pools initialized from the seed dataset."""
    paths = RunPaths(Path(run_dir))
    if paths.config.exists() or paths.latest.exists():
        if not force:
            raise OrchestratorError(
                f"{paths.root} already contains a run; pass force=True to overwrite"
            )
        seed = _load_seed_records(seed_path)  # read before wiping: it may live in run_dir
        for child in paths.root.iterdir():
            shutil.rmtree(child) if child.is_dir() else child.unlink()
    else:
        seed = _load_seed_records(seed_path)
    paths.ensure_layout()
    state = pools.init_pools(seed)
    save_config(config, paths.config)
    backends = build_backends(config) if config.backend_mode == "scripted" else None
    cursor = Cursor(next_phase=PHASE_TUNE, next_iteration=1)
    state = write_checkpoint(paths, state, config, cursor, backends, checkpoint_id="0000-init")
    log.info("initialized run at %s with %d seed instructions", paths.root, len(seed))
    return state


# ---------------------------------------------------------------------------
# Phases


def _answer_request(
    instruction: InstructionRecord, role: Role, config: RunConfig
) -> ChatRequest:
    messages = []
    if config.system_prompt:
        messages.append(Message(Speaker.SYSTEM, config.system_prompt))
    messages.append(Message(Speaker.USER, instruction.question))
    return ChatRequest(
        role=role,
        image=instruction.image,
        messages=tuple(messages),
        temperature=config.temperatures[role.value],
        max_output_chars=config.max_output_chars,
    )


def _fetch_answers(
    instructions: list[InstructionRecord],
    role: Role,
    backend: ChatBackend,
    config: RunConfig,
) -> dict[str, str | BackendError]:
    requests = [_answer_request(ins, role, config) for ins in instructions]
    responses = complete_batch(backend, requests, max_in_flight=config.max_in_flight)
    out: dict[str, str | BackendError] = {}
    for instruction, response in zip(instructions, responses):
        out[instruction.id] = response if isinstance(response, BackendError) else response.text
    return out


def group_into_conversations(
    instructions: list[InstructionRecord],
    answers: dict[str, str],
    iteration: int,
) -> list[ConversationSample]:
    """Fold answered single-turn instructions back into per-image dialogues.

    Turns are ordered by instruction id; sample ids derive from the image
    and iteration so re-exports are stable.
    """
    by_image: dict[str, list[InstructionRecord]] = {}
    for instruction in sorted(instructions, key=lambda r: r.id):
        if instruction.id in answers:
            by_image.setdefault(instruction.image.uri, []).append(instruction)
    samples = []
    for uri in sorted(by_image):
        group = by_image[uri]
        turns = tuple((ins.question, answers[ins.id]) for ins in group)
        samples.append(
            ConversationSample(
                id=content_id("export", uri, iteration),
                image=group[0].image,
                turns=turns,
            )
        )
    return samples


def export_dataset(
    samples: list[ConversationSample],
    config: RunConfig,
    export_path: Path,
    masks_path: Path,
) -> int:
    """Write the training export plus its loss-mask sidecar.

    Samples whose text would make the stop token ambiguous are dropped with
    a warning rather than poisoning the loss-mask contract.
    """
    exported = 0
    export_path.parent.mkdir(parents=True, exist_ok=True)
    with open(export_path, "w", encoding="utf-8") as data_f, \
            open(masks_path, "w", encoding="utf-8") as masks_f:
        for sample in sorted(samples, key=lambda s: s.id):
            try:
                rendered = render_conversation(
                    sample,
                    system_prompt=config.system_prompt,
                    stop_token=config.stop_token,
                    image_position_policy=ImagePosition(config.image_position_policy),
                    rng_seed=_derived_seed(config.rng_seed, sample.id),
                )
            except RenderError as exc:
                log.warning("dropping sample from export: %s", exc)
                continue
            data_f.write(_canonical(sample.to_dict()))
            masks_f.write(_canonical({
                "id": sample.id,
                "text": rendered.text,
                "loss_mask": [[s.start, s.end] for s in rendered.loss_mask],
            }))
            exported += 1
    return exported


def _run_trainer_hook(hook: str, export_path: Path, iteration: int) -> None:
    command = shlex.split(hook) + ["--data", str(export_path), "--iteration", str(iteration)]
    result = subprocess.run(command, capture_output=True, text=True)
    if result.returncode != 0:
        raise OrchestratorError(
            f"trainer hook exited with {result.returncode}: {result.stderr.strip()[-500:]}"
        )


def phase_tune(
    state: PoolState,
    config: RunConfig,
    backends: dict[Role, ChatBackend],
    paths: RunPaths,
    iteration: int,
) -> Path | None:
    """Teacher-answer the tuning pool and export the training dataset.

    Returns the export path, or None when the tuning pool is empty and the
    phase is skipped. Invokes the trainer hook when configured; under
    scripted backends the synthetic student trains on the export instead.
    """
    instructions = state.sorted_tuning()
    if not instructions:
        log.warning("iteration %d: tuning pool is empty, skipping tune phase", iteration)
        return None

    answers_raw = _fetch_answers(instructions, Role.TEACHER, backends[Role.TEACHER], config)
    failures = {iid: err for iid, err in answers_raw.items() if isinstance(err, BackendError)}
    if failures:
        fraction = len(failures) / len(instructions)
        if fraction > config.teacher_failure_tolerance:
            sample_error = next(iter(failures.values()))
            raise PhaseError(
                PHASE_TUNE, iteration,
                f"teacher failed on {len(failures)}/{len(instructions)} instructions "
                f"(tolerance {config.teacher_failure_tolerance:.0%}); first error: {sample_error}",
            )
        log.warning("iteration %d: dropping %d failed teacher answers", iteration, len(failures))
    answers = {iid: text for iid, text in answers_raw.items() if isinstance(text, str)}

    answer_records = [
        AnswerRecord(
            instruction_id=iid,
            source=AnswerSource.TEACHER,
            text=answers[iid],
            temperature=config.temperatures[Role.TEACHER.value],
        )
        for iid in sorted(answers)
    ]
    paths.answers.mkdir(parents=True, exist_ok=True)
    write_answers(answer_records, paths.teacher_answers_file(iteration))

    samples = group_into_conversations(instructions, answers, iteration)
    export_path = paths.export_file(iteration)
    exported = export_dataset(samples, config, export_path, paths.masks_file(iteration))
    log.info("iteration %d: exported %d samples to %s", iteration, exported, export_path)

    student = _student_backend(backends)
    if student is not None:
        synthetic_student_update(student, samples)
    if config.trainer_hook:
        _run_trainer_hook(config.trainer_hook, export_path, iteration)
    return export_path


def _assessment_population(state: PoolState, config: RunConfig) -> list[InstructionRecord]:
    population = state.sorted_cache()
    if config.assess_scope == ASSESS_DELTA_ONLY:
        population = [r for r in population if r.iteration == state.iteration]
    return population


def phase_assess(
    state: PoolState,
    config: RunConfig,
    backends: dict[Role, ChatBackend],
    paths: RunPaths,
    iteration: int,
) -> list[AssessmentResult]:
    """Answer and judge every in-scope instruction; persist the results.

    Per-instruction failures become skipped results; the phase only fails
    when nothing at all could be assessed.
    """
    population = _assessment_population(state, config)
    if not population:
        raise PhaseError(PHASE_ASSESS, iteration, "no instructions in scope")

    student_answers = _fetch_answers(population, Role.STUDENT, backends[Role.STUDENT], config)

    reused: dict[str, str] = {}
    if config.reuse_teacher_answers:
        answers_file = paths.teacher_answers_file(iteration)
        if answers_file.exists():
            tuning_ids = set(state.tuning)
            reused = {
                a.instruction_id: a.text
                for a in read_answers(answers_file)
                if a.instruction_id in tuning_ids
            }
    fresh_needed = [ins for ins in population if ins.id not in reused]
    teacher_answers: dict[str, str | BackendError] = dict(reused)
    teacher_answers.update(
        _fetch_answers(fresh_needed, Role.TEACHER, backends[Role.TEACHER], config)
    )

    results: list[AssessmentResult] = []
    for instruction in population:
        student_answer = student_answers[instruction.id]
        teacher_answer = teacher_answers[instruction.id]
        if isinstance(student_answer, BackendError) or isinstance(teacher_answer, BackendError):
            error = student_answer if isinstance(student_answer, BackendError) else teacher_answer
            results.append(skipped_result(
                instruction,
                student_answer if isinstance(student_answer, str) else "",
                teacher_answer if isinstance(teacher_answer, str) else "",
                error,
                result_iteration=iteration,
            ))
            continue
        try:
            results.append(score_with_swap(
                instruction,
                student_answer,
                teacher_answer,
                backends[Role.ASSESSOR],
                tau=config.tau,
                temperature=config.temperatures[Role.ASSESSOR.value],
                parse_attempts=config.parse_attempts,
                result_iteration=iteration,
            ))
        except BackendError as exc:
            results.append(skipped_result(
                instruction, student_answer, teacher_answer, exc, result_iteration=iteration
            ))

    if all(r.status is not AssessmentStatus.OK for r in results):
        raise PhaseError(PHASE_ASSESS, iteration, "every instruction was skipped")

    paths.assessments.mkdir(parents=True, exist_ok=True)
    with open(paths.assessment_file(iteration), "w", encoding="utf-8") as f:
        for result in results:
            f.write(_canonical(result.to_dict()))
    return results


def phase_augment(
    state: PoolState,
    results: list[AssessmentResult],
    config: RunConfig,
    backends: dict[Role, ChatBackend],
    paths: RunPaths,
    iteration: int,
) -> tuple[PoolState, AugmentationBatch]:
    """Generate replacement instructions and refresh the pools."""
    ok = [r for r in results if r.status is AssessmentStatus.OK]
    difficult = [
        state.cache[r.instruction_id]
        for r in ok
        if r.difficulty_class is DifficultyClass.DIFFICULT and r.instruction_id in state.cache
    ]
    easy = [
        state.cache[r.instruction_id]
        for r in ok
        if r.difficulty_class is DifficultyClass.EASY and r.instruction_id in state.cache
    ]
    batch = augment_iteration(
        difficult,
        easy,
        backends[Role.AUGMENTOR],
        rng_seed=_derived_seed(config.rng_seed, "augment", iteration),
        threshold=config.rouge_threshold,
        cache=state,
        temperature=config.temperatures[Role.AUGMENTOR.value],
        max_in_flight=config.max_in_flight,
    )
    if not batch.accepted:
        log.warning("iteration %d: augmentation accepted zero instructions", iteration)
    new_state = pools.refresh(state, batch.accepted)

    paths.augments.mkdir(parents=True, exist_ok=True)
    summary = {"iteration": iteration, **batch.to_dict()}
    paths.augment_file(iteration).write_text(_canonical(summary), encoding="utf-8")
    return new_state, batch


# ---------------------------------------------------------------------------
# Reports


def _histogram(values: list[float], bin_width: float, bins: int) -> dict:
    counts = [0] * bins
    for value in values:
        index = min(int(value / bin_width), bins - 1)
        counts[index] += 1
    return {"bin_width": bin_width, "counts": counts}


def build_report(
    iteration: int,
    results: list[AssessmentResult],
    batch: AugmentationBatch,
    state_after: PoolState,
    wall_time_ms: int,
) -> IterationReport:
    ok = [r for r in results if r.status is AssessmentStatus.OK]
    difficult = sum(1 for r in ok if r.difficulty_class is DifficultyClass.DIFFICULT)
    easy = sum(1 for r in ok if r.difficulty_class is DifficultyClass.EASY)
    skipped = len(results) - len(ok)
    classified = difficult + easy
    return IterationReport(
        iteration=iteration,
        counts={
            "assessed": len(results),
            "skipped": skipped,
            "difficult": difficult,
            "easy": easy,
            "generated": batch.generated,
            "accepted": len(batch.accepted),
            "rejected_by_reason": dict(batch.rejected_count_by_reason),
        },
        score_histograms={
            "r_s": _histogram([r.r_s for r in ok], 1.0, 10),
            "r_t": _histogram([r.r_t for r in ok], 1.0, 10),
            "s_k": _histogram([r.s_k for r in ok], 0.1, 12),
        },
        difficult_fraction=(difficult / classified) if classified else 0.0,
        pool_sizes={"tuning": len(state_after.tuning), "cache": len(state_after.cache)},
        wall_time_ms=wall_time_ms,
    )


def load_reports(run_dir: str | Path) -> list[IterationReport]:
    paths = RunPaths(Path(run_dir))
    if not paths.reports.exists():
        return []
    reports = []
    for path in sorted(paths.reports.glob("iter-*.json")):
        reports.append(IterationReport.from_dict(json.loads(path.read_text(encoding="utf-8"))))
    return reports


def report(run_dir: str | Path) -> dict:
    """Summarize a run: per-iteration rows plus CSV-formatted plot data.

    Purely reads the run directory; calling it twice changes nothing.
    """
    paths = RunPaths(Path(run_dir))
    if not paths.root.exists() or not paths.config.exists():
        raise OrchestratorError(f"{run_dir} is not a run directory")
    reports = load_reports(run_dir)
    header = [
        "iteration", "assessed", "skipped", "difficult", "easy", "generated",
        "accepted", "difficult_fraction", "tuning_size", "cache_size", "wall_time_ms",
    ]
    rows = []
    for r in reports:
        rows.append([
            r.iteration,
            r.counts.get("assessed", 0),
            r.counts.get("skipped", 0),
            r.counts.get("difficult", 0),
            r.counts.get("easy", 0),
            r.counts.get("generated", 0),
            r.counts.get("accepted", 0),
            f"{r.difficult_fraction:.6f}",
            r.pool_sizes.get("tuning", 0),
            r.pool_sizes.get("cache", 0),
            r.wall_time_ms,
        ])
    csv_text = "\n".join([",".join(header)] + [",".join(str(c) for c in row) for row in rows])
    if rows:
        csv_text += "\n"
    return {
        "run_dir": str(run_dir),
        "iterations": [r.to_dict() for r in reports],
        "csv": csv_text,
    }


# ---------------------------------------------------------------------------
# The loop driver


class _LoadedRun:
    """A run directory opened for execution."""

    def __init__(self, run_dir: str | Path, allow_config_change: bool = False):
        self.paths = RunPaths(Path(run_dir))
        if not self.paths.config.exists():
            raise OrchestratorError(f"{run_dir} is not a run directory (missing config.json)")
        self.config = load_config(self.paths.config)
        state, cursor, skills, meta = load_latest(self.paths)
        recorded = meta.get("config_fingerprint", "")
        if recorded and recorded != self.config.fingerprint():
            if not allow_config_change:
                raise OrchestratorError(
                    "config.json changed since the last checkpoint "
                    f"(fingerprint {self.config.fingerprint()} != {recorded}); "
                    "pass allow_config_change to proceed"
                )
            log.warning("resuming with a changed config (explicitly allowed)")
        self.state = state
        self.cursor = cursor
        self.backends = build_backends(self.config, student_skills=skills)
        self._pending_results: list[AssessmentResult] | None = None
        self._phase_times: dict[int, int] = {}

    def _load_results(self, iteration: int) -> list[AssessmentResult]:
        path = self.paths.assessment_file(iteration)
        if not path.exists():
            raise OrchestratorError(
                f"iteration {iteration}: assessment results not found at {path}"
            )
        results = []
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    results.append(AssessmentResult.from_dict(json.loads(line)))
        return results

    def step(self) -> str | None:
        """Execute the cursor's next phase; returns the phase name or None
        when the run is finished."""
        cursor = self.cursor
        if cursor.stopped or cursor.next_iteration > self.config.iterations:
            return None
        iteration = cursor.next_iteration
        phase = cursor.next_phase
        started = time.monotonic()

        if phase == PHASE_TUNE:
            phase_tune(self.state, self.config, self.backends, self.paths, iteration)
            next_cursor = Cursor(PHASE_ASSESS, iteration)
        elif phase == PHASE_ASSESS:
            self._pending_results = phase_assess(
                self.state, self.config, self.backends, self.paths, iteration
            )
            next_cursor = Cursor(PHASE_AUGMENT, iteration)
        elif phase == PHASE_AUGMENT:
            results = self._pending_results or self._load_results(iteration)
            self._pending_results = None
            new_state, batch = phase_augment(
                self.state, results, self.config, self.backends, self.paths, iteration
            )
            stopped = self.config.early_stop_on_empty and not batch.accepted
            next_cursor = Cursor(PHASE_TUNE, iteration + 1, stopped=stopped)
            elapsed = self._phase_times.pop(iteration, 0) + int(
                (time.monotonic() - started) * 1000
            )
            iteration_report = build_report(iteration, results, batch, new_state, elapsed)
            self.paths.reports.mkdir(parents=True, exist_ok=True)
            self.paths.report_file(iteration).write_text(
                json.dumps(iteration_report.to_dict(), sort_keys=True, ensure_ascii=False,
                           indent=2) + "\n",
                encoding="utf-8",
            )
            self.state = new_state
        else:
            raise OrchestratorError(f"unknown phase {phase!r} in checkpoint cursor")

        if phase != PHASE_AUGMENT:
            self._phase_times[iteration] = self._phase_times.get(iteration, 0) + int(
                (time.monotonic() - started) * 1000
            )
        self.state = write_checkpoint(
            self.paths,
            self.state,
            self.config,
            next_cursor,
            self.backends,
            checkpoint_id=f"{iteration:04d}-{phase}",
        )
        self.cursor = next_cursor
        return phase


def run(
    run_dir: str | Path,
    max_phases: int | None = None,
    allow_config_change: bool = False,
) -> list[IterationReport]:
    """Execute the loop from the latest checkpoint until done.

    ``max_phases`` bounds how many phase transitions to execute before
    returning (handy for stepwise drives); the run can be resumed later by
    calling run() again.
    """
    paths = RunPaths(Path(run_dir))
    with _RunLock(paths):
        loaded = _LoadedRun(run_dir, allow_config_change=allow_config_change)
        executed = 0
        while max_phases is None or executed < max_phases:
            phase = loaded.step()
            if phase is None:
                break
            executed += 1
    return load_reports(run_dir)


def iterate(run_dir: str | Path, phase: str, allow_config_change: bool = False) -> str:
    """Execute exactly one named phase; it must be the next one due."""
    if phase not in PHASES:
        raise OrchestratorError(f"unknown phase {phase!r}; expected one of {', '.join(PHASES)}")
    paths = RunPaths(Path(run_dir))
    with _RunLock(paths):
        loaded = _LoadedRun(run_dir, allow_config_change=allow_config_change)
        if loaded.cursor.stopped:
            raise OrchestratorError("run has stopped early (zero accepted instructions)")
        if loaded.cursor.next_iteration > loaded.config.iterations:
            raise OrchestratorError("run is complete; raise config.iterations to continue")
        due = loaded.cursor.next_phase
        if phase != due:
            raise OrchestratorError(
                f"phase {phase!r} is not due; the next phase is {due!r} "
                f"(iteration {loaded.cursor.next_iteration})"
            )
        executed = loaded.step()
        assert executed == phase
    return phase


def export_current_pool(run_dir: str | Path, out_path: str | Path | None = None) -> Path:
    """Produce a training export for the current tuning pool.

    Unlike the tune phase, this neither trains the student nor invokes the
    trainer hook; it only fetches teacher answers and writes the dataset
    plus its loss-mask sidecar.
    """
    paths = RunPaths(Path(run_dir))
    with _RunLock(paths):
        loaded = _LoadedRun(run_dir)
        state, config = loaded.state, loaded.config
        instructions = state.sorted_tuning()
        if not instructions:
            raise OrchestratorError("tuning pool is empty; nothing to export")
        iteration = state.iteration + 1
        answers_raw = _fetch_answers(
            instructions, Role.TEACHER, loaded.backends[Role.TEACHER], config
        )
        failures = [e for e in answers_raw.values() if isinstance(e, BackendError)]
        if failures:
            raise OrchestratorError(f"teacher failed on {len(failures)} instructions: {failures[0]}")
        answers = {iid: text for iid, text in answers_raw.items() if isinstance(text, str)}
        samples = group_into_conversations(instructions, answers, iteration)
        export_path = Path(out_path) if out_path else paths.exports / f"manual-{iteration:04d}.jsonl"
        masks_path = export_path.with_name(export_path.stem + ".masks.jsonl")
        export_dataset(samples, config, export_path, masks_path)
        return export_path
