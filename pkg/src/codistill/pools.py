"""Instruction pools: the replaced-per-iteration tuning pool and the
monotonically growing cache pool, with atomic snapshots.

The tuning pool always holds exactly the most recent batch of instructions
(the next training set). The cache pool is the union of everything ever
installed and is the population the assessment phase scores.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

from .records import InstructionRecord, RecordError, read_records, write_records

TUNING_FILE = "tuning.jsonl"
CACHE_FILE = "cache.jsonl"
META_FILE = "meta.json"


class PoolError(ValueError):
    pass


class SnapshotError(RuntimeError):
    pass


@dataclass(frozen=True)
class PoolState:
    """Both pools plus the iteration counter and checkpoint identity."""

    tuning: Mapping[str, InstructionRecord]
    cache: Mapping[str, InstructionRecord]
    iteration: int = 0
    checkpoint_id: str = "0000-init"

    def sorted_tuning(self) -> list[InstructionRecord]:
        return [self.tuning[k] for k in sorted(self.tuning)]

    def sorted_cache(self) -> list[InstructionRecord]:
        return [self.cache[k] for k in sorted(self.cache)]


def _keyed(records: Sequence[InstructionRecord], what: str) -> dict[str, InstructionRecord]:
    pool: dict[str, InstructionRecord] = {}
    for record in records:
        if record.id in pool:
            raise PoolError(f"duplicate id {record.id!r} in {what}")
        pool[record.id] = record
    return pool


def init_pools(seed: Sequence[InstructionRecord]) -> PoolState:
    """Initialize both pools from the seed instructions.

    At iteration 0 the tuning and cache pools are identical.
    """
    if not seed:
        raise PoolError("seed instruction set must be non-empty")
    keyed = _keyed(seed, "seed")
    return PoolState(tuning=dict(keyed), cache=dict(keyed), iteration=0)


def refresh(state: PoolState, new_instructions: Sequence[InstructionRecord]) -> PoolState:
    """Install a new instruction batch: replace tuning, merge into cache.

    New ids must not collide with anything already cached; a collision means
    the same content was generated twice and is reported rather than
    silently deduplicated.
    """
    new_keyed = _keyed(new_instructions, "new instructions")
    for rid in new_keyed:
        if rid in state.cache:
            raise PoolError(f"id {rid!r} collides with an instruction already in the cache pool")
    cache = dict(state.cache)
    cache.update(new_keyed)
    return replace(
        state,
        tuning=new_keyed,
        cache=cache,
        iteration=state.iteration + 1,
    )


def _canonical_meta(state: PoolState, config_fingerprint: str, digests: dict) -> str:
    meta = {
        "iteration": state.iteration,
        "checkpoint_id": state.checkpoint_id,
        "config_fingerprint": config_fingerprint,
        "digests": digests,
    }
    return json.dumps(meta, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def snapshot(state: PoolState, directory: str | Path, config_fingerprint: str = "") -> None:
    """Write a canonical snapshot of the pool state into ``directory``.

    Records are sorted by id, files are written to temporary names and
    renamed into place, and the metadata file (which carries digests of the
    record files) lands last. A crash mid-snapshot therefore leaves either
    the prior snapshot or a digest mismatch that restore() will refuse.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    targets = {
        TUNING_FILE: state.sorted_tuning(),
        CACHE_FILE: state.sorted_cache(),
    }
    digests = {}
    staged: list[tuple[Path, Path]] = []
    for name, records in targets.items():
        tmp = directory / (name + ".tmp")
        write_records(records, tmp)
        digests[name] = _file_digest(tmp)
        staged.append((tmp, directory / name))

    meta_tmp = directory / (META_FILE + ".tmp")
    meta_tmp.write_text(_canonical_meta(state, config_fingerprint, digests), encoding="utf-8")

    for tmp, final in staged:
        os.replace(tmp, final)
    os.replace(meta_tmp, directory / META_FILE)


def read_meta(directory: str | Path) -> dict:
    meta_path = Path(directory) / META_FILE
    if not meta_path.exists():
        raise SnapshotError(f"no checkpoint in {directory} (missing {META_FILE})")
    try:
        return json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"corrupt checkpoint metadata in {directory}: {exc}") from exc


def restore(directory: str | Path) -> PoolState:
    """Load a snapshot, verifying file digests before trusting it."""
    directory = Path(directory)
    meta = read_meta(directory)
    digests = meta.get("digests", {})
    for name in (TUNING_FILE, CACHE_FILE):
        path = directory / name
        if not path.exists():
            raise SnapshotError(f"corrupt snapshot in {directory}: missing {name}")
        if _file_digest(path) != digests.get(name):
            raise SnapshotError(f"corrupt snapshot in {directory}: digest mismatch for {name}")
    try:
        tuning = read_records(directory / TUNING_FILE)
        cache = read_records(directory / CACHE_FILE)
    except RecordError as exc:
        raise SnapshotError(f"corrupt snapshot in {directory}: {exc}") from exc
    return PoolState(
        tuning=_keyed(tuning, TUNING_FILE),
        cache=_keyed(cache, CACHE_FILE),
        iteration=int(meta["iteration"]),
        checkpoint_id=str(meta["checkpoint_id"]),
    )
