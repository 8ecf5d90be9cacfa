import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codistill.pools import (
    PoolError,
    SnapshotError,
    init_pools,
    refresh,
    restore,
    snapshot,
)

from conftest import make_instruction


def seed_records(n, prefix="seed"):
    return [make_instruction(f"{prefix}-{i:03d}") for i in range(n)]


def new_records(n, iteration, prefix="new"):
    return [
        make_instruction(
            f"{prefix}-{iteration}-{i:03d}",
            origin="augmented",
            parent_id="seed-000",
            iteration=iteration,
        )
        for i in range(n)
    ]


class TestInitAndRefresh:
    def test_init_both_pools_equal_seed(self):
        state = init_pools(seed_records(10))
        assert len(state.tuning) == len(state.cache) == 10
        assert state.tuning == state.cache
        assert state.iteration == 0

    def test_init_rejects_empty_seed(self):
        with pytest.raises(PoolError):
            init_pools([])

    def test_init_rejects_duplicate_ids(self):
        records = seed_records(3) + [make_instruction("seed-000")]
        with pytest.raises(PoolError, match="duplicate"):
            init_pools(records)

    def test_refresh_counts_by_hand(self):
        state = init_pools(seed_records(10))
        state = refresh(state, new_records(4, 1))
        assert len(state.cache) == 14
        assert len(state.tuning) == 4
        assert state.iteration == 1

    def test_refresh_with_nothing(self):
        state = init_pools(seed_records(5))
        state = refresh(state, [])
        assert len(state.tuning) == 0
        assert len(state.cache) == 5
        assert state.iteration == 1

    def test_refresh_rejects_cache_collision_naming_id(self):
        state = init_pools(seed_records(3))
        colliding = [make_instruction("seed-001")]
        with pytest.raises(PoolError, match="seed-001"):
            refresh(state, colliding)

    @given(st.lists(st.integers(min_value=0, max_value=6), max_size=6))
    @settings(max_examples=60)
    def test_refresh_sequence_properties(self, batch_sizes):
        seed = seed_records(4)
        state = init_pools(seed)
        total = len(seed)
        previous_cache_ids = set(state.cache)
        for iteration, size in enumerate(batch_sizes, start=1):
            batch = new_records(size, iteration)
            state = refresh(state, batch)
            total += size
            # cache monotonicity and size arithmetic
            assert set(state.cache) >= previous_cache_ids
            assert len(state.cache) == total
            # tuning pool is exactly the last batch
            assert set(state.tuning) == {r.id for r in batch}
            previous_cache_ids = set(state.cache)


class TestSnapshots:
    def test_round_trip(self, tmp_path):
        state = refresh(init_pools(seed_records(6)), new_records(2, 1))
        snapshot(state, tmp_path / "ckpt")
        restored = restore(tmp_path / "ckpt")
        assert restored == state

    def test_canonical_bytes(self, tmp_path):
        records = seed_records(5)
        state_a = init_pools(records)
        state_b = init_pools(list(reversed(records)))
        snapshot(state_a, tmp_path / "a", config_fingerprint="f")
        snapshot(state_b, tmp_path / "b", config_fingerprint="f")
        for name in ("tuning.jsonl", "cache.jsonl", "meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_restore_from_empty_dir(self, tmp_path):
        with pytest.raises(SnapshotError, match="no checkpoint"):
            restore(tmp_path)

    def test_corrupt_snapshot_detected(self, tmp_path):
        state = init_pools(seed_records(4))
        snapshot(state, tmp_path / "ckpt")
        (tmp_path / "ckpt" / "tuning.jsonl").write_text("", encoding="utf-8")
        with pytest.raises(SnapshotError, match="digest mismatch"):
            restore(tmp_path / "ckpt")

    def test_partial_snapshot_leaves_prior_restorable(self, tmp_path):
        state = init_pools(seed_records(4))
        snapshot(state, tmp_path / "ckpt")
        # a snapshot interrupted before meta lands leaves stale .tmp files only
        (tmp_path / "ckpt" / "tuning.jsonl.tmp").write_text("garbage", encoding="utf-8")
        assert restore(tmp_path / "ckpt") == state
