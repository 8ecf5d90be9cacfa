import random

import pytest

from codistill.corpusfilter import (
    CaptionPair,
    build_index,
    extract_noun_phrases,
    filter_pairs,
    phrases_of,
    read_manifest,
    write_manifest,
)
from codistill.records import ImageRef, RecordError


def pair(pid: str, caption: str, phrases=None) -> CaptionPair:
    return CaptionPair(
        pair_id=pid, image=ImageRef(uri=f"img://{pid}"), caption=caption, phrases=phrases
    )


class TestExtractNounPhrases:
    def test_documented_example(self):
        assert extract_noun_phrases("a red car on the road") == ["red car", "road"]

    def test_empty_caption(self):
        assert extract_noun_phrases("") == []

    def test_long_runs_keep_last_three_tokens(self):
        # "big bright shiny red car" is one run; the head-side tail survives
        assert extract_noun_phrases("the big bright shiny red car") == ["shiny red car"]

    def test_punctuation_and_case_normalized(self):
        assert extract_noun_phrases("A Red Car, on The ROAD!") == ["red car", "road"]

    def test_duplicate_phrase_counts_once_per_pair(self):
        p = pair("p1", "a dog and a dog")
        assert extract_noun_phrases(p.caption) == ["dog", "dog"]
        assert phrases_of(p) == {"dog"}

    def test_precomputed_phrases_override_extractor(self):
        p = pair("p1", "whatever text", phrases=("Golden Retriever", "park"))
        assert phrases_of(p) == {"golden retriever", "park"}


class TestBuildIndex:
    def test_three_pairs_with_dog(self):
        pairs = [pair(f"p{i}", f"a dog in scenario {i}") for i in range(3)]
        index = build_index(pairs)
        assert index.freq["dog"] == 3

    def test_empty_corpus(self):
        index = build_index([])
        assert index.postings == {}

    def test_fixture_matches_hand_built_table(self):
        pairs = [
            pair("p0", "a red car on the road"),
            pair("p1", "a red car near a tree"),
            pair("p2", "the road by the tree"),
            pair("p3", "a blue car"),
            pair("p4", "a tree"),
            pair("p5", "the red car on the road again"),
        ]
        index = build_index(pairs)
        # hand-enumerated postings
        assert index.postings["red car"] == frozenset({"p0", "p1", "p5"})
        assert index.postings["road"] == frozenset({"p0", "p2"})
        assert index.postings["tree"] == frozenset({"p1", "p2", "p4"})
        assert index.postings["blue car"] == frozenset({"p3"})
        assert index.postings["road again"] == frozenset({"p5"})
        assert index.freq == {p: len(ids) for p, ids in index.postings.items()}

    def test_duplicate_pair_id_rejected(self):
        with pytest.raises(RecordError, match="duplicate"):
            build_index([pair("p1", "a dog"), pair("p1", "a cat")])


def synthetic_corpus(n_pairs=5000, seed=99):
    """Zipf-ish corpus: a few hot phrases, a tail of rare ones."""
    rng = random.Random(seed)
    hot = [f"hotphrase{i}" for i in range(5)]
    warm = [f"warmphrase{i}" for i in range(50)]
    cold = [f"coldphrase{i}" for i in range(3000)]
    pairs = []
    for i in range(n_pairs):
        words = []
        if rng.random() < 0.35:
            words.append(rng.choice(hot))
        if rng.random() < 0.5:
            words.append(rng.choice(warm))
        words.append(rng.choice(cold))
        caption = "a photo of " + " and ".join(words)
        pairs.append(pair(f"p{i:05d}", caption))
    return pairs


class TestFilterPairs:
    def test_all_rare_phrases_empty_output(self):
        pairs = [pair(f"p{i}", f"unique concept number{i}") for i in range(5)]
        assert filter_pairs(pairs, min_freq=3, cap=100, rng_seed=0) == []

    def test_overrepresented_phrase_capped_and_seed_stable(self):
        pairs = [pair(f"p{i:04d}", "a crowded beach") for i in range(150)]
        first = filter_pairs(pairs, min_freq=3, cap=100, rng_seed=7)
        second = filter_pairs(pairs, min_freq=3, cap=100, rng_seed=7)
        assert len(first) == 100
        assert first == second
        different_seed = filter_pairs(pairs, min_freq=3, cap=100, rng_seed=8)
        assert {p.pair_id for p in different_seed} != {p.pair_id for p in first}

    def test_every_selected_pair_has_qualifying_phrase(self):
        pairs = synthetic_corpus(800)
        index = build_index(pairs)
        kept = filter_pairs(pairs, min_freq=3, cap=100, rng_seed=1)
        qualifying = {p for p, ids in index.postings.items() if len(ids) >= 3}
        for selected in kept:
            assert phrases_of(selected) & qualifying

    def test_output_subset_sorted_and_deduplicated(self):
        pairs = synthetic_corpus(500)
        kept = filter_pairs(pairs, min_freq=2, cap=50, rng_seed=1)
        ids = [p.pair_id for p in kept]
        assert ids == sorted(ids)
        assert len(ids) == len(set(ids))
        assert set(ids) <= {p.pair_id for p in pairs}

    def test_idempotent_when_cap_never_binds(self):
        pairs = synthetic_corpus(400)
        once = filter_pairs(pairs, min_freq=3, cap=10**9, rng_seed=5)
        twice = filter_pairs(once, min_freq=3, cap=10**9, rng_seed=5)
        assert twice == once

    def test_ascending_frequency_visit_with_lexicographic_ties(self):
        pairs = [
            pair("p0", "a zebra on grass"),
            pair("p1", "a zebra near water"),
            pair("p2", "a zebra at night"),
            pair("p3", "an apple on wood"),
            pair("p4", "an apple in sunlight"),
            pair("p5", "an apple by flowers"),
        ]
        index = build_index(pairs)
        schedule = sorted((len(ids), phrase) for phrase, ids in index.postings.items()
                          if len(ids) >= 3)
        assert [phrase for _, phrase in schedule] == ["apple", "zebra"]  # freq ties broken a-z
        kept = filter_pairs(pairs, min_freq=3, cap=100, rng_seed=0)
        assert {p.pair_id for p in kept} == {f"p{i}" for i in range(6)}


class TestManifestIO:
    def test_round_trip(self, tmp_path):
        pairs = [
            pair("p1", "a dog on a couch"),
            pair("p2", "precomputed", phrases=("husky", "sofa")),
        ]
        path = tmp_path / "manifest.jsonl"
        write_manifest(pairs, path)
        assert read_manifest(path) == pairs

    def test_bad_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"pair_id": "p1", "image_uri": "u", "caption": "c"}\nnope\n')
        with pytest.raises(RecordError, match="line 2"):
            read_manifest(path)
