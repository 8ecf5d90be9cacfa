import pytest

from codistill.augment import (
    REJECT_BACKEND_ERROR,
    REJECT_DUPLICATE,
    REJECT_EMPTY,
    REJECT_OVERSIZE,
    augment_iteration,
    build_augment_prompt,
    novelty_gate,
    sample_easy,
)
from codistill.backends import (
    BackendResponse,
    ChatBackend,
    EchoAugmentor,
    PermanentBackendError,
    SyntheticAugmentor,
    SyntheticWorld,
)
from codistill.backends.scripted import _ORIGINAL_QUESTION_RE
from codistill.pools import init_pools
from codistill.records import Origin, TaskType
from codistill.textmetrics import rouge_l, tokenize

from conftest import make_instruction


def easy_pool(n):
    return [make_instruction(f"easy-{i:03d}", question=f"scene: describe area {i}") for i in range(n)]


class TestSampleEasy:
    def test_sample_size_matches_demand(self):
        assert len(sample_easy(easy_pool(100), 40, rng_seed=1)) == 40

    def test_cannot_oversample(self):
        sampled = sample_easy(easy_pool(10), 40, rng_seed=1)
        assert sorted(r.id for r in sampled) == [f"easy-{i:03d}" for i in range(10)]

    def test_deterministic_given_seed(self):
        pool = easy_pool(50)
        assert sample_easy(pool, 20, rng_seed=9) == sample_easy(pool, 20, rng_seed=9)

    def test_independent_of_input_order(self):
        pool = easy_pool(50)
        forward = sample_easy(pool, 20, rng_seed=9)
        backward = sample_easy(list(reversed(pool)), 20, rng_seed=9)
        assert forward == backward

    def test_no_replacement(self):
        sampled = sample_easy(easy_pool(30), 30, rng_seed=3)
        assert len({r.id for r in sampled}) == 30

    def test_zero_demand(self):
        assert sample_easy(easy_pool(5), 0, rng_seed=0) == []


class TestAugmentPrompt:
    def test_difficult_prompt_carries_question_and_task_directive(self):
        instruction = make_instruction(
            "d1", question="counting: how many", task_type=TaskType.COMPLEX_REASONING
        )
        text = build_augment_prompt(instruction, "difficult")[0].text
        assert "counting: how many" in text
        assert "complex-reasoning" in text
        assert "challenging" in text

    def test_easy_uses_same_template_with_other_descriptor(self):
        instruction = make_instruction("e1", task_type=TaskType.CONVERSATION)
        difficult_text = build_augment_prompt(instruction, "difficult")[0].text
        easy_text = build_augment_prompt(instruction, "easy")[0].text
        assert difficult_text.replace("challenging", "straightforward") == easy_text

    def test_unknown_task_type_fallback(self):
        instruction = make_instruction("u1", task_type=TaskType.UNKNOWN)
        text = build_augment_prompt(instruction, "difficult")[0].text
        assert "same kind of question" in text

    def test_parseable_by_scripted_augmentor(self):
        instruction = make_instruction("d1", question="counting: something")
        text = build_augment_prompt(instruction, "difficult")[0].text
        assert _ORIGINAL_QUESTION_RE.search(text).group(1) == "counting: something"


class TestNoveltyGate:
    def test_identical_candidate_rejected(self):
        peer = make_instruction("p1", question="what color is the sky")
        assert novelty_gate("what color is the sky", [peer], 0.7) == REJECT_DUPLICATE

    def test_disjoint_candidate_accepted(self):
        peer = make_instruction("p1", question="what color is the sky")
        assert novelty_gate("count every visible bird", [peer], 0.7) is None

    def test_worked_boundary_example(self):
        # LCS([what,color,is,the,large,dog], [what,color,is,the,small,cat]) = 4
        # F1 = 2*(4/6)*(4/6) / ((4/6)+(4/6)) = 2/3 < 0.7 -> accept
        candidate = "what color is the large dog"
        peer = make_instruction("p1", question="what color is the small cat")
        score = rouge_l(tokenize(candidate), tokenize(peer.question))
        assert score == pytest.approx(2 / 3, abs=1e-12)
        assert novelty_gate(candidate, [peer], 0.7) is None

    def test_empty_candidate_rejected_as_empty(self):
        assert novelty_gate("  ", [], 0.7) == REJECT_EMPTY

    def test_no_peers_accepts_nonempty(self):
        assert novelty_gate("anything", [], 0.7) is None


class _FailingAugmentor(ChatBackend):
    def __init__(self, fail_on: str):
        self.fail_on = fail_on
        self.inner = SyntheticAugmentor(None)

    def complete(self, request):
        if self.fail_on in request.last_user_text():
            raise PermanentBackendError("induced")
        return self.inner.complete(request)


class _OversizeAugmentor(ChatBackend):
    def complete(self, request):
        return BackendResponse(text="long question " * 400, latency_ms=0, attempts=1)


class TestAugmentIteration:
    def setup_method(self):
        self.difficult = [
            make_instruction(f"diff-{i}", question=f"counting: count group number {i}",
                             image_uri=f"img://{i % 3}")
            for i in range(6)
        ]
        self.easy = [
            make_instruction(f"easy-{i}", question=f"scene: outline region number {i}",
                             image_uri=f"img://{i % 3}")
            for i in range(9)
        ]
        self.cache = init_pools(self.difficult + self.easy)

    def test_all_novel_accepted_with_lineage(self):
        batch = augment_iteration(
            self.difficult, self.easy, SyntheticAugmentor(None), rng_seed=11, cache=self.cache
        )
        # 6 difficult + min(6, 9) sampled easy = 12 sources
        assert len(batch.easy_sampled) == 6
        assert len(batch.accepted) == 12
        assert batch.rejected_count_by_reason[REJECT_DUPLICATE] == 0
        source_ids = {r.id for r in self.difficult} | {r.id for r in batch.easy_sampled}
        for record in batch.accepted:
            assert record.origin is Origin.AUGMENTED
            assert record.parent_id in source_ids
            parent = self.cache.cache[record.parent_id]
            assert record.image == parent.image
            assert record.task_type == parent.task_type
            assert record.iteration == 1

    def test_echo_augmentor_fully_gated(self):
        batch = augment_iteration(
            self.difficult, self.easy, EchoAugmentor(), rng_seed=11, cache=self.cache
        )
        assert batch.accepted == []
        assert batch.rejected_count_by_reason[REJECT_DUPLICATE] == 12

    def test_backend_errors_counted_not_fatal(self):
        augmentor = _FailingAugmentor(fail_on=self.difficult[0].question)
        batch = augment_iteration(
            self.difficult, self.easy, augmentor, rng_seed=11, cache=self.cache
        )
        assert batch.rejected_count_by_reason[REJECT_BACKEND_ERROR] == 1
        assert len(batch.accepted) == 11

    def test_oversize_candidates_rejected(self):
        batch = augment_iteration(
            self.difficult, self.easy, _OversizeAugmentor(), rng_seed=11, cache=self.cache
        )
        assert batch.accepted == []
        assert batch.rejected_count_by_reason[REJECT_OVERSIZE] == 12

    def test_deterministic_batches(self):
        run = lambda: augment_iteration(
            self.difficult, self.easy, SyntheticAugmentor(None), rng_seed=11, cache=self.cache
        )
        first, second = run(), run()
        assert [r.id for r in first.accepted] == [r.id for r in second.accepted]
        assert [r.question for r in first.accepted] == [r.question for r in second.accepted]

    def test_accepted_satisfy_gate_against_cache_and_siblings(self):
        batch = augment_iteration(
            self.difficult, self.easy, SyntheticAugmentor(None), rng_seed=11, cache=self.cache
        )
        by_image: dict[str, list[str]] = {}
        for record in self.cache.sorted_cache():
            by_image.setdefault(record.image.uri, []).append(record.question)
        for record in batch.accepted:  # accepted in sorted-source order
            peers = by_image.setdefault(record.image.uri, [])
            for peer_question in peers:
                assert rouge_l(tokenize(record.question), tokenize(peer_question)) < 0.7
            peers.append(record.question)

    def test_batch_internal_duplicates_gated(self):
        class SameAnswerAugmentor(ChatBackend):
            def complete(self, request):
                return BackendResponse(text="identical candidate question", latency_ms=0)

        batch = augment_iteration(
            self.difficult, self.easy, SameAnswerAugmentor(), rng_seed=11, cache=self.cache
        )
        # one accepted per image group; later siblings collide with it
        images = {r.image.uri for r in self.difficult} | {r.image.uri for r in batch.easy_sampled}
        assert len(batch.accepted) == len(images)
        assert batch.rejected_count_by_reason[REJECT_DUPLICATE] == 12 - len(images)
