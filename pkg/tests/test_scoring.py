import random

import pytest

from chaincurate.corpus import ReasoningChain
from chaincurate.scoring import (
    DEFAULT_LEXICON,
    DEFAULT_WEIGHTS,
    Lexicon,
    ScoreWeights,
    bucket_quality_levels,
    count_phrase_hits,
    raw_dimensions,
    read_scores,
    score_pool,
    write_scores,
)
from chaincurate.textnorm import normalize_phrase, normalize_text


def chain(cid, text, pid="p1"):
    return ReasoningChain(problem_id=pid, generator="gen", text=text, id=cid)


# ---------------------------------------------------------------------------
# phrase counting


def test_count_repeated_phrase():
    tokens = normalize_text("check then check again")
    assert count_phrase_hits(tokens, [normalize_phrase("check")]) == 2


def test_whole_token_match_only():
    tokens = normalize_text("checkerboard")
    assert count_phrase_hits(tokens, [normalize_phrase("check")]) == 0


def test_empty_token_list():
    assert count_phrase_hits([], [normalize_phrase("check")]) == 0


def test_multi_token_phrase_matches_as_sequence():
    tokens = normalize_text("we re-check the result")
    assert count_phrase_hits(tokens, [normalize_phrase("re-check")]) == 1
    assert count_phrase_hits(normalize_text("we recheck"), [normalize_phrase("re-check")]) == 0


def test_non_overlapping_per_phrase():
    tokens = ["a", "a", "a"]
    assert count_phrase_hits(tokens, [("a", "a")]) == 1


# ---------------------------------------------------------------------------
# golden worked example
#
# Hand derivation with the default lexicon and normalize_text tokens:
#   c1 "We check the value. Therefore x = 2."  -> 7 tokens,
#       verif 1/7, tentative 0, connective 1/7
#   c2 "Perhaps x equals 2; verify: since 2+2=4 it holds, therefore x = 2."
#       -> 14 tokens, verif 1/14, tentative 1/14, connective 2/14
#   c3 "x = 2." -> 2 tokens, all rates 0
# min-max per dimension: length (2..14): c1 5/12, c2 1, c3 0
#   verif (0..1/7): c1 1, c2 1/2, c3 0;  tentative (0..1/14): c2 1
#   connective (0..1/7): c1 1, c2 1, c3 0
# totals: c1 = .3*5/12 + .2*1 + .25*0 + .25*1 = 0.575
#         c2 = .3*1 + .2*.5 + .25*1 + .25*1   = 0.900
#         c3 = 0.000

GOLDEN_POOL = [
    ("c1", "We check the value. Therefore x = 2.", 0.575),
    ("c2", "Perhaps x equals 2; verify: since 2+2=4 it holds, therefore x = 2.", 0.900),
    ("c3", "x = 2.", 0.000),
]


def test_golden_three_chain_pool():
    chains = [chain(cid, text) for cid, text, _ in GOLDEN_POOL]
    scores = score_pool(chains)
    for (cid, _, expected), score in zip(GOLDEN_POOL, scores):
        assert score.chain_id == cid
        assert score.total == pytest.approx(expected, abs=1e-9)
    ranked = sorted(scores, key=lambda s: -s.total)
    assert [s.chain_id for s in ranked] == ["c2", "c1", "c3"]


def test_golden_raw_dimensions():
    c2 = chain("c2", GOLDEN_POOL[1][1])
    raw = raw_dimensions(c2, DEFAULT_LEXICON)
    assert raw.elaboration == 14
    assert raw.verification == pytest.approx(1 / 14)
    assert raw.exploration == pytest.approx(1 / 14)
    assert raw.granularity == pytest.approx(2 / 14)


def test_single_chain_pool_all_neutral():
    scores = score_pool([chain("c1", "We check the value.")])
    assert scores[0].norm.as_tuple() == (0.5, 0.5, 0.5, 0.5)
    assert scores[0].total == pytest.approx(0.5)


def test_identical_chains_identical_scores():
    chains = [chain("c1", "We verify x. Therefore done."), chain("c2", "We verify x. Therefore done.")]
    scores = score_pool(chains)
    assert scores[0].total == scores[1].total
    assert scores[0].norm == scores[1].norm


def test_zero_length_chain_rejected():
    with pytest.raises(ValueError):
        score_pool([chain("c1", "?!")])


def test_empty_pool_rejected():
    with pytest.raises(ValueError):
        score_pool([])


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        score_pool([chain("c1", "hello world")], weights=ScoreWeights(0.5, 0.3, 0.2, 0.2))


def test_default_weights():
    w = DEFAULT_WEIGHTS.as_dict()
    assert (w["elaboration"], w["verification"], w["exploration"], w["granularity"]) == (
        0.30, 0.20, 0.25, 0.25,
    )
    assert abs(sum(w.values()) - 1.0) <= 1e-12


def random_chain_text(rng):
    vocab = ["alpha", "beta", "value", "equation", "check", "verify", "perhaps",
             "might", "therefore", "since", "compute", "result", "x", "2", "sum"]
    return " ".join(rng.choices(vocab, k=rng.randint(1, 60)))


def test_randomized_ranges_and_permutation_invariance():
    rng = random.Random(42)
    chains = [chain(f"c{i:05d}", random_chain_text(rng)) for i in range(500)]
    scores = score_pool(chains)
    for score in scores:
        for value in score.norm.as_tuple():
            assert 0.0 <= value <= 1.0
        assert 0.0 <= score.total <= 1.0
    perm = list(range(len(chains)))
    rng.shuffle(perm)
    shuffled_scores = score_pool([chains[i] for i in perm])
    by_id = {s.chain_id: s for s in scores}
    for score in shuffled_scores:
        assert score.total == by_id[score.chain_id].total
        assert score.norm == by_id[score.chain_id].norm


def test_rate_monotonicity_on_appended_hit():
    # appending one hit token moves the rate from h/L to (h+1)/(L+1),
    # a strict increase exactly when h < L
    base_tokens = ["filler"] * 9 + ["check"]  # h=1, L=10
    text = " ".join(base_tokens)
    lex = DEFAULT_LEXICON
    raw_before = raw_dimensions(chain("a", text), lex)
    raw_after = raw_dimensions(chain("b", text + " check"), lex)
    assert raw_after.verification > raw_before.verification
    all_hits = " ".join(["check"] * 5)  # h == L: rate already 1, cannot rise
    raw_full = raw_dimensions(chain("c", all_hits), lex)
    raw_full_plus = raw_dimensions(chain("d", all_hits + " check"), lex)
    assert raw_full_plus.verification == raw_full.verification == 1.0


def test_scores_roundtrip(tmp_path):
    chains = [chain(cid, text) for cid, text, _ in GOLDEN_POOL]
    scores = score_pool(chains)
    path = tmp_path / "scores.jsonl"
    write_scores(path, scores)
    assert read_scores(path) == scores


# ---------------------------------------------------------------------------
# quality levels


def scored(cid, total):
    from chaincurate.scoring import Dimensions, QualityScore

    dims = Dimensions(0.0, 0.0, 0.0, 0.0)
    return QualityScore(chain_id=cid, problem_id="p", raw=dims, norm=dims, total=total, pool_id="t")


def test_bucket_ten_distinct_scores():
    scores = [scored(f"c{i}", i / 10) for i in range(10)]
    levels = bucket_quality_levels(scores)
    assert [lv.level for lv in levels] == ["L1", "L2", "L3", "L4", "L5"]
    assert all(len(lv.members) == 2 for lv in levels)
    assert set(levels[-1].members) == {"c9", "c8"}
    assert set(levels[0].members) == {"c0", "c1"}


def test_bucket_eleven_extra_goes_to_l5():
    scores = [scored(f"c{i:02d}", i / 11) for i in range(11)]
    levels = bucket_quality_levels(scores)
    sizes = {lv.level: len(lv.members) for lv in levels}
    assert sizes == {"L1": 2, "L2": 2, "L3": 2, "L4": 2, "L5": 3}


def test_bucket_ordering_between_levels():
    rng = random.Random(9)
    scores = [scored(f"c{i:03d}", rng.random()) for i in range(53)]
    levels = bucket_quality_levels(scores)
    totals = {s.chain_id: s.total for s in scores}
    for lower, higher in zip(levels, levels[1:]):
        max_lower = max(totals[c] for c in lower.members)
        min_higher = min(totals[c] for c in higher.members)
        assert min_higher >= max_lower
    assert sum(len(lv.members) for lv in levels) == 53
    sizes = [len(lv.members) for lv in levels]
    assert max(sizes) - min(sizes) <= 1


def test_bucket_all_equal_tie_break_by_id():
    scores = [scored(f"c{i}", 0.5) for i in range(5)]
    levels = bucket_quality_levels(scores)
    assert [lv.members for lv in levels] == [["c4"], ["c3"], ["c2"], ["c1"], ["c0"]]


def test_bucket_requires_five():
    with pytest.raises(ValueError):
        bucket_quality_levels([scored("c1", 0.1)] * 4)


def test_lexicon_requires_nonempty_lists():
    with pytest.raises(ValueError):
        Lexicon(verification=[])


def test_lexicon_digest_stable():
    assert Lexicon().digest() == DEFAULT_LEXICON.digest()
    assert Lexicon(verification=["check"]).digest() != DEFAULT_LEXICON.digest()
