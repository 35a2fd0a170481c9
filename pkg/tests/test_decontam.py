import random

import pytest

from chaincurate.corpus import BenchmarkItem, BenchmarkSet, Problem
from chaincurate.decontam import build_ngram_index, check_statement, decontaminate
from chaincurate.textnorm import normalize_text


def make_problem(pid, statement):
    return Problem(id=pid, statement=statement, answer="0", source="synthetic")


def bench(name, questions):
    items = [BenchmarkItem(id=f"{name}-{i}", question=q, answer="0") for i, q in enumerate(questions)]
    return BenchmarkSet(name=name, items=items)


def words(prefix, n):
    return " ".join(f"{prefix}{i}" for i in range(n))


def test_normalize_basic():
    assert normalize_text("Therefore, x = 2.") == ["therefore", "x", "2"]


def test_normalize_empty():
    assert normalize_text("") == []


def test_normalize_latex_and_hyphens():
    assert normalize_text("Double-check \\frac{1}{2}") == ["double", "check", "frac", "1", "2"]


def test_index_window_count():
    index = build_ngram_index([bench("a", [words("w", 12)])], n=10)
    assert len(index.entries) == 3
    assert not index.short_entries


def test_index_short_question_whole_sequence():
    index = build_ngram_index([bench("a", [words("w", 4)])], n=10)
    assert not index.entries
    assert list(index.short_entries) == [words("w", 4)]


def test_index_shared_question_maps_to_both_benchmarks():
    question = words("shared", 11)
    index = build_ngram_index([bench("a", [question]), bench("b", [question])], n=10)
    key = next(iter(index.entries))
    assert index.entries[key] == {("a", "a-0"), ("b", "b-0")}


def test_index_rejects_bad_n():
    with pytest.raises(ValueError):
        build_ngram_index([bench("a", ["something"])], n=0)
    with pytest.raises(ValueError):
        build_ngram_index([], n=10)


def test_verbatim_copy_contaminated():
    question = words("q", 15)
    index = build_ngram_index([bench("a", [question])], n=10)
    clean, reports = decontaminate([make_problem("p1", question)], index)
    assert clean == []
    assert reports[0].verdict == "contaminated"


def test_single_shared_window_contaminated_with_attribution():
    question = words("bench", 14)
    bench_tokens = question.split()
    overlap = " ".join(bench_tokens[2:12])  # one 10-token window
    statement = words("own", 5) + " " + overlap + " " + words("tail", 5)
    index = build_ngram_index([bench("alpha", [question])], n=10)
    clean, reports = decontaminate([make_problem("p1", statement)], index)
    assert clean == []
    match = reports[0].matches[0]
    assert (match.benchmark, match.item_id) == ("alpha", "alpha-0")
    assert match.ngram == overlap


def test_disjoint_vocabulary_clean():
    index = build_ngram_index([bench("a", [words("bench", 20)])], n=10)
    clean, reports = decontaminate([make_problem("p1", words("mine", 20))], index)
    assert [p.id for p in clean] == ["p1"]
    assert reports[0].verdict == "clean"


def test_short_key_requires_whole_sequence_equality():
    index = build_ngram_index([bench("a", [words("s", 4)])], n=10)
    equal = make_problem("p1", words("s", 4))
    superset = make_problem("p2", words("s", 4) + " extra tokens here")
    clean, reports = decontaminate([equal, superset], index)
    assert [r.verdict for r in reports] == ["contaminated", "clean"]
    assert [p.id for p in clean] == ["p2"]


def test_soundness_matches_present_in_both_sides():
    rng = random.Random(5)
    vocab = [f"tok{i}" for i in range(30)]
    questions = [" ".join(rng.choices(vocab, k=rng.randint(10, 25))) for _ in range(20)]
    benchmarks = [bench("a", questions[:10]), bench("b", questions[10:])]
    index = build_ngram_index(benchmarks, n=10)
    by_name = {b.name: b for b in benchmarks}
    problems = [
        make_problem(f"p{i}", " ".join(rng.choices(vocab, k=rng.randint(5, 40))))
        for i in range(50)
    ]
    _, reports = decontaminate(problems, index)
    problem_by_id = {p.id: p for p in problems}
    for report in reports:
        tokens = " ".join(normalize_text(problem_by_id[report.problem_id].statement))
        for match in report.matches:
            assert match.ngram in tokens
            item = next(
                it for it in by_name[match.benchmark].items if it.id == match.item_id
            )
            assert match.ngram in " ".join(normalize_text(item.question))


def test_monotonicity_adding_items_never_cleans():
    question = words("bench", 14)
    problems = [make_problem("p1", question), make_problem("p2", words("other", 14))]
    small = build_ngram_index([bench("a", [question])], n=10)
    big = build_ngram_index([bench("a", [question, words("extra", 16)])], n=10)
    _, small_reports = decontaminate(problems, small)
    _, big_reports = decontaminate(problems, big)
    for before, after in zip(small_reports, big_reports):
        if before.verdict == "contaminated":
            assert after.verdict == "contaminated"


def test_n_sensitivity_contaminated_at_smaller_n():
    question = words("bench", 14)
    bench_tokens = question.split()
    statement = words("own", 4) + " " + " ".join(bench_tokens[0:10])
    benchmarks = [bench("a", [question])]
    problems = [make_problem("p1", statement)]
    for n in (10, 7, 4, 2, 1):
        index = build_ngram_index(benchmarks, n=n)
        _, reports = decontaminate(problems, index)
        assert reports[0].verdict == "contaminated", f"n={n}"


def test_determinism_and_order():
    rng = random.Random(11)
    vocab = [f"v{i}" for i in range(40)]
    questions = [" ".join(rng.choices(vocab, k=15)) for _ in range(5)]
    index = build_ngram_index([bench("a", questions)], n=10)
    problems = [
        make_problem(f"p{i:03d}", " ".join(rng.choices(vocab, k=20))) for i in range(30)
    ]
    clean1, reports1 = decontaminate(problems, index)
    clean2, reports2 = decontaminate(problems, index)
    assert [p.id for p in clean1] == [p.id for p in clean2]
    assert [r.to_json_dict() for r in reports1] == [r.to_json_dict() for r in reports2]
    assert [r.problem_id for r in reports1] == [p.id for p in problems]


def test_check_statement_empty_index_paths():
    index = build_ngram_index([bench("a", [words("q", 12)])], n=10)
    assert check_statement("", index) == []
