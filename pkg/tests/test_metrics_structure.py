"""L1 metric tests, anchored on independent brute-force oracles."""
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoagent.metrics import structure as ms

from oracles import (VOCAB, oracle_bleu4, oracle_lcs, oracle_levenshtein,
                     oracle_weighted, random_tokens)


# ---------------------------------------------------------------------------
# oracle equivalence

def test_bleu_matches_oracle_on_random_pairs():
    rng = random.Random(1234)
    checked = 0
    for _ in range(250):
        c, r = random_tokens(rng), random_tokens(rng)
        got = ms.bleu4(c, r).score
        want = oracle_bleu4(c, r)
        assert got == pytest.approx(want, abs=1e-9), (c, r)
        checked += 1
    assert checked >= 200


def test_rouge_matches_oracle_on_random_pairs():
    rng = random.Random(99)
    for _ in range(250):
        c, r = random_tokens(rng), random_tokens(rng)
        lcs = oracle_lcs(c, r)
        want_r = lcs / len(r) if r else 0.0
        want_p = lcs / len(c) if c else 0.0
        want_f = 2 * want_r * want_p / (want_r + want_p) if (want_r + want_p) else 0.0
        got = ms.rouge_l(c, r)
        assert got.r_lcs == pytest.approx(want_r, abs=1e-9)
        assert got.p_lcs == pytest.approx(want_p, abs=1e-9)
        assert got.f_lcs == pytest.approx(want_f, abs=1e-9)


def test_edit_distance_matches_oracle_on_random_strings():
    rng = random.Random(7)
    alphabet = "abcde"
    for _ in range(250):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 20)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 20)))
        d, score = ms.edit_similarity(a, b)
        assert d == oracle_levenshtein(a, b)
        m = max(len(a), len(b))
        want = 1.0 if m == 0 else 1.0 - d / m
        assert score == pytest.approx(want, abs=1e-9)


def test_weighted_ngram_matches_oracle_on_random_pairs():
    rng = random.Random(4242)
    kw = ms.PYTHON_KEYWORDS
    for _ in range(250):
        c, r = random_tokens(rng), random_tokens(rng)
        assert ms.weighted_ngram(c, r) == pytest.approx(oracle_weighted(c, r, kw), abs=1e-9)


# ---------------------------------------------------------------------------
# frozen examples

def test_bleu_identity_and_zero():
    assert ms.bleu4(["a", "b", "c", "d", "e"], ["a", "b", "c", "d", "e"]).score == pytest.approx(1.0)
    assert ms.bleu4([], ["a"]).score == 0.0


def test_rouge_frozen_example():
    got = ms.rouge_l(["a", "c", "d"], ["a", "b", "c", "d"])
    assert got.r_lcs == pytest.approx(0.75)
    assert got.p_lcs == pytest.approx(1.0)
    assert got.f_lcs == pytest.approx(6 / 7)


def test_rouge_identity_and_disjoint():
    assert ms.rouge_l(["a", "b"], ["a", "b"]) == ms.RougeBreakdown(1.0, 1.0, 1.0)
    assert ms.rouge_l(["a"], ["b"]).f_lcs == 0.0


def test_edit_similarity_frozen_examples():
    assert ms.edit_similarity("abc", "abc") == (0, 1.0)
    assert ms.edit_similarity("abc", "abd") == (1, pytest.approx(2 / 3))
    assert ms.edit_similarity("", "abc") == (3, 0.0)
    assert ms.edit_similarity("", "") == (0, 1.0)
    assert ms.edit_similarity("ab", "ba") == ms.edit_similarity("ba", "ab")


def test_tokenizer_examples():
    assert ms.tokenize_code("x = 1") == ["x", "=", "1"]
    assert ms.tokenize_code("# only a comment\n") == []
    assert ms.tokenize_code("") == []
    assert "comment" not in ms.tokenize_code("x = 1  # comment")
    assert ms.tokenize_code("a==b") == ["a", "==", "b"]
    assert ms.tokenize_code("s = 'he # no'") == ["s", "=", "'he # no'"]


def test_weighted_ngram_keyword_boost():
    # the only keyword-bearing n-grams all match; doubling them must help
    cand = ["if", "a", "+", "b", "z"]
    ref = ["if", "a", "+", "b", "t"]
    plain = ms.bleu4(cand, ref).score
    weighted = ms.weighted_ngram(cand, ref)
    assert weighted > plain
    assert weighted == pytest.approx(oracle_weighted(cand, ref, ms.PYTHON_KEYWORDS), abs=1e-12)


def test_weighted_ngram_degenerates_without_keywords():
    cand = ["a", "b", "c", "d", "a"]
    ref = ["a", "b", "x", "d", "c"]
    assert ms.weighted_ngram(cand, ref) == pytest.approx(ms.bleu4(cand, ref).score, abs=1e-12)


# ---------------------------------------------------------------------------
# syntax / dataflow components

def test_ast_subtree_identity_and_rename():
    assert ms.ast_subtree_f1("x = 1\n", "x = 1\n") == (1.0, False)
    score, failed = ms.ast_subtree_f1("total = a + b\n", "result = a + b\n")
    assert not failed and score == pytest.approx(1.0)


def test_ast_subtree_parse_failure_flags():
    score, failed = ms.ast_subtree_f1("def broken(:", "x = 1")
    assert failed and score == 0.0
    with pytest.raises(ms.ParseFailure):
        ms.ast_subtree_f1("x = 1", "def broken(:")


def test_dataflow_name_abstraction():
    score, failed = ms.dataflow_f1("a = 1\nb = a\n", "x = 1\ny = x\n")
    assert not failed and score == pytest.approx(1.0)


def test_dataflow_no_defs_vs_defs():
    score, _ = ms.dataflow_f1("print(1)\n", "a = 1\nb = a * 2\n")
    assert score == 0.0


def test_dataflow_function_scope():
    code_a = "def f():\n    u = 1\n    v = u + 1\n    return v\n"
    code_b = "def g():\n    p = 1\n    q = p + 1\n    return q\n"
    score, _ = ms.dataflow_f1(code_a, code_b)
    assert score == pytest.approx(1.0)


def test_codebleu_mean_and_identity():
    fixtures = [
        "x = 1\n",
        "import math\ny = math.sqrt(2)\n",
        "def f(a):\n    return a * 2\n",
        "for i in range(3):\n    print(i)\n",
    ]
    for code in fixtures:
        assert ms.codebleu(code, code).total == pytest.approx(1.0, abs=1e-6)
    breakdown = ms.codebleu("z = 9\n", "z = 9\n")
    assert breakdown.total == pytest.approx(
        (breakdown.alpha_ngram + breakdown.alpha_wt
         + breakdown.alpha_syn + breakdown.alpha_df) / 4)
    assert ms.codebleu("", "x = 1").total == 0.0


# ---------------------------------------------------------------------------
# API operations

@pytest.fixture(scope="module")
def catalog():
    return ms.OperationCatalog.load()


def test_extract_ops_basic(catalog):
    assert "buffer" in ms.extract_api_ops("g = roads.buffer(2500)\n", catalog)
    assert ms.extract_api_ops("# buffer only in a comment\nx = 1\n", catalog) == set()


def test_extract_ops_route_invariance(catalog):
    route_a = "joined = gpd.sjoin(blocks, points)\n"
    route_b = "joined = spatial_join(blocks, points)\n"
    assert ms.extract_api_ops(route_a, catalog) == ms.extract_api_ops(route_b, catalog) == {"spatial_join"}


def test_extract_ops_all_multimatcher_routes_agree(catalog):
    for entry in catalog.patterns:
        if len(entry["matchers"]) < 2:
            continue
        route_sets = set()
        for matcher in entry["matchers"]:
            code = f"result = lib.{matcher}(data)\n"
            ops = ms.extract_api_ops(code, catalog)
            assert entry["op_name"] in ops, (entry["op_name"], matcher)
            route_sets.add(frozenset(ops))
        assert len(route_sets) == 1, entry["op_name"]


def test_api_f1_cases():
    assert ms.api_operation_f1({"buffer", "overlay"}, {"buffer", "spatial_join"}) == (0.5, 0.5, 0.5)
    assert ms.api_operation_f1({"a"}, {"a"}) == (1.0, 1.0, 1.0)
    assert ms.api_operation_f1(set(), set()) == (1.0, 1.0, 1.0)
    assert ms.api_operation_f1(set(), {"a"}) == (0.0, 0.0, 0.0)


# ---------------------------------------------------------------------------
# properties

token_lists = st.lists(st.sampled_from(VOCAB), max_size=20)


@settings(max_examples=80, deadline=None)
@given(token_lists, token_lists)
def test_scores_in_range(c, r):
    assert 0.0 <= ms.bleu4(c, r).score <= 1.0
    rouge = ms.rouge_l(c, r)
    assert 0.0 <= rouge.f_lcs <= 1.0
    assert 0.0 <= ms.weighted_ngram(c, r) <= 1.0


@settings(max_examples=80, deadline=None)
@given(st.text(alphabet="abxy", max_size=24), st.text(alphabet="abxy", max_size=24))
def test_edit_similarity_symmetric_and_bounded(a, b):
    da, sa = ms.edit_similarity(a, b)
    db, sb = ms.edit_similarity(b, a)
    assert da == db and sa == pytest.approx(sb)
    assert 0.0 <= sa <= 1.0


@settings(max_examples=50, deadline=None)
@given(token_lists.filter(lambda t: len(t) > 0))
def test_identity_is_perfect(tokens)    :
    assert ms.bleu4(tokens, tokens).score == pytest.approx(1.0)
    assert ms.rouge_l(tokens, tokens).f_lcs == pytest.approx(1.0)
    assert ms.weighted_ngram(tokens, tokens) == pytest.approx(1.0)
