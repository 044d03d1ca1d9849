"""L2 tests: log cleaning, cosine, judge rubric parsing and averaging."""
import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoagent.agents import AgentTranscript, Round
from geoagent.llm import scripted_gateway
from geoagent.metrics import process as mp
from geoagent.sandbox import Observation
from geoagent.tasks import TaskCategory, TaskSpec


def make_obs(stdout="", stderr="", ok=True):
    return Observation(stdout=stdout, stderr=stderr, new_vars=[], ok=ok, duration_ms=5)


def make_transcript(rounds):
    t = AgentTranscript(task_id="T01", architecture="single")
    t.rounds = rounds
    return t


def toy_task():
    return TaskSpec(id="T01", instruction="Map the flood zone.",
                    category=TaskCategory.UNDERSTANDING_SPATIAL_DISTRIBUTIONS,
                    data_manifest=(), gold_code="x = 1\n", gold_outputs=())


# ---------------------------------------------------------------------------
# clean_log

def test_clean_log_two_rounds_in_order():
    t = make_transcript([
        Round("inspect data", "print(df.columns)", make_obs(stdout="cols"), True),
        Round("buffer roads", "roads.buffer(2500)", make_obs(stdout="done"), True),
    ])
    text = mp.clean_log(t)
    assert "[ROUND 1]" in text and "[ROUND 2]" in text
    assert text.index("[ROUND 1]") < text.index("[ROUND 2]")
    assert "inspect data" in text and "buffer roads" in text


def test_clean_log_strips_control_sequences():
    t = make_transcript([
        Round("t", "print(x)", make_obs(stdout="\x1b[31mred\x1b[0m value"), True)])
    text = mp.clean_log(t)
    assert "\x1b" not in text
    assert "red value" in text


def test_clean_log_cap_keeps_every_round():
    rounds = [Round(f"thought {i}", f"cell_{i}()", make_obs(stdout="Z" * 5000), True)
              for i in range(8)]
    t = make_transcript(rounds)
    text = mp.clean_log(t, cap=4000)
    assert len(text) <= 4000
    for i in range(1, 9):
        assert f"[ROUND {i}]" in text


def test_clean_log_empty_and_deterministic():
    assert mp.clean_log(make_transcript([])) == ""
    t = make_transcript([Round("a", "b()", make_obs(stdout="c"), True)])
    assert mp.clean_log(t) == mp.clean_log(t)


# ---------------------------------------------------------------------------
# embeddings and cosine

def test_mock_provider_basis_mapping():
    provider = mp.MockEmbeddingProvider(dim=4, mapping={"hello": 2})
    vec = mp.embed("hello", provider)
    assert vec.tolist() == [0.0, 0.0, 1.0, 0.0]


def test_cosine_identity_orthogonal_and_angle():
    assert mp.cosine([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)
    assert mp.cosine([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)
    assert mp.cosine([1.0, 1.0], [1.0, 0.0]) == pytest.approx(2 ** 0.5 / 2)


def test_cosine_errors():
    with pytest.raises(mp.DimensionMismatch):
        mp.cosine([1.0], [1.0, 2.0])
    with pytest.raises(mp.ZeroVector):
        mp.cosine([0.0, 0.0], [1.0, 0.0])


def test_http_embedding_provider_retries_then_fails(monkeypatch):
    import httpx

    calls = []

    def boom(*args, **kwargs):
        calls.append(1)
        raise httpx.ConnectError("down")

    monkeypatch.setattr(httpx, "post", boom)
    provider = mp.HttpEmbeddingProvider(
        mp.EmbeddingConfig(endpoint="http://localhost:1/embeddings", retries=3),
        sleep=lambda s: None)
    with pytest.raises(mp.ProviderError):
        provider.embed("text")
    assert len(calls) == 3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6),
       st.floats(0.1, 10.0))
def test_cosine_scale_invariance(values, scale):
    a = np.asarray(values)
    if not a.any():
        a[0] = 1.0
    b = a[::-1].copy()
    if not b.any():
        b[-1] = 1.0
    c = mp.cosine(a, b)
    assert -1.0 - 1e-9 <= c <= 1.0 + 1e-9
    assert mp.cosine(scale * a, b) == pytest.approx(c, abs=1e-9)


# ---------------------------------------------------------------------------
# judge

def judge_reply(scores, note="fine"):
    lines = []
    for dim, value in zip(mp.JUDGE_DIMENSIONS, scores):
        lines.append(f"{dim}: {value}")
        lines.append(f"justification_{dim}: {note}")
    return "\n".join(lines)


def test_judge_average_reference_rows():
    raw = resources.files("geoagent.assets").joinpath("reference_scores.json").read_text()
    rows = json.loads(raw)["judge_rows"]
    assert len(rows) == 12
    for row in rows:
        judge = scripted_gateway([judge_reply(row["scores"])])
        result = mp.judge_reasoning(toy_task(), "x = 1\n", "log", judge)
        assert result.average == pytest.approx(row["average"], abs=0.01), row


def test_judge_parses_justifications():
    judge = scripted_gateway([judge_reply([4, 4, 4, 4, 4], note="solid work")])
    result = mp.judge_reasoning(toy_task(), "x = 1\n", "log", judge)
    assert result.justifications["methodology"] == "solid work"
    assert result.average == pytest.approx(4.0)


def test_judge_out_of_range_rejected_after_retry():
    bad = judge_reply([0, 4, 4, 4, 4])
    judge = scripted_gateway([bad, bad])
    with pytest.raises(mp.JudgeUnparsable):
        mp.judge_reasoning(toy_task(), "x = 1\n", "log", judge)


def test_judge_retry_recovers():
    judge = scripted_gateway(["gibberish without scores",
                              judge_reply([3, 3, 3, 3, 3])])
    result = mp.judge_reasoning(toy_task(), "x = 1\n", "log", judge)
    assert result.average == pytest.approx(3.0)


def test_judge_backend_error_wrapped():
    judge = scripted_gateway([])  # exhausted immediately
    with pytest.raises(mp.JudgeBackendError):
        mp.judge_reasoning(toy_task(), "x = 1\n", "log", judge)
