import hashlib
import json
import string

import numpy as np
import pytest

from aerialnav.errors import BackendError, InvalidArgumentError, ParseError
from aerialnav.llm import (
    TEMPLATES,
    ClientConfig,
    FoundationClient,
    PromptTemplate,
    parse_landmark_response,
    parse_ranked_objects,
)

SAMPLE_INSTRUCTION = (
    "First, you need to find a stop sign. Then take left and right and continue until you reach a "
    "square with a tree. Continue first straight, then right, until you find a white truck. "
    "The final destination is a white building."
)
SAMPLE_RESPONSE = """"Landmark sequence": [
    "stop sign",
    "square with a tree",
    "white truck",
    "white building",
    ]
  "Thought": "The landmarks in path order; the last one is the destination."
"""
LANDMARKS = ["stop sign", "square with a tree", "white truck", "white building"]


class CountingTransport:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0
        self.requests = []

    def __call__(self, url, payload, headers, timeout):
        self.calls += 1
        self.requests.append((url, payload))
        r = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        if isinstance(r, Exception):
            raise r
        return r


def chat(text):
    return {"choices": [{"message": {"content": text}}]}


def client(tmp_path, transport, **cfg):
    return FoundationClient(ClientConfig(cache_path=str(tmp_path / "cache"), **cfg), transport, sleep=lambda s: None)


class TestTemplates:
    def test_task_planning_quotes_instruction(self):
        prompt = TEMPLATES["task_planning"].render(instruction=SAMPLE_INSTRUCTION)
        assert f'<"{SAMPLE_INSTRUCTION}">' in prompt
        assert "$" not in prompt

    def test_reasoning_slots(self):
        t = TEMPLATES["commonsense_reasoning"]
        assert t.slots == {"instruction", "subgoal", "observed"}
        prompt = t.render(instruction="go", subgoal="gate", observed="road, tree")
        assert "road, tree" in prompt and "$" not in prompt

    def test_missing_slot(self):
        with pytest.raises(InvalidArgumentError):
            TEMPLATES["commonsense_reasoning"].render(instruction="go")

    def test_injective(self):
        rng = np.random.default_rng(0)
        alphabet = np.array(list(string.ascii_letters + string.digits + " ,'"))
        t = TEMPLATES["commonsense_reasoning"]
        seen = {}
        for _ in range(10_000):
            fill = tuple("".join(rng.choice(alphabet, int(rng.integers(1, 12)))) for _ in range(3))
            prompt = t.render(instruction=fill[0], subgoal=fill[1], observed=fill[2])
            key = hashlib.sha256(prompt.encode()).hexdigest()
            assert seen.setdefault(key, fill) == fill

    def test_custom_template(self):
        t = PromptTemplate("x", "say ${word}")
        assert t.render(word="hi") == "say hi"


class TestClient:
    def test_round_trip_and_cache(self, tmp_path):
        tr = CountingTransport([chat(SAMPLE_RESPONSE)])
        c = client(tmp_path, tr)
        first = c.complete("task_planning", instruction=SAMPLE_INSTRUCTION)
        assert tr.calls == 1 and tr.requests[0][0].endswith("/chat/completions")
        again = client(tmp_path, tr).complete("task_planning", instruction=SAMPLE_INSTRUCTION)
        assert again.encode() == first.encode() and tr.calls == 1
        assert parse_landmark_response(first) == LANDMARKS

    def test_warm_cache_zero_calls(self, tmp_path):
        instructions = [f"Fly to the tower number {i}." for i in range(5)]
        warm = CountingTransport([chat("x")])
        c = client(tmp_path, warm)
        for s in instructions:
            c.complete("task_planning", instruction=s)
        cold = CountingTransport([RuntimeError("network used")])
        c2 = client(tmp_path, cold)
        for s in instructions:
            c2.complete("task_planning", instruction=s)
        assert cold.calls == 0 and c2.calls == 0

    def test_retries_then_success(self, tmp_path):
        delays = []
        tr = CountingTransport([OSError("reset"), OSError("reset"), chat("ok")])
        c = FoundationClient(ClientConfig(cache_path=str(tmp_path)), tr, sleep=delays.append)
        assert c.complete(PromptTemplate("t", "${a}"), a="1") == "ok"
        assert tr.calls == 3 and delays == [1.0, 2.0]

    def test_retries_exhausted(self, tmp_path):
        tr = CountingTransport([OSError("down")])
        c = client(tmp_path, tr, max_retries=2)
        with pytest.raises(BackendError) as exc:
            c.complete(PromptTemplate("t", "${a}"), a="1")
        assert exc.value.retries == 2 and tr.calls == 3
        assert not list(tmp_path.rglob("*.json"))

    def test_malformed_reply_retried(self, tmp_path):
        tr = CountingTransport([{"choices": []}, chat("fine")])
        assert client(tmp_path, tr).complete(PromptTemplate("t", "${a}"), a="1") == "fine"

    def test_embed(self, tmp_path):
        tr = CountingTransport([{"data": [{"embedding": [1, 2, 3]}]}])
        c = client(tmp_path, tr)
        assert c.embed("tower") == [1.0, 2.0, 3.0] == c.embed("tower")
        assert tr.calls == 1 and tr.requests[0][0].endswith("/embeddings")

    def test_config_validation(self):
        with pytest.raises(InvalidArgumentError):
            ClientConfig(timeout=0)
        with pytest.raises(InvalidArgumentError):
            ClientConfig(max_retries=-1)


class TestParseLandmarks:
    def test_sample_loose_form(self):
        assert parse_landmark_response(SAMPLE_RESPONSE) == LANDMARKS

    def test_strict_json_in_prose(self):
        raw = 'Sure!\n```json\n' + json.dumps({"Landmark sequence": LANDMARKS, "Thought": "t"}) + "\n```\nDone."
        assert parse_landmark_response(raw) == LANDMARKS

    def test_fields_swapped(self):
        raw = json.dumps({"Thought": "t", "Landmark sequence": ["a", "b"]})
        assert parse_landmark_response(raw) == ["a", "b"]

    def test_thought_only(self):
        with pytest.raises(ParseError) as exc:
            parse_landmark_response('{"Thought": "hmm"}')
        assert exc.value.raw == '{"Thought": "hmm"}'

    def test_missing_thought(self):
        with pytest.raises(ParseError):
            parse_landmark_response('{"Landmark sequence": ["a"]}')

    def test_not_a_list(self):
        with pytest.raises(ParseError):
            parse_landmark_response('{"Landmark sequence": "a, b", "Thought": "t"}')
        with pytest.raises(ParseError):
            parse_landmark_response('"Landmark sequence": "a" "Thought": "t"')


class TestParseRanked:
    OBS = ["building with stairs", "road", "street lamp", "'open' logo"]

    def test_numbered(self):
        raw = "1. Road\n2. Street lamp\n3. 'open' logo"
        assert parse_ranked_objects(raw, self.OBS) == ["road", "street lamp", "'open' logo"]

    def test_json_list(self):
        raw = '{"objects": ["street lamp", "road", "moon"]}'
        assert parse_ranked_objects(raw, self.OBS) == ["street lamp", "road"]

    def test_free_text(self):
        raw = "I would follow the road, then look for the street lamp."
        assert parse_ranked_objects(raw, self.OBS) == ["road", "street lamp"]

    def test_at_most_three(self):
        raw = "\n".join(self.OBS)
        assert len(parse_ranked_objects(raw, self.OBS)) == 3
