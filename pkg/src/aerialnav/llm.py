"""Chat-completion client for the landmark parser, OROI reasoner and scorer.

Every request is cached on disk under the SHA-256 of the rendered prompt, so
a rerun with a warm cache issues no network traffic at all.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .errors import BackendError, InvalidArgumentError, ParseError

log = logging.getLogger(__name__)

TASK_PLANNING = (
    "You are a navigation aircraft, and now you need to navigate to a specified location "
    "according to a natural language instruction. You need to extract a landmark sequence from "
    "the instruction. The sequence order should be consistent with their appearance on the path. "
    'Your output should be in JSON format and must contain two fields: "Landmark sequence" and '
    '"Thought." "Landmark sequence" is your thinking result comprised of landmark phrases in the '
    'instruction. "Thought" is your thinking process.\n'
    'The instruction is <"${instruction}">'
)

COMMONSENSE_REASONING = (
    "You are a drone and your task is navigating to the described target location!\n\n"
    "Navigation instruction: ${instruction}\n\n"
    "Your next navigation subgoal: ${subgoal}\n\n"
    "Objects or areas you observed: ${observed}\n"
    "Based on the instruction, next navigation subgoal, and observation, list 3 objects you will "
    "probably go next from your OBSERVED OBJECTS in descending order of probability."
)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def slots(self):
        return {m.group("named") or m.group("braced") for m in string.Template.pattern.finditer(self.body)
                if m.group("named") or m.group("braced")}

    def render(self, **values):
        missing = self.slots - set(values)
        if missing:
            raise InvalidArgumentError(f"template {self.name!r} missing slots {sorted(missing)}")
        return string.Template(self.body).substitute({k: str(v) for k, v in values.items()})


TEMPLATES = {
    "task_planning": PromptTemplate("task_planning", TASK_PLANNING),
    "commonsense_reasoning": PromptTemplate("commonsense_reasoning", COMMONSENSE_REASONING),
}


@dataclass
class ClientConfig:
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    timeout: float = 60.0
    max_retries: int = 3
    cache_path: str = ".llm_cache"
    temperature: float = 0.0
    api_key_env: str = "OPENAI_API_KEY"

    def __post_init__(self):
        if not self.timeout > 0:
            raise InvalidArgumentError("timeout must be positive")
        if self.max_retries < 0:
            raise InvalidArgumentError("max_retries must be >= 0")


def http_transport(url, payload, headers, timeout):
    """POST JSON and return the decoded reply."""
    req = urllib.request.Request(url, data=json.dumps(payload).encode(), headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode())


class FoundationClient:
    def __init__(self, config=None, transport=http_transport, sleep=time.sleep):
        self.config = config or ClientConfig()
        self.transport = transport
        self.sleep = sleep
        self.calls = 0

    def _cache_file(self, kind, key_text):
        digest = hashlib.sha256(f"{kind}\n{self.config.model}\n{key_text}".encode()).hexdigest()
        return Path(self.config.cache_path) / digest[:2] / f"{digest}.json"

    def _cached(self, kind, key_text, request, extract):
        path = self._cache_file(kind, key_text)
        if path.exists():
            return json.loads(path.read_text())["response"]
        url = self.config.endpoint.rstrip("/") + ("/chat/completions" if kind == "chat" else "/embeddings")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        attempt = 0
        while True:
            try:
                self.calls += 1
                reply = self.transport(url, request, headers, self.config.timeout)
                response = extract(reply)
                break
            except (OSError, urllib.error.URLError, KeyError, IndexError, TypeError, ValueError) as exc:
                if attempt >= self.config.max_retries:
                    raise BackendError(f"{kind} request failed: {exc}", retries=attempt) from exc
                delay = 2.0 ** attempt
                log.warning("%s request failed (%s); retrying in %.1fs", kind, exc, delay)
                self.sleep(delay)
                attempt += 1
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"request": request, "response": response}, sort_keys=True))
        os.replace(tmp, path)
        return response

    def complete(self, template, **slots):
        """Render ``template`` (a name or PromptTemplate) and return the reply text."""
        if isinstance(template, str):
            template = TEMPLATES[template]
        prompt = template.render(**slots)
        request = {
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        return self._cached("chat", prompt, request, lambda r: r["choices"][0]["message"]["content"])

    def embed(self, text):
        request = {"model": self.config.model, "input": text}
        return self._cached("embed", text, request, lambda r: [float(x) for x in r["data"][0]["embedding"]])


_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.S)
_STRING = re.compile(r'"((?:[^"\\]|\\.)*)"')


def _find_object(text):
    start = text.find("{")
    end = text.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        obj = json.loads(text[start : end + 1])
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


def parse_landmark_response(raw):
    """Landmark list from a task-planning reply.

    Accepts strict JSON, JSON inside code fences or surrounding prose, and
    the loose ``"Landmark sequence": [...] "Thought": "..."`` form with
    trailing commas and no enclosing braces.
    """
    text = raw
    fence = _FENCE.search(raw)
    if fence:
        text = fence.group(1)
    obj = _find_object(text)
    if obj is not None:
        keys = {k.strip().rstrip(".").lower(): k for k in obj}
        if "landmark sequence" not in keys:
            raise ParseError('missing "Landmark sequence" field', raw=raw)
        if "thought" not in keys:
            raise ParseError('missing "Thought" field', raw=raw)
        seq = obj[keys["landmark sequence"]]
        if not isinstance(seq, list) or not all(isinstance(s, str) for s in seq):
            raise ParseError('"Landmark sequence" must be a list of strings', raw=raw)
        return [s.strip() for s in seq if s.strip()]
    m = re.search(r'"Landmark sequence\.?"\s*:\s*(.)', text, re.I)
    if not m:
        raise ParseError('missing "Landmark sequence" field', raw=raw)
    if m.group(1) != "[":
        raise ParseError('"Landmark sequence" must be a list', raw=raw, position=m.start(1))
    close = text.find("]", m.end(1))
    if close < 0:
        raise ParseError("unterminated landmark list", raw=raw, position=m.end(1))
    if not re.search(r'"Thought\.?"\s*:', text, re.I):
        raise ParseError('missing "Thought" field', raw=raw)
    items = [json.loads(f'"{s}"').strip() for s in _STRING.findall(text[m.end(1) : close])]
    return [s for s in items if s]


def parse_ranked_objects(raw, observed):
    """Up to three observed captions named in a reasoning reply, in reply order."""
    from .scoring import normalize_phrase

    by_norm = {}
    for c in observed:
        by_norm.setdefault(normalize_phrase(c), c)
    found = []
    obj = _find_object(raw)
    if obj is not None:
        lists = [v for v in obj.values() if isinstance(v, list)]
        candidates = [str(x) for x in (lists[0] if lists else [])]
    else:
        candidates = [re.sub(r"^\s*(?:\d+[.)]|[-*])\s*", "", line) for line in raw.splitlines()]
    for cand in candidates:
        key = normalize_phrase(cand)
        if key in by_norm and by_norm[key] not in found:
            found.append(by_norm[key])
    if not found:
        # free text: order observed captions by first mention
        low = normalize_phrase(raw)
        hits = sorted((low.find(k), c) for k, c in by_norm.items() if k and low.find(k) >= 0)
        found = [c for _, c in hits]
    return found[:3]
