"""Landmark affinity scorers.

A scorer maps (memory node, landmark phrase) to a log-affinity <= 0. Working
in log space turns the product of per-landmark probabilities along a path
into a sum, which is what the layered search accumulates.
"""
from __future__ import annotations

import json
import math
import re

import numpy as np

from .errors import InvalidArgumentError, ScoringError

DEFAULT_DELTA = 1e-4
_ARTICLES = {"a", "an", "the"}
_PUNCT = re.compile(r"[\"'`.,;:!?]")


def normalize_phrase(text):
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    words = _PUNCT.sub(" ", str(text).lower()).split()
    return " ".join(w for w in words if w not in _ARTICLES)


def oracle_score(captions, landmark, delta=DEFAULT_DELTA):
    target = normalize_phrase(landmark)
    if any(normalize_phrase(c) == target for c in captions):
        return math.log1p(-delta)
    return math.log(delta)


def embedding_score(embedding, phrase_embedding, delta=DEFAULT_DELTA):
    """log of (1 + cos) / 2, floored at ``delta``."""
    a = np.asarray(embedding, dtype=float)
    b = np.asarray(phrase_embedding, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return math.log(delta)
    cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return math.log(max((1.0 + cos) / 2.0, delta))


class OracleScorer:
    """Exact caption match after normalization."""

    name = "oracle"

    def __init__(self, delta=DEFAULT_DELTA):
        self.delta = delta

    def __call__(self, node, landmark):
        return oracle_score(node.captions, landmark, self.delta)


class EmbeddingScorer:
    """Cosine affinity between node embeddings and a phrase-embedding table."""

    name = "embedding"

    def __init__(self, table, delta=DEFAULT_DELTA):
        self.table = {normalize_phrase(k): np.asarray(v, dtype=float) for k, v in table.items()}
        self.delta = delta

    def phrase_vector(self, landmark):
        key = normalize_phrase(landmark)
        if key not in self.table:
            raise ScoringError(f"no embedding for phrase {landmark!r}")
        return self.table[key]

    def __call__(self, node, landmark):
        if node.embedding is None:
            raise ScoringError(f"node {node.id} has no embedding")
        return embedding_score(node.embedding, self.phrase_vector(landmark), self.delta)

    @classmethod
    def from_file(cls, path, delta=DEFAULT_DELTA):
        """Load ``{"format_version": 1, "embeddings": {phrase: [floats]}}``."""
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format_version") != 1:
            raise InvalidArgumentError(f"{path}: unsupported embedding table version")
        return cls(doc["embeddings"], delta)


class RemoteScorer:
    """Embeds captions and phrases through a foundation client, then cosine.

    The node's captions are embedded one by one and the best match wins.
    """

    name = "remote"

    def __init__(self, client, delta=DEFAULT_DELTA):
        self.client = client
        self.delta = delta

    def __call__(self, node, landmark):
        target = self.client.embed(normalize_phrase(landmark))
        if node.embedding is not None:
            return embedding_score(node.embedding, target, self.delta)
        if not node.captions:
            return math.log(self.delta)
        return max(embedding_score(self.client.embed(normalize_phrase(c)), target, self.delta)
                   for c in sorted(node.captions))


def make_scorer(backend, delta=DEFAULT_DELTA, table=None, client=None):
    if backend == "oracle":
        return OracleScorer(delta)
    if backend == "embedding":
        if table is None:
            raise InvalidArgumentError("embedding scorer needs a phrase-embedding table")
        return EmbeddingScorer(table, delta)
    if backend == "remote":
        if client is None:
            raise InvalidArgumentError("remote scorer needs a foundation client")
        return RemoteScorer(client, delta)
    raise InvalidArgumentError(f"unknown scorer backend {backend!r}")
