"""Landmark-sequence graph search over a memory graph.

Layer ``i`` of the score table holds, for every node ``w``, the best
log-probability of a walk from the start that has matched landmarks
``1..i`` in order and currently stands at ``w``. Each layer is seeded from
the previous one plus the landmark affinity of ``w``, then spread along the
graph with a max-Dijkstra pass where each edge costs
``edge_penalty_rate * length``.

Ties are broken by fewer moves, then by smaller node id, so that with a
zero penalty the search stops where the last landmark was matched.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

from .errors import InvalidArgumentError, NoPathError

NEG_INF = -math.inf
DEFAULT_PENALTY_RATE = 0.01


@dataclass
class ScoreTable:
    q: list
    hops: list
    pred: list
    start: int

    @property
    def n(self):
        return len(self.q) - 1


@dataclass
class SearchResult:
    path: list
    score: float
    destination: int
    assignment: list = field(default_factory=list)
    landmark_scores: list = field(default_factory=list)
    table: ScoreTable | None = field(default=None, repr=False)


def _better(q1, h1, q2, h2):
    return q1 > q2 or (q1 == q2 and h1 < h2)


def _relax(graph, q, hops, pred, layer, rate):
    """In-place max-Dijkstra over one layer; values only ever increase."""
    heap = [(-v, hops[w], w) for w, v in q.items() if v > NEG_INF]
    heapq.heapify(heap)
    done = set()
    while heap:
        negv, h, a = heapq.heappop(heap)
        if a in done or -negv != q[a] or h != hops[a]:
            continue
        done.add(a)
        for b, w in graph.neighbors(a).items():
            if b in done:
                continue
            cand = q[a] - rate * w
            if _better(cand, h + 1, q[b], hops[b]):
                q[b] = cand
                hops[b] = h + 1
                pred[b] = (layer, a)
                heapq.heappush(heap, (-cand, h + 1, b))


def build_table(graph, landmarks, start, scorer, edge_penalty_rate=DEFAULT_PENALTY_RATE):
    if start not in graph:
        raise InvalidArgumentError(f"start node {start!r} not in graph")
    ids = sorted(graph.nodes)
    q0 = {w: NEG_INF for w in ids}
    h0 = {w: 0 for w in ids}
    p0 = {w: None for w in ids}
    q0[start] = 0.0
    _relax(graph, q0, h0, p0, 0, edge_penalty_rate)
    qs, hs, ps = [q0], [h0], [p0]
    for i, lm in enumerate(landmarks, start=1):
        prev_q, prev_h = qs[-1], hs[-1]
        q = {}
        h = {}
        p = {}
        for w in ids:
            if prev_q[w] > NEG_INF:
                q[w] = prev_q[w] + scorer(graph.nodes[w], lm)
                p[w] = (i - 1, w)
            else:
                q[w] = NEG_INF
                p[w] = None
            h[w] = prev_h[w]
        _relax(graph, q, h, p, i, edge_penalty_rate)
        qs.append(q)
        hs.append(h)
        ps.append(p)
    return ScoreTable(qs, hs, ps, start)


def backtrack(table, destination, n=None):
    """Walk predecessor links from ``(n, destination)`` back to the start."""
    n = table.n if n is None else n
    if table.q[n].get(destination, NEG_INF) == NEG_INF:
        raise NoPathError(f"node {destination!r} unreachable at layer {n}")
    nodes = []
    layer, w = n, destination
    while True:
        nodes.append(w)
        link = table.pred[layer][w]
        if link is None:
            break
        layer, w = link
    nodes.reverse()
    path = [nodes[0]]
    for w in nodes[1:]:
        if w != path[-1]:
            path.append(w)
    return path


def _assignment(table, destination):
    """Node at which each landmark layer was entered, following pred links."""
    out = [None] * table.n
    layer, w = table.n, destination
    while True:
        link = table.pred[layer][w]
        if link is None:
            break
        if link[0] == layer - 1:
            out[layer - 1] = w
        layer, w = link
    return out


def search(graph, landmarks, start, scorer, edge_penalty_rate=DEFAULT_PENALTY_RATE):
    """Best walk from ``start`` traversing ``landmarks`` in order."""
    table = build_table(graph, landmarks, start, scorer, edge_penalty_rate)
    last_q, last_h = table.q[-1], table.hops[-1]
    dest = None
    for w in sorted(graph.nodes):
        if last_q[w] == NEG_INF:
            continue
        if dest is None or _better(last_q[w], last_h[w], last_q[dest], last_h[dest]):
            dest = w
    path = backtrack(table, dest)
    assign = _assignment(table, dest)
    lscores = [scorer(graph.nodes[w], lm) for w, lm in zip(assign, landmarks)]
    return SearchResult(path, last_q[dest], dest, assign, lscores, table)
