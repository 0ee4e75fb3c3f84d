"""Subgraph extraction: radius cut followed by score-based 3-D NMS."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .memory import MemoryGraph, MemoryNode

DEFAULT_NMS_RADIUS = 10.0


@dataclass(frozen=True)
class PruneConfig:
    radius: float
    nms_radius: float = DEFAULT_NMS_RADIUS
    score_floor: float | None = None

    def __post_init__(self):
        if not self.radius > 0 or not self.nms_radius > 0:
            raise InvalidArgumentError("radius and nms_radius must be positive")


def _induced(m, keep, contracted=None):
    g = MemoryGraph(contracted=m.contracted if contracted is None else contracted, meta=m.meta)
    for nid in sorted(keep):
        n = m.nodes[nid]
        g.add_node(MemoryNode(n.id, n.position, n.captions, n.embedding))
    return g


def spherical_subgraph(m, center, radius):
    """Nodes within ``radius`` (inclusive) of ``center`` and the edges among them."""
    if not radius > 0:
        raise InvalidArgumentError("radius must be positive")
    c = np.asarray(center, dtype=float)
    keep = {nid for nid, n in m.nodes.items() if np.linalg.norm(n.xyz - c) <= radius}
    g = _induced(m, keep)
    for a, b, w in m.edges():
        if a in keep and b in keep:
            g.adj[a][b] = w
            g.adj[b][a] = w
    return g


def node_scores(g, landmarks, scorer):
    if not landmarks:
        return {nid: 0.0 for nid in g.nodes}
    return {nid: max(scorer(n, lm) for lm in landmarks) for nid, n in g.nodes.items()}


def nms_keep(g, scores, nms_radius, protect=()):
    """Greedy suppression; returns the kept ids.

    Nodes are visited by descending score (smaller id first on ties). A
    kept node suppresses every unvisited node closer than ``nms_radius``.
    Ids in ``protect`` are kept even when suppressed.
    """
    order = sorted(g.nodes, key=lambda nid: (-scores[nid], nid))
    pos = np.array([g.nodes[nid].position for nid in order], dtype=float).reshape(-1, 3)
    alive = np.ones(len(order), dtype=bool)
    kept = set()
    for i, nid in enumerate(order):
        if not alive[i]:
            continue
        kept.add(nid)
        near = np.linalg.norm(pos[i + 1 :] - pos[i], axis=1) < nms_radius
        alive[i + 1 :] &= ~near
    return kept | (set(protect) & set(g.nodes))


def contract_edges(g, kept):
    """Edges between kept nodes through suppressed-only interiors.

    Survivors ``s, t`` are joined when ``g`` has a path between them whose
    interior nodes are all suppressed; the weight is the shortest such path.
    """
    out = _induced(g, kept, contracted=True)
    for s in sorted(kept):
        dist = {s: 0.0}
        heap = [(0.0, s)]
        while heap:
            d, a = heapq.heappop(heap)
            if d > dist[a]:
                continue
            if a != s and a in kept:
                if s < a:
                    out.add_edge(s, a, d)
                continue
            for b, w in g.neighbors(a).items():
                nd = d + w
                if nd < dist.get(b, np.inf):
                    dist[b] = nd
                    heapq.heappush(heap, (nd, b))
    return out


def semantic_nms(g, landmarks, scorer, nms_radius=DEFAULT_NMS_RADIUS, protect=(), score_floor=None):
    scores = node_scores(g, landmarks, scorer)
    kept = nms_keep(g, scores, nms_radius, protect)
    if score_floor is not None:
        kept = {nid for nid in kept if scores[nid] >= score_floor or nid in protect}
    return contract_edges(g, kept)


def prune(m, center, landmarks, scorer, config, protect=()):
    sub = spherical_subgraph(m, center, config.radius)
    return semantic_nms(sub, landmarks, scorer, config.nms_radius, protect, config.score_floor)


def default_radius(episodes):
    """Mean straight-line start-to-goal distance over ``episodes``."""
    episodes = list(episodes)
    if not episodes:
        raise InvalidArgumentError("need at least one episode")
    d = [np.linalg.norm(np.asarray(e.start.position) - np.asarray(e.goal)) for e in episodes]
    return float(np.mean(d))
