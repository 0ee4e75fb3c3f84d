"""Topological memory graph built from past trajectories.

Nodes carry a position, the set of captions observed there and an optional
embedding. Edges are undirected and weighted by Euclidean length, except in
contracted graphs produced by pruning, where a weight is the length of the
path it replaces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ParseError

GRAPH_FORMAT_VERSION = 1
DEFAULT_ADJACENCY = 15.0
DEDUP_RADIUS = 0.5
WEIGHT_TOL = 1e-6


@dataclass
class MemoryNode:
    id: int
    position: tuple
    captions: frozenset = frozenset()
    embedding: tuple | None = None

    def __post_init__(self):
        p = tuple(float(c) for c in self.position)
        if len(p) != 3 or not all(math.isfinite(c) for c in p):
            raise InvalidArgumentError(f"node {self.id}: position must be a finite 3-vector")
        self.position = p
        self.captions = frozenset(self.captions)
        if self.embedding is not None:
            self.embedding = tuple(float(x) for x in self.embedding)

    @property
    def xyz(self):
        return np.asarray(self.position)


def _dist(a, b):
    return math.dist(a.position, b.position)


class MemoryGraph:
    def __init__(self, nodes=None, edges=None, contracted=False, meta=None):
        self.nodes = {}
        self.adj = {}
        self.contracted = contracted
        self.meta = dict(meta or {})
        for n in nodes or ():
            self.add_node(n)
        for a, b, *w in edges or ():
            self.add_edge(a, b, w[0] if w else None)

    def add_node(self, node):
        if node.id in self.nodes:
            raise InvalidArgumentError(f"duplicate node id {node.id}")
        self.nodes[node.id] = node
        self.adj[node.id] = {}

    def add_edge(self, a, b, weight=None):
        """Insert edge a-b; an existing edge for the pair is left untouched."""
        if a == b:
            raise InvalidArgumentError(f"self-loop on node {a}")
        if a not in self.nodes or b not in self.nodes:
            raise InvalidArgumentError(f"edge ({a}, {b}) references a missing node")
        if b in self.adj[a]:
            return
        d = _dist(self.nodes[a], self.nodes[b])
        if weight is None:
            weight = d
        self._check_weight(a, b, float(weight), d)
        self.adj[a][b] = float(weight)
        self.adj[b][a] = float(weight)

    def _check_weight(self, a, b, w, d):
        if self.contracted:
            ok = w >= d - WEIGHT_TOL
        else:
            ok = abs(w - d) < WEIGHT_TOL
        if not ok:
            raise InvalidArgumentError(f"edge ({a}, {b}) weight {w} inconsistent with distance {d}")

    def edges(self):
        """Sorted ``(a, b, weight)`` triples with ``a < b``."""
        return sorted((a, b, w) for a, nb in self.adj.items() for b, w in nb.items() if a < b)

    def neighbors(self, a):
        return self.adj[a]

    @property
    def n_edges(self):
        return sum(len(nb) for nb in self.adj.values()) // 2

    def __len__(self):
        return len(self.nodes)

    def __contains__(self, nid):
        return nid in self.nodes

    def __eq__(self, other):
        if not isinstance(other, MemoryGraph):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.edges() == other.edges()
            and self.contracted == other.contracted
            and self.meta == other.meta
        )

    def copy(self):
        g = MemoryGraph(contracted=self.contracted, meta=self.meta)
        for n in self.nodes.values():
            g.add_node(MemoryNode(n.id, n.position, n.captions, n.embedding))
        for a, b, w in self.edges():
            g.adj[a][b] = w
            g.adj[b][a] = w
        return g

    def next_id(self):
        return max(self.nodes, default=-1) + 1

    def rekeyed(self, offset):
        g = MemoryGraph(contracted=self.contracted, meta=self.meta)
        for n in self.nodes.values():
            g.add_node(MemoryNode(n.id + offset, n.position, n.captions, n.embedding))
        for a, b, w in self.edges():
            g.adj[a + offset][b + offset] = w
            g.adj[b + offset][a + offset] = w
        return g

    def positions(self):
        ids = sorted(self.nodes)
        return ids, np.array([self.nodes[i].position for i in ids], dtype=float).reshape(-1, 3)

    def validate(self):
        for a, b, w in self.edges():
            self._check_weight(a, b, w, _dist(self.nodes[a], self.nodes[b]))


def trajectory_to_graph(waypoints, first_id=0):
    """Path graph over ``[(position, captions), ...]`` (captions may be omitted)."""
    if not waypoints:
        raise InvalidArgumentError("trajectory must contain at least one waypoint")
    g = MemoryGraph()
    for i, wp in enumerate(waypoints):
        if len(wp) == 2 and not np.isscalar(wp[0]):
            pos, caps = wp
        else:
            pos, caps = wp, ()
        g.add_node(MemoryNode(first_id + i, pos, frozenset(caps)))
    for i in range(1, len(waypoints)):
        g.add_edge(first_id + i - 1, first_id + i)
    return g


def merge(m, g, adjacency_threshold=DEFAULT_ADJACENCY, dedup_radius=DEDUP_RADIUS):
    """Union of ``m`` and ``g`` plus adjacency edges between close nodes.

    Nodes of ``g`` lying within ``dedup_radius`` of a node of ``m`` are folded
    into it (captions unioned). Every remaining cross pair closer than
    ``adjacency_threshold`` (strict) gains an edge.
    """
    clash = set(m.nodes) & set(g.nodes)
    if clash:
        raise InvalidArgumentError(f"node ids {sorted(clash)[:5]} appear in both graphs")
    out = m.copy()
    m_ids, m_pos = m.positions()
    alias = {}
    for nid in sorted(g.nodes):
        node = g.nodes[nid]
        if len(m_ids) and dedup_radius > 0:
            d = np.linalg.norm(m_pos - node.xyz, axis=1)
            j = int(np.argmin(d))
            if d[j] < dedup_radius:
                host = out.nodes[m_ids[j]]
                host.captions = host.captions | node.captions
                if host.embedding is None:
                    host.embedding = node.embedding
                alias[nid] = m_ids[j]
                continue
        out.add_node(MemoryNode(nid, node.position, node.captions, node.embedding))
        alias[nid] = nid
    for a, b, w in g.edges():
        a2, b2 = alias[a], alias[b]
        if a2 != b2:
            out.add_edge(a2, b2, None if a2 != a or b2 != b else w)
    fresh = [nid for nid in sorted(g.nodes) if alias[nid] == nid]
    for nid in fresh:
        if not len(m_ids):
            break
        d = np.linalg.norm(m_pos - g.nodes[nid].xyz, axis=1)
        for j in np.nonzero(d < adjacency_threshold)[0]:
            out.add_edge(m_ids[j], nid)
    return out


def record_trajectory(m, trajectory, success, adjacency_threshold=DEFAULT_ADJACENCY):
    """Merge a trajectory into memory only when its episode succeeded."""
    if not success:
        return m
    g = trajectory_to_graph(trajectory, first_id=m.next_id())
    if not len(m):
        return g
    return merge(m, g, adjacency_threshold)


def nearest_node(m, position):
    """``(node_id, distance)`` of the closest node, lowest id on ties; None if empty."""
    if not len(m):
        return None
    ids, pos = m.positions()
    d = np.linalg.norm(pos - np.asarray(position, dtype=float), axis=1)
    j = int(np.argmin(d))  # first minimum == smallest id since ids are sorted
    return ids[j], float(d[j])


def save(m):
    doc = {
        "format_version": GRAPH_FORMAT_VERSION,
        "contracted": m.contracted,
        "meta": m.meta,
        "nodes": [
            {
                "id": n.id,
                "position": list(n.position),
                "captions": sorted(n.captions),
                **({"embedding": list(n.embedding)} if n.embedding is not None else {}),
            }
            for n in (m.nodes[i] for i in sorted(m.nodes))
        ],
        "edges": [{"a": a, "b": b, "weight": w} for a, b, w in m.edges()],
    }
    return json.dumps(doc, indent=1, sort_keys=True).encode("utf-8")


def load(data):
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, raw=text, position=f"line {exc.lineno} col {exc.colno} (char {exc.pos})") from exc
    if not isinstance(doc, dict):
        raise ParseError("graph document must be an object", raw=text, position="$")
    if doc.get("format_version") != GRAPH_FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {doc.get('format_version')!r}", raw=text, position="$.format_version")
    g = MemoryGraph(contracted=bool(doc.get("contracted", False)), meta=doc.get("meta", {}))
    for i, nd in enumerate(doc.get("nodes", [])):
        try:
            emb = nd.get("embedding")
            g.add_node(MemoryNode(int(nd["id"]), tuple(nd["position"]), frozenset(nd.get("captions", [])), emb))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad node: {exc}", raw=text, position=f"$.nodes[{i}]") from exc
    for i, ed in enumerate(doc.get("edges", [])):
        try:
            a, b, w = int(ed["a"]), int(ed["b"]), float(ed["weight"])
            g.add_edge(a, b, w)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad edge: {exc}", raw=text, position=f"$.edges[{i}]") from exc
    return g
