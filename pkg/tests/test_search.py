import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import VOCAB, best_assignment, best_walk, random_graph

from aerialnav.errors import InvalidArgumentError, NoPathError
from aerialnav.memory import MemoryGraph, MemoryNode
from aerialnav.scoring import OracleScorer
from aerialnav.search import NEG_INF, backtrack, build_table, search

LOG_HIT = math.log1p(-1e-4)
score = OracleScorer()


def line(caps=({}, {}, {})):
    g = MemoryGraph()
    for i, c in enumerate(caps):
        g.add_node(MemoryNode(i, (10.0 * i, 0, 0), frozenset(c)))
    for i in range(len(caps) - 1):
        g.add_edge(i, i + 1)
    return g


A, B, C = 0, 1, 2


class TestExamples:
    def test_no_landmarks(self):
        r = search(line(), [], A, score, 0.0)
        assert r.path == [A] and r.score == 0.0

    def test_no_landmarks_default_penalty(self):
        assert search(line(), [], B, score).path == [B]

    def test_line_single(self):
        g = line(({}, {}, {"tower"}))
        r = search(g, ["tower"], A, score, 0.0)
        assert r.path == [A, B, C]
        assert r.score == pytest.approx(LOG_HIT)
        assert r.score == pytest.approx(best_walk(g, ["tower"], A, score, 4))

    def test_line_revisit(self):
        g = line(({"gate"}, {}, {"tower"}))
        r = search(g, ["tower", "gate"], A, score, 0.0)
        assert r.path == [A, B, C, B, A]
        assert r.score == pytest.approx(2 * LOG_HIT)
        assert r.assignment == [C, A]
        assert r.score == pytest.approx(best_walk(g, ["tower", "gate"], A, score, 6))

    def test_match_at_start(self):
        g = line(({"tower"}, {}, {}))
        r = search(g, ["tower"], A, score)
        assert r.path == [A] and r.destination == A

    def test_penalty_charged(self):
        g = line(({}, {}, {"tower"}))
        r = search(g, ["tower"], A, score, 0.01)
        assert r.path == [A, B, C]
        assert r.score == pytest.approx(LOG_HIT - 0.2)

    def test_bad_start(self):
        with pytest.raises(InvalidArgumentError):
            search(line(), ["tower"], 9, score)

    def test_disconnected_goal_unreachable(self):
        g = line()
        g.add_node(MemoryNode(7, (500, 0, 0), frozenset({"tower"})))
        r = search(g, ["tower"], A, score, 0.0)
        # the tower node is cut off: the best reachable score is a miss
        assert 7 not in r.path and r.score == pytest.approx(math.log(1e-4))


class TestBacktrack:
    def test_start_layer0(self):
        t = build_table(line(), [], B, score, 0.0)
        assert backtrack(t, B, 0) == [B]

    def test_same_node_transition(self):
        g = line(({"tower"}, {}, {}))
        t = build_table(g, ["tower"], A, score, 0.0)
        assert backtrack(t, A) == [A]

    def test_collapses_duplicates(self):
        g = line(({"gate"}, {}, {"tower"}))
        t = build_table(g, ["tower", "gate"], A, score, 0.0)
        path = backtrack(t, A)
        assert path == [A, B, C, B, A]
        assert all(a != b for a, b in zip(path, path[1:]))

    def test_unreachable(self):
        g = line()
        g.add_node(MemoryNode(5, (99, 0, 0)))
        t = build_table(g, ["x"], A, score)
        assert t.q[1][5] == NEG_INF
        with pytest.raises(NoPathError):
            backtrack(t, 5)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, max_nodes=7, p_edge=0.4)
    n = int(rng.integers(0, 4))
    lms = [VOCAB[i] for i in rng.integers(0, len(VOCAB), n)]
    start = int(rng.choice(sorted(g.nodes)))
    return g, lms, start


class TestProperties:
    @given(st.integers(0, 2**32 - 1))
    def test_matches_assignment_oracle(self, seed):
        g, lms, start = _random_case(seed)
        r = search(g, lms, start, score, 0.0)
        best, _ = best_assignment(g, lms, start, score)
        assert r.score == pytest.approx(best, abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_walk_oracle(self, seed):
        g, lms, start = _random_case(seed)
        r = search(g, lms, start, score, 0.0)
        assert r.score == pytest.approx(best_walk(g, lms, start, score, 2 * len(g)), abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    def test_path_valid(self, seed):
        g, lms, start = _random_case(seed)
        r = search(g, lms, start, score)
        assert r.path[0] == start and r.path[-1] == r.destination
        assert all(b in g.neighbors(a) for a, b in zip(r.path, r.path[1:]))
        # assigned nodes lie on the path in landmark order
        idx = 0
        for w in r.assignment:
            idx = r.path.index(w, idx)
        assert sum(r.landmark_scores) >= r.score - 1e-9

    @given(st.integers(0, 2**32 - 1), st.floats(0, 0.05), st.floats(0, 0.05))
    def test_penalty_monotone(self, seed, r1, r2):
        g, lms, start = _random_case(seed)
        lo, hi = sorted((r1, r2))
        assert search(g, lms, start, score, hi).score <= search(g, lms, start, score, lo).score + 1e-12

    @given(st.integers(0, 2**32 - 1))
    def test_layer_dominance(self, seed):
        g, lms, start = _random_case(seed)
        t = build_table(g, lms, start, score, 0.0)
        assert t.q[0][start] == 0.0
        for i in range(1, t.n + 1):
            top = max(t.q[i - 1].values())
            assert max(t.q[i].values()) <= top + 1e-12
        for i in range(t.n + 1):
            for w, link in t.pred[i].items():
                if link is not None:
                    assert t.q[link[0]][link[1]] > NEG_INF

    @given(st.integers(0, 2**32 - 1))
    def test_deterministic(self, seed):
        g, lms, start = _random_case(seed)
        a, b = search(g, lms, start, score), search(g, lms, start, score)
        assert (a.path, a.score) == (b.path, b.score)
