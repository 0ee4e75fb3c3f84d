import numpy as np
import pytest

from aerialnav.agent import annotate_path, run_episode, seed_memory, surrounding_captions
from aerialnav.memory import nearest_node
from aerialnav.metrics import episode_metrics
from aerialnav.perception import OraclePerception
from aerialnav.planner import MEMORY_FOLLOW, OracleReasoner, PlannerConfig, Ports, TemplateParser, expand_path
from aerialnav.scoring import OracleScorer
from aerialnav.search import search
from aerialnav.simulator import default_intrinsics, generate_episode, generate_scene

K = default_intrinsics(64)


@pytest.fixture(scope="module")
def setting():
    scene = generate_scene(21)
    eps = [generate_episode(scene, "easy", seed=s) for s in range(3)]
    return scene, eps


def ports(scene):
    return Ports(TemplateParser(), OracleReasoner(scene), OracleScorer())


def run(scene, ep, memory=None, **cfg):
    return run_episode(scene, ep, ports(scene), OraclePerception(scene.label_table), memory=memory,
                       config=PlannerConfig(**cfg), intrinsics=K)


def test_explore_without_memory(setting):
    scene, eps = setting
    for ep in eps:
        r = run(scene, ep)
        assert r.terminated_by == "stop" and r.steps < 200
        assert set(r.modes) == {"Explore"}
        assert episode_metrics(r)["SR"] == 1.0


def test_deterministic(setting):
    scene, eps = setting
    a, b = run(scene, eps[0]), run(scene, eps[0])
    assert a.to_dict() == b.to_dict()


def test_memory_follow_matches_search(setting):
    scene, eps = setting
    ep = eps[1]
    memory = seed_memory(scene, [ep], intrinsics=K, radius=10.0)
    r = run(scene, ep, memory)
    assert r.modes and r.modes[0] == MEMORY_FOLLOW and set(r.modes) == {MEMORY_FOLLOW}
    start_id, d = nearest_node(memory, ep.start.position)
    assert d == 0
    found = search(memory, ep.landmarks, start_id, OracleScorer())
    expect = expand_path(ep.start, [memory.nodes[n].position for n in found.path])
    assert r.actions == expect
    assert episode_metrics(r)["SR"] == 1.0


def test_mode_switch_once(setting):
    scene, eps = setting
    memory = seed_memory(scene, eps[:2], intrinsics=K, radius=10.0)
    r = run(scene, eps[2], memory)
    flips = sum(1 for a, b in zip(r.modes, r.modes[1:]) if a != b)
    assert flips <= 1
    if MEMORY_FOLLOW in r.modes:
        assert r.modes[-1] == MEMORY_FOLLOW


def test_timeout_reported(setting):
    scene, eps = setting
    r = run(scene, eps[0], max_steps=5)
    assert r.terminated_by == "timeout" and r.steps == 5 and len(r.actions) == 5


def test_parse_error_is_failure(setting):
    scene, eps = setting
    ep = eps[0]
    bad = type(ep).from_dict({**ep.to_dict(), "instruction": "no slots here"})
    r = run(scene, bad)
    assert r.terminated_by == "error" and r.executed_path == [ep.start.position]


def test_annotation(setting):
    scene, eps = setting
    ep = eps[0]
    traj = annotate_path(scene, ep.reference_path, K, radius=10.0)
    assert [p for p, _ in traj] == [tuple(p) for p in ep.reference_path]
    # the last reference point is next to the final landmark
    assert ep.landmarks[-1] in traj[-1][1]
    near = surrounding_captions(scene, ep.reference_path[-1], K, OraclePerception(scene.label_table), 1e-6)
    assert near == set()


def test_granularity_from_start(setting):
    scene, eps = setting
    r = run(scene, eps[2])
    start = np.asarray(r.executed_path[0])
    for p in r.executed_path:
        off = np.asarray(p) - start
        assert off[2] / 5 == pytest.approx(round(off[2] / 5), abs=1e-9)
