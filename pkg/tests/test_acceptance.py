"""End-to-end acceptance checks; each prints one PASS/FAIL line."""
import json
import math
import sys
import time

import numpy as np
import pytest
from oracles import (
    VOCAB,
    best_walk,
    box_surface_distance,
    connected,
    dtw_brute,
    random_graph,
    suppressed_interior_distance,
)

from aerialnav import memory as mem
from aerialnav.agent import run_episode, seed_memory
from aerialnav.cli import main
from aerialnav.errors import ParseError
from aerialnav.geometry import DepthView, Pose, intrinsics_from_fov, project_view, unproject_point
from aerialnav.llm import ClientConfig, FoundationClient, parse_landmark_response
from aerialnav.metrics import EpisodeResult, dtw, episode_metrics, path_length, sdtw, spl, success
from aerialnav.perception import OraclePerception
from aerialnav.planner import OracleReasoner, Ports, TemplateParser
from aerialnav.pruning import PruneConfig, nms_keep, node_scores, prune, semantic_nms, spherical_subgraph
from aerialnav.scoring import OracleScorer
from aerialnav.search import search
from aerialnav.simulator import default_intrinsics, generate_episode, generate_scene, render_panorama

score = OracleScorer()


@pytest.fixture
def report(capsys):
    def emit(n, title, ok, detail):
        with capsys.disabled():
            sys.stdout.write(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {title}: {detail}\n")
        assert ok, detail
    return emit


def test_1_search_oracle_equivalence(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    agree = 0
    total = 500
    worst = 0.0
    for _ in range(total):
        g = random_graph(rng, max_nodes=8, p_edge=0.35)
        lms = [VOCAB[i] for i in rng.integers(0, len(VOCAB), int(rng.integers(0, 4)))]
        start = int(rng.choice(sorted(g.nodes)))
        got = search(g, lms, start, score, 0.0).score
        want = best_walk(g, lms, start, score, 2 * len(g))
        err = abs(got - want)
        worst = max(worst, err)
        agree += err <= 1e-9
    dt = time.perf_counter() - t0
    report(1, "graph-search oracle equivalence", agree == total and dt < 30,
           f"{agree}/{total} agree, max |diff| {worst:.1e}, {dt:.1f}s")


def test_2_projection_round_trip(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    k = intrinsics_from_fov(90, 64, 64)
    samples = 0
    worst = 0.0
    while samples < 10_000:
        pose = Pose(tuple(rng.uniform(-200, 200, 3)), float(rng.uniform(0, 360)))
        offset = float(rng.choice([-90, -45, 0, 45, 90]))
        depth = np.zeros((64, 64))
        idx = rng.choice(64 * 64, 200, replace=False)
        depth.flat[idx] = rng.uniform(0.5, 150, 200)
        view = DepthView(depth, (depth > 0).astype(int), offset)
        cloud = project_view(view, k, pose, {1: "x"})
        vs, us = np.nonzero(depth > 0)
        for p, u, v in zip(cloud.points, us, vs):
            uu, vv, z = unproject_point(p, k, pose, offset)
            worst = max(worst, abs(uu - u), abs(vv - v), abs(z - depth[v, u]))
        samples += len(vs)
    surf = 0.0
    npts = 0
    K = default_intrinsics(64)
    for s in range(3):
        scene = generate_scene(500 + s)
        pose = Pose((float(rng.uniform(-60, 60)), float(rng.uniform(-60, 60)), 30.0), float(rng.uniform(0, 360)))
        for view in render_panorama(scene, pose, K):
            cloud = project_view(view, K, pose, scene.label_table)
            for p, lab in zip(cloud.points, cloud.labels):
                b = scene.boxes[lab - 1]
                surf = max(surf, box_surface_distance(p, b.lo, b.hi))
                npts += 1
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and surf <= 1e-3 and npts > 0 and dt < 10
    report(2, "projection round-trip", ok,
           f"{samples} samples max err {worst:.1e}; {npts} rendered points max surface offset {surf:.1e} m; {dt:.1f}s")


def test_3_memory_merge(report):
    checks = []
    for d, want in [(14.999, 1), (15.0, 0), (15.001, 0)]:
        m = mem.trajectory_to_graph([(0, 0, 0)])
        g = mem.trajectory_to_graph([(0, d, 0)], first_id=1)
        checks.append(mem.merge(m, g, 15.0).n_edges == want)
    m = mem.trajectory_to_graph([((0, 0, 0), {"a"}), ((5, 0, 0), {"b"})])
    before = mem.save(m)
    checks.append(mem.save(mem.record_trajectory(m, [((50, 0, 0), {"c"})], False)) == before)
    rng = np.random.default_rng(11)
    lossless = 0
    for _ in range(100):
        g = random_graph(rng, max_nodes=12)
        back = mem.load(mem.save(g))
        lossless += back == g and mem.save(back) == mem.save(g)
    ok = all(checks) and lossless == 100
    report(3, "memory merge semantics", ok,
           f"boundary/identity checks {sum(checks)}/{len(checks)}, lossless round-trips {lossless}/100")


def test_4_pruning_properties(report):
    rng = np.random.default_rng(13)
    bad = []
    for i in range(100):
        g = random_graph(rng, max_nodes=9, p_edge=0.3, extent=40.0)
        lms = [VOCAB[j] for j in rng.integers(0, len(VOCAB), int(rng.integers(1, 3)))]
        center = rng.uniform(0, 40, 3)
        radius = float(rng.uniform(10, 70))
        nms_r = float(rng.uniform(3, 20))
        sph = spherical_subgraph(g, center, radius)
        out = prune(g, center, lms, score, PruneConfig(radius, nms_r))
        if not set(out.nodes) <= set(sph.nodes) <= set(g.nodes):
            bad.append((i, "subset"))
        scores = node_scores(sph, lms, score)
        kept = nms_keep(sph, scores, nms_r)
        for nid in set(sph.nodes) - kept:
            p = sph.nodes[nid].position
            if not any(math.dist(p, sph.nodes[k].position) < nms_r and scores[k] >= scores[nid] for k in kept):
                bad.append((i, "coverage"))
        nm = semantic_nms(g, lms, score, nms_r)
        survivors = set(nm.nodes)
        for a in survivors:
            for b in survivors:
                if a < b:
                    if connected(nm, a, b) != connected(g, a, b):
                        bad.append((i, "connectivity"))
                    d = suppressed_interior_distance(g, survivors, a, b)
                    got = nm.neighbors(a).get(b)
                    if (got is None) != (not math.isfinite(d)) or (got is not None and abs(got - d) > 1e-9):
                        bad.append((i, "weight"))
    report(4, "pruning properties", not bad, f"{100 - len({i for i, _ in bad})}/100 graphs clean {bad[:3]}")


def _oracle_run(scene, ep, memory=None):
    ports = Ports(TemplateParser(), OracleReasoner(scene), OracleScorer())
    return run_episode(scene, ep, ports, OraclePerception(scene.label_table), memory=memory)


def test_5_harness_easy(report):
    t0 = time.perf_counter()
    results = []
    for s in range(10):
        scene = generate_scene(s)
        for k in range(5):
            ep = generate_episode(scene, "easy", seed=1000 * s + k)
            assert len(ep.landmarks) == 2
            results.append(_oracle_run(scene, ep))
    ms = [episode_metrics(r) for r in results]
    sr = float(np.mean([m["SR"] for m in ms]))
    spl_ = float(np.mean([m["SPL"] for m in ms]))
    stopped = all(r.terminated_by == "stop" and r.steps < 200 for r in results)
    dt = time.perf_counter() - t0
    ok = len(results) == 50 and sr == 1.0 and spl_ >= 0.70 and stopped and dt < 300
    report(5, "oracle harness on 50 easy episodes", ok,
           f"SR {100 * sr:.1f}%, SPL {spl_:.3f}, all stopped before budget: {stopped}, {dt:.1f}s")


def test_6_memory_benefit(report):
    rows = []
    for s in range(6):
        scene = generate_scene(100 + s)
        for k in range(5):
            ep = generate_episode(scene, "easy", seed=7000 + 10 * s + k)
            m = seed_memory(scene, [ep], radius=10.0)
            assert mem.nearest_node(m, ep.start.position)[1] == 0
            a = _oracle_run(scene, ep, m)
            b = _oracle_run(scene, ep)
            rows.append((episode_metrics(a)["SR"], a.steps, b.steps))
    r = np.array(rows)
    sr = r[:, 0].mean()
    per_episode = bool((r[:, 1] <= r[:, 2]).all())
    ok = len(rows) == 30 and sr == 1.0 and per_episode and r[:, 2].mean() > r[:, 1].mean()
    report(6, "memory-graph benefit", ok,
           f"memory SR {100 * sr:.0f}%, mean steps {r[:, 1].mean():.2f} with memory vs {r[:, 2].mean():.2f} without; "
           f"per-episode <= holds: {per_episode}")


def test_7_metric_units(report):
    r = EpisodeResult([(0, 0, 0)], (0, 0, 0), [(0, 0, 0)], 100.0, executed_length=125.0)
    ref = [(0, 0, 0), (5, 0, 0), (10, 0, 0)]
    off = [(x, 5, z) for x, _, z in ref]
    fixture = EpisodeResult(off, (10, 0, 0), ref, path_length(ref))
    rng = np.random.default_rng(17)
    dp_ok = all(
        abs(dtw(a, b) - dtw_brute(a, b)) < 1e-9
        for a, b in ((rng.uniform(-9, 9, (int(rng.integers(1, 7)), 3)), rng.uniform(-9, 9, (int(rng.integers(1, 7)), 3)))
                     for _ in range(100))
    )
    checks = {
        "spl": abs(spl(r) - 0.8) < 1e-12,
        "sr boundary": success(EpisodeResult([(20, 0, 0)], (0, 0, 0), [(0, 0, 0)], 0)) == 1
        and success(EpisodeResult([(20.1, 0, 0)], (0, 0, 0), [(0, 0, 0)], 0)) == 0,
        "sdtw": abs(sdtw(fixture) - math.exp(-0.25)) < 1e-12,
        "dtw dp": dp_ok,
    }
    report(7, "metric unit checks", all(checks.values()), ", ".join(f"{k} {'ok' if v else 'bad'}" for k, v in checks.items()))


def test_8_determinism(report, tmp_path):
    base = ["--scenes", str(tmp_path / "scenes"), "--episodes", str(tmp_path / "eps.json"), "--seed", "8",
            "--n-scenes", "2", "--episodes-per-scene", "3"]
    assert main(["gen-scenes", *base]) == 0 and main(["gen-episodes", *base]) == 0
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["run", *base, "--output", str(d)]) == 0
        assert main(["eval", *base, "--output", str(d)]) == 0
        outs.append({f.name: f.read_bytes() for f in sorted(d.iterdir())})
    same = outs[0] == outs[1]
    report(8, "determinism", same and len(outs[0]) == 8, f"{len(outs[0])} files per run, byte-identical: {same}")


SAMPLE_RESPONSE = """"Landmark sequence": [
    "stop sign",
    "square with a tree",
    "white truck",
    "white building",
    ]
  "Thought": "The instruction outlines a series of landmarks that need to be followed in order. The first landmark is a 'stop sign,' which I need to locate first. After finding the stop sign, I will navigate to a 'square with a tree' by taking left and right turns. Then, I will continue straight and turn right until I encounter a 'white truck.' Finally, my destination is a 'white building.' I have listed these landmarks in the order they appear in the navigation process."
"""


def test_9_foundation_client(report, tmp_path):
    parsed = parse_landmark_response(SAMPLE_RESPONSE)
    ok_parse = parsed == ["stop sign", "square with a tree", "white truck", "white building"]
    rejected = 0
    variants = ['{"Thought": "t"}', '{"Landmark sequence": ["a"]}', '"Thought": "only this"',
                SAMPLE_RESPONSE.replace('"Landmark sequence"', '"Landmarks"')]
    for v in variants:
        try:
            parse_landmark_response(v)
        except ParseError:
            rejected += 1
    calls = []

    def transport(url, payload, headers, timeout):
        calls.append(url)
        return {"choices": [{"message": {"content": SAMPLE_RESPONSE}}]}

    cfg = ClientConfig(cache_path=str(tmp_path / "cache"))
    for _ in range(2):
        FoundationClient(cfg, transport).complete("task_planning", instruction="Fly to the tower.")
    first = len(calls)

    def forbidden(*a):
        raise AssertionError("network call on a warm cache")

    text = FoundationClient(cfg, forbidden).complete("task_planning", instruction="Fly to the tower.")
    ok = ok_parse and rejected == len(variants) and first == 1 and json.dumps(text) == json.dumps(SAMPLE_RESPONSE)
    report(9, "foundation client", ok,
           f"sample parse {'ok' if ok_parse else 'bad'}, rejected {rejected}/{len(variants)} variants, "
           f"transport calls {first} for 2 identical requests, 0 on warm cache")
