"""Closed-loop episode execution: perceive, plan, act until Stop."""
from __future__ import annotations

import numpy as np

from .errors import NavError
from .geometry import Pose
from .memory import DEFAULT_ADJACENCY, MemoryGraph, record_trajectory
from .metrics import EpisodeResult, path_length
from .perception import OraclePerception, ground_caption
from .planner import Planner, PlannerConfig, TemplateParser
from .simulator import apply_action, default_intrinsics, render_panorama


class PanoramaObservation:
    """Lazily perceives the five-view panorama at a fixed pose."""

    def __init__(self, scene, pose, intrinsics, perception):
        self.scene = scene
        self.pose = pose
        self.intrinsics = intrinsics
        self.perception = perception

    def perceive(self):
        views = render_panorama(self.scene, self.pose, self.intrinsics)
        return self.perception.perceive_panorama(views, self.intrinsics, self.pose)


def nearby_captions(scene, pose, intrinsics, perception, radius):
    """Captions detected from ``pose`` whose grounded mean lies within ``radius``."""
    detections, cloud = PanoramaObservation(scene, pose, intrinsics, perception).perceive()
    out = set()
    for d in detections:
        mean = ground_caption(cloud, d.caption)
        if mean is not None and np.linalg.norm(mean - pose.xyz) <= radius:
            out.add(d.caption)
    return out


def surrounding_captions(scene, position, intrinsics, perception, radius):
    """Captions grounded within ``radius`` of ``position`` in any direction.

    Two opposite panoramas cover the full circle around the waypoint.
    """
    out = set()
    for heading in (0.0, 180.0):
        out |= nearby_captions(scene, Pose(tuple(position), heading), intrinsics, perception, radius)
    return out


def annotate_path(scene, path, intrinsics=None, perception=None, radius=20.0):
    """``[(position, captions), ...]`` for a flown path, ready for recording."""
    intrinsics = intrinsics or default_intrinsics()
    perception = perception or OraclePerception(scene.label_table)
    return [(tuple(p), surrounding_captions(scene, p, intrinsics, perception, radius)) for p in path]


def seed_memory(scene, episodes, memory=None, intrinsics=None, perception=None, radius=20.0,
                adjacency_threshold=DEFAULT_ADJACENCY):
    """Record each episode's reference path as a successful trajectory."""
    m = memory if memory is not None else MemoryGraph()
    for ep in episodes:
        traj = annotate_path(scene, ep.reference_path, intrinsics, perception, radius)
        m = record_trajectory(m, traj, True, adjacency_threshold)
    return m


def run_episode(scene, episode, ports, perception, memory=None, config=None, intrinsics=None):
    """Run one episode and return its :class:`EpisodeResult`.

    Port failures end the episode with ``terminated_by == "error"``.
    """
    config = config or PlannerConfig()
    intrinsics = intrinsics or default_intrinsics()
    planner = Planner(ports, config)
    pose = episode.start
    path = [pose.position]
    actions, modes = [], []
    parse_text = episode.instruction if isinstance(ports.parser, TemplateParser) else episode.fluent_instruction
    try:
        state = planner.start(pose, episode.fluent_instruction, parse_text)
    except NavError:
        return EpisodeResult(path, episode.goal, episode.reference_path, _ref_length(episode),
                             steps=0, terminated_by="error", episode_id=episode.episode_id,
                             difficulty=episode.difficulty)
    while True:
        obs = PanoramaObservation(scene, pose, intrinsics, perception)
        action, state = planner.step(state, obs, memory)
        if action == "Stop":
            break
        pose, _ = apply_action(scene, pose, action)
        state.pose = pose
        path.append(pose.position)
        actions.append(action)
        modes.append(state.mode)
    return EpisodeResult(
        executed_path=path,
        goal=episode.goal,
        reference_path=episode.reference_path,
        shortest_length=_ref_length(episode),
        steps=state.steps_taken,
        terminated_by=state.terminated_by or "stop",
        episode_id=episode.episode_id,
        difficulty=episode.difficulty,
        actions=actions,
        modes=modes,
    )


def _ref_length(episode):
    return path_length(episode.reference_path)
