"""Hierarchical planner: landmark, object (OROI) and motion levels.

The landmark level turns an instruction into an ordered list of sub-goals.
The object level picks, among the captions currently in view, the ones most
likely to lead toward the active sub-goal. The motion level grounds the
chosen caption to a 3-D waypoint and expands it into discrete actions, or
hands over to memory-graph search once the agent is close to known ground.
"""
from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NavError, NoOroiError, NoPointsError, ParseError
from .geometry import Pose, normalize_heading
from .llm import parse_landmark_response, parse_ranked_objects
from .memory import DEFAULT_ADJACENCY, nearest_node
from .perception import ground_caption
from .pruning import PruneConfig, prune
from .scoring import normalize_phrase
from .search import DEFAULT_PENALTY_RATE, search
from .simulator import STEP, TURN, kinematics

EXPLORE = "Explore"
MEMORY_FOLLOW = "MemoryFollow"


def _half_up(x):
    return int(math.floor(x + 0.5))


# -- landmark level ---------------------------------------------------------

@dataclass
class LandmarkSequence:
    landmarks: list
    cursor: int = 0

    def __post_init__(self):
        self.landmarks = [str(s).strip() for s in self.landmarks]
        if any(not s for s in self.landmarks):
            raise ParseError("landmark phrases must be non-empty", raw=self.landmarks)

    @property
    def current(self):
        return self.landmarks[self.cursor] if self.cursor < len(self.landmarks) else None

    @property
    def remaining(self):
        return self.landmarks[self.cursor :]

    @property
    def done(self):
        return self.cursor >= len(self.landmarks)

    def __len__(self):
        return len(self.landmarks)


class TemplateParser:
    """Reads the ``{...}`` landmark slots of generated instructions."""

    name = "template"

    def parse(self, instruction):
        slots = re.findall(r"\{([^{}]+)\}", instruction)
        if not slots:
            raise ParseError("instruction has no {landmark} slots", raw=instruction)
        return [s.strip() for s in slots]


class LLMParser:
    name = "remote"

    def __init__(self, client):
        self.client = client

    def parse(self, instruction):
        raw = self.client.complete("task_planning", instruction=instruction)
        return parse_landmark_response(raw)


def parse_landmarks(instruction, parser):
    if not instruction or not instruction.strip():
        raise ParseError("empty instruction", raw=instruction)
    return LandmarkSequence(parser.parse(instruction))


# -- object level -----------------------------------------------------------

# object kinds an aerial agent can follow when nothing better is known
NAVIGABLE_HINTS = ("road", "street", "path", "square", "grass", "grassland", "lawn", "plaza", "park",
                   "bridge", "river")


class OracleReasoner:
    """Deterministic stand-in for commonsense OROI reasoning.

    Ranking: exact match with the sub-goal first; then, if a scene is
    attached and knows the sub-goal, by distance between each observed
    object and the sub-goal object; otherwise by word overlap with the
    sub-goal, then navigable surfaces, then first appearance.
    """

    name = "oracle"

    def __init__(self, scene=None):
        self.scene = scene

    def rank(self, instruction, subgoal, observed):
        distinct = list(dict.fromkeys(observed))
        target = normalize_phrase(subgoal)
        exact = [c for c in distinct if normalize_phrase(c) == target]
        rest = [c for c in distinct if c not in exact]
        goal_box = self._box(subgoal)
        if goal_box is not None:
            def key(c):
                b = self._box(c)
                d = np.linalg.norm(b.center[:2] - goal_box.center[:2]) if b is not None else np.inf
                return (d, distinct.index(c))
        else:
            words = set(target.split())

            def key(c):
                norm = normalize_phrase(c)
                overlap = len(words & set(norm.split()))
                # judged by the head noun: "street lamp" is a lamp
                nav = bool(norm) and norm.split()[-1] in NAVIGABLE_HINTS
                return (-overlap, not nav, distinct.index(c))
        return (exact + sorted(rest, key=key))[:3]

    def _box(self, caption):
        if self.scene is None:
            return None
        target = normalize_phrase(caption)
        for b in self.scene.boxes:
            if normalize_phrase(b.caption) == target:
                return b
        return None


class LLMReasoner:
    name = "remote"

    def __init__(self, client):
        self.client = client

    def rank(self, instruction, subgoal, observed):
        raw = self.client.complete(
            "commonsense_reasoning", instruction=instruction, subgoal=subgoal, observed=", ".join(observed)
        )
        return parse_ranked_objects(raw, observed)


def select_oroi(instruction, subgoal, observed_captions, reasoner):
    if not observed_captions:
        raise NoOroiError(f"nothing observed while looking for {subgoal!r}")
    ranked = reasoner.rank(instruction, subgoal, list(observed_captions))
    allowed = set(observed_captions)
    ranked = [c for c in ranked if c in allowed][:3]
    if not ranked:
        raise NoOroiError(f"reasoner returned no observed object for {subgoal!r}")
    return ranked


# -- motion level -----------------------------------------------------------

def oroi_to_waypoint(cloud, oroi):
    mean = ground_caption(cloud, oroi)
    if mean is None:
        raise NoPointsError(f"no cloud points labeled {oroi!r}")
    return mean


def approach_point(position, waypoint, standoff):
    """``waypoint`` pulled back horizontally toward ``position`` by ``standoff``."""
    p = np.asarray(position, dtype=float)
    w = np.asarray(waypoint, dtype=float)
    d = w[:2] - p[:2]
    dist = float(np.hypot(*d))
    xy = p[:2] if dist <= standoff else w[:2] - d / dist * standoff
    return np.array([xy[0], xy[1], w[2]])


def waypoint_to_actions(pose, waypoint, step=STEP, turn=TURN):
    """Vertical moves, then in-place turns, then forward moves.

    Each count is rounded half-up to whole steps; when the horizontal
    residual rounds to zero no turn is issued either.
    """
    px, py, pz = pose.position
    wx, wy, wz = (float(c) for c in waypoint)
    acts = []
    nz = _half_up(abs(wz - pz) / step)
    acts += ["Ascend" if wz > pz else "Descend"] * nz
    horiz = math.hypot(wx - px, wy - py)
    nf = _half_up(horiz / step)
    if nf == 0:
        return acts
    bearing = math.degrees(math.atan2(wy - py, wx - px))
    delta = normalize_heading(bearing - pose.heading)
    if delta > 180.0:
        delta -= 360.0
    nt = _half_up(abs(delta) / turn)
    if abs(delta) == 180.0:
        acts += ["TurnLeft"] * nt
    else:
        acts += ["TurnLeft" if delta > 0 else "TurnRight"] * nt
    acts += ["Forward"] * nf
    return acts


def expand_path(pose, waypoints, step=STEP, turn=TURN):
    """Actions visiting ``waypoints`` in turn, planned on obstacle-free kinematics."""
    acts = []
    for wp in waypoints:
        leg = waypoint_to_actions(pose, wp, step, turn)
        for a in leg:
            pose = kinematics(pose, a)
        acts += leg
    return acts


# -- policy -----------------------------------------------------------------

@dataclass
class PlannerConfig:
    theta: float = 0.4
    adjacency_threshold: float = DEFAULT_ADJACENCY
    arrival_radius: float = 20.0
    max_steps: int = 200
    fallback_limit: int = 4
    edge_penalty_rate: float = DEFAULT_PENALTY_RATE
    prune_radius: float | None = None
    nms_radius: float = 10.0
    handover_affinity: float = 0.5
    approach_standoff: float = 10.0


@dataclass
class Ports:
    parser: object
    reasoner: object
    scorer: object


@dataclass
class PlannerState:
    pose: Pose
    landmarks: LandmarkSequence
    instruction: str = ""
    mode: str = EXPLORE
    steps_taken: int = 0
    pending_actions: deque = field(default_factory=deque)
    fallbacks: int = 0
    last_decision_position: tuple | None = None
    scan_position: tuple | None = None
    last_oroi: tuple | None = None
    scan_memory: dict = field(default_factory=dict)
    memory_path: list | None = None
    terminated_by: str | None = None
    log: list = field(default_factory=list)

    @property
    def done(self):
        return self.terminated_by is not None


class Planner:
    """Decides one low-level action per call to :meth:`step`.

    ``observation`` must provide ``perceive() -> (detections, cloud)`` for
    the current pose; it is only consulted when the action queue is empty.
    """

    def __init__(self, ports, config=None):
        self.ports = ports
        self.config = config or PlannerConfig()

    def start(self, pose, instruction, parse_text=None):
        seq = parse_landmarks(parse_text or instruction, self.ports.parser)
        return PlannerState(pose=pose, landmarks=seq, instruction=instruction)

    def step(self, state, observation, memory=None):
        cfg = self.config
        if state.done:
            return "Stop", state
        if state.steps_taken >= cfg.max_steps:
            return self._stop(state, "timeout")
        if not state.pending_actions:
            if state.mode == MEMORY_FOLLOW:
                return self._stop(state, "stop")
            try:
                finished = self._decide(state, observation, memory)
            except NavError as exc:
                state.log.append({"step": state.steps_taken, "error": str(exc)})
                return self._stop(state, "error")
            if finished:
                return self._stop(state, finished)
            if not state.pending_actions:
                return self._stop(state, "stop")
        action = state.pending_actions.popleft()
        state.steps_taken += 1
        return action, state

    def _stop(self, state, cause):
        state.pending_actions.clear()
        state.terminated_by = cause
        return "Stop", state

    def arrived(self, detections, cloud, landmark, position):
        target = normalize_phrase(landmark)
        for d in detections:
            if d.confidence >= self.config.theta and normalize_phrase(d.caption) == target:
                mean = ground_caption(cloud, d.caption)
                if mean is not None and np.linalg.norm(mean - np.asarray(position)) <= self.config.arrival_radius:
                    return True
        return False

    def _decide(self, state, observation, memory):
        """Queue the next batch of actions; returns a stop cause or None."""
        cfg = self.config
        pos = np.asarray(state.pose.position)
        if state.last_decision_position is not None and np.allclose(pos, state.last_decision_position):
            moved = False
        else:
            moved = True
        state.last_decision_position = tuple(pos)

        detections, cloud = observation.perceive()
        seq = state.landmarks
        while not seq.done and self.arrived(detections, cloud, seq.current, pos):
            state.log.append({"step": state.steps_taken, "reached": seq.current})
            seq.cursor += 1
        if seq.done:
            return "stop"

        if memory is not None and len(memory) and self._try_handover(state, memory):
            return None

        means = {}
        for d in detections:
            if d.confidence >= cfg.theta and d.caption not in means:
                m = ground_caption(cloud, d.caption)
                if m is not None:
                    means[d.caption] = m
        target = normalize_phrase(seq.current)
        if state.scan_position is not None and np.allclose(pos, state.scan_position):
            for c, m in state.scan_memory.items():
                means.setdefault(c, m)
        elif not any(normalize_phrase(c) == target for c in means):
            # sub-goal out of view: look behind before committing
            state.scan_position = tuple(pos)
            state.scan_memory = means
            state.pending_actions.extend(["TurnLeft"] * _half_up(180.0 / TURN))
            state.log.append({"step": state.steps_taken, "scan": seq.current})
            return None
        try:
            candidates = select_oroi(state.instruction, seq.current, list(means), self.ports.reasoner)
        except NoOroiError:
            candidates = []
        for c in candidates:
            wp = means[c]
            is_goal = normalize_phrase(c) == target
            if not is_goal and np.linalg.norm(wp - pos) <= cfg.arrival_radius:
                continue
            # close in fully on the final sub-goal
            standoff = 0.0 if is_goal and len(seq.remaining) == 1 else cfg.approach_standoff
            acts = waypoint_to_actions(state.pose, approach_point(pos, wp, standoff))
            if not acts:
                continue
            if state.last_oroi is not None and state.last_oroi[1] == c and np.allclose(state.last_oroi[0], pos):
                continue
            state.last_oroi = (tuple(pos), c)
            state.pending_actions.extend(acts)
            state.log.append({"step": state.steps_taken, "oroi": c, "waypoint": [float(x) for x in wp]})
            if moved:
                state.fallbacks = 0
            return None
        if state.fallbacks >= cfg.fallback_limit:
            return "stop"
        state.fallbacks += 1
        # climb over nearby occluders, then sweep a new sector
        state.pending_actions.extend(["Ascend"] * 2 + ["TurnLeft"] * _half_up(90.0 / TURN))
        state.log.append({"step": state.steps_taken, "fallback": state.fallbacks})
        return None

    def _try_handover(self, state, memory):
        cfg = self.config
        near = nearest_node(memory, state.pose.position)
        if near is None or not near[1] < cfg.adjacency_threshold:
            return False
        start_id = near[0]
        remaining = state.landmarks.remaining
        graph = memory
        if cfg.prune_radius:
            graph = prune(memory, state.pose.position, remaining, self.ports.scorer,
                          PruneConfig(cfg.prune_radius, cfg.nms_radius), protect=(start_id,))
        result = search(graph, remaining, start_id, self.ports.scorer, cfg.edge_penalty_rate)
        floor = math.log(cfg.handover_affinity)
        if any(s < floor for s in result.landmark_scores):
            return False
        waypoints = [graph.nodes[n].position for n in result.path]
        acts = expand_path(state.pose, waypoints)
        state.mode = MEMORY_FOLLOW
        state.memory_path = list(result.path)
        state.pending_actions.extend(acts)
        state.log.append({"step": state.steps_taken, "handover": start_id, "path": list(result.path)})
        return True
