"""Synthetic box city: raycast rendering, kinematics and episode generation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GenerationError, InvalidArgumentError, ParseError
from .geometry import (
    PANORAMA_OFFSETS,
    CameraIntrinsics,
    DepthView,
    Pose,
    intrinsics_from_fov,
    pixel_rays,
)

STEP = 5.0
TURN = 15.0
SCENE_FORMAT_VERSION = 1
EPISODE_FORMAT_VERSION = 1

ACTIONS = ("Forward", "TurnLeft", "TurnRight", "Ascend", "Descend", "Stop")

DIFFICULTY_LANDMARKS = {"easy": (2, 2), "normal": (3, 4), "hard": (5, 6)}

COLORS = ["red", "blue", "white", "yellow", "green", "black", "orange", "grey", "brown", "purple"]
KINDS = [
    "water tower", "gate", "billboard", "truck", "building", "tower", "stop sign",
    "kiosk", "warehouse", "chimney", "church", "statue", "tent", "silo", "bus",
]


def default_intrinsics(resolution=64):
    return intrinsics_from_fov(90, resolution, resolution)


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple
    caption: str

    def __post_init__(self):
        lo = tuple(float(c) for c in self.lo)
        hi = tuple(float(c) for c in self.hi)
        if any(a > b for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"box {self.caption!r} has min > max")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self):
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2.0

    def surface_distance(self, p):
        """Unsigned distance from ``p`` to the box surface."""
        p = np.asarray(p, dtype=float)
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        outside = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        if np.any(outside > 0):
            return float(np.linalg.norm(outside))
        return float(np.min(np.minimum(p - lo, hi - p)))


@dataclass
class Scene:
    boxes: list
    bounds: tuple = ((-200.0, -200.0, 0.0), (200.0, 200.0, 120.0))
    seed: int = 0
    unique_captions: bool = True

    def __post_init__(self):
        if self.unique_captions:
            caps = [b.caption for b in self.boxes]
            if len(set(caps)) != len(caps):
                raise InvalidArgumentError("box captions must be unique")
        self._lo = np.array([b.lo for b in self.boxes], dtype=float).reshape(-1, 3)
        self._hi = np.array([b.hi for b in self.boxes], dtype=float).reshape(-1, 3)

    @property
    def label_table(self):
        return {i + 1: b.caption for i, b in enumerate(self.boxes)}

    def box_by_caption(self, caption):
        for b in self.boxes:
            if b.caption == caption:
                return b
        return None

    def in_bounds(self, p):
        lo, hi = self.bounds
        return all(a <= c <= b for a, c, b in zip(lo, p, hi))

    def segment_hits(self, a, b):
        """True when the closed segment a-b touches any box."""
        if not len(self.boxes):
            return False
        a = np.asarray(a, dtype=float)
        d = np.asarray(b, dtype=float) - a
        t0 = np.zeros(len(self.boxes))
        t1 = np.ones(len(self.boxes))
        for k in range(3):
            if d[k] == 0.0:
                inside = (self._lo[:, k] <= a[k]) & (a[k] <= self._hi[:, k])
                t1 = np.where(inside, t1, -1.0)
                continue
            ta = (self._lo[:, k] - a[k]) / d[k]
            tb = (self._hi[:, k] - a[k]) / d[k]
            t0 = np.maximum(t0, np.minimum(ta, tb))
            t1 = np.minimum(t1, np.maximum(ta, tb))
        return bool(np.any(t0 <= t1))

    def to_dict(self):
        return {
            "format_version": SCENE_FORMAT_VERSION,
            "seed": self.seed,
            "bounds": [list(self.bounds[0]), list(self.bounds[1])],
            "unique_captions": self.unique_captions,
            "boxes": [{"min": list(b.lo), "max": list(b.hi), "caption": b.caption} for b in self.boxes],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format_version") != SCENE_FORMAT_VERSION:
            raise ParseError(f"unsupported scene format_version {d.get('format_version')!r}", position="format_version")
        try:
            boxes = [Box(tuple(b["min"]), tuple(b["max"]), b["caption"]) for b in d["boxes"]]
            bounds = (tuple(d["bounds"][0]), tuple(d["bounds"][1]))
        except (KeyError, TypeError, IndexError) as exc:
            raise ParseError(f"malformed scene document: {exc}", position="boxes") from exc
        return cls(boxes, bounds, int(d.get("seed", 0)), bool(d.get("unique_captions", True)))

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, raw=text, position=f"line {exc.lineno} col {exc.colno}") from exc
        return cls.from_dict(d)


def _visible_boxes(scene, pose, intrinsics, view_offset):
    """Indices of boxes not entirely outside the horizontal view wedge (conservative)."""
    if not scene.boxes:
        return np.zeros(0, dtype=int)
    corners = np.stack([np.where(np.array(m)[None, :], scene._hi, scene._lo)
                        for m in np.ndindex(2, 2, 2)], axis=1)  # (B, 8, 3)
    rel = corners[..., :2] - pose.xyz[:2]
    a = math.radians(pose.heading + view_offset)
    fwd = rel @ np.array([math.cos(a), math.sin(a)])
    left = rel @ np.array([-math.sin(a), math.cos(a)])
    half = max(intrinsics.cx, intrinsics.width - intrinsics.cx) / intrinsics.fx
    behind = np.all(fwd <= 0, axis=1)
    too_left = np.all(left > half * fwd, axis=1)
    too_right = np.all(-left > half * fwd, axis=1)
    # boxes around the camera are never culled
    around = np.all((scene._lo[:, :2] <= pose.xyz[:2]) & (pose.xyz[:2] <= scene._hi[:, :2]), axis=1)
    return np.nonzero(around | ~(behind | too_left | too_right))[0]


def render(scene, pose, intrinsics, view_offset=0.0):
    """Planar depth and box labels seen from ``pose`` (0/0 where nothing is hit)."""
    if not scene.in_bounds(pose.position):
        raise InvalidArgumentError(f"pose {pose.position} outside scene bounds")
    rays = pixel_rays(intrinsics, view_offset, pose.heading).reshape(-1, 3)
    depth = np.zeros(len(rays))
    label = np.zeros(len(rays), dtype=np.int64)
    idx = _visible_boxes(scene, pose, intrinsics, view_offset)
    if len(idx):
        o = pose.xyz
        n_rays = len(rays)
        tmin = np.zeros((n_rays, len(idx)))
        tmax = np.full((n_rays, len(idx)), np.inf)
        for k in range(3):
            dk = rays[:, k][:, None]
            lo = scene._lo[idx, k][None, :]
            hi = scene._hi[idx, k][None, :]
            par = dk == 0.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (lo - o[k]) / dk
                tb = (hi - o[k]) / dk
            near = np.where(par, -np.inf, np.minimum(ta, tb))
            far = np.where(par, np.inf, np.maximum(ta, tb))
            inside = (lo <= o[k]) & (o[k] <= hi)
            far = np.where(par & ~inside, -np.inf, far)
            tmin = np.maximum(tmin, near)
            tmax = np.minimum(tmax, far)
        t = np.where(tmin <= tmax, tmin, np.inf)
        best = np.argmin(t, axis=1)
        tbest = t[np.arange(n_rays), best]
        ok = np.isfinite(tbest) & (tbest > 0)
        depth[ok] = tbest[ok]
        label[ok] = idx[best[ok]] + 1
    shape = (intrinsics.height, intrinsics.width)
    return DepthView(depth.reshape(shape), label.reshape(shape), view_offset)


def render_panorama(scene, pose, intrinsics, offsets=PANORAMA_OFFSETS):
    return [render(scene, pose, intrinsics, off) for off in offsets]


def kinematics(pose, action):
    """Pose after ``action`` ignoring obstacles."""
    x, y, z = pose.position
    h = pose.heading
    if action == "Forward":
        a = math.radians(h)
        return Pose((x + STEP * math.cos(a), y + STEP * math.sin(a), z), h)
    if action == "Ascend":
        return Pose((x, y, z + STEP), h)
    if action == "Descend":
        return Pose((x, y, z - STEP), h)
    if action == "TurnLeft":
        return Pose(pose.position, h + TURN)
    if action == "TurnRight":
        return Pose(pose.position, h - TURN)
    if action == "Stop":
        return pose
    raise InvalidArgumentError(f"unknown action {action!r}")


def apply_action(scene, pose, action):
    """Execute ``action``; blocked translations leave the pose unchanged.

    Returns ``(pose, collided)``.
    """
    new = kinematics(pose, action)
    if new.position == pose.position:
        return new, False
    if not scene.in_bounds(new.position) or scene.segment_hits(pose.position, new.position):
        return pose, True
    return new, False


@dataclass
class Episode:
    episode_id: str
    scene_path: str
    start: Pose
    instruction: str
    landmarks: list
    goal: tuple
    reference_path: list
    difficulty: str = "easy"
    scene: Scene | None = field(default=None, repr=False, compare=False)

    @property
    def fluent_instruction(self):
        return self.instruction.replace("{", "").replace("}", "")

    def to_dict(self):
        return {
            "id": self.episode_id,
            "scene": self.scene_path,
            "difficulty": self.difficulty,
            "start": {"position": list(self.start.position), "heading": self.start.heading},
            "instruction": self.instruction,
            "landmarks": list(self.landmarks),
            "goal": list(self.goal),
            "reference_path": [list(p) for p in self.reference_path],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                episode_id=str(d["id"]),
                scene_path=d["scene"],
                start=Pose(tuple(d["start"]["position"]), d["start"]["heading"]),
                instruction=d["instruction"],
                landmarks=list(d["landmarks"]),
                goal=tuple(float(c) for c in d["goal"]),
                reference_path=[tuple(float(c) for c in p) for p in d["reference_path"]],
                difficulty=d.get("difficulty", "easy"),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed episode: {exc}") from exc


def dump_episodes(episodes):
    doc = {"format_version": EPISODE_FORMAT_VERSION, "episodes": [e.to_dict() for e in episodes]}
    return json.dumps(doc, indent=1, sort_keys=True)


def load_episodes(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, raw=text, position=f"line {exc.lineno} col {exc.colno}") from exc
    if doc.get("format_version") != EPISODE_FORMAT_VERSION:
        raise ParseError(f"unsupported episode format_version {doc.get('format_version')!r}", position="format_version")
    return [Episode.from_dict(e) for e in doc["episodes"]]


def generate_scene(seed, n_boxes=18, extent=200.0, min_separation=45.0, max_height=40.0):
    """Random sparse city of uniquely captioned boxes on the ground plane."""
    rng = np.random.default_rng(seed)
    names = [f"{c} {k}" for c in COLORS for k in KINDS]
    order = rng.permutation(len(names))
    centers = []
    boxes = []
    attempts = 0
    while len(boxes) < n_boxes:
        attempts += 1
        if attempts > 20000:
            raise GenerationError(f"could only place {len(boxes)} of {n_boxes} boxes")
        c = rng.uniform(-extent + 20, extent - 20, size=2)
        if any(np.hypot(*(c - o)) < min_separation for o in centers):
            continue
        hx, hy = rng.uniform(3.0, 6.0, size=2)
        h = rng.uniform(8.0, max_height)
        boxes.append(Box((c[0] - hx, c[1] - hy, 0.0), (c[0] + hx, c[1] + hy, h), names[order[len(boxes)]]))
        centers.append(c)
    return Scene(boxes, ((-extent, -extent, 0.0), (extent, extent, 120.0)), int(seed))


def _corridor_clear(scene, a, b, exclude, margin):
    """No box other than ``exclude`` comes within ``margin`` of the 2-D segment a-b."""
    a = np.asarray(a[:2], dtype=float)
    b = np.asarray(b[:2], dtype=float)
    d = b - a
    L2 = float(d @ d)
    for i, box in enumerate(scene.boxes):
        if i in exclude:
            continue
        # closest point of the footprint rectangle to the segment, sampled densely
        ts = np.linspace(0.0, 1.0, 64) if L2 > 0 else np.zeros(1)
        pts = a + ts[:, None] * d
        lo, hi = np.asarray(box.lo[:2]), np.asarray(box.hi[:2])
        gap = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
        if np.min(np.linalg.norm(gap, axis=1)) < margin:
            return False
    return True


def _bearing(a, b):
    return math.degrees(math.atan2(b[1] - a[1], b[0] - a[0]))


_TEMPLATES_FIRST = ["Take off and fly toward the {%s}", "First, head to the {%s}", "Fly to the {%s}"]
_TEMPLATES_MID = ["then pass the {%s}", "continue to the {%s}", "then fly past the {%s}"]
_TEMPLATES_LAST = ["and finally stop at the {%s}.", "and stop in front of the {%s}.", "then land next to the {%s}."]


def make_instruction(captions, rng):
    parts = [_TEMPLATES_FIRST[rng.integers(len(_TEMPLATES_FIRST))] % captions[0]]
    for c in captions[1:-1]:
        parts.append(_TEMPLATES_MID[rng.integers(len(_TEMPLATES_MID))] % c)
    parts.append(_TEMPLATES_LAST[rng.integers(len(_TEMPLATES_LAST))] % captions[-1])
    return ", ".join(parts)


def _grounded(scene, pose, caption, perception, intrinsics):
    """Grounded mean of ``caption`` from the front panorama, else the rear one."""
    from .perception import ground_caption

    for turn in (0.0, 180.0):
        p = Pose(pose.position, pose.heading + turn)
        views = render_panorama(scene, p, intrinsics)
        _, cloud = perception.perceive_panorama(views, intrinsics, p)
        mean = ground_caption(cloud, caption)
        if mean is not None:
            return mean
    return None


def generate_episode(scene, difficulty, seed, scene_path="", episode_id=None,
                     spawn_range=(60.0, 110.0), leg_range=(60.0, 110.0),
                     intrinsics=None, arrival_radius=20.0, approach_standoff=10.0,
                     max_attempts=400):
    """Sample a landmark chain, a replayable reference path and an instruction.

    The reference path is produced with the same motion primitive the agent
    uses and records every translation step, so consecutive waypoints are
    one 5 m move apart and exactly reachable by replay.
    """
    from .perception import OraclePerception
    from .planner import approach_point, waypoint_to_actions

    if difficulty not in DIFFICULTY_LANDMARKS:
        raise InvalidArgumentError(f"difficulty must be one of {sorted(DIFFICULTY_LANDMARKS)}")
    intrinsics = intrinsics or default_intrinsics()
    lo_n, hi_n = DIFFICULTY_LANDMARKS[difficulty]
    if len(scene.boxes) < lo_n:
        raise GenerationError(f"scene has {len(scene.boxes)} boxes, {difficulty} needs {lo_n}")
    rng = np.random.default_rng(seed)
    perception = OraclePerception(scene.label_table)
    lo_b, hi_b = np.asarray(scene.bounds[0]), np.asarray(scene.bounds[1])
    centers = np.array([b.center for b in scene.boxes])

    for _ in range(max_attempts):
        n = int(rng.integers(lo_n, hi_n + 1))
        chain = [int(rng.integers(len(scene.boxes)))]
        ok = True
        while len(chain) < n:
            prev = chain[-1]
            d = np.hypot(*(centers[:, :2] - centers[prev, :2]).T)
            cand = [j for j in np.nonzero((d >= leg_range[0]) & (d <= leg_range[1]))[0] if j not in chain]
            cand = [j for j in cand if _corridor_clear(scene, centers[prev], centers[j], {prev, j}, 8.0)]
            if len(chain) >= 2:
                # no hairpins: heading may change by less than 120 degrees
                ahead = centers[prev, :2] - centers[chain[-2], :2]
                ahead /= np.linalg.norm(ahead)
                keep = []
                for j in cand:
                    fwd = centers[j, :2] - centers[prev, :2]
                    if fwd @ ahead / np.linalg.norm(fwd) > -0.5:
                        keep.append(j)
                cand = keep
            if not cand:
                ok = False
                break
            chain.append(int(rng.choice(cand)))
        if not ok:
            continue

        first = centers[chain[0]]
        r = rng.uniform(*spawn_range)
        ang = rng.uniform(0, 2 * math.pi)
        sx, sy = first[0] + r * math.cos(ang), first[1] + r * math.sin(ang)
        sz = STEP * int(rng.integers(2, 7))
        start_xyz = np.array([sx, sy, sz])
        if np.any(start_xyz < lo_b + 10) or np.any(start_xyz[:2] > hi_b[:2] - 10):
            continue
        if any(b.surface_distance(start_xyz) < 12.0 or (
            b.lo[0] <= sx <= b.hi[0] and b.lo[1] <= sy <= b.hi[1]) for b in scene.boxes):
            continue
        if not _corridor_clear(scene, start_xyz, first, {chain[0]}, 8.0):
            continue
        if any(np.hypot(*(centers[i, :2] - start_xyz[:2])) < 2 * arrival_radius for i in chain):
            continue
        heading0 = _bearing(start_xyz, first) + rng.uniform(-60, 60)
        heading0 = TURN * math.floor(heading0 / TURN + 0.5)
        start = Pose(tuple(start_xyz), heading0)

        pose = start
        path = [start.position]
        failed = False
        for i, idx in enumerate(chain):
            caption = scene.boxes[idx].caption
            final = i == len(chain) - 1
            # legs planned like the agent: approach the perceived landmark
            for _leg in range(4):
                mean = _grounded(scene, pose, caption, perception, intrinsics)
                if mean is None or np.linalg.norm(mean - pose.xyz) <= arrival_radius:
                    break
                target = approach_point(pose.xyz, mean, 0.0 if final else approach_standoff)
                acts = waypoint_to_actions(pose, target)
                if not acts:
                    break
                for a in acts:
                    pose, hit = apply_action(scene, pose, a)
                    if hit:
                        failed = True
                        break
                    if pose.position != path[-1]:
                        path.append(pose.position)
                if failed:
                    break
            if failed or mean is None or np.linalg.norm(mean - pose.xyz) > arrival_radius:
                failed = True
                break
        if failed:
            continue
        goal = tuple(float(c) for c in scene.boxes[chain[-1]].center)
        if np.linalg.norm(np.asarray(path[-1]) - goal) > arrival_radius:
            continue
        captions = [scene.boxes[i].caption for i in chain]
        return Episode(
            episode_id=episode_id if episode_id is not None else f"{difficulty}-{seed}",
            scene_path=scene_path,
            start=start,
            instruction=make_instruction(captions, rng),
            landmarks=captions,
            goal=goal,
            reference_path=[tuple(float(c) for c in p) for p in path],
            difficulty=difficulty,
            scene=scene,
        )
    raise GenerationError(f"no valid {difficulty} episode after {max_attempts} attempts (seed {seed})")

