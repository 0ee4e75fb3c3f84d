"""Navigation metrics: NE, SR, OSR, SPL and SDTW, plus suite aggregation."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

SUCCESS_RADIUS = 20.0
METRICS = ("SR", "SPL", "OSR", "SDTW", "NE")
DIFFICULTIES = ("easy", "normal", "hard")


@dataclass
class EpisodeResult:
    executed_path: list
    goal: tuple
    reference_path: list
    shortest_length: float
    executed_length: float | None = None
    steps: int = 0
    terminated_by: str = "stop"
    episode_id: str = ""
    difficulty: str = "easy"
    actions: list = field(default_factory=list)
    modes: list = field(default_factory=list)

    def __post_init__(self):
        self.executed_path = [tuple(float(c) for c in p) for p in self.executed_path]
        if not self.executed_path:
            raise ValueError("executed_path must be non-empty")
        if self.executed_length is None:
            self.executed_length = path_length(self.executed_path)
        if self.shortest_length < 0 or self.executed_length < 0:
            raise ValueError("lengths must be non-negative")

    @property
    def final(self):
        return self.executed_path[-1]

    def to_dict(self):
        return {
            "id": self.episode_id,
            "difficulty": self.difficulty,
            "goal": list(self.goal),
            "executed_path": [list(p) for p in self.executed_path],
            "reference_path": [list(p) for p in self.reference_path],
            "shortest_length": self.shortest_length,
            "executed_length": self.executed_length,
            "steps": self.steps,
            "terminated_by": self.terminated_by,
            "actions": list(self.actions),
            "modes": list(self.modes),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            executed_path=d["executed_path"],
            goal=tuple(d["goal"]),
            reference_path=[tuple(p) for p in d["reference_path"]],
            shortest_length=d["shortest_length"],
            executed_length=d["executed_length"],
            steps=d["steps"],
            terminated_by=d["terminated_by"],
            episode_id=d.get("id", ""),
            difficulty=d.get("difficulty", "easy"),
            actions=d.get("actions", []),
            modes=d.get("modes", []),
        )


def path_length(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def navigation_error(result):
    return math.dist(result.final, result.goal)


def success(result, threshold=SUCCESS_RADIUS):
    return int(navigation_error(result) <= threshold)


def oracle_success(result, threshold=SUCCESS_RADIUS):
    g = np.asarray(result.goal, dtype=float)
    d = np.linalg.norm(np.asarray(result.executed_path) - g, axis=1)
    return int(np.min(d) <= threshold)


def spl(result, threshold=SUCCESS_RADIUS):
    if not success(result, threshold):
        return 0.0
    denom = max(result.shortest_length, result.executed_length)
    if denom == 0:
        return 1.0
    return result.shortest_length / denom


def dtw(a, b):
    """Dynamic time warping cost under Euclidean point distance."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j], acc[i, j - 1], acc[i - 1, j - 1])
    return float(acc[n, m])


def ndtw(executed, reference, threshold=SUCCESS_RADIUS):
    return math.exp(-dtw(executed, reference) / (len(reference) * threshold))


def sdtw(result, threshold=SUCCESS_RADIUS):
    if not success(result, threshold):
        return 0.0
    return ndtw(result.executed_path, result.reference_path, threshold)


def episode_metrics(result, threshold=SUCCESS_RADIUS):
    return {
        "SR": float(success(result, threshold)),
        "SPL": spl(result, threshold),
        "OSR": float(oracle_success(result, threshold)),
        "SDTW": sdtw(result, threshold),
        "NE": navigation_error(result),
    }


def aggregate(results, threshold=SUCCESS_RADIUS):
    """Per-metric means overall and per difficulty.

    Rate metrics are reported as fractions in [0, 1]; NE in meters. A
    difficulty with no episodes maps to None.
    """
    rows = [(r.difficulty, episode_metrics(r, threshold)) for r in results]

    def mean(sel):
        if not sel:
            return None
        return {k: float(np.mean([m[k] for m in sel])) for k in METRICS}

    table = {d: mean([m for diff, m in rows if diff == d]) for d in DIFFICULTIES}
    table["mean"] = mean([m for _, m in rows])
    table["count"] = len(rows)
    return table


def format_csv(table):
    """One row per split, columns SR, SPL, OSR, SDTW, NE; rates in percent."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["split", *METRICS])
    for split in (*DIFFICULTIES, "mean"):
        row = table.get(split)
        if row is None:
            continue
        w.writerow([split] + [f"{row[k] * (1 if k == 'NE' else 100):.2f}" for k in METRICS])
    return buf.getvalue()


def format_json(table):
    return json.dumps(table, indent=1, sort_keys=True)
