"""Run configuration shared by every command-line subcommand.

A config is a JSON document; missing keys take the defaults below. Every
command validates its config before touching the filesystem.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .llm import ClientConfig
from .simulator import DIFFICULTY_LANDMARKS

PERCEPTION_BACKENDS = ("oracle", "mock", "remote")
SCORER_BACKENDS = ("oracle", "embedding", "remote")
PARSERS = ("template", "remote")
REASONERS = ("oracle", "remote")


@dataclass
class PerceptionConfig:
    backend: str = "oracle"
    canned: str | None = None  # JSON list of [caption, [u0, v0, u1, v1], confidence]


@dataclass
class ScorerConfig:
    backend: str = "oracle"
    embeddings: str | None = None


@dataclass
class Constants:
    theta: float = 0.4
    adjacency_threshold: float = 15.0
    prune_radius: float | None = None
    nms_radius: float = 10.0
    edge_penalty_rate: float = 0.01
    max_steps: int = 200
    arrival_radius: float = 20.0
    success_threshold: float = 20.0
    annotation_radius: float = 10.0
    approach_standoff: float = 10.0


@dataclass
class RunConfig:
    scenes: str = "scenes"
    episodes: str = "episodes.json"
    memory: str | None = None
    output: str = "results"
    seed: int = 0
    n_scenes: int = 4
    boxes_per_scene: int = 18
    episodes_per_scene: int = 5
    difficulties: list = field(default_factory=lambda: ["easy"])
    resolution: int = 64
    workers: int = 1
    parser: str = "template"
    reasoner: str = "oracle"
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    constants: Constants = field(default_factory=Constants)
    llm: dict = field(default_factory=dict)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        nested = {"perception": PerceptionConfig, "scorer": ScorerConfig, "constants": Constants}
        kw = {}
        for name, sub in nested.items():
            if name in d:
                kw[name] = _build(sub, d.pop(name), name)
        kw.update(_check_keys(cls, d, ""))
        return cls(**kw)

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(doc)

    def to_dict(self):
        return asdict(self)

    def merged(self, overrides):
        """Copy with dotted-key ``overrides`` applied (``{"constants.theta": 0.5}``)."""
        d = self.to_dict()
        for key, value in overrides.items():
            node = d
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return RunConfig.from_dict(d)

    # -- validation --------------------------------------------------------

    def validate(self, require=()):
        """Raise :class:`ConfigError` on bad values; ``require`` names path keys that must exist."""
        c = self.constants
        for name in ("theta", "adjacency_threshold", "nms_radius", "arrival_radius",
                     "success_threshold", "annotation_radius"):
            if not getattr(c, name) > 0:
                raise ConfigError(f"constants.{name} must be positive")
        if not c.theta <= 1:
            raise ConfigError("constants.theta must lie in (0, 1]")
        if c.prune_radius is not None and not c.prune_radius > 0:
            raise ConfigError("constants.prune_radius must be positive when set")
        if c.edge_penalty_rate < 0 or c.approach_standoff < 0:
            raise ConfigError("edge_penalty_rate and approach_standoff must be >= 0")
        if c.max_steps < 1:
            raise ConfigError("constants.max_steps must be >= 1")
        for name in ("n_scenes", "boxes_per_scene", "episodes_per_scene", "resolution", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        bad = [x for x in self.difficulties if x not in DIFFICULTY_LANDMARKS]
        if bad or not self.difficulties:
            raise ConfigError(f"difficulties must be drawn from {sorted(DIFFICULTY_LANDMARKS)}")
        _choice("perception.backend", self.perception.backend, PERCEPTION_BACKENDS)
        _choice("scorer.backend", self.scorer.backend, SCORER_BACKENDS)
        _choice("parser", self.parser, PARSERS)
        _choice("reasoner", self.reasoner, REASONERS)
        if self.perception.backend == "mock" and not self.perception.canned:
            raise ConfigError("perception.backend 'mock' needs perception.canned")
        if self.scorer.backend == "embedding" and not self.scorer.embeddings:
            raise ConfigError("scorer.backend 'embedding' needs scorer.embeddings")
        try:
            self.client_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"llm: {exc}") from exc
        paths = {"scenes": self.scenes, "episodes": self.episodes, "memory": self.memory,
                 "perception.canned": self.perception.canned, "scorer.embeddings": self.scorer.embeddings}
        for key in require:
            p = paths[key]
            if p is None or not Path(p).exists():
                raise ConfigError(f"{key}: {p!r} does not exist")
        for key in ("perception.canned", "scorer.embeddings"):
            if paths[key] is not None and not Path(paths[key]).exists():
                raise ConfigError(f"{key}: {paths[key]!r} does not exist")
        return self

    def client_config(self):
        return ClientConfig(**self.llm)

    def uses_remote(self):
        return "remote" in (self.parser, self.reasoner, self.scorer.backend, self.perception.backend)

    # -- seeds -------------------------------------------------------------

    def scene_seed(self, index):
        return _split(self.seed, 0, index)

    def episode_seed(self, scene_index, difficulty, k):
        return _split(self.seed, 1, scene_index, sorted(DIFFICULTY_LANDMARKS).index(difficulty), k)


def _split(*key):
    return int(np.random.SeedSequence(list(key)).generate_state(1)[0])


def _choice(key, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{key} must be one of {list(allowed)}, got {value!r}")


def _check_keys(cls, d, prefix):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    return d


def _build(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be an object")
    return cls(**_check_keys(cls, d, name + "."))
