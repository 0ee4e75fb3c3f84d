"""Command-line entry point: ``aerialnav <subcommand> [flags]``.

Subcommands: gen-scenes, gen-episodes, build-memory, run, prune, eval.
Flags mirror :class:`RunConfig` keys; values from ``--config`` win over
flags. Exit status is 0 only when every requested item was produced.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import memory as mem
from .agent import run_episode, seed_memory
from .config import RunConfig
from .errors import ConfigError, NavError
from .llm import FoundationClient
from .metrics import EpisodeResult, aggregate, format_csv, format_json
from .perception import make_perception
from .planner import LLMParser, LLMReasoner, OracleReasoner, PlannerConfig, Ports, TemplateParser
from .pruning import PruneConfig, default_radius, prune
from .scoring import EmbeddingScorer, make_scorer
from .simulator import Scene, default_intrinsics, dump_episodes, generate_episode, generate_scene, load_episodes

log = logging.getLogger("aerialnav")


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temp file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- loading helpers --------------------------------------------------------

def _scene_files(directory):
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise ConfigError(f"no scene files in {directory}")
    return files


def load_scene(path):
    return Scene.loads(Path(path).read_text())


def load_episode_file(path):
    """Episodes with their scenes attached; scene paths resolve against the file's directory."""
    path = Path(path)
    episodes = load_episodes(path.read_text())
    cache = {}
    for ep in episodes:
        sp = (path.parent / ep.scene_path).resolve()
        if sp not in cache:
            cache[sp] = load_scene(sp)
        ep.scene = cache[sp]
    return episodes


def _memory_for(memory_arg, scene_path):
    """Memory graph for ``scene_path``: a single file, or ``<dir>/<scene stem>.json``."""
    if memory_arg is None:
        return None
    p = Path(memory_arg)
    if p.is_dir():
        p = p / f"{Path(scene_path).stem}.json"
        if not p.exists():
            return None
    return mem.load(p.read_bytes())


def build_ports(cfg, scene):
    client = FoundationClient(cfg.client_config()) if cfg.uses_remote() else None
    parser = TemplateParser() if cfg.parser == "template" else LLMParser(client)
    reasoner = OracleReasoner(scene) if cfg.reasoner == "oracle" else LLMReasoner(client)
    if cfg.scorer.backend == "embedding":
        scorer = EmbeddingScorer.from_file(cfg.scorer.embeddings)
    else:
        scorer = make_scorer(cfg.scorer.backend, client=client)
    return Ports(parser, reasoner, scorer)


def build_perception(cfg, scene):
    canned = None
    if cfg.perception.backend == "mock":
        canned = json.loads(Path(cfg.perception.canned).read_text())
    return make_perception(cfg.perception.backend, cfg.constants.theta, scene.label_table, canned)


def planner_config(cfg):
    c = cfg.constants
    return PlannerConfig(
        theta=c.theta,
        adjacency_threshold=c.adjacency_threshold,
        arrival_radius=c.arrival_radius,
        max_steps=c.max_steps,
        edge_penalty_rate=c.edge_penalty_rate,
        prune_radius=c.prune_radius,
        nms_radius=c.nms_radius,
        approach_standoff=c.approach_standoff,
    )


# -- subcommands ------------------------------------------------------------

def cmd_gen_scenes(cfg, args):
    cfg.validate()
    out = Path(cfg.scenes)
    for i in range(cfg.n_scenes):
        scene = generate_scene(cfg.scene_seed(i), n_boxes=cfg.boxes_per_scene)
        write_atomic(out / f"scene_{i:03d}.json", scene.dumps())
    print(f"wrote {cfg.n_scenes} scenes to {out}")
    return 0


def cmd_gen_episodes(cfg, args):
    cfg.validate(require=("scenes",))
    out = Path(cfg.episodes)
    intrinsics = default_intrinsics(cfg.resolution)
    episodes = []
    failures = 0
    for i, sp in enumerate(_scene_files(cfg.scenes)):
        scene = load_scene(sp)
        rel = os.path.relpath(sp.resolve(), out.resolve().parent)
        for diff in cfg.difficulties:
            for k in range(cfg.episodes_per_scene):
                try:
                    episodes.append(generate_episode(
                        scene, diff, cfg.episode_seed(i, diff, k), scene_path=rel,
                        episode_id=f"{sp.stem}-{diff}-{k:03d}", intrinsics=intrinsics,
                        arrival_radius=cfg.constants.arrival_radius,
                        approach_standoff=cfg.constants.approach_standoff))
                except NavError as exc:
                    failures += 1
                    log.error("%s %s #%d: %s", sp.name, diff, k, exc)
    write_atomic(out, dump_episodes(episodes))
    print(f"wrote {len(episodes)} episodes to {out}")
    return 0 if failures == 0 else 1


def cmd_build_memory(cfg, args):
    cfg.validate(require=("episodes",))
    if cfg.memory is None:
        raise ConfigError("build-memory needs --memory (output directory)")
    episodes = load_episode_file(cfg.episodes)
    intrinsics = default_intrinsics(cfg.resolution)
    by_scene = {}
    for ep in episodes:
        by_scene.setdefault(ep.scene_path, []).append(ep)
    out = Path(cfg.memory)
    for scene_path, eps in sorted(by_scene.items()):
        scene = eps[0].scene
        m = seed_memory(scene, eps, intrinsics=intrinsics, perception=build_perception(cfg, scene),
                        radius=cfg.constants.annotation_radius,
                        adjacency_threshold=cfg.constants.adjacency_threshold)
        m.meta = {"scene": scene_path, "default_radius": default_radius(eps), "episodes": len(eps)}
        write_atomic(out / f"{Path(scene_path).stem}.json", mem.save(m).decode())
        print(f"{Path(scene_path).stem}: {len(m)} nodes, {m.n_edges} edges")
    return 0


def _run_one(cfg, ep, memory_arg):
    memory = _memory_for(memory_arg, ep.scene_path)
    result = run_episode(ep.scene, ep, build_ports(cfg, ep.scene), build_perception(cfg, ep.scene),
                         memory=memory, config=planner_config(cfg), intrinsics=default_intrinsics(cfg.resolution))
    return ep.episode_id, json.dumps(result.to_dict(), indent=1, sort_keys=True)


def _run_job(job):
    cfg_dict, ep_dict, scene_dict, memory_arg = job
    from .simulator import Episode

    cfg = RunConfig.from_dict(cfg_dict)
    ep = Episode.from_dict(ep_dict)
    ep.scene = Scene.from_dict(scene_dict)
    try:
        return _run_one(cfg, ep, memory_arg)
    except NavError as exc:
        log.error("episode %s did not run: %s", ep.episode_id, exc)
        return ep.episode_id, None


def cmd_run(cfg, args):
    cfg.validate(require=("episodes",))
    if cfg.memory is not None and not Path(cfg.memory).exists():
        raise ConfigError(f"memory: {cfg.memory!r} does not exist")
    episodes = load_episode_file(cfg.episodes)
    out = Path(cfg.output)
    done = 0
    if cfg.workers > 1:
        jobs = [(cfg.to_dict(), ep.to_dict(), ep.scene.to_dict(), cfg.memory) for ep in episodes]
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = pool.map(_run_job, jobs)
            for ep_id, text in results:
                if text is not None:
                    write_atomic(out / f"{ep_id}.json", text)
                    done += 1
    else:
        for ep in episodes:
            try:
                ep_id, text = _run_one(cfg, ep, cfg.memory)
            except NavError as exc:
                log.error("episode %s did not run: %s", ep.episode_id, exc)
                continue
            write_atomic(out / f"{ep_id}.json", text)
            done += 1
    print(f"ran {done}/{len(episodes)} episodes into {out}")
    return 0 if done == len(episodes) else 1


def cmd_prune(cfg, args):
    cfg.validate(require=("memory",))
    if Path(cfg.memory).is_dir():
        raise ConfigError("prune needs a single memory graph file")
    m = mem.load(Path(cfg.memory).read_bytes())
    radius = args.radius or cfg.constants.prune_radius or m.meta.get("default_radius")
    if not radius:
        raise ConfigError("no pruning radius: pass --radius or set constants.prune_radius")
    scorer = build_ports(cfg, None).scorer
    g = prune(m, args.center, args.landmarks, scorer, PruneConfig(radius, cfg.constants.nms_radius))
    write_atomic(args.out, mem.save(g).decode())
    print(f"pruned {len(m)} -> {len(g)} nodes (radius {radius:.1f} m) into {args.out}")
    return 0


def cmd_eval(cfg, args):
    cfg.validate()
    src = Path(args.results or cfg.output)
    files = sorted(f for f in src.glob("*.json") if f.name != "metrics.json")
    if not files:
        raise ConfigError(f"no result files in {src}")
    results = [EpisodeResult.from_dict(json.loads(f.read_text())) for f in files]
    table = aggregate(results, cfg.constants.success_threshold)
    report = Path(args.report or src)
    write_atomic(report / "metrics.csv", format_csv(table))
    write_atomic(report / "metrics.json", format_json(table) + "\n")
    sys.stdout.write(format_csv(table))
    return 0


# -- argument parsing -------------------------------------------------------

FLAG_KEYS = {
    "scenes": "scenes", "episodes": "episodes", "memory": "memory", "output": "output", "seed": "seed",
    "n_scenes": "n_scenes", "episodes_per_scene": "episodes_per_scene", "difficulties": "difficulties",
    "resolution": "resolution", "workers": "workers", "parser": "parser", "reasoner": "reasoner",
    "perception": "perception.backend", "scorer": "scorer.backend", "embeddings": "scorer.embeddings",
    "canned": "perception.canned", "theta": "constants.theta", "adjacency_threshold": "constants.adjacency_threshold",
    "prune_radius": "constants.prune_radius", "nms_radius": "constants.nms_radius",
    "edge_penalty_rate": "constants.edge_penalty_rate", "max_steps": "constants.max_steps",
    "arrival_radius": "constants.arrival_radius", "success_threshold": "constants.success_threshold",
}


def _common(p):
    p.add_argument("--config", help="JSON RunConfig; its values override flags")
    p.add_argument("--scenes")
    p.add_argument("--episodes")
    p.add_argument("--memory")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-scenes", dest="n_scenes", type=int)
    p.add_argument("--episodes-per-scene", dest="episodes_per_scene", type=int)
    p.add_argument("--difficulties", nargs="+")
    p.add_argument("--resolution", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--parser")
    p.add_argument("--reasoner")
    p.add_argument("--perception")
    p.add_argument("--scorer")
    p.add_argument("--embeddings")
    p.add_argument("--canned")
    p.add_argument("--theta", type=float)
    p.add_argument("--adjacency-threshold", dest="adjacency_threshold", type=float)
    p.add_argument("--prune-radius", dest="prune_radius", type=float)
    p.add_argument("--nms-radius", dest="nms_radius", type=float)
    p.add_argument("--edge-penalty-rate", dest="edge_penalty_rate", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--arrival-radius", dest="arrival_radius", type=float)
    p.add_argument("--success-threshold", dest="success_threshold", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = argparse.ArgumentParser(prog="aerialnav", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    commands = {
        "gen-scenes": (cmd_gen_scenes, "generate random box-city scenes"),
        "gen-episodes": (cmd_gen_episodes, "generate episodes for every scene"),
        "build-memory": (cmd_build_memory, "record reference paths into per-scene memory graphs"),
        "run": (cmd_run, "run the agent on an episode file"),
        "prune": (cmd_prune, "extract the pruned subgraph around a point"),
        "eval": (cmd_eval, "aggregate result files into metric tables"),
    }
    for name, (fn, help_) in commands.items():
        p = sub.add_parser(name, help=help_)
        _common(p)
        p.set_defaults(func=fn)
        if name == "prune":
            p.add_argument("--center", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
            p.add_argument("--landmarks", nargs="*", default=[])
            p.add_argument("--radius", type=float)
            p.add_argument("--out", required=True)
        if name == "eval":
            p.add_argument("--results", help="directory of result files (default: --output)")
            p.add_argument("--report", help="directory for metrics.csv/json (default: results dir)")
    return ap


def resolve_config(args):
    overrides = {FLAG_KEYS[k]: v for k, v in vars(args).items() if k in FLAG_KEYS and v is not None}
    cfg = RunConfig().merged(overrides)
    if args.config:
        file_doc = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
        if file_doc is None:
            raise ConfigError(f"config file {args.config} does not exist")
        base = cfg.to_dict()
        for key, value in file_doc.items():
            if isinstance(value, dict) and isinstance(base.get(key), dict):
                base[key].update(value)
            else:
                base[key] = value
        cfg = RunConfig.from_dict(base)
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except (NavError, OSError, json.JSONDecodeError) as exc:
        print(f"aerialnav {args.command}: {exc}", file=sys.stderr)
        return 2
