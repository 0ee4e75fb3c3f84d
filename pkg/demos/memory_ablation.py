"""Steps needed with and without a memory graph seeded from reference flights."""
import numpy as np

from aerialnav.agent import run_episode, seed_memory
from aerialnav.metrics import episode_metrics
from aerialnav.perception import OraclePerception
from aerialnav.planner import OracleReasoner, Ports, TemplateParser
from aerialnav.scoring import OracleScorer
from aerialnav.simulator import generate_episode, generate_scene

rows = []
for s in range(3):
    scene = generate_scene(100 + s)
    perception = OraclePerception(scene.label_table)
    for k in range(3):
        ep = generate_episode(scene, "easy", seed=7000 + 10 * s + k)
        memory = seed_memory(scene, [ep], radius=10.0)
        with_mem = run_episode(scene, ep, Ports(TemplateParser(), OracleReasoner(scene), OracleScorer()),
                               perception, memory=memory)
        without = run_episode(scene, ep, Ports(TemplateParser(), OracleReasoner(scene), OracleScorer()),
                              perception)
        rows.append((episode_metrics(with_mem)["SR"], with_mem.steps, episode_metrics(without)["SR"], without.steps))
        handover = with_mem.modes.index("MemoryFollow") if "MemoryFollow" in with_mem.modes else None
        print(f"scene {s} episode {k}:  memory {with_mem.steps:3d} steps (handover at step {handover})"
              f"   explore {without.steps:3d} steps")

r = np.array(rows)
print(f"\nSR with memory {r[:, 0].mean():.2f}, without {r[:, 2].mean():.2f}")
print(f"mean steps with memory {r[:, 1].mean():.1f}, without {r[:, 3].mean():.1f}")
