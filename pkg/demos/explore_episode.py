"""One episode flown by the exploring agent with simulator-backed perception."""
from aerialnav.agent import run_episode
from aerialnav.metrics import episode_metrics, path_length
from aerialnav.perception import OraclePerception
from aerialnav.planner import OracleReasoner, PlannerConfig, Ports, TemplateParser
from aerialnav.scoring import OracleScorer
from aerialnav.simulator import default_intrinsics, generate_episode, generate_scene

scene = generate_scene(seed=4)
print(f"scene: {len(scene.boxes)} boxes")
for b in scene.boxes[:5]:
    print(f"  {b.caption:<24} center {b.center.round(1)}")

ep = generate_episode(scene, "normal", seed=12)
print(f"\ninstruction: {ep.fluent_instruction}")
print(f"landmarks:   {ep.landmarks}")
print(f"reference:   {len(ep.reference_path)} points, {path_length(ep.reference_path):.1f} m")

ports = Ports(TemplateParser(), OracleReasoner(scene), OracleScorer())
perception = OraclePerception(scene.label_table)
result = run_episode(scene, ep, ports, perception, config=PlannerConfig(), intrinsics=default_intrinsics(64))

print(f"\nterminated by {result.terminated_by} after {result.steps} actions")
counts = {a: result.actions.count(a) for a in sorted(set(result.actions))}
print("action counts:", counts)
for k, v in episode_metrics(result).items():
    print(f"  {k:<5}{v:8.3f}")
