"""Landmark-sequence search on a hand-built memory graph, then pruning."""
import numpy as np

from aerialnav.memory import MemoryGraph, MemoryNode, merge, trajectory_to_graph
from aerialnav.pruning import PruneConfig, prune
from aerialnav.scoring import OracleScorer
from aerialnav.search import search

# two flights recorded earlier: one along the avenue, one up the side street
avenue = trajectory_to_graph([
    ((0, 0, 20), {"gas station"}),
    ((10, 0, 20), set()),
    ((20, 0, 20), {"water tower"}),
    ((30, 0, 20), set()),
    ((40, 0, 20), {"red gate"}),
])
side = trajectory_to_graph([
    ((20, 10, 20), set()),
    ((20, 20, 20), {"bus stop"}),
    ((20, 30, 20), {"white truck"}),
], first_id=avenue.next_id())

memory = merge(avenue, side)
print(f"memory: {len(memory)} nodes, {memory.n_edges} edges")
for a, b, w in memory.edges():
    print(f"  {a} - {b}  {w:5.2f} m")

scorer = OracleScorer()

# in order: tower first, then the truck up the side street
for landmarks in (["water tower", "white truck"], ["white truck", "red gate"], []):
    r = search(memory, landmarks, start=0, scorer=scorer)
    print(f"\nlandmarks {landmarks}")
    print(f"  path {r.path}  score {r.score:.4f}")
    print(f"  matched at {r.assignment}")

# zero edge penalty only cares about matching; the default also charges distance
r0 = search(memory, ["water tower"], 0, scorer, edge_penalty_rate=0.0)
r1 = search(memory, ["water tower"], 0, scorer)
print(f"\nrate 0:    {r0.path} {r0.score:.4f}")
print(f"rate 0.01: {r1.path} {r1.score:.4f}")

# keep only the neighborhood of the agent, then thin it out around good matches
sub = prune(memory, center=(20, 10, 20), landmarks=["white truck"], scorer=scorer,
            config=PruneConfig(radius=21.0, nms_radius=12.0))
print(f"\npruned to {sorted(sub.nodes)} (suppressed nodes are bridged by contracted edges)")
for a, b, w in sub.edges():
    print(f"  {a} - {b}  {w:5.2f} m")
print("positions:\n", np.array([sub.nodes[n].position for n in sorted(sub.nodes)]))
