"""Online bin packing: seeded instances, classical baselines, and metrics.

Walks through the evaluation pipeline on its own, with no LLM involved:
generate a seeded instance set, simulate the scoring baselines through the
same argmax machinery that candidate heuristics use, and report the
fraction of excess bins over the volume lower bound.
"""
import numpy as np

from evoheur import (
    BppInstance,
    BuiltinBody,
    ExecutorFactory,
    bpp_lower_bound,
    evaluate_bpp_online,
    excess_fraction,
    generate_bpp_instances,
)

# A seeded instance set: 1000 items per instance, capacity 100, item sizes
# uniform on [1, 60]. Identical seeds always reproduce identical items.
instances = generate_bpp_instances(num_items=1000, capacity=100, count=25, seed=7)
sizes = np.array(instances[0].items)
print(f"{len(instances)} instances, first instance mean item size {sizes.mean():.2f}")
print(f"volume lower bound of first instance: {bpp_lower_bound(instances[0])} bins")

# Every baseline is a score function: the simulator shows the candidate only
# the feasible bins, takes the argmax, and opens a new bin when nothing fits.
factory = ExecutorFactory(problem="bpp", timeout=30.0)
print(f"\n{'heuristic':<12}{'mean excess bins':>18}")
for name in ("first_fit", "best_fit", "worst_fit"):
    session = factory.load(BuiltinBody(name))
    costs = [evaluate_bpp_online(session, inst).cost for inst in instances]
    print(f"{name:<12}{np.mean(costs):>17.2f}%")

# The metric itself is exact: bins used vs. the ceiling lower bound.
tiny = BppInstance(capacity=100, items=(60, 70, 40))
session = factory.load(BuiltinBody("first_fit"))
outcome = evaluate_bpp_online(session, tiny, with_trace=True)
print(f"\nitems (60, 70, 40) at capacity 100 -> trace {outcome.trace}")
print(f"excess over lower bound: {excess_fraction(2, bpp_lower_bound(tiny)):.1f}%")
