"""TSP: constructive candidates, 2-opt improvement, and the exact oracle.

Shows the tour machinery end to end: greedy construction, local search,
the brute-force optimum on small instances, and the optimality-gap metric
used to score candidates.
"""
import numpy as np

from evoheur import (
    BuiltinBody,
    ExecutorFactory,
    TspInstance,
    brute_force_tsp,
    evaluate_tsp,
    generate_tsp_instances,
    nearest_neighbour,
    optimality_gap,
    tour_length,
    two_opt,
)

# The unit square is the classic sanity instance: the optimal tour is its
# perimeter, and a crossing tour gets uncrossed by a single 2-opt move.
square = TspInstance(coords=np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float))
crossing = [0, 2, 1, 3]
print(f"crossing tour length:  {tour_length(crossing, square):.4f}")
print(f"after 2-opt:           {tour_length(two_opt(crossing, square), square):.4f}")
print(f"brute-force optimum:   {brute_force_tsp(square)[1]:.4f}")

# On seeded instances the stored reference cost is nearest-neighbour + 2-opt,
# and every candidate tour is scored as a percent gap against it.
instances = generate_tsp_instances(n=8, count=5, seed=42)
factory = ExecutorFactory(problem="tsp", timeout=30.0)
session = factory.load(BuiltinBody("nearest_neighbour"))
print(f"\n{'instance':<10}{'NN tour':>10}{'2-opt':>10}{'optimum':>10}{'NN gap':>10}")
for k, inst in enumerate(instances):
    nn = tour_length(nearest_neighbour(inst, 0), inst)
    improved = tour_length(two_opt(nearest_neighbour(inst, 0), inst), inst)
    optimum = brute_force_tsp(inst)[1]
    outcome = evaluate_tsp(session, inst, start_node=0)
    assert abs(outcome.cost - nn) < 1e-9  # the builtin mirrors the baseline
    print(f"{k:<10}{nn:>10.4f}{improved:>10.4f}{optimum:>10.4f}"
          f"{optimality_gap(nn, optimum):>9.2f}%")
