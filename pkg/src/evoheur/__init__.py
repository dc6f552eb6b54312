"""evoheur: evolutionary heuristic discovery with an LLM in the loop.

A population of candidate heuristics (native builtins or untrusted source
snippets) is evaluated on seeded TSP / online bin packing instances,
clustered by behavioral and code similarity, refined through multi-turn
reflective LLM sessions, and evolved by elitist selection.
"""

from .core import (
    PENALTY_FITNESS,
    BuiltinBody,
    CandidateBody,
    ConfigError,
    FitnessRecord,
    GuestBody,
    HeuristicCandidate,
    Origin,
    Population,
    RunConfig,
    Verdict,
    candidate_key,
    load_config,
    make_candidate,
    make_fitness_record,
    validate_config,
)
from .evaluators import (
    BppInstance,
    EvalOutcome,
    TspInstance,
    bpp_lower_bound,
    brute_force_bpp,
    brute_force_tsp,
    evaluate_bpp_online,
    evaluate_tsp,
    excess_fraction,
    fitness,
    generate_bpp_instances,
    generate_tsp_instances,
    nearest_neighbour,
    optimality_gap,
    parse_tsplib,
    tour_length,
    two_opt,
)
from .executor import (
    ExecutorFactory,
    ExecutorSession,
    HeuristicCallError,
    NextNodeCall,
    ScoreCall,
    body_from_source,
    registered_builtins,
)
from .evolution import (
    GenerationReport,
    RunResult,
    initialize_population,
    load_checkpoint,
    run,
    save_checkpoint,
    step_generation,
)
from .grouping import (
    Partition,
    ReflectionGroup,
    build_reflection_groups,
    cluster_entropy,
    entropy_weighted_allocation,
    heterogeneous_group,
    llm_refine_partition,
    over_partition,
)
from .llm import HttpLlm, MockLlm, MockRule
from .reflection import (
    SessionState,
    TurnOutcome,
    init_feedback,
    parse_candidate,
    parse_decision,
    render_exploit_prompt,
    render_explore_prompt,
    render_think_prompt,
    run_session,
    run_turn,
)
from .runlog import RunLogger, read_events
from .similarity import (
    GroupingUnavailable,
    PerformanceProfile,
    SimilarityMatrix,
    build_matrices,
    performance_profiles,
    sim_code,
    sim_combined,
    sim_perf,
)

__version__ = "0.1.0"
