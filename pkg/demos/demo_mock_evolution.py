"""A complete evolutionary run, offline, driven by a scripted mock model.

The script seeds six distinct candidates, always chooses to exploit, and
proposes a tightest-fit refinement in its sessions. The run log captures
every evaluation, partition, turn and selection; the trajectory of best
fitness is monotone by elitist selection.
"""
import tempfile

from evoheur import MockLlm, run, validate_config
from evoheur.runlog import RunLogger, export_trajectory, export_turns, read_events


def block(tag, marker, note):
    return (f"<{tag}>\n<algorithm>{note}</algorithm>\n"
            f"<code>\n{marker}\n</code>\n</{tag}>")


rules = [
    {"match": "exactly one <explore> block", "response": block("explore", m, "seed")}
    for m in (
        "# builtin: first_fit",
        "# builtin: worst_fit",
        '# builtin: weighted_fit {"residual_weight": 0.5, "index_weight": 0.5}',
        '# builtin: weighted_fit {"residual_weight": 0.2, "index_weight": 1.0}',
        '# builtin: weighted_fit {"residual_weight": 0.0, "index_weight": 1.0}',
        '# builtin: weighted_fit {"residual_weight": 1.0, "index_weight": 5.0}',
    )
]
rules += [
    {"match": "Group candidates that likely have the same behavior",
     "response": "{}", "repeat": True},
    {"match": "LOWER fitness score = BETTER",
     "response": "the residual signal dominates; refine it <exploit>", "repeat": True},
    {"match": "exactly one <exploit> block",
     "response": block("exploit", "# builtin: best_fit", "tightest-fit placement"),
     "repeat": True},
]

config = validate_config({
    "max_turns": 2,
    "num_candidates_to_initialize": 6,
    "epochs": 3,
    "top_k": 4,
    "reminder_probability": 1.0,
    "num_clusters": 2,
    "num_elements": 3,
    "problem": "bpp",
    "bpp_num_items": 500,
    "bpp_capacity": 100,
    "instance_count": 5,
    "instance_seed": 1,
    "seed": 99,
})

log_path = tempfile.mktemp(suffix=".jsonl")
with RunLogger(log_path, run_id="demo") as log:
    result = run(config, llm=MockLlm.from_spec(rules), log=log)

body = result.best_candidate.body
print(f"best candidate: builtin {body.name} (origin {result.best_candidate.origin.value})")
print(f"best fitness:   {result.best_record.fitness:.5f} "
      f"({result.best_record.fitness * 100:.2f}% mean excess bins)")

events = read_events(log_path)
print("\nbest-so-far trajectory (generation, fitness, cumulative tokens):")
for generation, best, tokens in export_trajectory(events):
    print(f"  g{generation}: {best:.5f}  tokens={tokens}")

print("\nturn decisions across all sessions:")
for turn, decision, count in export_turns(events):
    print(f"  turn {turn}: {decision} x{count}")

print(f"\n{len(events)} log events written to {log_path}")
