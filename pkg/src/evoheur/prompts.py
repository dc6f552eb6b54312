"""Prompt templates for the reflective heuristic-evolution loop.

Template bodies are fixed verbatim, including their original spacing and
line breaks; rendering only prepends or appends context sections and never
edits template wording.
"""
from __future__ import annotations

import json
from typing import Sequence

BPP_TASK_PROMPT = r"""TASK SUMMARY

You are an AI assistant whose job is to iteratively produce and refine Python heuristic implementations for the Bin Packing Online Problem.  
You will be given an existing heuristic (or helper functions). Use multi-turn reasoning: at each turn you must reflect, then either **explore** a new heuristic family or **exploit** (refine) the last submitted heuristic, and finally receive an observation/feedback from the environment.

--- 

### FUNCTION CONTRACT (must be strictly respected)
- Language: Python only. Only standard library and numpy allowed (if already used by provided code).
- Required signature:
    def score(item, bins)
- Input arguments:
    - item: int # size of current item
    - bins : Numpy arrays # the rest capacities of feasible bins, which are larger than the item size.
- Return: scores (Numpy array)
- Correctness rules:
    - 'item' is of type int
    - 'bins' and 'scores' are both Numpy arrays.
"""

TSP_TASK_PROMPT = r"""TASK SUMMARY

You are an AI assistant whose job is to iteratively produce and refine Python heuristic implementations for the Travelling salesman problem.
Given a set of nodes with their coordinates, \
you need to find the shortest route that visits each node once and returns to the starting node. \
The task can be solved step-by-step by starting from the current node and iteratively choosing the next node. \
You will be given an existing heuristic, Let use multi-turn reasoning: at each turn you must reflect, then either **explore** a new heuristic family or **exploit** the last submitted heuristic, and finally receive an observation/feedback from the environment.

### FUNCTION CONTRACT (must be strictly respected)
- Language: Python only. Only standard library and numpy allowed (if already used by provided code).
- Required signature:
    def select_next_node(current_node, destination_node, unvisited_nodes, distance_matrix)
- Input arguments: This function should accept 4 inputs: 'current_node', 'destination_node', 'unvisited_nodes', 'distance_matrix'
- Output:  The function should return 1 output: 'next_node'
- Correctness rules: 'current_node', 'destination_node', 'next_node', and 'unvisited_nodes' are node IDs. 'distance_matrix' is the distance matrix of nodes. All are Numpy arrays.
Do not give additional explanations.
"""

THINK_TEMPLATE = r"""ALWAYS REMEMBER THAT, LOWER fitness score = BETTER solution.
First, based on the evaluation result from <observation> or GROUP REFLECTION, 
you should do some critical reasoning about the previous approach(s) ABOUT: 
+ its logical algorithm
+ its heuristic components/hyperparamters/features specifically. Then, think about the affect of these parameters/hyperparamters to the fitness score result  (in detailed).

Then, you can: 

1. Explore a totally new approach, to make some experiments to get information.
OR 
2. Focus on the behaviour of the heuristic features/components from the fitness result to tune them and get better result from the test evaluation.

You are ONLY allowed to do reasoning, NOT to generate code.
Note that, your reasoning should be very BRIEF but STILL critical and concise, focus on analyzing the heuristic components/features.
At the last of your response, there must be one of the tags <explore> or <exploit>, which indicate your decision.
"""

EXPLORE_TEMPLATE = r"""Now, BASED solely on your REASONING, generate EXACTLY ONE solution for exploring.
Your output MUST be exactly the SAME as the following format:
<explore>
<algorithm>
# clear and complete algorithm description of the proposed heuristic.
</algorithm>
<code>
# the completely new Python function implementation for the algorithm in <algorithm> : `score(...)` (only code inside `<code>`).
</code>
</explore>
OUTPUT RULE:
Always output exactly one <explore> block containing both <algorithm> and <code>, nothing else.
"""

EXPLOIT_TEMPLATE = r"""Now, BASED solely on your REASONING, generate EXACTLY ONE solution for exploiting.
Your output MUST be exactly the SAME as the following format:
<exploit>            
<algorithm>
# Clear algorithm description of the improvements you're making to the selected algorithm
</algorithm>
<code>
# Complete and concise Python function implementation with your refinements: `score(...)`
</code>
</exploit>
OUTPUT RULE:
Always output exactly one <exploit> block containing both <algorithm> and <code>, nothing else.
"""

CLUSTERING_TEMPLATE = r"""You are given a list of candidate solutions for a heuristic problem.  
Each candidate is a JSON object with fields:  
- "id": unique identifier  
- "code": the code itself  
- "score": numeric performance value  

Task: Group candidates that likely have the same behavior
1. Compare candidates by, code structure, and score values.
2. Group candidates into clusters of similar behavior, idea, or performance.
3. For each group, output:
   - Group label (integer ID).
   - List of member IDs.
   - Shared characteristics that define this group (algorithm style, coding pattern, performance range).
   - Distinctive differences within the group (if any).
4. If a candidate does not fit any existing group, assign it as its own group.
Also consider performance similarity:  
- Candidates with very different scores (e.g., difference > 0.1 on a [0–1] scale or > 10
- Candidates with similar algorithmic ideas and close scores should be grouped together.  

Output format:  
Return ONLY a JSON object:

### example
{
  "groups": [
    {
      "id": 1,
      "members": ["1", "7", "9"],
      "shared_characteristics": "...",
      "differences": "...",
      "score_range": {"min": 0.72, "max": 0.75}
    },
    {
      "id": 2,
      "members": ["3", "4"],
      "shared_characteristics": "...",
      "differences": "...",
      "score_range": {"min": 0.55, "max": 0.58}
    },
    ...
  ]
}
###

CANDIDATE SOLUTIONS:\
"""


def task_prompt(problem: str) -> str:
    """The problem task brief seeding every session transcript."""
    if problem == "bpp":
        return BPP_TASK_PROMPT
    if problem == "tsp":
        return TSP_TASK_PROMPT
    raise ValueError(f"unknown problem: {problem!r}")


def act_template(decision: str) -> str:
    if decision == "explore":
        return EXPLORE_TEMPLATE
    if decision == "exploit":
        return EXPLOIT_TEMPLATE
    raise ValueError(f"unknown decision: {decision!r}")


def clustering_prompt(candidates: Sequence[dict]) -> str:
    """Clustering instructions followed by the candidate roster as JSON."""
    roster = json.dumps(list(candidates), indent=2)
    return CLUSTERING_TEMPLATE + "\n" + roster + "\n"
