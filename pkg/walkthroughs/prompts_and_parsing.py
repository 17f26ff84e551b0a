"""Render a few-shot prompt, fake a model answer and score it.

Run with ``python3 walkthroughs/prompts_and_parsing.py``.
"""
from tgg.graph import Event, Scenario, canonicalize
from tgg.metrics import score_prediction
from tgg.parsing import extract_relations
from tgg.prompts import Demonstration, assign_labels, build_prompt, shuffled_orders

demo = Scenario(
    "demo-tea",
    "make a cup of tea",
    [Event("t0", "boil water"), Event("t1", "put a tea bag in a cup"), Event("t2", "pour water into the cup"), Event("t3", "drink the tea")],
    [("t0", "t2"), ("t1", "t2"), ("t2", "t3")],
)
query = Scenario(
    "query-bike",
    "fix a flat bike tire",
    [
        Event("b0", "remove the wheel"),
        Event("b1", "take out the inner tube"),
        Event("b2", "patch the hole"),
        Event("b3", "put the tube back"),
        Event("b4", "inflate the tire"),
        Event("b5", "mount the wheel"),
    ],
    [("b0", "b1"), ("b1", "b2"), ("b2", "b3"), ("b3", "b4"), ("b3", "b5")],
)

assignment = assign_labels(query, seed=7)
order = shuffled_orders(query, seed=7, count=1)[0]
narrative = "First boil water and drop a tea bag in a cup. Pour the water, then drink."
bundle = build_prompt("not", [Demonstration(demo, narrative)], query, assignment, order, shots=1)
for role, text in bundle.messages:
    print(f"----- {role} -----")
    print(text)

# A plausible answer that misses the branch at the end.
label = assignment.inverse()
steps = ["b0", "b1", "b2", "b3", "b4", "b5"]
answer = (
    "def get_narrative(self):\n"
    '    return "You remove the wheel, then patch the tube and put everything back."\n\n'
    "def get_relations(self):\n    return [\n"
    + "".join(f'        "{label[a]} -> {label[b]}",\n' for a, b in zip(steps, steps[1:]))
    + "    ]\n"
)
out = extract_relations(answer)
print("parsed relations:", out.relations)
print("narrative:", out.narrative)
graph = canonicalize(out.relations, assignment, query.event_ids)
card = score_prediction(query, graph, shuffle=0)
print(f"P={card.precision:.2f} R={card.recall:.2f} F1={card.f1:.2f} GED={card.ged} k={card.components}")
