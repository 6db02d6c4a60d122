"""Walk one scenario through the whole pipeline with mock adapters.

Run from the repository root:  python3 demos/walkthrough.py [scenario-id]
"""
import re
import sys

from policygate.adapters import HashEmbedder, mock_adapter
from policygate.evaluation import evaluate, format_report, load_scenarios
from policygate.pipeline import bundled, build_policy, default_world, predictions, run_scenarios

llm, embedder = mock_adapter(default_world()), HashEmbedder()

# 1. policy graph from the bundled mini regulation
policy = build_policy(bundled("mini_regulation.json"), llm)
kinds = {}
for e in policy.edges:
    kinds[e.kind] = kinds.get(e.kind, 0) + 1
print(f"policy graph: {len(policy.nodes)} nodes, {len(policy.cu_ids())} compliance units, edges {kinds}")

# 2. context graph and gate for one scenario
scenarios = load_scenarios(bundled("scenarios.json"))
wanted = sys.argv[1] if len(sys.argv) > 1 else "ex002"
scenario = next(s for s in scenarios if s.id == wanted)
print(f"\nscenario {scenario.id}: {scenario.text}")
ctx, res = run_scenarios(policy, [scenario], llm, embedder)[scenario.id]

print("\nentities:")
for ent in ctx.entities:
    hyp = ", ".join(f"{h.label} ({h.score:.2f})" for h in ent.hypernyms) or "-"
    print(f"  {ent.id} {ent.name!r} [{ent.etype}] -> {hyp}")
print("relations:")
for rel in ctx.relations:
    print(f"  {rel.id}")



def short(cu_id):
    art, point = re.search(r"ARTICLE:(\d+)(?:/POINT:(\d+))?", cu_id).groups()
    return f"A{art}({point})" if point else f"A{art}"


print("\nplans (anchor: top CUs after rerank):")
for plan in res.plans:
    print(f"  {plan.anchor}: " + ", ".join(short(i.cu_id) for i in plan.items))

print("\ndecisions:")
for d in res.decisions:
    mark = "  (exception applied)" if d.overridden else ""
    print(f"  {d.article:<4} {d.label:<15} {d.score:.2f}{mark}")

# 3. score every bundled scenario against its labels
results = run_scenarios(policy, scenarios, llm, embedder)
gold = {s.id: sorted(s.articles) for s in scenarios}
print("\n" + format_report(evaluate(predictions(results), gold, chapters=None)))
