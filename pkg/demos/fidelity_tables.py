"""Cycle-consistency and noise-robustness tables for the mock reconstructors.

The identity reconstructor is a fixed point; the template one loses
wording each round, so scores drift down with iterations and noise.
Run from the repository root:  python3 demos/fidelity_tables.py
"""
from policygate.adapters import HashEmbedder, mock_adapter
from policygate.fidelity import DEFAULT_DELTAS, cycle_consistency, noise_run, reconstruct_text
from policygate.pipeline import bundled, build_policy, default_world
from policygate.policy_graph import parse_document, parse_outline, render_outline

t0 = render_outline(parse_document(bundled("mini_regulation.json")))
embedder = HashEmbedder()

for mode in ("identity", "template"):
    llm = mock_adapter(default_world(mode))
    report = cycle_consistency(t0, 5, lambda text: build_policy(parse_outline(text), llm),
                               lambda g: reconstruct_text(g, llm), embedder)
    print(f"cycle consistency, {mode} reconstruction")
    print(report.to_text())

llm = mock_adapter(default_world("template"))
g0 = build_policy(parse_outline(t0), llm)
noise = noise_run(t0, g0, lambda g: reconstruct_text(g, llm), embedder, DEFAULT_DELTAS, range(20))
print("noise robustness, template reconstruction, 20 seeds")
print(noise.to_text())
