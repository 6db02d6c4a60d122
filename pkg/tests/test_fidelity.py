import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import fixture_json
from policygate.adapters import HashEmbedder, TableEmbedder, mock_adapter
from policygate.context_graph import ContextGraph, Entity, Relation
from policygate.fidelity import (CycleReport, NoiseConfig, cycle_consistency, graph_statistics, inject_noise,
                                 mean_ci, noise_run, reconstruct_text, semantic_isomorphism,
                                 statistic_components, structural_isomorphism)
from policygate.pipeline import build_policy, bundled, default_world
from policygate.policy_graph import PolicyGraph, parse_document, parse_outline, render_outline


def table(**vecs):
    return TableEmbedder({k.replace("_", " "): v for k, v in vecs.items()})


def test_eq7_identity(embedder):
    text = "The controller shall act. The processor shall assist."
    assert semantic_isomorphism(text, text, embedder) == pytest.approx(1.0)


def test_eq7_singletons():
    emb = TableEmbedder({"a.": [1, 0], "b.": [0.5, math.sqrt(0.75)]})
    assert semantic_isomorphism("a.", "b.", emb) == pytest.approx(0.5, abs=1e-12)


def test_eq7_subset_with_orthogonal_extra():
    emb = TableEmbedder({"a.": [1, 0], "c.": [0, 1]})
    assert semantic_isomorphism("a.", "a. c.", emb) == pytest.approx(0.75, abs=1e-12)


def test_eq7_empty_rejected(embedder):
    with pytest.raises(ValueError):
        semantic_isomorphism("", "text.", embedder)


sentences = st.lists(st.sampled_from(["alpha beta.", "gamma.", "delta epsilon zeta.", "beta alpha.", "eta."]),
                     min_size=1, max_size=4).map(" ".join)


@settings(max_examples=100, deadline=None)
@given(sentences, sentences)
def test_eq7_symmetric_and_bounded(a, b):
    emb = HashEmbedder()
    x, y = semantic_isomorphism(a, b, emb), semantic_isomorphism(b, a, emb)
    assert x == pytest.approx(y, abs=1e-12)
    assert -1.0 <= x <= 1.0 + 1e-12


def test_structural_identity_and_empty(policy):
    assert structural_isomorphism(policy, policy) == 1.0
    assert structural_isomorphism(PolicyGraph(), PolicyGraph()) == 1.0
    assert structural_isomorphism(policy, PolicyGraph()) == 0.0


def test_structural_half_refers(policy):
    g = policy.copy()
    refers = [e for e in g.edges if e.kind == "REFERS"]
    drop = set(refers[: len(refers) // 2])
    g.edges = [e for e in g.edges if e not in drop]
    g._edge_set = set(g.edges)
    comps = statistic_components(graph_statistics(policy), graph_statistics(g))
    kept = len(refers) - len(drop)
    assert comps["edges.REFERS"] == pytest.approx(kept / len(refers))
    others = {k: v for k, v in comps.items() if k not in ("edges.REFERS", "degree")}
    assert all(v == 1.0 for v in others.values())
    expected = (sum(others.values()) + kept / len(refers) + comps["degree"]) / len(comps)
    assert structural_isomorphism(policy, g) == pytest.approx(expected)


def test_degree_histogram_component():
    a = ContextGraph([Entity("e1", "a", "x"), Entity("e2", "b", "x")], [Relation("e1", "r", "e2")])
    b = ContextGraph([Entity("e1", "a", "x"), Entity("e2", "b", "x")], [])
    comps = statistic_components(graph_statistics(a), graph_statistics(b))
    # a: all degree 1; b: all degree 0 -> disjoint histograms
    assert comps["degree"] == 0.0 and comps["edges.relation"] == 0.0


def test_noise_zero_is_identity(policy):
    assert inject_noise(policy, NoiseConfig(0.0, seed=4)).dumps() == policy.dumps()


def test_noise_delete_saturates(policy):
    g = inject_noise(policy, NoiseConfig(1.0, {"delete_edges": 1.0}, seed=1))
    assert all(e.kind == "CONTAIN" for e in g.edges)
    assert any(e.kind != "CONTAIN" for e in policy.edges)


def test_noise_counts_and_determinism(policy):
    eligible = [e for e in policy.edges if e.kind != "CONTAIN"]
    cfg = NoiseConfig(0.2, {"delete_edges": 1.0}, seed=7)
    g = inject_noise(policy, cfg)
    assert len(eligible) - sum(1 for e in g.edges if e.kind != "CONTAIN") == math.floor(0.2 * len(eligible))
    assert inject_noise(policy, cfg).dumps() == g.dumps()
    assert policy.dumps() == inject_noise(policy, NoiseConfig(0.0)).dumps()


def test_noise_uniform_mix_weights():
    cfg = NoiseConfig(0.1)
    assert cfg.weight("delete_edges") == 1.0
    assert cfg.count("delete_edges", 25) == 2
    half = NoiseConfig(0.5, {"delete_edges": 0.5, "add_spurious_edges": 0.25, "alter_cu_attrs": 0.25})
    assert half.count("add_spurious_edges", 10) == 2  # floor(0.5 * 0.5 * 10)


@pytest.mark.parametrize("bad", [{"delta": -0.1}, {"delta": 1.5}, {"delta": 0.1, "mix": {"delete_edges": 0.5}},
                                 {"delta": 0.1, "mix": {"melt": 1.0}}])
def test_noise_config_validation(bad):
    with pytest.raises(ValueError):
        NoiseConfig(**bad)


def test_noise_is_nested_across_delta(policy):
    small = inject_noise(policy, NoiseConfig(0.1, {"delete_edges": 1.0}, seed=3))
    large = inject_noise(policy, NoiseConfig(0.3, {"delete_edges": 1.0}, seed=3))
    assert set(large.edges) <= set(small.edges)


def test_noise_alters_cu_attrs(policy):
    g = inject_noise(policy, NoiseConfig(1.0, {"alter_cu_attrs": 1.0}, seed=0))
    changed = [c for c in policy.cu_ids() if g.nodes[c].attrs != policy.nodes[c].attrs]
    assert changed
    assert all(sorted(str(g.nodes[c].attrs).split()) != [] for c in changed)
    assert g.edges == policy.edges


def test_context_noise_adds_spurious(scenarios, policy, llm, embedder):
    from policygate.pipeline import build_scenario_context
    ctx = build_scenario_context(scenarios[0], policy, llm, embedder)
    g = inject_noise(ctx, NoiseConfig(1.0, {"add_spurious_edges": 1.0}, seed=2))
    assert sum(r.pred == "related_to" for r in g.relations) == len(ctx.relations)
    assert ctx.dumps() != g.dumps()


def test_reconstruct_identity_and_empty(llm):
    tree = parse_document(bundled("mini_regulation.json"))
    t0 = render_outline(tree)
    ident = mock_adapter(default_world("identity"))
    g = build_policy(tree, ident)
    assert reconstruct_text(g, ident) == t0
    assert reconstruct_text(PolicyGraph(), llm) == ""
    assert reconstruct_text(ContextGraph([], []), llm) == ""


def test_reconstruct_template_mentions_dpo(llm):
    doc = {"kind": "document", "label": "GDPR", "children": [{"kind": "chapter", "label": "IV", "children": [
        {"kind": "article", "title": "Article 37", "children": [{"kind": "point", "text":
            "The controller and the processor shall designate a data protection officer in any case where the "
            "processing is carried out by a public authority."}]}]}]}
    text = reconstruct_text(build_policy(doc, llm), llm)
    assert "designate a data protection officer" in text


def cycle(reconstruct_mode, iterations):
    llm = mock_adapter(default_world(reconstruct_mode))
    t0 = render_outline(parse_document(bundled("mini_regulation.json")))
    return cycle_consistency(t0, iterations, lambda t: build_policy(parse_outline(t), llm),
                             lambda g: reconstruct_text(g, llm), HashEmbedder())


def test_cycle_identity_fixed_point():
    rep = cycle("identity", 5)
    assert [r.k for r in rep.rows] == [1, 2, 3, 4, 5]
    assert all(r.semantic == pytest.approx(1.0) and r.structural == 1.0 for r in rep.rows)


def test_cycle_template_pinned():
    rep = cycle("template", 3)
    sem = [r.semantic for r in rep.rows]
    assert sem == sorted(sem, reverse=True)
    assert sem == pytest.approx([0.9737, 0.9571, 0.9428], abs=1e-4)


def test_cycle_single_row_and_report():
    rep = cycle("template", 1)
    assert len(rep.rows) == 1
    assert "k  semantic  structural" in rep.to_text()
    with pytest.raises(ValueError):
        cycle("template", 0)


def test_mean_ci_matches_scipy():
    xs = [0.9, 0.8, 0.85, 0.95]
    mean, lo, hi = mean_ci(xs)
    ref = stats.t.interval(0.95, len(xs) - 1, loc=np.mean(xs), scale=stats.sem(xs))
    assert mean == pytest.approx(np.mean(xs)) and (lo, hi) == pytest.approx(ref)
    assert mean_ci([0.5]) == (0.5, 0.5, 0.5)


def test_noise_run_shape(policy):
    llm = mock_adapter(default_world())
    t0 = render_outline(parse_document(bundled("mini_regulation.json")))
    rep = noise_run(t0, policy, lambda g: reconstruct_text(g, llm), HashEmbedder(), deltas=(0.0, 0.2), seeds=range(3))
    assert [r["delta"] for r in rep.rows] == [0.0, 0.2] and rep.seeds == 3
    assert all(len(r["scores"]) == 3 and r["ci_low"] <= r["mean"] <= r["ci_high"] for r in rep.rows)
    assert "95% CI" in rep.to_text()
