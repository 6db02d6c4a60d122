"""Regulatory text to policy graphs, scenario text to context graphs, and a gate that judges one against the other."""

from .adapters import HashEmbedder, MockWorld, mock_adapter
from .context_graph import ContextGraph, build_context
from .evaluation import evaluate, load_scenarios
from .gate import Decision, Judgment, aggregate_by_article, apply_overrides, judge_listwise, reference_closure
from .policy_graph import PolicyGraph, build_policy_graph, parse_document
from .refs import explicit_refs
from .retrieval import extract_anchors, preselect, rerank

__version__ = "0.1.0"

__all__ = [
    "HashEmbedder", "MockWorld", "mock_adapter", "ContextGraph", "build_context", "evaluate", "load_scenarios",
    "Decision", "Judgment", "aggregate_by_article", "apply_overrides", "judge_listwise", "reference_closure",
    "PolicyGraph", "build_policy_graph", "parse_document", "explicit_refs", "extract_anchors", "preselect", "rerank",
]
