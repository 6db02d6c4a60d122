"""End-to-end orchestration: policy build, context build, gate, decisions."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Mapping

from .adapters import ChatAdapter, EmbeddingAdapter, MockWorld
from .context_graph import DEFAULT_BETA, DEFAULT_M, DEFAULT_N, ContextGraph, FragmentRetriever, build_context
from .evaluation import Scenario
from .gate import (DEFAULT_RADIUS, Decision, Judgment, aggregate_by_article, closure_adjacency, decision_file,
                   predicted_articles, run_anchor)
from .policy_graph import PolicyGraph, RulePremiseClassifier, build_policy_graph
from .retrieval import (DEFAULT_K, DEFAULT_K1, ChatCrossScorer, CUPlan, ScoreWeights, SubjectIndex, VectorCache,
                        extract_anchors, preselect, rerank)


@dataclass(frozen=True)
class PipelineConfig:
    k: int = DEFAULT_K
    k1: int = DEFAULT_K1
    n: int = DEFAULT_N
    m: int = DEFAULT_M
    beta: float = DEFAULT_BETA
    radius: int = DEFAULT_RADIUS
    weights: ScoreWeights = field(default_factory=ScoreWeights)
    batch_size: int = 8
    jobs: int = 1
    rerank: bool = True
    meta_gating: bool = True
    premise_titles: tuple[str, ...] | None = None


def bundled(name: str) -> Any:
    """Parsed JSON resource shipped in the package's data directory."""
    return json.loads(resources.files("policygate").joinpath("data").joinpath(name).read_text(encoding="utf-8"))


def default_world(reconstruct: str = "template") -> MockWorld:
    return MockWorld.from_json(bundled("mock_world.json"), reconstruct=reconstruct)


def build_policy(doc: Any, llm: ChatAdapter, cfg: PipelineConfig = PipelineConfig()) -> PolicyGraph:
    classifier = RulePremiseClassifier(cfg.premise_titles) if cfg.premise_titles else None
    return build_policy_graph(doc, llm, classifier, cfg.batch_size, cfg.jobs)


def build_scenario_context(scenario: Scenario, policy: PolicyGraph, llm: ChatAdapter, embedder: EmbeddingAdapter,
                           cfg: PipelineConfig = PipelineConfig(),
                           retriever: FragmentRetriever | None = None) -> ContextGraph:
    return build_context(scenario.text, policy, llm, embedder, cfg.beta, cfg.n, cfg.m, scenario.id, cfg.jobs,
                         retriever)


@dataclass
class GateResult:
    scenario_id: str
    plans: list[CUPlan]
    judgments: list[Judgment]
    decisions: list[Decision]

    def decision_file(self) -> str:
        return decision_file(self.scenario_id, self.decisions, self.judgments)


class Gate:
    """Shared per-policy state for judging many scenarios."""

    def __init__(self, policy: PolicyGraph, llm: ChatAdapter, embedder: EmbeddingAdapter,
                 cfg: PipelineConfig = PipelineConfig()):
        self.policy = policy
        self.llm = llm
        self.cfg = cfg
        self.index = SubjectIndex(policy, VectorCache(embedder))
        self.scorer = ChatCrossScorer(llm) if cfg.rerank else None
        self.adjacency = closure_adjacency(policy)

    def run(self, ctx: ContextGraph, scenario_id: str | None = None) -> GateResult:
        anchors = extract_anchors(ctx)
        if not self.index.subjects:
            anchors = []

        def one(anchor):
            cands = preselect(anchor, self.index, self.cfg.k1, self.cfg.weights)
            plan = rerank(anchor, cands, self.policy, self.scorer, self.cfg.k)
            return plan, run_anchor(anchor, plan, ctx, self.policy, self.llm, self.cfg.radius,
                                    self.cfg.meta_gating, self.adjacency)

        if self.cfg.jobs > 1 and len(anchors) > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.jobs) as pool:
                results = list(pool.map(one, anchors))
        else:
            results = [one(a) for a in anchors]
        plans = [p for p, _ in results]
        judgments = [j for _, js in results for j in js]
        decisions = aggregate_by_article(judgments, self.policy)
        return GateResult(scenario_id or ctx.source or "", plans, judgments, decisions)


def plans_json(plans: list[CUPlan]) -> str:
    return json.dumps([p.to_dict() for p in plans], sort_keys=True, indent=1) + "\n"


def run_scenarios(policy: PolicyGraph, scenarios: list[Scenario], llm: ChatAdapter, embedder: EmbeddingAdapter,
                  cfg: PipelineConfig = PipelineConfig()) -> dict[str, tuple[ContextGraph, GateResult]]:
    """Context graphs and gate results per scenario, in scenario order."""
    retriever = FragmentRetriever.from_policy(policy, embedder)
    gate = Gate(policy, llm, embedder, cfg)
    out = {}
    for sc in scenarios:
        ctx = build_scenario_context(sc, policy, llm, embedder, cfg, retriever)
        out[sc.id] = (ctx, gate.run(ctx, sc.id))
    return out


def predictions(results: Mapping[str, tuple[ContextGraph, GateResult]]) -> dict[str, list[int]]:
    return {sid: predicted_articles(res.decisions) for sid, (_, res) in results.items()}
