"""Compliance gate: evidence windows, listwise judging, exception overrides, article decisions."""
from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .adapters import AdapterError, ChatAdapter, SchemaError, chat_call
from .context_graph import ContextGraph
from .policy_graph import PolicyGraph
from .retrieval import Anchor, CUPlan, ScoredCandidate, plan_item

log = logging.getLogger(__name__)

COMPLIANT = "COMPLIANT"
NON_COMPLIANT = "NON_COMPLIANT"
INSUFFICIENT = "INSUFFICIENT"
NOT_APPLICABLE = "NOT_APPLICABLE"
LABELS = (COMPLIANT, NON_COMPLIANT, INSUFFICIENT, NOT_APPLICABLE)
DEFAULT_RADIUS = 1

# judgment flags
SCHEMA_FALLBACK = "schema-fallback"
OVERRIDE_UNEVALUATED = "override-unevaluated"
META_SUPPRESSED = "meta-suppressed"
META_NOT_REPORTED = "meta-not-reported"


class GateError(ValueError):
    pass


@dataclass
class EvidenceWindow:
    anchor: str
    entities: list[str]
    relations: list[str]
    graph: ContextGraph = field(repr=False, compare=False)

    def ids(self) -> set[str]:
        return set(self.entities) | set(self.relations)

    def to_payload(self) -> dict:
        ents = {e.id: e for e in self.graph.entities}
        rels = {r.id: r for r in self.graph.relations}
        out_ents = []
        for eid in self.entities:
            e = ents[eid]
            item = {"id": e.id, "name": e.name, "type": e.etype}
            if e.best:
                item["hypernym"] = e.best
            out_ents.append(item)
        return {"entities": out_ents,
                "relations": [{"id": rid, **rels[rid].to_dict()} for rid in self.relations]}


def evidence_window(ctx: ContextGraph, anchor: Anchor, radius: int = DEFAULT_RADIUS) -> EvidenceWindow:
    """Undirected BFS from the anchor members, then every relation among the reached entities."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    known = {e.id for e in ctx.entities}
    missing = [m for m in anchor.members if m not in known]
    if missing:
        raise GateError(f"anchor {anchor.id}: unknown members {missing}")
    adj: dict[str, set[str]] = {eid: set() for eid in known}
    for r in ctx.relations:
        adj[r.subj].add(r.obj)
        adj[r.obj].add(r.subj)
    depth = {m: 0 for m in anchor.members}
    queue = deque(anchor.members)
    while queue:
        cur = queue.popleft()
        if depth[cur] == radius:
            continue
        for nxt in sorted(adj[cur]):
            if nxt not in depth:
                depth[nxt] = depth[cur] + 1
                queue.append(nxt)
    entities = [e.id for e in ctx.entities if e.id in depth]
    relations = [r.id for r in ctx.relations if r.subj in depth and r.obj in depth]
    return EvidenceWindow(anchor.id, entities, relations, ctx)


@dataclass
class Judgment:
    cu_id: str
    label: str
    score: float
    why: str = ""
    evid: list[str] = field(default_factory=list)
    overridden: bool = False
    override_by: str | None = None
    flags: list[str] = field(default_factory=list)
    anchor: str = ""
    cu_type: str = "actor_cu"

    def __post_init__(self):
        if self.label not in LABELS:
            raise GateError(f"{self.cu_id}: label {self.label!r} outside {LABELS}")

    def to_dict(self) -> dict:
        return {"anchor": self.anchor, "cu_id": self.cu_id, "cu_type": self.cu_type, "label": self.label,
                "score": self.score, "why": self.why, "evid": list(self.evid), "overridden": self.overridden,
                "override_by": self.override_by, "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Judgment":
        return cls(raw["cu_id"], raw["label"], float(raw["score"]), raw.get("why", ""), list(raw.get("evid", [])),
                   bool(raw.get("overridden", False)), raw.get("override_by"), list(raw.get("flags", [])),
                   raw.get("anchor", ""), raw.get("cu_type", "actor_cu"))


def _check_plan_cover(plan: CUPlan):
    wanted = plan.cu_ids()

    def check(value: Any) -> None:
        got = [j["cu_id"] for j in value["judgments"]]
        if sorted(got) != sorted(wanted):
            raise SchemaError(f"judge returned verdicts for {got}, expected {wanted}")
    return check


def judge_listwise(window: EvidenceWindow, plan: CUPlan, llm: ChatAdapter, anchor: Anchor | None = None) -> list[Judgment]:
    """One adapter call over the whole plan; one Judgment per plan item in plan order.

    Persistent schema violations (bad labels, missing or extra rule ids)
    yield INSUFFICIENT judgments with score 0.0 and a flag.
    """
    if not plan.items:
        raise GateError(f"anchor {plan.anchor}: empty plan")
    payload = {
        "anchor": anchor.to_dict() if anchor is not None else {"id": plan.anchor},
        "window": window.to_payload(),
        "plan": [item.prompt_view() for item in plan.items],
    }
    types = {item.cu_id: item.cu_type for item in plan.items}
    try:
        value = chat_call(llm, "judge", payload, check=_check_plan_cover(plan))
    except SchemaError as exc:
        log.warning("anchor %s: judge output invalid after retry (%s)", plan.anchor, exc)
        return [Judgment(i.cu_id, INSUFFICIENT, 0.0, "judge output failed validation", [], flags=[SCHEMA_FALLBACK],
                         anchor=plan.anchor, cu_type=i.cu_type) for i in plan.items]
    allowed = window.ids()
    by_id = {j["cu_id"]: j for j in value["judgments"]}
    out = []
    for item in plan.items:
        raw = by_id[item.cu_id]
        score = min(1.0, max(0.0, float(raw["score"])))
        evid = [e for e in raw.get("evid", []) if e in allowed]
        out.append(Judgment(item.cu_id, raw["label"], score, raw.get("why", ""), evid,
                            anchor=plan.anchor, cu_type=types[item.cu_id]))
    return out


def closure_adjacency(policy: PolicyGraph) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {nid: set() for nid in policy.nodes}
    contain: dict[str, list[str]] = {}
    for e in policy.edges:
        if e.kind in ("REFERS", "DERIVES"):
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
        elif e.kind == "CONTAIN":
            contain.setdefault(e.src, []).append(e.dst)
    # a reference to an article or point also reaches the rules under it
    for e in policy.edges:
        if e.kind != "REFERS" or policy.nodes[e.dst].kind == "compliance_unit":
            continue
        stack = [e.dst]
        while stack:
            cur = stack.pop()
            for child in contain.get(cur, []):
                adj[cur].add(child)
                adj[child].add(cur)
                stack.append(child)
    return adj


def reference_closure(policy: PolicyGraph, cu_id: str, adjacency: Mapping[str, set[str]] | None = None) -> set[str]:
    """Every CU reachable from ``cu_id`` over undirected REFERS and DERIVES edges.

    A REFERS edge into a structure node also opens that node's CONTAIN
    subtree, so citing an article reaches the rules derived from its
    points. ``cu_id`` itself is excluded.
    """
    node = policy.nodes.get(cu_id)
    if node is None or node.kind != "compliance_unit":
        raise GateError(f"unknown compliance unit {cu_id}")
    adj = adjacency if adjacency is not None else closure_adjacency(policy)
    seen = {cu_id}
    queue = deque([cu_id])
    while queue:
        for nxt in adj.get(queue.popleft(), ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    seen.discard(cu_id)
    return {n for n in seen if policy.nodes[n].kind == "compliance_unit"}


def _rule_view(policy: PolicyGraph, cu_id: str) -> dict:
    return plan_item(policy, ScoredCandidate(cu_id, 0.0)).prompt_view()


def apply_overrides(judgments: list[Judgment], policy: PolicyGraph, window: EvidenceWindow, llm: ChatAdapter,
                    adjacency: Mapping[str, set[str]] | None = None) -> list[Judgment]:
    """Flip NON_COMPLIANT to COMPLIANT when a closure rule is an affirmed exception.

    One adapter call per violated judgment with a non-empty closure. Other
    labels are returned untouched. Inputs are not mutated.
    """
    adj = adjacency if adjacency is not None else closure_adjacency(policy)
    out = []
    for j in judgments:
        j = Judgment(**{**j.__dict__, "evid": list(j.evid), "flags": list(j.flags)})
        if j.label == NON_COMPLIANT:
            closure = sorted(reference_closure(policy, j.cu_id, adj))
            if closure:
                payload = {"violated": {**_rule_view(policy, j.cu_id), "why": j.why},
                           "closure": [_rule_view(policy, c) for c in closure],
                           "window": window.to_payload()}
                try:
                    value = chat_call(llm, "judge.refs", payload)
                except AdapterError as exc:
                    log.warning("%s: override check failed (%s)", j.cu_id, exc)
                    j.flags.append(OVERRIDE_UNEVALUATED)
                else:
                    if value["exception"] and value.get("cu_id") in closure:
                        j.label = COMPLIANT
                        j.overridden = True
                        j.override_by = value["cu_id"]
                        j.why = value.get("why") or j.why
                    elif value["exception"]:
                        log.warning("%s: exception cites %r outside the closure; ignored", j.cu_id, value.get("cu_id"))
        out.append(j)
    return out


def gate_meta(judgments: list[Judgment], policy: PolicyGraph) -> list[Judgment]:
    """Scope handling for meta-CUs within one anchor's judgments.

    A meta-CU never reports a violation: its NON_COMPLIANT becomes
    INSUFFICIENT with score 0.0. A NOT_APPLICABLE meta-CU without
    references scopes its own article, so actor-CU violations from that
    article in the same batch become NOT_APPLICABLE with score 0.0.
    """
    parents = policy.parents()
    article = {j.cu_id: policy.article_of(j.cu_id, parents) for j in judgments}
    out_of_scope = set()
    for j in judgments:
        if j.cu_type == "meta_cu" and j.label == NOT_APPLICABLE and not policy.nodes[j.cu_id].attrs.get("references"):
            out_of_scope.add(article[j.cu_id])
    out = []
    for j in judgments:
        j = Judgment(**{**j.__dict__, "evid": list(j.evid), "flags": list(j.flags)})
        if j.label == NON_COMPLIANT and j.cu_type == "meta_cu":
            j.label, j.score = INSUFFICIENT, 0.0
            j.flags.append(META_NOT_REPORTED)
        elif j.label == NON_COMPLIANT and article[j.cu_id] in out_of_scope:
            j.label, j.score = NOT_APPLICABLE, 0.0
            j.flags.append(META_SUPPRESSED)
        out.append(j)
    return out


@dataclass
class Decision:
    article: str
    label: str
    score: float
    cu_id: str
    overridden: bool
    judgments: list[Judgment] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"article": self.article, "label": self.label, "score": self.score, "cu_id": self.cu_id,
                "overridden": self.overridden}


def _pick(group: list[Judgment]) -> Judgment:
    violations = [j for j in group if j.label == NON_COMPLIANT]
    pool = violations or group
    return min(pool, key=lambda j: (-j.score, j.cu_id, j.anchor))


def _article_sort_key(token: str):
    digits = token[1:]
    return (0, int(digits), token) if digits.isdigit() else (1, 0, token)


def aggregate_by_article(judgments: Iterable[Judgment], policy: PolicyGraph) -> list[Decision]:
    """Violation-first: the top-scoring NON_COMPLIANT if any, else the top-scoring judgment; ties by cu id."""
    parents = policy.parents()
    groups: dict[str, list[Judgment]] = {}
    for j in judgments:
        art = policy.article_of(j.cu_id, parents)
        if art is None:
            raise GateError(f"{j.cu_id}: no ancestor article in the policy graph")
        groups.setdefault(policy.article_token(art), []).append(j)
    out = []
    for token in sorted(groups, key=_article_sort_key):
        group = groups[token]
        best = _pick(group)
        # a compliant article whose violation was cleared by an exception reports the override
        overridden = best.overridden or (best.label != NON_COMPLIANT and any(j.overridden for j in group))
        out.append(Decision(token, best.label, best.score, best.cu_id, overridden, group))
    return out


def judgment_sort_key(j: Judgment):
    return (j.anchor, j.cu_id)


def decision_file(scenario_id: str, decisions: list[Decision], judgments: list[Judgment]) -> str:
    """Canonical JSON for one scenario's decisions plus the full judgment audit trail."""
    data = {"scenario_id": scenario_id,
            "decisions": [d.to_dict() for d in decisions],
            "judgments": [j.to_dict() for j in sorted(judgments, key=judgment_sort_key)]}
    return json.dumps(data, sort_keys=True, ensure_ascii=False, indent=1) + "\n"


def predicted_articles(decisions: Iterable[Decision | Mapping[str, Any]]) -> list[int]:
    """Article numbers with a NON_COMPLIANT decision."""
    out = []
    for d in decisions:
        label = d.label if isinstance(d, Decision) else d["label"]
        token = d.article if isinstance(d, Decision) else d["article"]
        if label == NON_COMPLIANT and token[1:].isdigit():
            out.append(int(token[1:]))
    return sorted(set(out))


def run_anchor(anchor: Anchor, plan: CUPlan, ctx: ContextGraph, policy: PolicyGraph, llm: ChatAdapter,
               radius: int = DEFAULT_RADIUS, meta_gating: bool = True,
               adjacency: Mapping[str, set[str]] | None = None) -> list[Judgment]:
    """Judge, scope by meta-CUs, then apply exception overrides for one anchor."""
    window = evidence_window(ctx, anchor, radius)
    judgments = judge_listwise(window, plan, llm, anchor)
    if meta_gating:
        judgments = gate_meta(judgments, policy)
    return apply_overrides(judgments, policy, window, llm, adjacency)


__all__ = [
    "COMPLIANT", "NON_COMPLIANT", "INSUFFICIENT", "NOT_APPLICABLE", "LABELS", "DEFAULT_RADIUS",
    "GateError", "EvidenceWindow", "evidence_window", "Judgment", "judge_listwise", "closure_adjacency",
    "reference_closure",
    "apply_overrides", "gate_meta", "Decision", "aggregate_by_article", "decision_file", "predicted_articles",
    "run_anchor",
]
