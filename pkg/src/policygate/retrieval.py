"""Anchor extraction, bi-encoder preselection, cross-scorer reranking, CU plans."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import text as tx
from .adapters import AdapterError, ChatAdapter, EmbeddingAdapter, chat_call
from .context_graph import ContextGraph
from .policy_graph import PolicyGraph

log = logging.getLogger(__name__)

DEFAULT_K = 8
DEFAULT_K1 = 50
JOIN = " ; "
ACTOR_TYPES = frozenset({"actor"})


class ScoringError(RuntimeError):
    pass


@dataclass
class Anchor:
    id: str
    group: str
    members: list[str]
    predicate: str = ""
    actor_type: str = ""
    object_type: str = ""
    hypernyms: list[str] = field(default_factory=list)
    features: str = ""

    def query(self) -> str:
        return JOIN.join([self.predicate.replace("_", " "), self.actor_type, self.object_type])

    def to_dict(self) -> dict:
        return {"id": self.id, "group": self.group, "members": list(self.members), "predicate": self.predicate,
                "actor_type": self.actor_type, "object_type": self.object_type, "hypernyms": list(self.hypernyms)}


def _etype(entity) -> str:
    return entity.best or entity.etype


def extract_anchors(ctx: ContextGraph, actor_types: Iterable[str] = ACTOR_TYPES) -> list[Anchor]:
    """Group policy-relevant entities into units of evaluation.

    One anchor per (actor, predicate) pair over relations whose subject is
    actor-typed; its members are the actor and that predicate's objects.
    Actors without outgoing relations form singleton actor anchors. Any
    other entity with a hypernym or a relation joins the first anchor
    holding one of its neighbours, else seeds a data/system anchor.
    """
    actor_types = {t.lower() for t in actor_types}
    ents = {e.id: e for e in ctx.entities}
    related = {r.subj for r in ctx.relations} | {r.obj for r in ctx.relations}
    relevant = [e for e in ctx.entities if e.labels() or e.id in related]
    drafts: list[dict] = []

    for e in relevant:
        if e.etype.lower() not in actor_types:
            continue
        preds: dict[str, list[str]] = {}
        for r in ctx.relations:
            if r.subj == e.id:
                objs = preds.setdefault(r.pred, [])
                if r.obj not in objs and r.obj != e.id:
                    objs.append(r.obj)
        if preds:
            for pred, objs in preds.items():
                drafts.append({"group": "actor", "members": [e.id] + objs, "predicate": pred, "actor": e.id})
        else:
            drafts.append({"group": "actor", "members": [e.id], "predicate": "", "actor": e.id})

    neighbours: dict[str, list[str]] = {e.id: [] for e in ctx.entities}
    for r in ctx.relations:
        neighbours[r.subj].append(r.obj)
        neighbours[r.obj].append(r.subj)

    def attach() -> None:
        changed = True
        while changed:
            changed = False
            placed = {m for d in drafts for m in d["members"]}
            for e in relevant:
                if e.id in placed:
                    continue
                for i, d in enumerate(drafts):
                    if any(n in d["members"] for n in neighbours[e.id]):
                        d["members"].append(e.id)
                        placed.add(e.id)
                        changed = True
                        break

    attach()
    for e in relevant:
        if any(e.id in d["members"] for d in drafts):
            continue
        group = "system" if "system" in e.etype.lower() else "data"
        drafts.append({"group": group, "members": [e.id], "predicate": "", "actor": None})
        attach()

    anchors = []
    for i, d in enumerate(drafts, 1):
        members = d["members"]
        actor = ents[d["actor"]] if d["actor"] else None
        objects = [ents[m] for m in members if m != d["actor"]]
        labels: dict[str, None] = {}
        for m in members:
            labels.update(dict.fromkeys(ents[m].labels()))
        anchors.append(Anchor(
            id=f"a{i}",
            group=d["group"],
            members=members,
            predicate=d["predicate"],
            actor_type=_etype(actor) if actor else "",
            object_type=_etype(objects[0]) if objects else "",
            hypernyms=list(labels),
            features="; ".join(f"{ents[m].name} ({ents[m].etype})" for m in members),
        ))
    return anchors


@dataclass(frozen=True)
class ScoreWeights:
    w_ent: float = 0.6
    w_hyp: float = 0.3
    w_bonus: float = 0.1

    def __post_init__(self):
        for name in ("w_ent", "w_hyp", "w_bonus"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def scaled(self, factor: float) -> "ScoreWeights":
        return ScoreWeights(self.w_ent * factor, self.w_hyp * factor, self.w_bonus * factor)


def subject_terms(subject: str) -> set[str]:
    """Normalized subject-term set: lowercase, punctuation stripped."""
    return tx.token_set(subject)


def hypernym_overlap(labels: Iterable[str], subject: str) -> bool:
    terms = subject_terms(subject)
    for label in labels:
        toks = tx.token_set(label)
        if toks and toks <= terms:
            return True
    return False


class VectorCache:
    def __init__(self, embedder: EmbeddingAdapter):
        self.embedder = embedder
        self._cache: dict[str, np.ndarray] = {}

    def vec(self, text: str) -> np.ndarray:
        if text not in self._cache:
            self._cache[text] = self.embedder.embed([text])[0]
        return self._cache[text]

    def warm(self, texts: Sequence[str]) -> None:
        todo = [t for t in dict.fromkeys(texts) if t not in self._cache]
        if todo:
            for t, v in zip(todo, self.embedder.embed(todo)):
                self._cache[t] = v


def bi_encoder_score(anchor: Anchor, subject: str, weights: ScoreWeights, vectors: VectorCache,
                     cu_id: str = "?") -> float:
    """Entity similarity + hypernym similarity + overlap bonus against a CU subject."""
    try:
        v_subj = vectors.vec(subject)
        v_ent = vectors.vec(anchor.features)
        cos_ent = float(v_ent @ v_subj)
        cos_hyp = float(vectors.vec("; ".join(anchor.hypernyms)) @ v_subj) if anchor.hypernyms else 0.0
    except AdapterError as exc:
        raise ScoringError(f"anchor {anchor.id} / cu {cu_id}: {exc}") from exc
    bonus = 1.0 if hypernym_overlap(anchor.hypernyms, subject) else 0.0
    return weights.w_ent * cos_ent + weights.w_hyp * cos_hyp + weights.w_bonus * bonus


@dataclass
class ScoredCandidate:
    cu_id: str
    bi_score: float
    rerank_score: float | None = None


class SubjectIndex:
    """Pre-cached CU subjects for one policy graph."""

    def __init__(self, policy: PolicyGraph, embedder: EmbeddingAdapter | VectorCache):
        self.policy = policy
        self.vectors = embedder if isinstance(embedder, VectorCache) else VectorCache(embedder)
        self.subjects = {cu: policy.nodes[cu].attrs.get("subject", "") for cu in policy.cu_ids()}
        if self.subjects:
            self.vectors.warm(list(self.subjects.values()))


def preselect(anchor: Anchor, index: SubjectIndex, k1: int | None = DEFAULT_K1,
              weights: ScoreWeights = ScoreWeights()) -> list[ScoredCandidate]:
    """Score every CU and keep the top ``k1`` (all when ``k1`` is None)."""
    scored = [ScoredCandidate(cu, bi_encoder_score(anchor, subj, weights, index.vectors, cu))
              for cu, subj in index.subjects.items()]
    scored.sort(key=lambda c: (-c.bi_score, c.cu_id))
    return scored if k1 is None else scored[:k1]


class CrossScorer(Protocol):
    def score(self, query: str, documents: list[str]) -> list[float]: ...


class ChatCrossScorer:
    """Joint query/document relevance from the chat model."""

    def __init__(self, llm: ChatAdapter):
        self.llm = llm

    def score(self, query: str, documents: list[str]) -> list[float]:
        scores = chat_call(self.llm, "rerank.score", {"query": query, "documents": documents})["scores"]
        if len(scores) != len(documents):
            raise ScoringError(f"cross scorer returned {len(scores)} scores for {len(documents)} documents")
        return [float(s) for s in scores]


@dataclass
class PlanItem:
    cu_id: str
    subject: str
    condition: str
    constraint: str
    context: str
    cu_type: str
    bi_score: float
    rerank_score: float | None

    def to_dict(self) -> dict:
        return {"cu_id": self.cu_id, "subject": self.subject, "condition": self.condition,
                "constraint": self.constraint, "context": self.context, "cu_type": self.cu_type,
                "bi_score": self.bi_score, "rerank_score": self.rerank_score}

    def prompt_view(self) -> dict:
        return {"cu_id": self.cu_id, "subject": self.subject, "condition": self.condition,
                "constraint": self.constraint, "context": self.context, "cu_type": self.cu_type}


@dataclass
class CUPlan:
    anchor: str
    items: list[PlanItem]
    degraded: bool = False

    def cu_ids(self) -> list[str]:
        return [i.cu_id for i in self.items]

    def to_dict(self) -> dict:
        return {"anchor": self.anchor, "items": [i.to_dict() for i in self.items], "degraded": self.degraded}


def document_text(policy: PolicyGraph, cu_id: str) -> str:
    attrs = policy.nodes[cu_id].attrs
    return JOIN.join([attrs.get("subject", ""), tx.as_text(attrs.get("constraint")),
                      tx.render_condition(attrs.get("condition"))])


def plan_item(policy: PolicyGraph, cand: ScoredCandidate) -> PlanItem:
    node = policy.nodes[cand.cu_id]
    a = node.attrs
    return PlanItem(cand.cu_id, a.get("subject", ""), tx.render_condition(a.get("condition")),
                    tx.as_text(a.get("constraint")), a.get("context") or "", node.type,
                    cand.bi_score, cand.rerank_score)


def rerank(anchor: Anchor, candidates: list[ScoredCandidate], policy: PolicyGraph,
           scorer: CrossScorer | None, k: int = DEFAULT_K) -> CUPlan:
    """Rescore preselected candidates jointly with the anchor query; keep the top ``k``."""
    if not candidates:
        raise ValueError("rerank needs at least one candidate")
    degraded = scorer is None
    ranked = [ScoredCandidate(c.cu_id, c.bi_score) for c in candidates]
    if scorer is not None:
        try:
            scores = scorer.score(anchor.query(), [document_text(policy, c.cu_id) for c in ranked])
            if len(scores) != len(ranked):
                raise ScoringError("score count mismatch")
            for c, s in zip(ranked, scores):
                c.rerank_score = float(s)
            ranked.sort(key=lambda c: (-c.rerank_score, c.cu_id))
        except (AdapterError, ScoringError) as exc:
            log.warning("anchor %s: cross scorer failed (%s); using bi-encoder order", anchor.id, exc)
            degraded = True
            ranked = [ScoredCandidate(c.cu_id, c.bi_score) for c in candidates]
    if degraded:
        ranked.sort(key=lambda c: (-c.bi_score, c.cu_id))
    return CUPlan(anchor.id, [plan_item(policy, c) for c in ranked[:k]], degraded)
