"""Context graph construction from scenario text."""
from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, NamedTuple

import numpy as np

from .adapters import ChatAdapter, EmbeddingAdapter, chat_call
from .policy_graph import PolicyGraph

log = logging.getLogger(__name__)

STRONG, WEAK = "STRONG", "WEAK"
DEFAULT_BETA = 0.3
DEFAULT_N = 5
DEFAULT_M = 5

_DEFINES = re.compile(r"[‘'“\"]([^’'”\"]{2,80})[’'”\"](?:\s+of\s+the\s+[a-z ]{2,40}?)?\s+means\b")
_SUBJECT_SPLIT = re.compile(r"\s*,\s*|\s+(?:and|or)\s+")


class ContextGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Hypernym:
    label: str
    score: float
    strength: str

    def to_dict(self) -> dict:
        return {"label": self.label, "score": self.score, "strength": self.strength}


@dataclass
class Entity:
    id: str
    name: str
    etype: str
    hypernyms: list[Hypernym] = field(default_factory=list)
    hypernym: str | None = None

    @property
    def best(self) -> str | None:
        return self.hypernyms[0].label if self.hypernyms else self.hypernym

    def labels(self) -> list[str]:
        if self.hypernyms:
            return [h.label for h in self.hypernyms]
        return [self.hypernym] if self.hypernym else []

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"id": self.id, "name": self.name, "type": self.etype}
        if self.best is not None:
            out["hypernym"] = self.best
        if self.hypernyms:
            out["hypernyms"] = [h.to_dict() for h in self.hypernyms]
        return out


@dataclass(frozen=True)
class Relation:
    subj: str
    pred: str
    obj: str

    @property
    def id(self) -> str:
        return f"{self.subj}-{self.pred}->{self.obj}"

    def to_dict(self) -> dict:
        return {"subj": self.subj, "pred": self.pred, "obj": self.obj}


@dataclass(frozen=True)
class HypernymProposal:
    entity: str
    label: str
    frag_id: str
    src: str
    score: float

    @property
    def strength(self) -> str:
        return STRONG if self.src == "premise" else WEAK


@dataclass
class ContextGraph:
    entities: list[Entity]
    relations: list[Relation]
    source: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        ids = [e.id for e in self.entities]
        if len(set(ids)) != len(ids):
            raise ContextGraphError("duplicate entity ids")
        known = set(ids)
        seen = set()
        for rel in self.relations:
            if rel.subj not in known or rel.obj not in known:
                raise ContextGraphError(f"relation {rel.subj} -[{rel.pred}]-> {rel.obj} has an unknown endpoint")
            if rel in seen:
                raise ContextGraphError(f"duplicate relation {rel.id}")
            seen.add(rel)

    def entity(self, eid: str) -> Entity:
        for e in self.entities:
            if e.id == eid:
                return e
        raise KeyError(eid)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "entities": [e.to_dict() for e in self.entities],
            "relations": [r.to_dict() for r in self.relations],
        }
        if self.source is not None:
            out["source"] = self.source
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ContextGraph":
        entities = []
        for raw in data.get("entities", []):
            hyps = [Hypernym(h["label"], float(h["score"]), h.get("strength", WEAK))
                    for h in raw.get("hypernyms", [])]
            entities.append(Entity(raw["id"], raw.get("name", ""), raw.get("type", ""), hyps, raw.get("hypernym")))
        relations = [Relation(r["subj"], r["pred"], r["obj"]) for r in data.get("relations", [])]
        return cls(entities, relations, data.get("source"))

    @classmethod
    def loads(cls, text: str) -> "ContextGraph":
        return cls.from_dict(json.loads(text))


class ERResult(NamedTuple):
    entities: list[Entity]
    relations: list[Relation]
    warnings: list[str]


def extract_er_triples(text: str, llm: ChatAdapter) -> ERResult:
    """Entities and relations from scenario text; dangling relations are dropped."""
    if not text.strip():
        return ERResult([], [], [])
    value = chat_call(llm, "ctx.extract", {"text": text})
    warnings: list[str] = []
    entities: list[Entity] = []
    ids: set[str] = set()
    for raw in value["entities"]:
        if raw["id"] in ids:
            warnings.append(f"duplicate entity id {raw['id']} dropped")
            continue
        ids.add(raw["id"])
        entities.append(Entity(raw["id"], raw["name"], raw["type"]))
    relations: list[Relation] = []
    seen: set[Relation] = set()
    for raw in value["relations"]:
        rel = Relation(raw["subj"], raw["pred"], raw["obj"])
        if rel.subj not in ids or rel.obj not in ids:
            warnings.append(f"relation {rel.subj} -[{rel.pred}]-> {rel.obj} dropped: unknown endpoint")
            continue
        if rel in seen:
            continue
        seen.add(rel)
        relations.append(rel)
    for w in warnings:
        log.warning(w)
    return ERResult(entities, relations, warnings)


# ------------------------------------------------------------------ hypernyms


@dataclass(frozen=True)
class Fragment:
    frag_id: str
    kind: str
    text: str
    terms: tuple[str, ...]

    def payload(self) -> dict:
        return {"frag_id": self.frag_id, "kind": self.kind, "text": self.text, "terms": list(self.terms)}


def subject_terms(subject: str) -> list[str]:
    out = []
    for part in _SUBJECT_SPLIT.split(subject):
        part = re.sub(r"^(?:the|a|an|each|any)\s+", "", part.strip(), flags=re.I).strip(" .;:")
        if part and part.lower() not in (o.lower() for o in out):
            out.append(part)
    return out


def policy_fragments(policy: PolicyGraph) -> list[Fragment]:
    """Premise articles and CU source clauses, each a separate fragment."""
    frags: list[Fragment] = []
    parents = policy.parents()
    for node in policy.nodes.values():
        if node.kind == "premise" and node.type == "article":
            body = [node.attrs.get("title", ""), node.attrs.get("text", "")]
            body += [policy.nodes[c].attrs.get("text", "") for c in policy.children(node.id)]
            text = " ".join(b for b in body if b).strip()
            terms = tuple(dict.fromkeys(m.group(1).strip() for m in _DEFINES.finditer(text)))
            frags.append(Fragment(node.id, "premise", text, terms))
    sources: dict[str, list[str]] = {}
    for cu_id in policy.cu_ids():
        src = parents.get(cu_id)
        if src is not None:
            sources.setdefault(src, []).extend(subject_terms(policy.nodes[cu_id].attrs.get("subject", "")))
    for src, terms in sources.items():
        frags.append(Fragment(src, "other", policy.nodes[src].attrs.get("text", ""),
                              tuple(dict.fromkeys(terms))))
    return frags


class FragmentRetriever:
    """Exhaustive dense retrieval over policy fragments."""

    def __init__(self, fragments: list[Fragment], embedder: EmbeddingAdapter):
        self.fragments = fragments
        self.embedder = embedder
        self.matrix = embedder.embed([f.text for f in fragments]) if fragments else np.zeros((0, 0))
        vocab: dict[str, str] = {}
        for f in fragments:
            for t in f.terms:
                vocab.setdefault(t.lower(), t)
        self.vocabulary = vocab

    @classmethod
    def from_policy(cls, policy: PolicyGraph, embedder: EmbeddingAdapter) -> "FragmentRetriever":
        return cls(policy_fragments(policy), embedder)

    def top(self, query: str, m: int) -> list[Fragment]:
        if not self.fragments or m <= 0:
            return []
        q = self.embedder.embed([query])[0]
        sims = self.matrix @ q
        order = sorted(range(len(self.fragments)), key=lambda i: (-round(float(sims[i]), 12), self.fragments[i].frag_id))
        return [self.fragments[i] for i in order[:m]]


def propose_hypernyms(entity: Entity, retriever: FragmentRetriever, llm: ChatAdapter, m: int = DEFAULT_M,
                      warnings: list[str] | None = None) -> list[HypernymProposal]:
    """Ask the model for policy-vocabulary hypernyms grounded in the top-M fragments."""
    warnings = warnings if warnings is not None else []
    frags = retriever.top(f"{entity.name} ({entity.etype})", m)
    if not frags:
        return []
    payload = {"entity": {"id": entity.id, "name": entity.name, "type": entity.etype},
               "fragments": [f.payload() for f in frags]}
    by_id = {f.frag_id: f for f in frags}
    out = []
    for raw in chat_call(llm, "ctx.hypernym", payload)["proposals"]:
        frag = by_id.get(raw["frag_id"])
        if frag is None:
            warnings.append(f"{entity.id}: proposal cites fragment {raw['frag_id']} that was not retrieved")
            continue
        label = raw["label"].strip()
        if retriever.vocabulary:
            canonical = retriever.vocabulary.get(label.lower())
            if canonical is None:
                warnings.append(f"{entity.id}: label {label!r} is not policy vocabulary")
                continue
            label = canonical
        score = float(raw["score"])
        if not 0.0 <= score <= 1.0:
            warnings.append(f"{entity.id}: score {score} for {label!r} clamped into [0, 1]")
            score = min(1.0, max(0.0, score))
        out.append(HypernymProposal(entity.id, label, frag.frag_id, "premise" if frag.kind == "premise" else "other",
                                    score))
    for w in warnings:
        log.warning(w)
    return out


def aggregate_hypernyms(proposals: Iterable[HypernymProposal], beta: float = DEFAULT_BETA) -> dict[str, float]:
    """Max-pool scores per label with a ``beta`` bonus for STRONG proposals, capped at 1."""
    best: dict[str, float] = {}
    for p in proposals:
        value = p.score + (beta if p.strength == STRONG else 0.0)
        if p.label not in best or value > best[p.label]:
            best[p.label] = value
    return {label: min(1.0, v) for label, v in best.items()}


def label_strengths(proposals: Iterable[HypernymProposal]) -> dict[str, str]:
    out: dict[str, str] = {}
    for p in proposals:
        if out.get(p.label) != STRONG:
            out[p.label] = p.strength
    return out


def top_n_hypernyms(scores: Mapping[str, float], strengths: Mapping[str, str], n: int = DEFAULT_N) -> list[tuple[str, float]]:
    """Top-N by score, then STRONG before WEAK, then label."""
    order = sorted(scores, key=lambda h: (-scores[h], 0 if strengths.get(h) == STRONG else 1, h))
    return [(h, scores[h]) for h in order[:max(0, n)]]


def build_context_graph(entities: list[Entity], relations: list[Relation],
                        hypernyms: Mapping[str, list[Hypernym]] | None = None,
                        source: str | None = None) -> ContextGraph:
    hypernyms = hypernyms or {}
    out = [Entity(e.id, e.name, e.etype, list(hypernyms.get(e.id, e.hypernyms)), e.hypernym) for e in entities]
    return ContextGraph(out, list(relations), source)


def build_context(text: str, policy: PolicyGraph, llm: ChatAdapter, embedder: EmbeddingAdapter,
                  beta: float = DEFAULT_BETA, n: int = DEFAULT_N, m: int = DEFAULT_M,
                  source: str | None = None, jobs: int = 1,
                  retriever: FragmentRetriever | None = None) -> ContextGraph:
    """Scenario text -> context graph with top-N hypernyms per entity."""
    er = extract_er_triples(text, llm)
    retriever = retriever or FragmentRetriever.from_policy(policy, embedder)

    def one(entity: Entity) -> list[Hypernym]:
        props = propose_hypernyms(entity, retriever, llm, m)
        strengths = label_strengths(props)
        return [Hypernym(h, s, strengths[h]) for h, s in top_n_hypernyms(aggregate_hypernyms(props, beta), strengths, n)]

    if jobs > 1 and len(er.entities) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            lists = list(pool.map(one, er.entities))
    else:
        lists = [one(e) for e in er.entities]
    return build_context_graph(er.entities, er.relations, {e.id: h for e, h in zip(er.entities, lists)}, source)
