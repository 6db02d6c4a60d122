"""Deterministic mock chat adapter.

Responses come from exact fixtures keyed by ``(task, canonical payload)``
first and from rule-based responders second. Every response is a pure
function of the task id and the payload, so pipelines run offline and
reproducibly.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .. import text as tx
from ..text import as_text, render_condition
from .base import AdapterError, ChatAdapter, ChatTask, payload_key


class MockMiss(AdapterError):
    pass


# ---------------------------------------------------------------- cu.extract

_MODAL = re.compile(r"\b(shall not|shall|must not|must|may not|may|does not apply|applies)\b", re.I)
_COND = re.compile(r"\s+(in any case where|where|if|when|unless|provided that)\b", re.I)
_LEAD = re.compile(r"\s*(?:Where|If|When)\s+([^,]+),\s*")
_ITEM = re.compile(r"\s*\([a-z]\)\s*")
_DET = re.compile(r"(?:the|a|an)\s+", re.I)
_META_SUBJECT = re.compile(r"^(this regulation|this article|this chapter|paragraph|article)\b", re.I)


def _trim(text: str, start: int, end: int, chars: str = " \t\n;:,.") -> tuple[int, int]:
    while start < end and text[start] in chars:
        start += 1
    while end > start and text[end - 1] in chars:
        end -= 1
    return start, end


def _condition_tree(text: str, lead_word: str) -> Any:
    parts = [p for p in _ITEM.split(text) if p.strip(" ;:,.")]
    items = []
    for part in parts:
        part = part.strip(" ;:,.")
        part = re.sub(r"[;,]?\s+(?:or|and)$", "", part).strip(" ;:,.")
        if part:
            items.append(part)
    if len(items) > 1:
        joiner = "any" if re.search(r";\s*or\b|\bor\s*\([a-z]\)", text) else "all"
        tree: Any = {joiner: items}
    else:
        tree = items[0] if items else None
    if lead_word.lower() == "unless" and tree is not None:
        tree = {"not": tree}
    return tree


def heuristic_units(text: str) -> list[dict]:
    """Split one provision into a compliance-unit payload.

    Recognises ``<subject> <modal> <action> [where|if|unless <condition>]``
    and a leading ``Where <condition>, <subject> <modal> ...`` form.
    """
    match = _MODAL.search(text)
    if not match:
        return []
    spans: dict[str, Any] = {"subject": None, "condition": None, "constraint": None, "context": None}
    condition = None
    subj_start = 0
    lead = _LEAD.match(text[: match.start()])
    if lead:
        c0, c1 = _trim(text, lead.start(1), lead.end(1))
        condition = _condition_tree(text[c0:c1], "where")
        spans["condition"] = [c0, c1]
        subj_start = lead.end()
    det = _DET.match(text, subj_start)
    if det and det.end() <= match.start():
        subj_start = det.end()
    s0, s1 = _trim(text, subj_start, match.start())
    if s0 >= s1:
        return []
    spans["subject"] = [s0, s1]
    subject = text[s0:s1]
    if subject.lower().startswith("the "):
        subject = subject[4:]

    cond = _COND.search(text, match.end())
    stop = re.compile(r"[;:]|\.(?:\s|$)").search(text, match.end())
    end = len(text)
    if cond and (not stop or cond.start() <= stop.start()):
        end = cond.start()
    elif stop:
        end = stop.start()
    k0, k1 = _trim(text, match.start(), end)
    spans["constraint"] = [k0, k1]
    constraint = [text[k0:k1]]
    if cond and condition is None and cond.start() == end:
        c0, c1 = _trim(text, cond.end(), len(text))
        if c0 < c1:
            condition = _condition_tree(text[c0:c1], cond.group(1))
            spans["condition"] = [c0, c1]
    meta = bool(_META_SUBJECT.match(subject)) or "apply" in constraint[0].lower()
    return [{
        "subject": subject,
        "condition": condition,
        "constraint": constraint,
        "context": None,
        "char_span": spans,
        "cu_type": "meta_cu" if meta else "actor_cu",
    }]


# ---------------------------------------------------------------- helpers

_PARAGRAPH = re.compile(r"\bparagraphs?\s+(\d+)(?:\s*(?:and|to|-|–)\s*(\d+))?", re.I)
_NEGATION = frozenset("not no never without lacks lacking missing fails failed neither nor".split())
_GENERIC = frozenset(
    "shall must may data personal processing process processed processes controller processor "
    "subject subjects any such other those these including concerning relating related where "
    "been being carried out basis".split()
)
_EXCEPTION = re.compile(r"not apply|does not apply|exempt|derogat|by way of exception", re.I)
_PROHIBITION = re.compile(r"^\s*(shall not|must not|may not|is prohibited)", re.I)


def _stems(text: str) -> set[str]:
    return {tx.stem(t) for t in tx.content_tokens(text, _GENERIC | _NEGATION) if not t.isdigit()}


def _leaves(tree: Any) -> list[str]:
    if tree is None:
        return []
    if isinstance(tree, str):
        return [tree]
    out: list[str] = []
    for value in tree.values():
        for sub in value if isinstance(value, list) else [value]:
            out.extend(_leaves(sub))
    return out


def _negated(pred: str) -> bool:
    return bool(set(tx.tokens(pred.replace("_", " "))) & _NEGATION)


def _relation_facts(window: Mapping[str, Any], mark_absent: bool = False) -> list[tuple[str, set[str], bool, list[str]]]:
    """(sentence, keyword stems, negated, evidence ids) per window relation.

    With ``mark_absent``, an entity that is the object of a negated
    relation counts as absent, and every fact touching it is negated.
    """
    names = {e["id"]: e.get("name", "") for e in window.get("entities", [])}
    rels = window.get("relations", [])
    absent = {r["obj"] for r in rels if _negated(r["pred"])} if mark_absent else set()
    facts = []
    for rel in rels:
        sentence = f"{names.get(rel['subj'], '')} {rel['pred'].replace('_', ' ')} {names.get(rel['obj'], '')}"
        evid = [rel.get("id", ""), rel["subj"], rel["obj"]]
        negated = _negated(rel["pred"]) or rel["subj"] in absent or rel["obj"] in absent
        facts.append((sentence, _stems(sentence), negated, evid))
    return facts


def _best_fact(keywords: set[str], facts, positive_only: bool = False):
    best, best_overlap = None, 0
    for fact in facts:
        if positive_only and fact[2]:
            continue
        overlap = len(keywords & fact[1])
        if overlap > best_overlap:
            best, best_overlap = fact, overlap
    return best, best_overlap


def template_sentence(unit: Mapping[str, Any]) -> str:
    cond = unit.get("condition")
    constraint = as_text(unit.get("constraint"))
    head = f"The {unit['subject']} {constraint}".rstrip()
    if cond is None or cond == "":
        return head + "."
    if isinstance(cond, dict) and "not" in cond:
        return f"{head} unless {render_condition(cond['not'])}."
    rendered = render_condition(cond)
    sep = " where: " if isinstance(cond, dict) else " where "
    return f"{head}{sep}{rendered}."


@dataclass
class MockWorld:
    """Rule-based responders for every registered task.

    ``lexicon`` maps entity surface names to entity types for ER
    extraction; ``hypernyms`` maps entity names to preferred policy terms.
    ``reconstruct`` selects the graph-to-text behaviour: ``identity``
    returns stored source text, ``template`` renders units from fields.
    """

    lexicon: dict[str, str] = field(default_factory=dict)
    hypernyms: dict[str, list[str]] = field(default_factory=dict)
    reconstruct: str = "template"

    @classmethod
    def from_json(cls, data: Mapping[str, Any], **kw) -> "MockWorld":
        return cls(lexicon=dict(data.get("lexicon", {})), hypernyms=dict(data.get("hypernyms", {})), **kw)

    def handlers(self) -> dict[str, Callable[[Mapping[str, Any]], Any]]:
        return {
            "cu.extract": self.cu_extract,
            "cu.reference": self.cu_reference,
            "ctx.extract": self.ctx_extract,
            "ctx.hypernym": self.ctx_hypernym,
            "judge": self.judge,
            "judge.refs": self.judge_refs,
            "premise.classify": self.premise_classify,
            "rerank.score": self.rerank_score,
            "graph.reconstruct": self.graph_reconstruct,
        }

    # -- policy side
    def cu_extract(self, payload):
        return {"items": [{"id": it["id"], "units": heuristic_units(it["text"])} for it in payload["items"]]}

    def cu_reference(self, payload):
        out = []
        for it in payload["items"]:
            refs: list[str] = []
            for m in _PARAGRAPH.finditer(it["text"]):
                lo = int(m.group(1))
                hi = int(m.group(2)) if m.group(2) else lo
                for n in range(lo, hi + 1):
                    tok = f"A{it['article']}.{n}"
                    if tok not in refs:
                        refs.append(tok)
            out.append({"cu_id": it["cu_id"], "references": refs})
        return {"items": out}

    def premise_classify(self, payload):
        title = payload["title"].lower()
        return {"premise": any(w in title for w in ("definition", "subject-matter", "objective", "purpose"))}

    # -- context side
    def ctx_extract(self, payload):
        text = payload["text"]
        names = sorted(self.lexicon, key=lambda n: (-len(n), n))
        mentions: list[tuple[int, int, str]] = []
        taken: list[tuple[int, int]] = []
        for name in names:
            for m in re.finditer(r"(?<![\w])" + re.escape(name) + r"(?![\w])", text, re.I):
                if any(m.start() < b and a < m.end() for a, b in taken):
                    continue
                taken.append((m.start(), m.end()))
                mentions.append((m.start(), m.end(), name))
        mentions.sort()
        ids: dict[str, str] = {}
        entities = []
        for _, _, name in mentions:
            if name not in ids:
                ids[name] = f"e{len(ids) + 1}"
                entities.append({"id": ids[name], "name": name, "type": self.lexicon[name]})
        relations, seen = [], set()
        for a, b in zip(mentions, mentions[1:]):
            between = text[a[1]:b[0]]
            if re.search(r"[.!?]\s", between + " ") or a[2] == b[2]:
                continue
            # the words nearest the object carry the verb phrase
            words = [w for w in tx.tokens(between) if w not in ("the", "a", "an")][-5:]
            if not words:
                continue
            key = (ids[a[2]], tx.snake(words), ids[b[2]])
            if key not in seen:
                seen.add(key)
                relations.append({"subj": key[0], "pred": key[1], "obj": key[2]})
        return {"entities": entities, "relations": relations}

    def ctx_hypernym(self, payload):
        ent = payload["entity"]
        preferred = [h.lower() for h in self.hypernyms.get(ent["name"], [])]
        name_stems = _stems(ent["name"]) | {tx.stem(t) for t in tx.tokens(ent["name"])}
        proposals = []
        for frag in payload["fragments"]:
            for term in frag.get("terms", []):
                low = term.lower()
                if low in preferred:
                    score = 0.7 - 0.05 * preferred.index(low)
                else:
                    term_stems = {tx.stem(t) for t in tx.tokens(term)}
                    common = name_stems & term_stems
                    if not common:
                        continue
                    score = 0.3 + 0.4 * len(common) / len(name_stems | term_stems)
                proposals.append({"label": term, "frag_id": frag["frag_id"], "score": round(score, 6)})
        return {"proposals": proposals}

    # -- gate
    def judge(self, payload):
        facts = _relation_facts(payload["window"])
        out = []
        for item in payload["plan"]:
            meta = item.get("cu_type") == "meta_cu"
            source = " ".join(_leaves(item.get("condition"))) if meta else as_text(item.get("constraint"), " ")
            keywords = _stems(source)
            fact, overlap = _best_fact(keywords, facts)
            if fact is None:
                out.append({"cu_id": item["cu_id"], "label": "INSUFFICIENT", "score": 0.2,
                            "why": "no evidence in the window addresses this rule", "evid": []})
                continue
            negated = fact[2]
            if meta:
                label = "NOT_APPLICABLE" if negated else "COMPLIANT"
            else:
                prohibited = bool(_PROHIBITION.match(as_text(item.get("constraint"), " ")))
                label = "NON_COMPLIANT" if negated != prohibited else "COMPLIANT"
            out.append({"cu_id": item["cu_id"], "label": label, "score": round(min(0.95, 0.5 + 0.1 * overlap), 6),
                        "why": f"window states: {fact[0]}", "evid": fact[3]})
        return {"judgments": out}

    def judge_refs(self, payload):
        facts = _relation_facts(payload["window"], mark_absent=True)
        for item in payload["closure"]:
            rule_text = f"{item.get('subject', '')} {as_text(item.get('constraint'), ' ')}"
            if not _EXCEPTION.search(rule_text):
                continue
            keywords = _stems(" ".join(_leaves(item.get("condition"))))
            fact, overlap = _best_fact(keywords, facts, positive_only=True)
            if fact is not None and overlap >= 2:
                return {"exception": True, "cu_id": item["cu_id"], "why": f"exception met: {fact[0]}"}
        return {"exception": False, "cu_id": None, "why": "no exception in the closure is satisfied"}

    def rerank_score(self, payload):
        q = _stems(payload["query"]) | {tx.stem(t) for t in tx.tokens(payload["query"])}
        scores = []
        for doc in payload["documents"]:
            d = _stems(doc) | {tx.stem(t) for t in tx.tokens(doc)}
            scores.append(round(len(q & d) / len(q | d), 6) if q | d else 0.0)
        return {"scores": scores}

    # -- fidelity
    def graph_reconstruct(self, payload):
        if self.reconstruct == "identity":
            return {"text": payload.get("source", "")}
        lines = []
        unit = payload.get("unit", {})
        if payload.get("kind") == "context":
            names = {e["id"]: e["name"] for e in unit.get("entities", [])}
            linked = set()
            for rel in unit.get("relations", []):
                linked.update((rel["subj"], rel["obj"]))
                lines.append(f"{names[rel['subj']]} {rel['pred'].replace('_', ' ')} {names[rel['obj']]}.")
            for ent in unit.get("entities", []):
                if ent["id"] not in linked:
                    lines.append(f"{ent['name']} is a {ent.get('type', 'entity').replace('_', ' ')}.")
            return {"text": " ".join(lines)}
        for block in unit.get("blocks", []):
            sentences = [template_sentence(u) for u in block.get("units", [])]
            sentences += [f"See {ref}." for ref in block.get("refers", [])]
            if not sentences and block.get("premise"):
                sentences = [block.get("text", "")]
            body = " ".join(s for s in sentences if s)
            if not body:
                continue
            lines.append(f"{block['label']}. {body}" if block.get("label") else body)
        return {"text": "\n".join(lines)}


def load_fixtures(entries: list[Mapping[str, Any]]) -> dict[str, Any]:
    """Key fixture entries by ``(task, payload)`` hash.

    Entries carry ``task`` plus either ``payload`` or a precomputed ``key``,
    and either ``response`` (JSON value) or ``raw`` (text, parsed leniently).
    """
    table = {}
    for entry in entries:
        key = entry.get("key") or payload_key(entry["task"], entry["payload"])
        table[key] = entry["raw"] if "raw" in entry else entry["response"]
    return table


@dataclass
class MockChatAdapter(ChatAdapter):
    fixtures: dict[str, Any] = field(default_factory=dict)
    handlers: dict[str, Callable[[Mapping[str, Any]], Any]] = field(default_factory=dict)
    calls: list[tuple[str, str]] = field(default_factory=list, repr=False)

    def complete(self, task: ChatTask, prompt: str, payload: Mapping[str, Any], attempt: int) -> Any:
        key = payload_key(task.task_id, payload)
        self.calls.append((task.task_id, key))
        if key in self.fixtures:
            return json.loads(json.dumps(self.fixtures[key]))
        handler = self.handlers.get(task.task_id)
        if handler is None:
            raise MockMiss(f"no fixture or responder for {task.task_id} key {key}")
        return handler(payload)

    def count(self, task_id: str) -> int:
        return sum(1 for t, _ in self.calls if t == task_id)


def mock_adapter(world: MockWorld | None = None, fixtures: list[Mapping[str, Any]] | None = None,
                 **kw) -> MockChatAdapter:
    world = world or MockWorld()
    return MockChatAdapter(fixtures=load_fixtures(fixtures or []), handlers=world.handlers(), **kw)
