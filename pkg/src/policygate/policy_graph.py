"""Policy graph construction: structure pass, CU extraction, reference linking."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping

from .adapters import AdapterError, ChatAdapter, SchemaError, chat_call
from .refs import explicit_refs, is_token, parse_token

log = logging.getLogger(__name__)

KIND_RANK = {"document": 0, "chapter": 1, "section": 2, "article": 3, "point": 4}
KIND_PREFIX = {"document": "DOC", "chapter": "CHAPTER", "section": "SECTION", "article": "ARTICLE", "point": "POINT"}
PREFIX_KIND = {v: k for k, v in KIND_PREFIX.items()}
NODE_KINDS = ("structure", "premise", "compliance_unit")
EDGE_KINDS = ("CONTAIN", "DERIVES", "REFERS")
CU_TYPES = ("actor_cu", "meta_cu")
CONNECTIVES = ("any", "all", "not")
SPAN_FIELDS = ("subject", "condition", "constraint", "context")
DEFAULT_PREMISE_TITLES = (
    "definitions",
    "subject-matter and objectives",
    "subject matter and objectives",
    "subject-matter",
    "objectives",
)

_LABEL = re.compile(r"^[A-Za-z0-9._-]+$")
_TITLE_NUMBER = re.compile(r"^\s*(?:chapter|section|article)\s+([0-9IVXLCivxlc]+[a-z]?)\b", re.I)


class SchemaViolation(ValueError):
    """Input document does not match the expected tree schema."""


class AmbiguityError(ValueError):
    pass


class CUValidationError(ValueError):
    pass


class PolicyGraphError(ValueError):
    pass


# ------------------------------------------------------------------ document


@dataclass
class DocNode:
    id: str
    kind: str
    label: str
    title: str = ""
    text: str = ""
    children: list["DocNode"] = field(default_factory=list)

    def walk(self) -> Iterable["DocNode"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind, "label": self.label, "title": self.title}
        if self.text:
            out["text"] = self.text
        out["children"] = [c.to_dict() for c in self.children]
        return out


def _derive_label(raw: Mapping[str, Any], kind: str, ordinal: int) -> str:
    label = raw.get("label")
    if label is None:
        title = raw.get("title") or ""
        if kind == "document":
            label = re.sub(r"[^A-Za-z0-9]+", "_", title).strip("_").upper()[:32] or "DOC"
        else:
            m = _TITLE_NUMBER.match(title)
            label = m.group(1) if m else str(ordinal)
    return str(label)


def parse_document(doc: str | Mapping[str, Any]) -> DocNode:
    """Parse the JSON document tree ``{kind, title, text?, label?, children[]}``."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(f"<root>: not JSON ({exc})") from None
    if not isinstance(doc, Mapping) or doc.get("kind") != "document":
        raise SchemaViolation("<root>: top-level node must be an object of kind 'document'")

    def build(raw: Any, path: str, parent: DocNode | None, ordinal: int) -> DocNode:
        if not isinstance(raw, Mapping):
            raise SchemaViolation(f"{path}: node must be an object")
        kind = raw.get("kind")
        if kind not in KIND_RANK:
            raise SchemaViolation(f"{path}: unknown kind {kind!r}")
        if parent is not None and KIND_RANK[kind] <= KIND_RANK[parent.kind]:
            raise SchemaViolation(f"{path}: {kind} cannot sit under {parent.kind}")
        for key in ("title", "text"):
            if key in raw and raw[key] is not None and not isinstance(raw[key], str):
                raise SchemaViolation(f"{path}: {key} must be a string")
        children = raw.get("children", [])
        if not isinstance(children, list):
            raise SchemaViolation(f"{path}: children must be a list")
        if kind == "point" and children:
            raise SchemaViolation(f"{path}: points cannot have children")
        label = _derive_label(raw, kind, ordinal)
        if not _LABEL.match(label):
            raise SchemaViolation(f"{path}: label {label!r} has characters outside [A-Za-z0-9._-]")
        segment = f"{KIND_PREFIX[kind]}:{label}"
        node = DocNode(
            id=f"{parent.id}/{segment}" if parent else segment,
            kind=kind,
            label=label,
            title=raw.get("title") or "",
            text=raw.get("text") or "",
        )
        counters: dict[str, int] = {}
        seen: set[str] = set()
        for i, child in enumerate(children):
            child_kind = child.get("kind") if isinstance(child, Mapping) else None
            counters[child_kind] = counters.get(child_kind, 0) + 1
            sub = build(child, f"{path}/children[{i}]", node, counters[child_kind])
            key = f"{sub.kind}:{sub.label}"
            if key in seen:
                raise AmbiguityError(f"{path}: duplicate sibling {key}")
            seen.add(key)
            node.children.append(sub)
        return node

    return build(doc, "<root>", None, 1)


_HEADING = re.compile(r"^(Document|Chapter|Section|Article) ([A-Za-z0-9._-]+):[ ]?(.*)$")
_POINT_LINE = re.compile(r"^(\d+[a-z]?)\. (.*)$")


def render_outline(tree: DocNode, passages: Mapping[str, str] | None = None) -> str:
    """Plain-text outline of a document tree.

    ``passages`` optionally replaces the body of an article (keyed by node id).
    """
    lines: list[str] = []

    def body(node: DocNode) -> list[str]:
        out = [" ".join(node.text.split())] if node.text.strip() else []
        for child in node.children:
            if child.kind == "point":
                out.append(f"{child.label}. {' '.join(child.text.split())}".rstrip())
        return out

    def visit(node: DocNode) -> None:
        lines.append(f"{node.kind.capitalize()} {node.label}: {node.title}".rstrip())
        if node.kind == "article":
            if passages is not None and node.id in passages:
                lines.extend(l for l in passages[node.id].splitlines() if l.strip())
            else:
                lines.extend(body(node))
            return
        if node.text.strip():
            lines.append(" ".join(node.text.split()))
        for child in node.children:
            visit(child)

    visit(tree)
    return "\n".join(lines)


def article_body(node: DocNode) -> str:
    out = [" ".join(node.text.split())] if node.text.strip() else []
    out += [f"{c.label}. {' '.join(c.text.split())}".rstrip() for c in node.children if c.kind == "point"]
    return "\n".join(out)


def parse_outline(text: str) -> DocNode:
    """Inverse of :func:`render_outline`."""
    root: dict[str, Any] | None = None
    stack: list[dict[str, Any]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.rstrip()
        if not line.strip():
            continue
        m = _HEADING.match(line)
        if m:
            kind = m.group(1).lower()
            node = {"kind": kind, "label": m.group(2), "title": m.group(3).strip(), "children": []}
            if kind == "document":
                if root is not None:
                    raise SchemaViolation(f"line {lineno}: second document heading")
                root = node
                stack = [node]
                continue
            if root is None:
                raise SchemaViolation(f"line {lineno}: heading before the document heading")
            while stack and KIND_RANK[stack[-1]["kind"]] >= KIND_RANK[kind]:
                stack.pop()
            stack[-1]["children"].append(node)
            stack.append(node)
            continue
        if root is None:
            raise SchemaViolation(f"line {lineno}: text before the document heading")
        current = stack[-1]
        p = _POINT_LINE.match(line)
        if p and current["kind"] in ("article", "point"):
            if current["kind"] == "point":
                stack.pop()
                current = stack[-1]
            point = {"kind": "point", "label": p.group(1), "title": "", "text": p.group(2).strip(), "children": []}
            current["children"].append(point)
            stack.append(point)
        else:
            current["text"] = (current.get("text", "") + " " + line.strip()).strip()
    if root is None:
        raise SchemaViolation("<root>: empty outline")
    return parse_document(root)


# ------------------------------------------------------------------ graph types


def validate_condition(tree: Any, path: str = "condition") -> None:
    if tree is None or isinstance(tree, str):
        return
    if not isinstance(tree, Mapping) or len(tree) != 1:
        raise CUValidationError(f"{path}: expected text or a single-connective object")
    (conn, value), = tree.items()
    if conn not in CONNECTIVES:
        raise CUValidationError(f"{path}: unknown connective {conn!r}")
    if conn == "not":
        validate_condition(value, f"{path}.not")
        return
    if not isinstance(value, list) or not value:
        raise CUValidationError(f"{path}.{conn}: expected a non-empty list")
    for i, sub in enumerate(value):
        validate_condition(sub, f"{path}.{conn}[{i}]")


@dataclass
class ComplianceUnit:
    subject: str
    constraint: list[str]
    condition: Any = None
    context: str | None = None
    char_span: dict[str, Any] = field(default_factory=lambda: {f: None for f in SPAN_FIELDS})
    references: list[str] = field(default_factory=list)
    cu_type: str = "actor_cu"

    def validate(self, source: str | None = None) -> None:
        if not isinstance(self.subject, str) or not self.subject.strip():
            raise CUValidationError("subject is empty")
        if not isinstance(self.constraint, list) or not all(isinstance(c, str) for c in self.constraint):
            raise CUValidationError("constraint must be a list of text")
        if self.cu_type not in CU_TYPES:
            raise CUValidationError(f"cu_type {self.cu_type!r} not in {CU_TYPES}")
        if self.cu_type == "actor_cu" and not any(c.strip() for c in self.constraint):
            raise CUValidationError("actor_cu needs a non-empty constraint")
        if self.context is not None and not isinstance(self.context, str):
            raise CUValidationError("context must be text or null")
        validate_condition(self.condition)
        spans = []
        for name, span in (self.char_span or {}).items():
            if name not in SPAN_FIELDS:
                raise CUValidationError(f"char_span has unknown field {name!r}")
            if span is None:
                continue
            if (not isinstance(span, list) or len(span) != 2 or not all(isinstance(x, int) for x in span)
                    or not 0 <= span[0] <= span[1]):
                raise CUValidationError(f"char_span.{name} must be [start, end] with 0 <= start <= end")
            if source is not None and span[1] > len(source):
                raise CUValidationError(f"char_span.{name} ends past the source text ({span[1]} > {len(source)})")
            spans.append((span[0], span[1], name))
        spans.sort()
        for (a0, a1, an), (b0, b1, bn) in zip(spans, spans[1:]):
            if b0 < a1:
                raise CUValidationError(f"char_span.{an} overlaps char_span.{bn}")
        for tok in self.references:
            if not is_token(tok):
                raise CUValidationError(f"bad reference token {tok!r}")

    def to_attrs(self) -> dict:
        span = {f: None for f in SPAN_FIELDS}
        span.update(self.char_span or {})
        return {
            "subject": self.subject,
            "condition": self.condition,
            "constraint": list(self.constraint),
            "context": self.context,
            "char_span": span,
            "references": list(self.references),
        }

    @classmethod
    def from_payload(cls, raw: Mapping[str, Any]) -> "ComplianceUnit":
        span = raw.get("char_span") or {}
        return cls(
            subject=raw.get("subject") or "",
            constraint=list(raw.get("constraint") or []),
            condition=raw.get("condition"),
            context=raw.get("context"),
            char_span={f: span.get(f) for f in SPAN_FIELDS},
            references=list(raw.get("references") or []),
            cu_type=raw.get("cu_type") or raw.get("type") or "actor_cu",
        )

    def label(self) -> str:
        return json.dumps({"subject": self.subject, "condition": self.condition}, ensure_ascii=False)


def cu_nonce(parent_id: str, subject: str, constraint: list[str]) -> str:
    blob = json.dumps([parent_id, subject, constraint], ensure_ascii=False)
    return f"{int(hashlib.sha256(blob.encode()).hexdigest(), 16) % 10**12:012d}"


@dataclass
class PolicyNode:
    id: str
    kind: str
    label: str
    attrs: dict[str, Any]
    type: str

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind, "label": self.label, "attrs": self.attrs, "type": self.type}


@dataclass(frozen=True)
class PolicyEdge:
    kind: str
    src: str
    dst: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "src": self.src, "dst": self.dst}


@dataclass
class BuildReport:
    unclassified: list[str] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)
    unresolved_refs: list[dict] = field(default_factory=list)
    implicit_incomplete: bool = False
    aborted: str | None = None

    def to_dict(self) -> dict:
        return {
            "unclassified": self.unclassified,
            "skipped": self.skipped,
            "unresolved_refs": self.unresolved_refs,
            "implicit_incomplete": self.implicit_incomplete,
            "aborted": self.aborted,
        }


class BuildAborted(RuntimeError):
    def __init__(self, message: str, graph: "PolicyGraph"):
        super().__init__(message)
        self.graph = graph
        self.report = graph.report


class PolicyGraph:
    """Typed node/edge store; nodes and edges keep insertion order."""

    def __init__(self):
        self.nodes: dict[str, PolicyNode] = {}
        self.edges: list[PolicyEdge] = []
        self._edge_set: set[PolicyEdge] = set()
        self.report = BuildReport()

    # construction
    def add_node(self, node: PolicyNode) -> None:
        if node.id in self.nodes:
            raise PolicyGraphError(f"duplicate node id {node.id}")
        if node.kind not in NODE_KINDS:
            raise PolicyGraphError(f"{node.id}: unknown node kind {node.kind!r}")
        self.nodes[node.id] = node

    def add_edge(self, kind: str, src: str, dst: str) -> bool:
        if kind not in EDGE_KINDS:
            raise PolicyGraphError(f"unknown edge kind {kind!r}")
        for end in (src, dst):
            if end not in self.nodes:
                raise PolicyGraphError(f"{kind} edge endpoint {end} is not a node")
        edge = PolicyEdge(kind, src, dst)
        if edge in self._edge_set:
            return False
        self._edge_set.add(edge)
        self.edges.append(edge)
        return True

    def copy(self) -> "PolicyGraph":
        return copy.deepcopy(self)

    # queries
    def edges_of(self, kind: str) -> list[PolicyEdge]:
        return [e for e in self.edges if e.kind == kind]

    def cu_ids(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.kind == "compliance_unit"]

    def unit(self, cu_id: str) -> ComplianceUnit:
        node = self.nodes.get(cu_id)
        if node is None or node.kind != "compliance_unit":
            raise KeyError(f"unknown compliance unit {cu_id}")
        return ComplianceUnit.from_payload({**node.attrs, "cu_type": node.type})

    def parent(self, node_id: str) -> str | None:
        for e in self.edges:
            if e.dst == node_id and e.kind in ("CONTAIN", "DERIVES"):
                return e.src
        return None

    def parents(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for e in self.edges:
            if e.kind in ("CONTAIN", "DERIVES"):
                out.setdefault(e.dst, e.src)
        return out

    def children(self, node_id: str, kind: str = "CONTAIN") -> list[str]:
        return [e.dst for e in self.edges if e.kind == kind and e.src == node_id]

    def article_of(self, node_id: str, parents: Mapping[str, str] | None = None) -> str | None:
        """Nearest ancestor article node id (following DERIVES then CONTAIN)."""
        parents = parents if parents is not None else self.parents()
        current: str | None = node_id
        seen = set()
        while current is not None and current not in seen:
            seen.add(current)
            node = self.nodes.get(current)
            if node is not None and node.kind != "compliance_unit" and node.type == "article":
                return current
            current = parents.get(current)
        return None

    def article_index(self) -> dict[str, str]:
        out: dict[str, str] = {}
        for node in self.nodes.values():
            if node.kind != "compliance_unit" and node.type == "article":
                out.setdefault(node.attrs.get("number", ""), node.id)
        return out

    def source_text(self, cu_id: str) -> str:
        src = self.parent(cu_id)
        return self.nodes[src].attrs.get("text", "") if src else ""

    def article_token(self, article_id: str) -> str:
        return f"A{self.nodes[article_id].attrs.get('number', '')}"

    # serialization
    def to_dict(self) -> dict:
        return {"nodes": [n.to_dict() for n in self.nodes.values()], "edges": [e.to_dict() for e in self.edges]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], validate: bool = True) -> "PolicyGraph":
        g = cls()
        for raw in data.get("nodes", []):
            node = PolicyNode(raw["id"], raw["kind"], raw.get("label", ""), dict(raw.get("attrs") or {}),
                              raw.get("type", ""))
            g.add_node(node)
        for raw in data.get("edges", []):
            g.add_edge(raw["kind"], raw["src"], raw["dst"])
        if validate:
            g.validate()
        return g

    @classmethod
    def loads(cls, text: str) -> "PolicyGraph":
        return cls.from_dict(json.loads(text))

    def validate(self) -> None:
        derives_in: dict[str, int] = {}
        for e in self.edges:
            if e.kind == "DERIVES":
                derives_in[e.dst] = derives_in.get(e.dst, 0) + 1
                if self.nodes[e.dst].kind != "compliance_unit":
                    raise PolicyGraphError(f"DERIVES edge {e.src}->{e.dst} must end at a compliance unit")
            if e.kind == "REFERS" and self.nodes[e.src].kind != "compliance_unit":
                raise PolicyGraphError(f"REFERS edge {e.src}->{e.dst} must start at a compliance unit")
        contain = self.edges_of("CONTAIN")
        parents = self.parents()
        has_parent = {e.dst for e in contain}
        roots = [n for n in self.nodes.values() if n.kind != "compliance_unit" and n.id not in has_parent]
        if contain and len(roots) != 1:
            raise PolicyGraphError(f"CONTAIN edges must form one tree; roots: {[r.id for r in roots]}")
        if len(has_parent) != len(contain):
            raise PolicyGraphError("a node has more than one CONTAIN parent")
        for node in self.nodes.values():
            if node.kind != "compliance_unit":
                continue
            unit = self.unit(node.id)
            try:
                source = self.nodes[parents[node.id]].attrs.get("text", "") if derives_in.get(node.id) else None
                unit.validate(source)
            except CUValidationError as exc:
                raise PolicyGraphError(f"{node.id}: {exc}") from None
            if node.id in derives_in and derives_in[node.id] != 1:
                raise PolicyGraphError(f"{node.id}: expected exactly one DERIVES parent")
            if contain and node.id not in derives_in:
                raise PolicyGraphError(f"{node.id}: compliance unit without a DERIVES parent")


# ------------------------------------------------------------------ structure pass


class RulePremiseClassifier:
    """Premise iff the article title, minus any "Article N" prefix, is on a configured list."""

    def __init__(self, titles: Iterable[str] = DEFAULT_PREMISE_TITLES):
        self.titles = {t.strip().lower() for t in titles}

    def __call__(self, article: DocNode) -> bool:
        title = article.title.strip()
        m = _TITLE_NUMBER.match(title)
        if m:
            title = title[m.end():].strip(" .:-")
        return title.lower() in self.titles


class LLMPremiseClassifier:
    def __init__(self, llm: ChatAdapter):
        self.llm = llm

    def __call__(self, article: DocNode) -> bool:
        text = article.text + "\n" + "\n".join(c.text for c in article.children)
        return bool(chat_call(self.llm, "premise.classify", {"title": article.title, "text": text.strip()})["premise"])


def build_structure(tree: DocNode, classifier: Callable[[DocNode], bool] | None = None) -> PolicyGraph:
    """One policy node per document node, CONTAIN edges, premise marks per article."""
    classifier = classifier or RulePremiseClassifier()
    g = PolicyGraph()

    def visit(node: DocNode, parent: DocNode | None, mark: str | None) -> None:
        if node.kind == "article":
            try:
                mark = "premise" if classifier(node) else None
            except Exception as exc:  # classifier failures never abort the build
                log.warning("premise classification failed for %s: %s", node.id, exc)
                g.report.unclassified.append(node.id)
                mark = "unclassified"
        attrs = {"number": node.label, "title": node.title, "text": node.text}
        if mark == "unclassified":
            attrs["unclassified"] = True
        g.add_node(PolicyNode(
            id=node.id,
            kind="premise" if mark == "premise" else "structure",
            label=node.title or node.text,
            attrs=attrs,
            type=node.kind,
        ))
        if parent is not None:
            g.add_edge("CONTAIN", parent.id, node.id)
        for child in node.children:
            visit(child, node, mark)

    visit(tree, None, None)
    return g


# ------------------------------------------------------------------ CU extraction


def cu_sources(graph: PolicyGraph) -> list[str]:
    """Non-premise, classified leaves (points, or articles without points) with text."""
    out = []
    for node in graph.nodes.values():
        if node.kind != "structure" or node.attrs.get("unclassified"):
            continue
        if node.type == "point" or (node.type == "article" and not any(
                graph.nodes[c].type == "point" for c in graph.children(node.id))):
            if node.attrs.get("text", "").strip():
                out.append(node.id)
    return out


def _batches(items: list, size: int) -> list[list]:
    size = max(1, int(size))
    return [items[i:i + size] for i in range(0, len(items), size)]


def _run_batches(fn, batches, jobs: int):
    if jobs <= 1 or len(batches) <= 1:
        return [fn(b) for b in batches]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, batches))


def extract_compliance_units(graph: PolicyGraph, llm: ChatAdapter, batch_size: int = 8,
                             jobs: int = 1) -> PolicyGraph:
    """Add CU nodes and DERIVES edges for every CU-bearing clause.

    Schema-invalid units are retried once (only the affected clauses), then
    skipped and logged in ``report.skipped``. Transport failures raise
    :class:`BuildAborted` carrying the partial graph.
    """
    g = graph.copy()
    sources = cu_sources(g)
    texts = {sid: g.nodes[sid].attrs["text"] for sid in sources}

    def parse_response(value, wanted: set[str]) -> tuple[dict[str, list], dict[str, str]]:
        good: dict[str, list] = {}
        bad: dict[str, str] = {}
        for item in value.get("items", []):
            sid = item.get("id")
            if sid not in wanted:
                continue
            units = []
            for raw in item.get("units", []):
                unit = ComplianceUnit.from_payload(raw)
                unit.references = []
                try:
                    unit.validate(texts[sid])
                except CUValidationError as exc:
                    bad[sid] = str(exc)
                    break
                units.append(unit)
            else:
                good[sid] = units
        return good, bad

    def run(batch: list[str]):
        payload = {"items": [{"id": sid, "text": texts[sid]} for sid in batch]}
        try:
            good, bad = parse_response(chat_call(llm, "cu.extract", payload), set(batch))
        except SchemaError as exc:
            return {}, {sid: str(exc) for sid in batch}
        if bad:
            retry = [sid for sid in batch if sid in bad]
            try:
                again, bad = parse_response(
                    chat_call(llm, "cu.extract", {"items": [{"id": s, "text": texts[s]} for s in retry]}),
                    set(retry))
                good.update(again)
            except SchemaError as exc:
                bad = {sid: str(exc) for sid in retry}
        return good, bad

    try:
        results = _run_batches(run, _batches(sources, batch_size), jobs)
    except AdapterError as exc:
        g.report.aborted = f"cu.extract: {exc}"
        raise BuildAborted(f"CU extraction aborted: {exc}", g) from exc

    for good, bad in results:
        for sid in sources:
            if sid in bad:
                log.warning("skipping CUs of %s: %s", sid, bad[sid])
                g.report.skipped.append({"source": sid, "reason": bad[sid]})
            for unit in good.get(sid, []):
                cu_id = f"{sid}/CU:{cu_nonce(sid, unit.subject, unit.constraint)}"
                if cu_id in g.nodes:
                    continue
                g.add_node(PolicyNode(cu_id, "compliance_unit", unit.label(), unit.to_attrs(), unit.cu_type))
                g.add_edge("DERIVES", sid, cu_id)
    return g


# ------------------------------------------------------------------ references


def resolve_token(graph: PolicyGraph, token: str, articles: Mapping[str, str] | None = None) -> str | None:
    """Finest existing node for a reference token, or None."""
    articles = articles if articles is not None else graph.article_index()
    art, par = parse_token(token)
    art_id = articles.get(art)
    if art_id is None:
        return None
    if par is not None:
        for child in graph.children(art_id):
            node = graph.nodes[child]
            if node.type == "point" and node.attrs.get("number") == par:
                return child
    return art_id


def resolve_references(graph: PolicyGraph, llm: ChatAdapter | None, batch_size: int = 8,
                       jobs: int = 1) -> PolicyGraph:
    """Fill each CU's references and materialize REFERS edges."""
    g = graph.copy()
    parents = g.parents()
    articles = g.article_index()
    cu_ids = g.cu_ids()
    implicit: dict[str, list[str]] = {}

    if llm is not None and cu_ids:
        def item(cu_id: str) -> dict:
            src = parents[cu_id]
            art = g.article_of(cu_id, parents)
            point = g.nodes[src].attrs.get("number") if g.nodes[src].type == "point" else None
            return {"cu_id": cu_id, "article": g.nodes[art].attrs.get("number") if art else "",
                    "point": point, "text": g.nodes[src].attrs.get("text", "")}

        def run(batch: list[str]):
            value = chat_call(llm, "cu.reference", {"items": [item(c) for c in batch]})
            return {it["cu_id"]: it["references"] for it in value["items"] if it.get("cu_id") in batch}

        try:
            for part in _run_batches(run, _batches(cu_ids, batch_size), jobs):
                implicit.update(part)
        except AdapterError as exc:
            log.warning("implicit reference pass incomplete: %s", exc)
            g.report.implicit_incomplete = True

    for cu_id in cu_ids:
        node = g.nodes[cu_id]
        source = g.nodes[parents[cu_id]].attrs.get("text", "") if cu_id in parents else ""
        tokens: dict[str, None] = dict.fromkeys(node.attrs.get("references") or [])
        tokens.update(dict.fromkeys(explicit_refs(source)))
        for tok in implicit.get(cu_id, []):
            if is_token(tok):
                tokens.setdefault(tok, None)
            else:
                g.report.unresolved_refs.append({"cu": cu_id, "token": tok, "reason": "bad token"})
        node.attrs["references"] = list(tokens)
        for tok in tokens:
            target = resolve_token(g, tok, articles)
            if target is None:
                g.report.unresolved_refs.append({"cu": cu_id, "token": tok, "reason": "no such node"})
                continue
            g.add_edge("REFERS", cu_id, target)
    return g


def build_policy_graph(doc: str | Mapping[str, Any] | DocNode, llm: ChatAdapter,
                       classifier: Callable[[DocNode], bool] | None = None, batch_size: int = 8,
                       jobs: int = 1) -> PolicyGraph:
    """Full policy-graph build: structure pass, CU extraction, reference linking."""
    tree = doc if isinstance(doc, DocNode) else parse_document(doc)
    g = build_structure(tree, classifier)
    g = extract_compliance_units(g, llm, batch_size, jobs)
    return resolve_references(g, llm, batch_size, jobs)
