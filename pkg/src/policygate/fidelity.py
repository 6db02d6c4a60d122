"""Graph-fidelity proxies: reconstruction, cycle consistency, isomorphism scores, noise injection."""
from __future__ import annotations

import copy
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence, Union

import numpy as np
from scipy import stats

from . import text as tx
from .adapters import ChatAdapter, EmbeddingAdapter, chat_call
from .context_graph import ContextGraph, Entity, Relation
from .gate import evidence_window
from .policy_graph import DocNode, PolicyGraph, article_body, render_outline
from .retrieval import extract_anchors

Graph = Union[PolicyGraph, ContextGraph]

OPERATORS = ("delete_edges", "add_spurious_edges", "alter_cu_attrs")
DEFAULT_DELTAS = (0.01, 0.03, 0.05, 0.10, 0.20)
SPURIOUS_PRED = "related_to"


# ------------------------------------------------------------------ graph -> text


def doc_tree(policy: PolicyGraph) -> DocNode | None:
    """Document tree recovered from the structure and premise nodes."""
    children: dict[str, list[str]] = {}
    has_parent = set()
    for e in policy.edges_of("CONTAIN"):
        children.setdefault(e.src, []).append(e.dst)
        has_parent.add(e.dst)
    roots = [n.id for n in policy.nodes.values() if n.kind != "compliance_unit" and n.id not in has_parent]
    if not roots:
        return None

    def build(nid: str) -> DocNode:
        node = policy.nodes[nid]
        a = node.attrs
        return DocNode(nid, node.type, a.get("number", ""), a.get("title", ""), a.get("text", ""),
                       [build(c) for c in children.get(nid, [])])

    return build(roots[0])


def _ref_text(policy: PolicyGraph, target: str, parents: Mapping[str, str]) -> str:
    node = policy.nodes[target]
    if node.kind == "compliance_unit":
        art = policy.article_of(target, parents)
        return f"Article {policy.nodes[art].attrs.get('number', '')}" if art else target
    if node.type == "point":
        art = policy.article_of(target, parents)
        if art:
            return f"Article {policy.nodes[art].attrs.get('number', '')}({node.attrs.get('number', '')})"
    return f"{node.type.capitalize()} {node.attrs.get('number', '')}"


def _article_blocks(policy: PolicyGraph, article: DocNode, derives: Mapping[str, list[str]],
                    refers: Mapping[str, list[str]], parents: Mapping[str, str]) -> list[dict]:
    leaves = [c for c in article.children if c.kind == "point"] or [article]
    premise = policy.nodes[article.id].kind == "premise"
    blocks = []
    for leaf in leaves:
        units, refs = [], []
        for cu in derives.get(leaf.id, []):
            a = policy.nodes[cu].attrs
            units.append({"subject": a.get("subject", ""), "condition": a.get("condition"),
                          "constraint": a.get("constraint", []), "context": a.get("context")})
            for target in refers.get(cu, []):
                r = _ref_text(policy, target, parents)
                if r not in refs:
                    refs.append(r)
        blocks.append({"label": leaf.label if leaf is not article else "", "units": units, "refers": refs,
                       "premise": premise, "text": " ".join(leaf.text.split())})
    return blocks


def policy_passages(policy: PolicyGraph, llm: ChatAdapter) -> tuple[DocNode | None, dict[str, str]]:
    tree = doc_tree(policy)
    if tree is None:
        return None, {}
    derives: dict[str, list[str]] = {}
    refers: dict[str, list[str]] = {}
    for e in policy.edges:
        if e.kind == "DERIVES":
            derives.setdefault(e.src, []).append(e.dst)
        elif e.kind == "REFERS":
            refers.setdefault(e.src, []).append(e.dst)
    parents = policy.parents()
    passages = {}
    for node in tree.walk():
        if node.kind != "article":
            continue
        unit = {"label": node.label, "title": node.title,
                "blocks": _article_blocks(policy, node, derives, refers, parents)}
        payload = {"kind": "policy", "unit": unit, "source": article_body(node)}
        passages[node.id] = chat_call(llm, "graph.reconstruct", payload)["text"]
    return tree, passages


def context_passages(ctx: ContextGraph, llm: ChatAdapter, source: str | None = None, radius: int = 1) -> list[str]:
    anchors = extract_anchors(ctx)
    covered = set()
    units = []
    for anchor in anchors:
        window = evidence_window(ctx, anchor, radius)
        covered.update(window.entities)
        units.append(window.to_payload())
    rest = [e for e in ctx.entities if e.id not in covered]
    if rest:
        units.append({"entities": [{"id": e.id, "name": e.name, "type": e.etype} for e in rest], "relations": []})
    out: list[str] = []
    for unit in units:
        payload = {"kind": "context", "unit": unit, "source": source or ""}
        text = chat_call(llm, "graph.reconstruct", payload)["text"].strip()
        if text and text not in out:
            out.append(text)
    return out


def reconstruct_text(graph: Graph, llm: ChatAdapter, source: str | None = None) -> str:
    """Render a graph back to prose.

    Policy graphs produce an outline with one reconstructed passage per
    article; context graphs produce one passage per anchor neighbourhood.
    ``source`` is the original scenario text, offered to the model for
    context graphs only.
    """
    if isinstance(graph, PolicyGraph):
        tree, passages = policy_passages(graph, llm)
        return render_outline(tree, passages) if tree is not None else ""
    if not graph.entities:
        return ""
    return "\n".join(context_passages(graph, llm, source))


# ------------------------------------------------------------------ scores


def semantic_isomorphism(ta: str, tb: str, embedder: EmbeddingAdapter,
                         splitter: Callable[[str], list[str]] = tx.split_sentences) -> float:
    """Symmetric max-similarity between the sentence sets of two texts."""
    a, b = splitter(ta), splitter(tb)
    if not a or not b:
        raise ValueError("semantic isomorphism needs non-empty sentence sets on both sides")
    va = embedder.embed(a)
    vb = embedder.embed(b)
    sims = np.clip(va @ vb.T, -1.0, 1.0)
    return float(0.5 * (sims.max(axis=1).mean() + sims.max(axis=0).mean()))


def _degree_histogram(degrees: Sequence[int]) -> dict[int, float]:
    if not degrees:
        return {}
    counts = Counter(degrees)
    total = len(degrees)
    return {d: c / total for d, c in counts.items()}


def graph_statistics(graph: Graph) -> dict[str, Any]:
    """Statistic vector: node counts per kind, edge counts per kind, degree histogram, type counts."""
    if isinstance(graph, PolicyGraph):
        nodes = Counter(n.kind for n in graph.nodes.values())
        edges = Counter(e.kind for e in graph.edges)
        types = Counter(n.type for n in graph.nodes.values() if n.kind == "compliance_unit")
        degree = Counter()
        for e in graph.edges:
            degree[e.src] += 1
            degree[e.dst] += 1
        degrees = [degree[n] for n in graph.nodes]
    else:
        nodes = Counter(e.etype for e in graph.entities)
        edges = Counter({"relation": len(graph.relations)})
        types = Counter("hypernym" if e.labels() else "plain" for e in graph.entities)
        degree = Counter()
        for r in graph.relations:
            degree[r.subj] += 1
            degree[r.obj] += 1
        degrees = [degree[e.id] for e in graph.entities]
    return {"nodes": dict(nodes), "edges": dict(edges), "types": dict(types),
            "degree": _degree_histogram(degrees)}


def statistic_components(s0: Mapping[str, Any], s1: Mapping[str, Any]) -> dict[str, float]:
    """Per-component similarities; scalar pairs that are both zero are left out."""
    out: dict[str, float] = {}
    for group in ("nodes", "edges", "types"):
        for key in sorted(set(s0[group]) | set(s1[group])):
            x, y = s0[group].get(key, 0), s1[group].get(key, 0)
            if x == 0 and y == 0:
                continue
            out[f"{group}.{key}"] = min(x, y) / max(x, y)
    h0, h1 = s0["degree"], s1["degree"]
    if h0 or h1:
        if h0 and h1:
            l1 = sum(abs(h0.get(d, 0.0) - h1.get(d, 0.0)) for d in set(h0) | set(h1))
            out["degree"] = 1.0 - 0.5 * l1
        else:
            out["degree"] = 0.0
    return out


def structural_isomorphism(g0: Graph, gk: Graph) -> float:
    """Mean of the per-component min/max ratios and the histogram overlap; 1.0 for two empty graphs."""
    comps = statistic_components(graph_statistics(g0), graph_statistics(gk))
    if not comps:
        return 1.0
    return float(sum(comps.values()) / len(comps))


# ------------------------------------------------------------------ noise


@dataclass(frozen=True)
class NoiseConfig:
    delta: float
    mix: Mapping[str, float] = field(default_factory=lambda: {op: 1 / 3 for op in OPERATORS})
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")
        unknown = set(self.mix) - set(OPERATORS)
        if unknown:
            raise ValueError(f"unknown noise operators {sorted(unknown)}")
        if any(p < 0 for p in self.mix.values()) or not math.isclose(sum(self.mix.values()), 1.0, abs_tol=1e-9):
            raise ValueError("operator proportions must be non-negative and sum to 1")

    def weight(self, op: str) -> float:
        """Proportion relative to the largest one, so a uniform mix applies every operator at full delta."""
        top = max(self.mix.values())
        return self.mix.get(op, 0.0) / top if top else 0.0

    def count(self, op: str, pool: int) -> int:
        return int(math.floor(self.delta * self.weight(op) * pool + 1e-12))


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _shuffle_words(value: str, rng: np.random.Generator) -> str:
    words = value.split()
    if len(words) < 2:
        return value
    return " ".join(words[i] for i in rng.permutation(len(words)))


def _leaf_paths(tree: Any, path: tuple = ()) -> list[tuple]:
    if isinstance(tree, str):
        return [path]
    out = []
    if isinstance(tree, dict):
        for key, value in tree.items():
            if isinstance(value, list):
                for i, sub in enumerate(value):
                    out.extend(_leaf_paths(sub, path + (key, i)))
            else:
                out.extend(_leaf_paths(value, path + (key,)))
    return out


def _shuffle_at(tree: Any, path: tuple, rng: np.random.Generator) -> Any:
    if not path:
        return _shuffle_words(tree, rng)
    tree[path[0]] = _shuffle_at(tree[path[0]], path[1:], rng)
    return tree


def _alter_cu(attrs: dict, rng: np.random.Generator) -> None:
    fields = [f for f in ("subject", "condition", "constraint", "context") if attrs.get(f)]
    if not fields:
        return
    name = fields[int(rng.integers(len(fields)))]
    value = attrs[name]
    if isinstance(value, str):
        attrs[name] = _shuffle_words(value, rng)
    elif isinstance(value, list):
        i = int(rng.integers(len(value)))
        value[i] = _shuffle_words(value[i], rng)
    else:
        paths = _leaf_paths(value)
        if paths:
            attrs[name] = _shuffle_at(value, paths[int(rng.integers(len(paths)))], rng)


def _noisy_policy(graph: PolicyGraph, cfg: NoiseConfig) -> PolicyGraph:
    g = graph.copy()
    eligible = [e for e in g.edges if e.kind != "CONTAIN"]
    n_del = cfg.count("delete_edges", len(eligible))
    order = _rng(cfg.seed, 0).permutation(len(eligible))
    dropped = {eligible[i] for i in order[:n_del]}

    cus = g.cu_ids()
    linked = {(e.src, e.dst) for e in graph.edges if e.kind == "REFERS"}
    pairs = [(a, b) for a in cus for b in cus if a != b and (a, b) not in linked and (b, a) not in linked]
    n_add = min(cfg.count("add_spurious_edges", len(eligible)), len(pairs))
    added = [pairs[i] for i in _rng(cfg.seed, 1).permutation(len(pairs))[:n_add]]

    g.edges = [e for e in g.edges if e not in dropped]
    g._edge_set = set(g.edges)
    for a, b in added:
        g.add_edge("REFERS", a, b)

    n_alt = cfg.count("alter_cu_attrs", len(cus))
    for i in _rng(cfg.seed, 2).permutation(len(cus))[:n_alt]:
        _alter_cu(g.nodes[cus[i]].attrs, _rng(cfg.seed, 3, int(i)))
    return g


def _noisy_context(graph: ContextGraph, cfg: NoiseConfig) -> ContextGraph:
    entities = copy.deepcopy(graph.entities)
    rels = list(graph.relations)
    n_del = cfg.count("delete_edges", len(rels))
    order = _rng(cfg.seed, 0).permutation(len(rels))
    dropped = {rels[i] for i in order[:n_del]}
    linked = {(r.subj, r.obj) for r in rels}
    ids = [e.id for e in entities]
    pairs = [(a, b) for a in ids for b in ids if a != b and (a, b) not in linked and (b, a) not in linked]
    n_add = min(cfg.count("add_spurious_edges", len(rels)), len(pairs))
    added = [Relation(pairs[i][0], SPURIOUS_PRED, pairs[i][1])
             for i in _rng(cfg.seed, 1).permutation(len(pairs))[:n_add]]
    n_alt = cfg.count("alter_cu_attrs", len(entities))
    for i in _rng(cfg.seed, 2).permutation(len(entities))[:n_alt]:
        e: Entity = entities[int(i)]
        e.name = _shuffle_words(e.name, _rng(cfg.seed, 3, int(i)))
    return ContextGraph(entities, [r for r in rels if r not in dropped] + added, graph.source)


def inject_noise(graph: Graph, cfg: NoiseConfig) -> Graph:
    """Seeded corruption on a copy of ``graph``.

    Deletes floor(delta * w * |E|) non-CONTAIN edges, adds as many
    spurious REFERS edges (relations for context graphs) between unlinked
    pairs, and word-shuffles one field in floor(delta * w * |CU|) units
    (entity names for context graphs), where w is the operator's share
    relative to the largest share. Every operator draws a fixed
    permutation from the seed and takes a prefix of it, so for one seed
    the damage at a larger delta contains the damage at a smaller one.
    """
    if isinstance(graph, PolicyGraph):
        return _noisy_policy(graph, cfg)
    return _noisy_context(graph, cfg)


# ------------------------------------------------------------------ cycles and reports


@dataclass
class CycleRow:
    k: int
    semantic: float
    structural: float

    def to_dict(self) -> dict:
        return {"k": self.k, "semantic": self.semantic, "structural": self.structural}


@dataclass
class CycleReport:
    rows: list[CycleRow]
    family: str = "policy"

    def to_dict(self) -> dict:
        return {"family": self.family, "rows": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_text(self) -> str:
        lines = [f"{self.family} graph cycle consistency", "k  semantic  structural"]
        lines += [f"{r.k}  {r.semantic:.4f}    {r.structural:.4f}" for r in self.rows]
        return "\n".join(lines) + "\n"


def cycle_consistency(t0: str, iterations: int, build: Callable[[str], Graph],
                      reconstruct: Callable[[Graph], str], embedder: EmbeddingAdapter,
                      family: str = "policy") -> CycleReport:
    """Alternate reconstruct and rebuild: row k compares T0 with Tk and G0 with Gk."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    g0 = build(t0)
    g, rows = g0, []
    for k in range(1, iterations + 1):
        tk = reconstruct(g)
        g = build(tk)
        rows.append(CycleRow(k, semantic_isomorphism(t0, tk, embedder), structural_isomorphism(g0, g)))
    return CycleReport(rows, family)


def mean_ci(values: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """Mean with a Student-t confidence interval."""
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, mean, mean
    half = float(stats.t.ppf(0.5 + level / 2, len(arr) - 1) * arr.std(ddof=1) / math.sqrt(len(arr)))
    return mean, mean - half, mean + half


@dataclass
class NoiseReport:
    rows: list[dict]
    seeds: int

    def means(self) -> list[float]:
        return [r["mean"] for r in self.rows]

    def to_json(self) -> str:
        return json.dumps({"seeds": self.seeds, "rows": self.rows}, sort_keys=True, indent=1) + "\n"

    def to_text(self) -> str:
        lines = ["delta  semantic  95% CI"]
        lines += [f"{r['delta']:.2f}   {r['mean']:.4f}    [{r['ci_low']:.4f}, {r['ci_high']:.4f}]" for r in self.rows]
        return "\n".join(lines) + "\n"


def noise_run(t0: str, g0: Graph, reconstruct: Callable[[Graph], str], embedder: EmbeddingAdapter,
              deltas: Sequence[float] = DEFAULT_DELTAS, seeds: Sequence[int] = range(20),
              mix: Mapping[str, float] | None = None) -> NoiseReport:
    """Semantic similarity of T0 to text rebuilt from corrupted graphs, per delta over seeds."""
    seeds = list(seeds)
    rows = []
    for delta in deltas:
        scores = []
        for seed in seeds:
            cfg = NoiseConfig(delta, mix, seed) if mix else NoiseConfig(delta, seed=seed)
            scores.append(semantic_isomorphism(t0, reconstruct(inject_noise(g0, cfg)), embedder))
        mean, lo, hi = mean_ci(scores)
        rows.append({"delta": delta, "mean": mean, "ci_low": lo, "ci_high": hi, "scores": scores})
    return NoiseReport(rows, len(seeds))
