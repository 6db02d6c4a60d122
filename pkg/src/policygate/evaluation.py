"""Article-level multi-label scoring of decision files against scenario labels."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import jsonschema
import numpy as np

from .refs import explicit_refs, parse_token

# article ranges per chapter of the EU data protection regulation
GDPR_CHAPTERS = {
    "I": (1, 4), "II": (5, 11), "III": (12, 23), "IV": (24, 43), "V": (44, 50), "VI": (51, 59),
    "VII": (60, 76), "VIII": (77, 84), "IX": (85, 91), "X": (92, 93), "XI": (94, 99),
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["id", "text", "labels"],
    "properties": {
        "id": {"type": "string", "minLength": 1},
        "text": {"type": "string"},
        "facts": {"type": "object"},
        "jurisdiction": {"type": ["array", "string"]},
        "sector": {"type": "string"},
        "language": {"type": "string"},
        "labels": {
            "type": "object",
            "required": ["violation", "articles"],
            "properties": {
                "violation": {"type": "boolean"},
                "violation_types": {"type": "array", "items": {"type": "string"}},
                "articles": {"type": "array", "items": {"type": ["string", "integer"]}},
                "lawful_basis": {"type": "array", "items": {"type": "string"}},
                "risk_level": {"type": "string"},
            },
        },
    },
}


class ScenarioError(ValueError):
    pass


class EvaluationError(ValueError):
    pass


def normalize_articles(token: str | int) -> list[int]:
    """Parent-article numbers for one label token.

    >>> normalize_articles("Arts.44-49")
    [44, 45, 46, 47, 48, 49]
    >>> normalize_articles("Art.5(1)(b)")
    [5]
    """
    if isinstance(token, int):
        return [token]
    token = token.strip()
    if token.isdigit():
        return [int(token)]
    if token.startswith("A") and token[1:2].isdigit():
        return [int(parse_token(token)[0])]
    refs = explicit_refs(token)
    if not refs:
        raise ValueError(f"unparseable article token {token!r}")
    out: list[int] = []
    for ref in refs:
        n = int(parse_token(ref)[0])
        if n not in out:
            out.append(n)
    return out


@dataclass
class Scenario:
    id: str
    text: str
    facts: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    articles: frozenset[int] = frozenset()

    @classmethod
    def from_record(cls, raw: Mapping[str, Any], index: int = 0) -> "Scenario":
        try:
            jsonschema.validate(raw, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<record>"
            raise ScenarioError(f"scenario record {index} at {where}: {exc.message}") from None
        arts: set[int] = set()
        for tok in raw["labels"]["articles"]:
            try:
                arts.update(normalize_articles(tok))
            except ValueError as exc:
                raise ScenarioError(f"scenario record {index} ({raw['id']}): {exc}") from None
        tags = {k: raw[k] for k in ("jurisdiction", "sector", "language") if k in raw}
        return cls(raw["id"], raw["text"], dict(raw.get("facts", {})), tags, dict(raw["labels"]), frozenset(arts))


def load_scenarios(source: str | Path | Sequence[Mapping[str, Any]]) -> list[Scenario]:
    """Scenarios from a JSON array file, a JSON-lines file, or already-parsed records."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
        stripped = text.lstrip()
        if stripped.startswith("["):
            records = json.loads(text)
        else:
            records = [json.loads(line) for line in text.splitlines() if line.strip()]
    else:
        records = list(source)
    scenarios = [Scenario.from_record(r, i) for i, r in enumerate(records)]
    ids = [s.id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate scenario ids")
    return scenarios


@dataclass
class ConfusionCounts:
    """Per-article TP/FP/FN/TN over scenarios; rows of ``table`` follow ``articles``."""

    articles: list[int]
    table: np.ndarray  # shape (|A|, 4): tp, fp, fn, tn
    n_scenarios: int

    def per_article(self) -> dict[int, tuple[int, int, int, int]]:
        return {a: tuple(int(x) for x in row) for a, row in zip(self.articles, self.table)}

    @property
    def totals(self) -> tuple[int, int, int, int]:
        tp, fp, fn, tn = (int(x) for x in self.table.sum(axis=0)) if len(self.articles) else (0, 0, 0, 0)
        return tp, fp, fn, tn

    @classmethod
    def pooled(cls, tp: int, fp: int, fn: int, tn: int) -> "ConfusionCounts":
        return cls([0], np.array([[tp, fp, fn, tn]], dtype=np.int64), tp + fp + fn + tn)


def confusion_counts(preds: Mapping[str, Iterable[int]], gold: Mapping[str, Iterable[int]],
                     universe: Iterable[int] | None = None) -> ConfusionCounts:
    if set(preds) != set(gold):
        missing = sorted(set(gold) ^ set(preds))
        raise EvaluationError(f"prediction and gold scenario ids differ: {missing}")
    ids = sorted(gold)
    pred_sets = {k: set(preds[k]) for k in ids}
    gold_sets = {k: set(gold[k]) for k in ids}
    seen = set().union(*pred_sets.values(), *gold_sets.values()) if ids else set()
    arts = sorted(set(universe) if universe is not None else seen)
    outside = seen - set(arts)
    if outside:
        raise EvaluationError(f"articles outside the universe: {sorted(outside)}")
    col = {a: i for i, a in enumerate(arts)}
    P = np.zeros((len(ids), len(arts)), dtype=bool)
    G = np.zeros_like(P)
    for r, k in enumerate(ids):
        for a in pred_sets[k]:
            P[r, col[a]] = True
        for a in gold_sets[k]:
            G[r, col[a]] = True
    tp = (P & G).sum(axis=0)
    fp = (P & ~G).sum(axis=0)
    fn = (~P & G).sum(axis=0)
    tn = (~P & ~G).sum(axis=0)
    return ConfusionCounts(arts, np.stack([tp, fp, fn, tn], axis=1).astype(np.int64), len(ids))


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f_beta_counts(tp: int, fp: int, fn: int, beta: float) -> float:
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    b2 = beta * beta
    return _ratio((1 + b2) * p * r, b2 * p + r)


def f_beta(counts: ConfusionCounts, beta: float = 1.0, mode: str = "micro", exclude_empty: bool = False) -> float:
    """Micro pools counts first; macro averages per-article scores.

    Under macro, articles with no gold and no predicted positives score 0
    unless ``exclude_empty`` drops them from the average.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if mode == "micro":
        tp, fp, fn, _ = counts.totals
        return f_beta_counts(tp, fp, fn, beta)
    if mode != "macro":
        raise ValueError(f"mode must be micro or macro, not {mode!r}")
    scores = [f_beta_counts(int(tp), int(fp), int(fn), beta) for tp, fp, fn, _ in counts.table
              if not (exclude_empty and tp + fp + fn == 0)]
    return float(sum(scores) / len(scores)) if scores else 0.0


def mcc(counts: ConfusionCounts | tuple[int, int, int, int]) -> float:
    """Matthews correlation on the flattened matrix; 0.0 when any marginal is empty."""
    tp, fp, fn, tn = counts.totals if isinstance(counts, ConfusionCounts) else counts
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if den == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(den)


def chapter_of(article: int, chapters: Mapping[str, tuple[int, int]] = GDPR_CHAPTERS) -> str | None:
    for name, (lo, hi) in chapters.items():
        if lo <= article <= hi:
            return name
    return None


def chapter_report(preds: Mapping[str, Iterable[int]], gold: Mapping[str, Iterable[int]],
                   chapters: Mapping[str, tuple[int, int]] = GDPR_CHAPTERS) -> dict[str, dict]:
    """Any-hit recall and false-positive rate per chapter.

    A scenario is gold-positive for a chapter when any gold article falls
    in it. It counts as a hit when at least one of those gold articles is
    predicted, and as a false positive when the chapter is gold-negative
    but some predicted article falls in it.
    """
    out = {}
    for name, (lo, hi) in chapters.items():
        tp = fn = fp = tn = 0
        for k in sorted(gold):
            g = {a for a in gold[k] if lo <= a <= hi}
            p = {a for a in preds.get(k, ()) if lo <= a <= hi}
            if g:
                if g & p:
                    tp += 1
                else:
                    fn += 1
            elif p:
                fp += 1
            else:
                tn += 1
        out[name] = {"positives": tp + fn, "recall": _ratio(tp, tp + fn), "fpr": _ratio(fp, fp + tn),
                     "tp": tp, "fn": fn, "fp": fp, "tn": tn}
    return out


def read_decision_predictions(paths: Iterable[str | Path]) -> dict[str, list[int]]:
    """Predicted violated articles per scenario from decision files."""
    out: dict[str, list[int]] = {}
    for path in paths:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        arts = set()
        for d in data.get("decisions", []):
            if d["label"] == "NON_COMPLIANT":
                arts.update(normalize_articles(d["article"]))
        out[data["scenario_id"]] = sorted(arts)
    return out


def evaluate(preds: Mapping[str, Iterable[int]], gold: Mapping[str, Iterable[int]],
             universe: Iterable[int] | None = None, exclude_empty: bool = False,
             chapters: Mapping[str, tuple[int, int]] | None = GDPR_CHAPTERS) -> dict:
    counts = confusion_counts(preds, gold, universe)
    tp, fp, fn, tn = counts.totals
    report = {
        "scenarios": counts.n_scenarios,
        "articles": counts.articles,
        "totals": {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        "micro_f1": f_beta(counts, 1.0, "micro"),
        "macro_f1": f_beta(counts, 1.0, "macro", exclude_empty),
        "micro_f2": f_beta(counts, 2.0, "micro"),
        "macro_f2": f_beta(counts, 2.0, "macro", exclude_empty),
        "mcc": mcc(counts),
    }
    if chapters:
        report["chapters"] = chapter_report(preds, gold, chapters)
    return report


def format_report(report: Mapping[str, Any]) -> str:
    lines = [f"scenarios: {report['scenarios']}   articles: {len(report['articles'])}",
             "metric     value"]
    for key in ("micro_f1", "macro_f1", "micro_f2", "macro_f2", "mcc"):
        lines.append(f"{key:<10} {report[key]:.4f}")
    t = report["totals"]
    lines.append(f"TP={t['tp']} FP={t['fp']} FN={t['fn']} TN={t['tn']}")
    if report.get("chapters"):
        lines.append("")
        lines.append("chapter  pos  recall  fpr")
        for name, row in report["chapters"].items():
            lines.append(f"{name:<8} {row['positives']:>3}  {row['recall']:.3f}   {row['fpr']:.3f}")
    return "\n".join(lines) + "\n"
