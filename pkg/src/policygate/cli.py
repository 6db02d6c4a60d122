"""Command-line entry point: build-policy, build-context, judge, evaluate, fidelity."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .adapters import (AdapterError, ChatAdapter, EmbeddingAdapter, HashEmbedder, HTTPChatAdapter, HTTPEmbedder,
                       atomic_write, mock_adapter, record_replay)
from .adapters.live import API_KEY_ENV
from .context_graph import DEFAULT_BETA, DEFAULT_M, DEFAULT_N, ContextGraphError, FragmentRetriever
from .evaluation import (EvaluationError, Scenario, ScenarioError, evaluate, format_report, load_scenarios,
                         normalize_articles, read_decision_predictions)
from .fidelity import DEFAULT_DELTAS, cycle_consistency, noise_run, reconstruct_text
from .gate import DEFAULT_RADIUS, GateError
from .pipeline import (Gate, PipelineConfig, build_policy, build_scenario_context, bundled, default_world,
                       plans_json)
from .policy_graph import (BuildAborted, CUValidationError, PolicyGraph, PolicyGraphError, SchemaViolation,
                           parse_document, parse_outline, render_outline)
from .retrieval import DEFAULT_K, DEFAULT_K1, ScoreWeights, ScoringError

log = logging.getLogger("policygate")

EXIT_OK, EXIT_CONFIG, EXIT_ADAPTER, EXIT_DATA = 0, 2, 3, 4
MODES = ("mock", "replay", "record", "live")
COMMANDS = ("build-policy", "build-context", "judge", "evaluate", "fidelity")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    policy: str | None = None
    scenarios: str | None = None
    out: str = "out"
    cassette: str | None = None
    policy_graph: str | None = None
    decisions: str | None = None
    predictions: str | None = None
    mode: str = "mock"
    k: int = DEFAULT_K
    k1: int = DEFAULT_K1
    n: int = DEFAULT_N
    m: int = DEFAULT_M
    beta: float = DEFAULT_BETA
    radius: int = DEFAULT_RADIUS
    w_ent: float = ScoreWeights.w_ent
    w_hyp: float = ScoreWeights.w_hyp
    w_bonus: float = ScoreWeights.w_bonus
    seed: int = 0
    jobs: int = 1
    batch_size: int = 8
    no_rerank: bool = False
    no_meta_gating: bool = False
    base_url: str = "https://api.openai.com/v1"
    chat_model: str = "gpt-4.1"
    embed_model: str = "text-embedding-3-large"
    family: str = "policy"
    iterations: int = 5
    deltas: list[float] = field(default_factory=lambda: list(DEFAULT_DELTAS))
    seeds: int = 20
    reconstruct: str = "template"
    exclude_empty: bool = False

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.mode in ("replay", "record") and not self.cassette:
            raise ConfigError(f"--cassette is required in {self.mode} mode")
        if self.mode in ("record", "live") and not os.environ.get(API_KEY_ENV):
            raise ConfigError(f"{self.mode} mode needs the {API_KEY_ENV} environment variable")
        for name in ("k", "k1", "n", "m", "jobs", "batch_size", "iterations", "seeds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.k1 < self.k:
            raise ConfigError("k1 must be >= k")
        if self.radius < 0:
            raise ConfigError("radius must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.family not in ("policy", "context"):
            raise ConfigError("family must be policy or context")
        if self.reconstruct not in ("template", "identity"):
            raise ConfigError("reconstruct must be template or identity")
        if not self.deltas or any(not 0.0 <= d <= 1.0 for d in self.deltas):
            raise ConfigError("deltas must be non-empty and within [0, 1]")
        try:
            self.weights()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def weights(self) -> ScoreWeights:
        return ScoreWeights(self.w_ent, self.w_hyp, self.w_bonus)

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(k=self.k, k1=self.k1, n=self.n, m=self.m, beta=self.beta, radius=self.radius,
                              weights=self.weights(), batch_size=self.batch_size, jobs=self.jobs,
                              rerank=not self.no_rerank, meta_gating=not self.no_meta_gating)

    def apply(self, overrides: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return dataclasses.replace(self, **overrides)


def load_config_file(path: str) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"config file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path}: top level must be an object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    top = argparse.ArgumentParser(prog="policygate", description=__doc__, formatter_class=fmt)
    sub = top.add_subparsers(dest="command", required=True)
    d = RunConfig()

    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("inputs and outputs")
    g.add_argument("--config", help="JSON file whose keys override command-line flags")
    g.add_argument("--policy", help="regulation document (JSON tree or outline text); bundled sample if omitted")
    g.add_argument("--policy-graph", help="prebuilt policy graph file to reuse instead of building")
    g.add_argument("--scenarios", help="scenario records (JSON array or JSON lines); bundled samples if omitted")
    g.add_argument("--out", default=d.out, help="output directory")
    g = common.add_argument_group("adapters")
    g.add_argument("--mode", choices=MODES, default=d.mode, help="adapter mode")
    g.add_argument("--cassette", help="record/replay store")
    g.add_argument("--base-url", default=d.base_url, help="live endpoint base URL")
    g.add_argument("--chat-model", default=d.chat_model, help="live chat model")
    g.add_argument("--embed-model", default=d.embed_model, help="live embedding model")
    g.add_argument("--reconstruct", choices=("template", "identity"), default=d.reconstruct,
                   help="mock graph-to-text behaviour")
    g = common.add_argument_group("pipeline knobs")
    g.add_argument("--k", type=int, default=d.k, help="CUs kept per anchor after rerank")
    g.add_argument("--k1", type=int, default=d.k1, help="bi-encoder preselection size")
    g.add_argument("--n", type=int, default=d.n, help="hypernyms kept per entity")
    g.add_argument("--m", type=int, default=d.m, help="policy fragments retrieved per entity")
    g.add_argument("--beta", type=float, default=d.beta, help="STRONG-support bonus")
    g.add_argument("--radius", type=int, default=d.radius, help="evidence window hop radius")
    g.add_argument("--w-ent", type=float, default=d.w_ent, help="entity-similarity weight")
    g.add_argument("--w-hyp", type=float, default=d.w_hyp, help="hypernym-similarity weight")
    g.add_argument("--w-bonus", type=float, default=d.w_bonus, help="hypernym-overlap bonus weight")
    g.add_argument("--seed", type=int, default=d.seed, help="seed for mock embeddings and noise")
    g.add_argument("--jobs", type=int, default=d.jobs, help="worker threads")
    g.add_argument("--batch-size", type=int, default=d.batch_size, help="CUs per extraction call")
    g.add_argument("--no-rerank", action="store_true", help="skip the cross scorer (bi-encoder order)")
    g.add_argument("--no-meta-gating", action="store_true", help="disable meta-CU gating")

    sub.add_parser("build-policy", parents=[common], formatter_class=fmt,
                   help="build the policy graph file")
    sub.add_parser("build-context", parents=[common], formatter_class=fmt,
                   help="build one context graph file per scenario")
    sub.add_parser("judge", parents=[common], formatter_class=fmt, help="write one decision file per scenario")
    ev = sub.add_parser("evaluate", parents=[common], formatter_class=fmt,
                        help="score decision files or predictions against scenario labels")
    ev.add_argument("--decisions", help="directory of decision files (default: <out>/decisions)")
    ev.add_argument("--predictions", help="JSON object mapping scenario id to predicted articles")
    ev.add_argument("--exclude-empty", action="store_true",
                    help="drop articles with no gold or predicted positives from macro averages")
    fi = sub.add_parser("fidelity", parents=[common], formatter_class=fmt,
                        help="cycle-consistency and noise-injection reports")
    fi.add_argument("--family", choices=("policy", "context"), default=d.family, help="graph family")
    fi.add_argument("--iterations", type=int, default=d.iterations, help="cycle iterations")
    fi.add_argument("--deltas", type=float, nargs="+", default=d.deltas, help="noise rates")
    fi.add_argument("--seeds", type=int, default=d.seeds, help="noise seeds per rate")
    return top


def resolve_config(args: argparse.Namespace) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    cfg = RunConfig().apply({k: v for k, v in vars(args).items() if k in known and v is not None})
    if args.config:
        cfg = cfg.apply(load_config_file(args.config))
    cfg.validate()
    return cfg


# ------------------------------------------------------------------ plumbing


def make_adapters(cfg: RunConfig) -> tuple[ChatAdapter, EmbeddingAdapter]:
    if cfg.mode == "mock":
        return mock_adapter(default_world(cfg.reconstruct)), HashEmbedder(seed=cfg.seed)
    if cfg.mode == "replay":
        return record_replay("replay", cfg.cassette)
    chat = HTTPChatAdapter(base_url=cfg.base_url, model=cfg.chat_model)
    emb = HTTPEmbedder(base_url=cfg.base_url, model=cfg.embed_model)
    if cfg.mode == "record":
        return record_replay("record", cfg.cassette, chat, emb)
    return chat, emb


def read_policy_doc(cfg: RunConfig) -> Any:
    if cfg.policy is None:
        return bundled("mini_regulation.json")
    text = Path(cfg.policy).read_text(encoding="utf-8")
    return json.loads(text) if cfg.policy.endswith(".json") else text


def read_scenarios(cfg: RunConfig) -> list[Scenario]:
    return load_scenarios(cfg.scenarios) if cfg.scenarios else load_scenarios(bundled("scenarios.json"))


def safe_name(scenario_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in scenario_id)


def write(path: Path, text: str) -> None:
    atomic_write(str(path), text)
    log.info("wrote %s", path)


class Session:
    """Adapters and cached artifacts for one command invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.llm, self.embedder = make_adapters(cfg)
        self._policy: PolicyGraph | None = None

    def policy(self) -> PolicyGraph:
        if self._policy is None:
            if self.cfg.policy_graph:
                self._policy = PolicyGraph.loads(Path(self.cfg.policy_graph).read_text(encoding="utf-8"))
            else:
                self._policy = build_policy(read_policy_doc(self.cfg), self.llm, self.cfg.pipeline())
        return self._policy

    def contexts(self, scenarios: Sequence[Scenario]):
        policy = self.policy()
        retriever = FragmentRetriever.from_policy(policy, self.embedder)
        for sc in scenarios:
            yield sc, build_scenario_context(sc, policy, self.llm, self.embedder, self.cfg.pipeline(), retriever)


def cmd_build_policy(s: Session) -> None:
    write(s.out / "policy_graph.json", s.policy().dumps())


def cmd_build_context(s: Session) -> None:
    for sc, ctx in s.contexts(read_scenarios(s.cfg)):
        write(s.out / "context" / f"{safe_name(sc.id)}.json", ctx.dumps())


def cmd_judge(s: Session) -> None:
    gate = Gate(s.policy(), s.llm, s.embedder, s.cfg.pipeline())
    for sc, ctx in s.contexts(read_scenarios(s.cfg)):
        res = gate.run(ctx, sc.id)
        name = safe_name(sc.id)
        write(s.out / "context" / f"{name}.json", ctx.dumps())
        write(s.out / "plans" / f"{name}.json", plans_json(res.plans))
        write(s.out / "decisions" / f"{name}.json", res.decision_file())


def read_predictions(path: str) -> dict[str, list[int]]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise EvaluationError("predictions file must map scenario ids to article lists")
    out = {}
    for sid, toks in data.items():
        arts: set[int] = set()
        for tok in toks:
            arts.update(normalize_articles(tok))
        out[sid] = sorted(arts)
    return out


def cmd_evaluate(cfg: RunConfig) -> str:
    scenarios = read_scenarios(cfg)
    gold = {sc.id: sorted(sc.articles) for sc in scenarios}
    if cfg.predictions:
        preds = read_predictions(cfg.predictions)
    else:
        folder = Path(cfg.decisions or Path(cfg.out) / "decisions")
        if not folder.is_dir():
            raise FileNotFoundError(f"decision directory {folder} not found")
        preds = read_decision_predictions(sorted(folder.glob("*.json")))
    report = evaluate(preds, gold, exclude_empty=cfg.exclude_empty)
    text = format_report(report)
    out = Path(cfg.out)
    write(out / "report.json", json.dumps(report, sort_keys=True, indent=1) + "\n")
    write(out / "report.txt", text)
    return text


def cmd_fidelity(s: Session) -> str:
    cfg = s.cfg
    if cfg.family == "policy":
        t0 = render_outline(parse_document(read_policy_doc(cfg)))

        def build(text: str):
            return build_policy(parse_outline(text), s.llm, cfg.pipeline())

        def recon(g):
            return reconstruct_text(g, s.llm)
    else:
        scenarios = read_scenarios(cfg)
        if not scenarios:
            raise ScenarioError("no scenarios to reconstruct")
        sc = scenarios[0]
        t0 = sc.text
        policy = s.policy()
        retriever = FragmentRetriever.from_policy(policy, s.embedder)

        def build(text: str):
            return build_scenario_context(Scenario(sc.id, text), policy, s.llm, s.embedder, cfg.pipeline(), retriever)

        def recon(g):
            return reconstruct_text(g, s.llm, t0)

    cycle = cycle_consistency(t0, cfg.iterations, build, recon, s.embedder, cfg.family)
    noise = noise_run(t0, build(t0), recon, s.embedder, cfg.deltas, range(cfg.seed, cfg.seed + cfg.seeds))
    stem = s.out / f"fidelity_{cfg.family}"
    write(Path(f"{stem}_cycle.json"), cycle.to_json())
    write(Path(f"{stem}_cycle.txt"), cycle.to_text())
    write(Path(f"{stem}_noise.json"), noise.to_json())
    write(Path(f"{stem}_noise.txt"), noise.to_text())
    return cycle.to_text() + "\n" + noise.to_text()


DATA_ERRORS = (ScenarioError, EvaluationError, SchemaViolation, PolicyGraphError, CUValidationError,
               ContextGraphError, BuildAborted, GateError, ScoringError, json.JSONDecodeError, OSError, ValueError)


def run(command: str, cfg: RunConfig) -> str:
    if command == "evaluate":
        return cmd_evaluate(cfg)
    s = Session(cfg)
    if command == "build-policy":
        cmd_build_policy(s)
    elif command == "build-context":
        cmd_build_context(s)
    elif command == "judge":
        cmd_judge(s)
    elif command == "fidelity":
        return cmd_fidelity(s)
    else:
        raise ConfigError(f"unknown command {command!r}")
    return ""


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("POLICYGATE_LOG", "WARNING"), format="%(levelname)s %(message)s")
    args = parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        text = run(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdapterError as exc:
        print(f"adapter error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except DATA_ERRORS as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    if text:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
