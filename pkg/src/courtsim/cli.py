"""Command-line entry point.

Subcommands: ingest, run, replicate, ablate, report.
Exit codes: 0 success, 1 run failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from .case_model import CaseFile, load_case
from .config import THRESHOLD_RULES, SimulationConfig
from .errors import CaseFileError, CourtsimError, KnowledgeBaseError, RunAborted
from .knowledge_base import (
    CHUNKS_NAME,
    DEFAULT_CHUNK_SIZE,
    DEFAULT_OVERLAP,
    MANIFEST_NAME,
    VECTORS_NAME,
    HashingEmbedder,
    VectorStore,
    build_store,
    load_corpus,
    load_store,
    persist_store,
)
from .llm_gateway import Gateway, make_backend
from .metrics import consistency
from .orchestrator import SimulationReport, run_simulation
from .report import dumps, load_report, render_ablation_table, render_markdown, render_metric_table, write_partial, write_report

log = logging.getLogger("courtsim")

EXIT_OK, EXIT_RUN_FAILED, EXIT_USAGE = 0, 1, 2
ABORTED = "Aborted"

# config-file keys that are not SimulationConfig fields
_CONNECTION_KEYS = ("backend", "base_url", "api_key", "mock_script", "store", "scripts_dir")


class UsageError(Exception):
    pass


@dataclass
class Settings:
    config: SimulationConfig
    backend: str = "http"
    base_url: str | None = None
    api_key: str | None = None
    mock_script: str | None = None
    store: str | None = None
    scripts_dir: str | None = None


@dataclass
class AblationSpec:
    models: list[str]
    rag_pairs: list[tuple[bool, bool]]
    runs_per_cell: int
    case_path: str
    overrides: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.models:
            raise UsageError("ablation needs at least one model")
        if not self.rag_pairs:
            raise UsageError("ablation needs at least one RAG pair")
        if self.runs_per_cell < 1:
            raise UsageError("runs per cell must be >= 1")

    def cells(self) -> list[tuple[str, bool, bool]]:
        return [(m, j, c) for m in self.models for j, c in self.rag_pairs]

    @classmethod
    def from_file(cls, path: str | Path) -> "AblationSpec":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            models=list(data.get("models", [])),
            rag_pairs=[(bool(j), bool(c)) for j, c in data.get("rag_pairs", [])],
            runs_per_cell=int(data.get("runs_per_cell", 1)),
            case_path=data["case"],
            overrides=dict(data.get("overrides", {})),
        )


# -- argument parsing ---------------------------------------------------------


def _add_sim_flags(p: argparse.ArgumentParser, *, with_case: bool = True) -> None:
    if with_case:
        p.add_argument("--case", required=True, help="case file (JSON)")
    p.add_argument("--store", help="persisted knowledge-base directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--adjudicators", type=int, dest="num_adjudicators")
    p.add_argument("--threshold", type=float, dest="consensus_threshold")
    p.add_argument("--threshold-rule", choices=THRESHOLD_RULES, dest="threshold_rule")
    p.add_argument("--max-rounds", type=int, dest="max_rounds")
    p.add_argument("--rag-judge", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--rag-counsel", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--model", dest="model_id")
    p.add_argument("--temperature", type=float)
    p.add_argument("--max-tokens", type=int, dest="max_tokens")
    p.add_argument("--k", type=int, dest="retrieval_k", help="chunks retrieved per RAG call")
    p.add_argument("--seed", type=int)
    p.add_argument("--embed-model", dest="embed_model_id")
    p.add_argument("--template-set", dest="template_set")
    p.add_argument("--sequential", action=argparse.BooleanOptionalAction, default=None, dest="sequential_rounds",
                   help="adjudicators also see earlier same-round statements")
    p.add_argument("--backend", choices=("http", "mock"))
    p.add_argument("--mock-script", help="JSON script for the mock backend")
    p.add_argument("--out-dir", default="runs")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="courtsim", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="chunk and embed a corpus of .txt files into a vector store")
    p.add_argument("--corpus", required=True, help="directory of UTF-8 .txt files")
    p.add_argument("--store", required=True, help="output store directory")
    p.add_argument("--chunk-size", type=int, default=DEFAULT_CHUNK_SIZE)
    p.add_argument("--overlap", type=int, default=DEFAULT_OVERLAP)
    p.add_argument("--backend", choices=("http", "mock"), default="mock",
                   help="mock = offline hashing embedder; http = remote /v1/embeddings")
    p.add_argument("--embed-model", default=None)
    p.add_argument("--embed-dim", type=int, default=384, help="hashing embedder dimension")
    p.add_argument("--force", action="store_true", help="overwrite an existing store")

    p = sub.add_parser("run", help="run one simulation")
    _add_sim_flags(p)

    p = sub.add_parser("replicate", help="run the same case N times and measure verdict consistency")
    _add_sim_flags(p)
    p.add_argument("--runs", type=int, required=True)

    p = sub.add_parser("ablate", help="model x RAG ablation matrix")
    _add_sim_flags(p, with_case=False)
    p.add_argument("--case", help="case file (or give it in --spec)")
    p.add_argument("--spec", help="ablation spec JSON: models, rag_pairs, runs_per_cell, case, overrides")
    p.add_argument("--models", nargs="*", default=None, help="model ids (one cell row group each)")
    p.add_argument("--rag-pairs", nargs="*", default=None, metavar="JUDGE:COUNSEL",
                   help="e.g. yes:yes no:no (default)")
    p.add_argument("--runs", type=int, default=None, help="runs per cell")
    p.add_argument("--scripts-dir", help="mock scripts laid out as <dir>/<model_id>/<rag|norag>.json")

    p = sub.add_parser("report", help="re-render report.md from report.json")
    p.add_argument("reports", nargs="+", help="report.json files or run directories")
    p.add_argument("--stdout", action="store_true", help="print instead of writing report.md")
    return parser


# -- settings -----------------------------------------------------------------


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Flags > config file > environment > defaults."""
    merged: dict[str, Any] = {}
    env = {
        "base_url": os.environ.get("LLM_BASE_URL"),
        "api_key": os.environ.get("LLM_API_KEY"),
        "embed_model_id": os.environ.get("EMBED_MODEL_ID"),
    }
    merged.update({k: v for k, v in env.items() if v})
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        merged.update(file_cfg)
    sim_names = {f.name for f in fields(SimulationConfig)}
    for name in [*sim_names, *_CONNECTION_KEYS]:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value

    unknown = set(merged) - sim_names - set(_CONNECTION_KEYS)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    try:
        config = SimulationConfig(**{k: v for k, v in merged.items() if k in sim_names})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return Settings(config=config, **{k: merged.get(k) for k in _CONNECTION_KEYS if k in merged})


def _load_case(path: str) -> CaseFile:
    try:
        return load_case(path)
    except FileNotFoundError as exc:
        raise UsageError(f"case file not found: {path}") from exc
    except CaseFileError as exc:
        raise UsageError(str(exc)) from exc


def _load_kb(settings: Settings, needed: bool) -> VectorStore | None:
    if not needed:
        return None
    if not settings.store:
        raise UsageError("RAG is enabled but no --store was given")
    try:
        return load_store(settings.store)
    except KnowledgeBaseError as exc:
        raise UsageError(f"cannot load store {settings.store}: {exc}") from exc


def _gateway(settings: Settings, *, mock_script: str | None = None, run_index: int | None = None) -> Gateway:
    script = mock_script or settings.mock_script
    if settings.backend == "mock" and not script:
        raise UsageError("--backend mock needs --mock-script")
    try:
        backend = make_backend(
            settings.backend,
            base_url=settings.base_url,
            api_key=settings.api_key,
            mock_script=script,
            run_index=run_index,
        )
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    return Gateway(backend)


def _check_embedder(kb: VectorStore | None, gateway: Gateway, config: SimulationConfig) -> None:
    if kb is None:
        return
    identity = gateway.backend.embed_identity(config.embed_model_id)
    if identity != kb.embedder_identity:
        raise UsageError(
            f"store was embedded with {kb.embedder_identity!r}; this backend queries with {identity!r}"
        )


def _run_once(
    settings: Settings,
    case: CaseFile,
    kb: VectorStore | None,
    out_dir: Path,
    *,
    run_index: int = 1,
    config: SimulationConfig | None = None,
    mock_script: str | None = None,
) -> tuple[SimulationReport | None, Path]:
    config = config or settings.config
    gateway = _gateway(settings, mock_script=mock_script, run_index=run_index)
    _check_embedder(kb, gateway, config)
    try:
        report = run_simulation(config, case, kb, gateway, run_index=run_index)
    except RunAborted as exc:
        path = write_partial(exc.partial, out_dir)
        log.error("run %d aborted during %s: %s (partial transcript: %s)", run_index, exc.phase, exc.cause, path)
        return None, path
    finally:
        close = getattr(gateway.backend, "close", None)
        if close:
            close()
    return report, write_report(report, out_dir)


def _verdict_line(report: SimulationReport) -> str:
    v = report.verdict
    return (
        f"{report.case_id} run {report.run_index}: verdict {v.outcome.value} "
        f"(rounds {v.rounds_used}, agreement {v.final_agreement_ratio:.2f})"
    )


# -- commands -----------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = Path(args.corpus)
    if not corpus.is_dir():
        raise UsageError(f"corpus directory not found: {corpus}")
    documents = load_corpus(corpus)
    if not documents:
        raise UsageError(f"no .txt files in {corpus}")
    store_dir = Path(args.store)
    existing = [store_dir / n for n in (MANIFEST_NAME, CHUNKS_NAME, VECTORS_NAME) if (store_dir / n).exists()]
    if existing and not args.force:
        raise UsageError(f"{store_dir} already holds a store; pass --force to overwrite")

    if args.backend == "mock":
        embedder = HashingEmbedder(args.embed_dim)
    else:
        embed_model = args.embed_model or os.environ.get("EMBED_MODEL_ID") or SimulationConfig().embed_model_id
        embedder = _gateway(Settings(SimulationConfig(), backend="http",
                                     base_url=os.environ.get("LLM_BASE_URL"),
                                     api_key=os.environ.get("LLM_API_KEY"))).embedder(embed_model, role="ingest")
    try:
        store = build_store(documents, args.chunk_size, args.overlap, embedder)
    except (KnowledgeBaseError, ValueError) as exc:
        raise UsageError(f"ingestion failed: {exc}") from exc
    for path in existing:
        path.unlink()
    persist_store(store, store_dir)
    for source in store.manifest["sources"]:
        print(f"{source['name']}: {source['chunks']} chunks ({source['chars']} chars)")
    print(f"store: {store_dir} ({len(store)} chunks, d={store.dimension}, embedder {store.embedder_identity})")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    case = _load_case(args.case)
    kb = _load_kb(settings, settings.config.uses_rag)
    report, path = _run_once(settings, case, kb, Path(args.out_dir))
    if report is None:
        print(f"run aborted; partial transcript saved to {path}", file=sys.stderr)
        return EXIT_RUN_FAILED
    print(_verdict_line(report))
    print(f"report: {path}")
    return EXIT_OK


def cmd_replicate(args: argparse.Namespace) -> int:
    if args.runs < 2:
        raise UsageError("--runs must be >= 2 for replication")
    settings = resolve_settings(args)
    case = _load_case(args.case)
    kb = _load_kb(settings, settings.config.uses_rag)
    out_dir = Path(args.out_dir)
    base = settings.config

    def one(i: int) -> tuple[SimulationReport | None, Path]:
        seed = base.seed + i - 1 if base.seed is not None else None
        cfg = base.with_overrides(seed=seed)
        return _run_once(settings, case, kb, out_dir, run_index=i, config=cfg)

    indices = range(1, args.runs + 1)
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(one, indices))
    else:
        results = [one(i) for i in indices]

    outcomes = [r.verdict.outcome.value if r else ABORTED for r, _ in results]
    summary = consistency(outcomes)
    payload = {
        "case_id": case.case_id,
        **summary.to_dict(),
        "outcomes": outcomes,
        "reports": [str(p) for _, p in results],
        "config": base.to_dict(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "consistency.json").write_text(dumps(payload), encoding="utf-8")
    for r, _ in results:
        if r is not None:
            print(_verdict_line(r))
    dist = ", ".join(f"{k}: {v}" for k, v in summary.verdict_distribution.items())
    print(f"consistency: {summary.consistency_rate:.2f} ({summary.label}); distribution {dist}")
    return EXIT_OK if any(r is not None for r, _ in results) else EXIT_RUN_FAILED


def rag_tag(rag_judge: bool, rag_counsel: bool) -> str:
    if rag_judge and rag_counsel:
        return "rag"
    if not rag_judge and not rag_counsel:
        return "norag"
    return "rag-judge" if rag_judge else "rag-counsel"


def _parse_pair(text: str) -> tuple[bool, bool]:
    truthy = {"yes": True, "y": True, "true": True, "1": True, "on": True,
              "no": False, "n": False, "false": False, "0": False, "off": False}
    parts = text.lower().split(":")
    if len(parts) != 2 or any(p not in truthy for p in parts):
        raise UsageError(f"bad RAG pair {text!r}; expected JUDGE:COUNSEL such as yes:no")
    return truthy[parts[0]], truthy[parts[1]]


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "-", text).strip("-") or "model"


def run_ablation(spec: AblationSpec, settings: Settings, out_dir: Path, jobs: int = 1) -> list[dict[str, Any]]:
    case = _load_case(spec.case_path)
    try:
        base = settings.config.with_overrides(**spec.overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad ablation overrides: {exc}") from exc
    needs_kb = any(j or c for j, c in spec.rag_pairs)
    kb = _load_kb(settings, needs_kb)
    if settings.backend == "mock" and not settings.scripts_dir:
        raise UsageError("mock ablations need --scripts-dir")

    def cell(model: str, rag_judge: bool, rag_counsel: bool) -> dict[str, Any]:
        tag = rag_tag(rag_judge, rag_counsel)
        row: dict[str, Any] = {"model": model, "rag_judge": rag_judge, "rag_counsel": rag_counsel}
        cfg = base.with_overrides(model_id=model, rag_judge=rag_judge, rag_counsel=rag_counsel)
        script = None
        if settings.backend == "mock":
            script = str(Path(settings.scripts_dir) / model / f"{tag}.json")
        cell_dir = out_dir / "cells" / f"{_slug(model)}_{tag}"
        reports: list[SimulationReport] = []
        outcomes: list[str] = []
        try:
            for i in range(1, spec.runs_per_cell + 1):
                seed = cfg.seed + i - 1 if cfg.seed is not None else None
                report, _ = _run_once(settings, case, kb, cell_dir, run_index=i,
                                      config=cfg.with_overrides(seed=seed), mock_script=script)
                outcomes.append(report.verdict.outcome.value if report else ABORTED)
                if report is not None:
                    reports.append(report)
        except (UsageError, CourtsimError, OSError) as exc:
            log.error("cell %s/%s failed: %s", model, tag, exc)
            return row | {"error": str(exc)}
        if not reports:
            return row | {"error": "every run aborted", "outcomes": outcomes}
        n = len(reports)
        return row | {
            "runs": spec.runs_per_cell,
            "completed": n,
            "agreement": sum(r.verdict.final_agreement_ratio for r in reports) / n,
            "ground_score": sum(r.metrics.avg_grounding_score for r in reports) / n,
            "avg_statements": sum(r.metrics.avg_meaningful_per_adjudicator for r in reports) / n,
            "consistency": consistency(outcomes).to_dict(),
            "outcomes": outcomes,
        }

    cells = spec.cells()
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda c: cell(*c), cells))
    return [cell(*c) for c in cells]


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    if args.spec:
        try:
            spec = AblationSpec.from_file(args.spec)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read ablation spec {args.spec}: {exc}") from exc
        if args.models is not None:
            spec.models = list(args.models)
        if args.runs is not None:
            spec.runs_per_cell = args.runs
        spec.__post_init__()
    else:
        if not args.case:
            raise UsageError("ablate needs --case or --spec")
        pairs = [_parse_pair(p) for p in (args.rag_pairs or ["yes:yes", "no:no"])]
        spec = AblationSpec(list(args.models or []), pairs, args.runs or 1, args.case)
    out_dir = Path(args.out_dir)
    rows = run_ablation(spec, settings, out_dir, jobs=args.jobs)
    table = render_ablation_table(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.md").write_text(table + "\n", encoding="utf-8")
    (out_dir / "ablation.json").write_text(
        dumps({"case": spec.case_path, "runs_per_cell": spec.runs_per_cell, "cells": rows}), encoding="utf-8"
    )
    print(table)
    return EXIT_OK if any(not r.get("error") for r in rows) else EXIT_RUN_FAILED


def cmd_report(args: argparse.Namespace) -> int:
    reports = []
    for item in args.reports:
        try:
            reports.append((Path(item), load_report(item)))
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot read report {item}: {exc}") from exc
    if len(reports) > 1:
        print(render_metric_table([r for _, r in reports]))
        return EXIT_OK
    path, report = reports[0]
    text = render_markdown(report)
    if args.stdout:
        print(text)
    else:
        target = (path if path.is_dir() else path.parent) / "report.md"
        target.write_text(text, encoding="utf-8")
        print(f"wrote {target}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "run": cmd_run,
    "replicate": cmd_replicate,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not logging.getLogger().handlers:
        logging.basicConfig(
            level=logging.WARNING if args.quiet else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"courtsim {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
