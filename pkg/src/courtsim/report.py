"""Report serialization (report.json) and markdown rendering (report.md).

Everything that varies between otherwise identical runs (timestamps, call
latencies, the call log itself) lives under the top-level ``timing`` key, so
``mask_volatile`` leaves a byte-comparable document.
"""

from __future__ import annotations

import json
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

import jsonschema

from .case_model import CaseFile
from .config import SimulationConfig
from .metrics import MetricsSummary
from .orchestrator import DeliberationTranscript, SimulationReport, Verdict

REPORT_SCHEMA_ID = "courtsim-report/1"

METRIC_LABELS = (
    "No. of Adjudicators",
    "RAG enabled (Judge)",
    "RAG enabled (Counsel)",
    "Final Verdict",
    "Deliberation Rounds",
    "Final Agreement Ratio",
    "Adjudicator Participation Rate",
    "Avg. Meaningful Statements per Adjudicator",
    "Avg. Argument Grounding Score",
)

ABLATION_COLUMNS = (
    "Model",
    "RAG (Judge)",
    "RAG (Counsel)",
    "Agreement",
    "Ground Score",
    "Avg. Stmts.",
    "Consistency",
)


def report_to_dict(report: SimulationReport) -> dict[str, Any]:
    statements = report.transcript.all_statements()
    return {
        "schema": REPORT_SCHEMA_ID,
        "case_id": report.case_id,
        "run_index": report.run_index,
        "backend_id": report.backend_id,
        "case": report.case.to_dict(),
        "config": report.config.to_dict(),
        "verdict": report.verdict.to_dict(),
        "consensus_trace": report.consensus_trace,
        "metrics": report.metrics.to_dict(include_latency=False),
        "transcript": report.transcript.to_dict(include_latency=False),
        "timing": {
            "started_at": report.started_at,
            "finished_at": report.finished_at,
            "latency": report.metrics.latency.to_dict() if report.metrics.latency else None,
            "statement_latency_ms": {s.key: s.latency_ms for s in statements},
            "call_log": report.call_log,
        },
    }


def report_from_dict(data: dict[str, Any]) -> SimulationReport:
    timing = data.get("timing", {})
    transcript = DeliberationTranscript.from_dict(data["transcript"])
    latencies = timing.get("statement_latency_ms", {})
    for s in transcript.all_statements():
        s.latency_ms = float(latencies.get(s.key, 0.0))
    return SimulationReport(
        case=CaseFile.from_dict(data["case"]),
        config=SimulationConfig.from_dict(data["config"]),
        verdict=Verdict.from_dict(data["verdict"]),
        transcript=transcript,
        metrics=MetricsSummary.from_dict(data["metrics"], timing.get("latency")),
        call_log=list(timing.get("call_log", [])),
        started_at=timing.get("started_at", ""),
        finished_at=timing.get("finished_at", ""),
        run_index=int(data.get("run_index", 1)),
        backend_id=data.get("backend_id", ""),
        consensus_trace=list(data.get("consensus_trace", [])),
    )


def dumps(data: dict[str, Any]) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True) + "\n"


def mask_volatile(data: dict[str, Any]) -> dict[str, Any]:
    return {k: v for k, v in data.items() if k != "timing"}


@lru_cache(maxsize=1)
def report_schema() -> dict[str, Any]:
    text = (resources.files("courtsim") / "report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(data: dict[str, Any]) -> None:
    """Raise ``jsonschema.ValidationError`` (or ValueError) if ``data`` is not a valid report."""
    jsonschema.validate(data, report_schema())
    for group in [data["transcript"]["preparation"], *data["transcript"]["rounds"]]:
        for s in group:
            if len(s["citations"]) != len(s["citation_validity"]):
                raise ValueError(f"{s['role']}:{s['agent_id']}: citation flags do not match citations")
    if data["verdict"]["rounds_used"] != len(data["transcript"]["rounds"]):
        raise ValueError("rounds_used disagrees with the transcript")


# -- markdown -----------------------------------------------------------------


def _f2(x: float) -> str:
    return f"{x:.2f}"


def metric_rows(report: SimulationReport) -> list[tuple[str, str]]:
    m, cfg = report.metrics, report.config
    values = [
        str(cfg.num_adjudicators),
        str(cfg.rag_judge),
        str(cfg.rag_counsel),
        report.verdict.outcome.value,
        str(report.verdict.rounds_used),
        _f2(report.verdict.final_agreement_ratio),
        _f2(m.mean_participation),
        _f2(m.avg_meaningful_per_adjudicator),
        _f2(m.avg_grounding_score),
    ]
    return list(zip(METRIC_LABELS, values))


def _md_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(lines)


def render_metric_table(reports: Sequence[SimulationReport]) -> str:
    """Metric block: one row per metric, one column per report."""
    columns = [dict(metric_rows(r)) for r in reports]
    header = ["Metric", *(r.case_id if len(reports) > 1 else "Value" for r in reports)]
    rows = [[label, *(col[label] for col in columns)] for label in METRIC_LABELS]
    return _md_table(header, rows)


def _statement_md(s: Any) -> str:
    head = {"judge": "Judge's instructions", "prosecution": "Prosecution argument", "defense": "Defense argument"}
    if s.role == "adjudicator":
        title = f"Adjudicator {s.agent_id}: {s.leaning}"
        if s.parse_warning:
            title += " (leaning not parsed)"
    else:
        title = head[s.role]
    out = [f"#### {title}", "", s.justification or "_(empty)_"]
    if s.citations:
        flags = ", ".join(
            f"{c.source_document}/{c.chunk_id} ({'valid' if ok else 'NOT in offered context'})"
            for c, ok in zip(s.citations, s.citation_validity)
        )
        out += ["", f"Citations: {flags}"]
    return "\n".join(out)


def render_markdown(report: SimulationReport) -> str:
    v, m = report.verdict, report.metrics
    parts = [
        f"# Simulation report: {report.case_id} (run {report.run_index})",
        "",
        f"**Verdict: {v.outcome.value}** after {v.rounds_used} round(s), final agreement {_f2(v.final_agreement_ratio)}.",
        "",
        "## Metrics",
        "",
        render_metric_table([report]),
        "",
        "## Deliberation",
        "",
        _md_table(
            ["Round", "Agreement", "Modal leaning", "Consensus", "Participation"],
            [
                [t["round"], _f2(t["agreement_ratio"]), t["modal_leaning"] or "tie", t["consensus"], _f2(p)]
                for t, p in zip(report.consensus_trace, m.participation_rate_per_round)
            ],
        ),
        "",
        f"Adjudicator statements: {m.total_statements} total, {m.meaningful_statements} meaningful, "
        f"{m.parse_warnings} with unparsed leaning. Citations: {m.citations_valid} valid of {m.citations_total}.",
        "",
    ]
    if m.latency is not None:
        lat = m.latency
        parts += [
            "## LLM latency (ms)",
            "",
            _md_table(
                ["Calls", "Mean", "Median", "Min", "Max"],
                [[lat.count, f"{lat.mean:.1f}", f"{lat.median:.1f}", f"{lat.min:.1f}", f"{lat.max:.1f}"]],
            ),
            "",
        ]
    parts += ["## Transcript", "", "### Preparation", ""]
    for s in report.transcript.preparation:
        parts += [_statement_md(s), ""]
    for number, statements in enumerate(report.transcript.rounds, start=1):
        parts += [f"### Round {number}", ""]
        for s in statements:
            parts += [_statement_md(s), ""]
    parts += [
        "## Configuration",
        "",
        "```json",
        json.dumps(report.config.to_dict(), indent=2, sort_keys=True),
        "```",
        "",
    ]
    return "\n".join(parts)


def render_ablation_table(rows: Iterable[dict[str, Any]]) -> str:
    def yes(flag: bool) -> str:
        return "Yes" if flag else "No"

    body = []
    for row in rows:
        if row.get("error"):
            body.append([row["model"], yes(row["rag_judge"]), yes(row["rag_counsel"]), "ERROR", "ERROR", "ERROR", "ERROR"])
        else:
            body.append(
                [
                    row["model"],
                    yes(row["rag_judge"]),
                    yes(row["rag_counsel"]),
                    _f2(row["agreement"]),
                    _f2(row["ground_score"]),
                    _f2(row["avg_statements"]),
                    row["consistency"]["label"],
                ]
            )
    return _md_table(ABLATION_COLUMNS, body)


# -- files --------------------------------------------------------------------


def timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")


def run_dir_name(case_id: str, run_index: int, stamp: str) -> str:
    return f"{case_id}_{run_index}_{stamp}"


def write_report(report: SimulationReport, out_dir: str | Path, stamp: str | None = None) -> Path:
    """Write ``<out_dir>/<case_id>_<run>_<stamp>/report.{json,md}``; return that directory."""
    target = Path(out_dir) / run_dir_name(report.case_id, report.run_index, stamp or timestamp())
    target.mkdir(parents=True, exist_ok=False)
    data = report_to_dict(report)
    (target / "report.json").write_text(dumps(data), encoding="utf-8")
    (target / "report.md").write_text(render_markdown(report), encoding="utf-8")
    return target


def write_partial(partial: dict[str, Any], out_dir: str | Path, stamp: str | None = None) -> Path:
    name = run_dir_name(partial.get("case_id", "case"), int(partial.get("run_index", 1)), stamp or timestamp())
    target = Path(out_dir) / name
    target.mkdir(parents=True, exist_ok=True)
    path = target / "partial.json"
    path.write_text(dumps(partial), encoding="utf-8")
    return path


def load_report(path: str | Path) -> SimulationReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return report_from_dict(json.loads(path.read_text(encoding="utf-8")))
