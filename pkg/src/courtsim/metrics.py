"""Run metrics: latency, participation, grounding, meaningful statements, consistency."""

from __future__ import annotations

import math
import re
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Any, Iterable, Sequence

from .agents import AgentStatement
from .consensus import check_consensus
from .errors import EmptyInput

CONSISTENCY_LABELS = ("Very High", "High", "Medium", "Low")


@dataclass(frozen=True)
class LatencyStats:
    mean: float
    median: float
    min: float
    max: float
    count: int

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class MetricsSummary:
    latency: LatencyStats | None
    participation_rate_per_round: list[float]
    total_statements: int
    meaningful_statements: int
    avg_meaningful_per_adjudicator: float
    avg_grounding_score: float
    final_agreement_ratio: float
    parse_warnings: int = 0
    citations_total: int = 0
    citations_valid: int = 0

    @property
    def mean_participation(self) -> float:
        rates = self.participation_rate_per_round
        return math.fsum(rates) / len(rates) if rates else 0.0

    def to_dict(self, include_latency: bool = True) -> dict[str, Any]:
        out = asdict(self)
        out["latency"] = self.latency.to_dict() if self.latency else None
        if not include_latency:
            del out["latency"]
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any], latency: dict[str, Any] | None = None) -> "MetricsSummary":
        data = dict(data)
        lat = data.pop("latency", None) or latency
        return cls(latency=LatencyStats(**lat) if lat else None, **data)


@dataclass(frozen=True)
class ConsistencySummary:
    runs: int
    verdict_distribution: dict[str, int] = field(default_factory=dict)
    consistency_rate: float = 0.0
    label: str = "Low"
    modal_verdict: str = ""

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def latency_stats(latencies: Sequence[float]) -> LatencyStats:
    if not latencies:
        raise EmptyInput("latency_stats needs at least one value")
    values = [float(x) for x in latencies]
    if any(not math.isfinite(x) or x < 0 for x in values):
        raise ValueError("latencies must be finite and non-negative")
    return LatencyStats(
        mean=math.fsum(values) / len(values),
        median=statistics.median(values),
        min=min(values),
        max=max(values),
        count=len(values),
    )


@lru_cache(maxsize=4096)
def _keyword_pattern(keyword: str) -> re.Pattern[str]:
    return re.compile(r"(?<!\w)" + re.escape(keyword) + r"(?!\w)", re.IGNORECASE)


def grounding_score(statement_text: str, keywords: Iterable[str]) -> float:
    """Share of distinct keywords that occur in the text as whole words (case-insensitive)."""
    distinct = list(dict.fromkeys(k.lower() for k in keywords))
    if not distinct:
        raise ValueError("grounding_score needs at least one keyword")
    hits = sum(1 for k in distinct if _keyword_pattern(k).search(statement_text))
    return hits / len(distinct)


def word_count(text: str) -> int:
    return len(text.split())


def is_meaningful(statement: AgentStatement, keywords: Iterable[str], min_words: int = 30) -> bool:
    if word_count(statement.justification) < min_words:
        return False
    return statement.valid_citations > 0 or grounding_score(statement.justification, keywords) > 0


def participation_rate(round_statements: Iterable[AgentStatement], num_adjudicators: int) -> float:
    if num_adjudicators < 1:
        raise ValueError("num_adjudicators must be >= 1")
    speakers = {s.agent_id for s in round_statements if s.justification.strip()}
    return min(1.0, len(speakers) / num_adjudicators)


def summarize(transcript: Any, call_log: Any, case: Any, config: Any) -> MetricsSummary:
    """Metrics for one completed run.

    Grounding and meaningfulness are scored over adjudicator statements only;
    citation totals include the preparation statements. ``call_log`` is a
    CallLog or a list of call-record dicts.
    """
    rounds: list[list[AgentStatement]] = list(transcript.rounds)
    statements = [s for r in rounds for s in r]
    if not statements:
        raise EmptyInput("transcript has no adjudicator statements")
    keywords = case.normalized_keywords
    n = config.num_adjudicators
    min_words = getattr(config, "meaningful_min_words", 30)

    meaningful = sum(1 for s in statements if is_meaningful(s, keywords, min_words))
    grounding = [grounding_score(s.justification, keywords) for s in statements]
    latencies = _generate_latencies(call_log)
    everyone = transcript.all_statements()

    return MetricsSummary(
        latency=latency_stats(latencies) if latencies else None,
        participation_rate_per_round=[participation_rate(r, n) for r in rounds],
        total_statements=len(statements),
        meaningful_statements=meaningful,
        avg_meaningful_per_adjudicator=meaningful / n,
        avg_grounding_score=math.fsum(grounding) / len(grounding),
        final_agreement_ratio=check_consensus(rounds[-1], config.consensus_threshold, config.threshold_rule).agreement_ratio,
        parse_warnings=sum(s.parse_warning for s in statements),
        citations_total=sum(len(s.citations) for s in everyone),
        citations_valid=sum(s.valid_citations for s in everyone),
    )


def _generate_latencies(call_log: Any) -> list[float]:
    if call_log is None:
        return []
    if hasattr(call_log, "latencies"):
        return call_log.latencies("generate")
    return [r["latency_ms"] for r in call_log if r.get("kind") == "generate" and r.get("ok", True)]


def consistency_label(rate: float) -> str:
    if rate >= 1.0:
        return "Very High"
    if rate >= 0.8:
        return "High"
    if rate >= 0.6:
        return "Medium"
    return "Low"


def consistency(verdicts: Sequence[str]) -> ConsistencySummary:
    if not verdicts:
        raise EmptyInput("consistency needs at least one verdict")
    counts = Counter(str(v) for v in verdicts)
    modal, top = counts.most_common(1)[0]
    rate = top / len(verdicts)
    return ConsistencySummary(
        runs=len(verdicts),
        verdict_distribution=dict(sorted(counts.items())),
        consistency_rate=rate,
        label=consistency_label(rate),
        modal_verdict=modal,
    )
