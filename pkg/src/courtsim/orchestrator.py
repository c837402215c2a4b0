"""Five-phase simulation lifecycle.

initialization -> preparation (judge, prosecution, defense) -> deliberation
rounds -> consensus check after each round -> verdict or hung panel.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any

from .agents import (
    AgentStatement,
    Leaning,
    adjudicator_ids,
    adjudicator_statement,
    agent_sort_key,
    counsel_argument,
    judge_instructions,
)
from .case_model import CaseFile
from .config import SimulationConfig
from .consensus import ConsensusResult, check_consensus
from .errors import GatewayError, KnowledgeBaseError, RunAborted
from .knowledge_base import VectorStore
from .llm_gateway import Gateway
from .metrics import MetricsSummary, summarize

log = logging.getLogger(__name__)

__all__ = [
    "ConsensusResult",
    "DeliberationTranscript",
    "Outcome",
    "SimulationReport",
    "Verdict",
    "check_consensus",
    "declare_hung",
    "run_simulation",
]


class Outcome(str, enum.Enum):
    GUILTY = "Guilty"
    NOT_GUILTY = "Not Guilty"
    HUNG = "Hung"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def from_leaning(cls, leaning: Leaning) -> "Outcome":
        if leaning is Leaning.GUILTY:
            return cls.GUILTY
        if leaning is Leaning.NOT_GUILTY:
            return cls.NOT_GUILTY
        raise ValueError("an Undecided leaning is never a verdict")


@dataclass
class DeliberationTranscript:
    preparation: list[AgentStatement] = field(default_factory=list)
    rounds: list[list[AgentStatement]] = field(default_factory=list)

    def add_round(self, statements: list[AgentStatement]) -> None:
        number = len(self.rounds) + 1
        ids = [s.agent_id for s in statements]
        if len(set(ids)) != len(ids):
            raise ValueError(f"round {number}: an adjudicator spoke twice")
        if any(s.round != number for s in statements):
            raise ValueError(f"round {number}: statement tagged with the wrong round")
        self.rounds.append(sorted(statements, key=lambda s: agent_sort_key(s.agent_id)))

    def all_statements(self) -> list[AgentStatement]:
        return [*self.preparation, *(s for r in self.rounds for s in r)]

    def to_dict(self, include_latency: bool = True) -> dict[str, Any]:
        return {
            "preparation": [s.to_dict(include_latency) for s in self.preparation],
            "rounds": [[s.to_dict(include_latency) for s in r] for r in self.rounds],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DeliberationTranscript":
        return cls(
            preparation=[AgentStatement.from_dict(s) for s in data.get("preparation", [])],
            rounds=[[AgentStatement.from_dict(s) for s in r] for r in data.get("rounds", [])],
        )


@dataclass(frozen=True)
class Verdict:
    outcome: Outcome
    final_agreement_ratio: float
    rounds_used: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "outcome": self.outcome.value,
            "final_agreement_ratio": self.final_agreement_ratio,
            "rounds_used": self.rounds_used,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Verdict":
        return cls(Outcome(data["outcome"]), float(data["final_agreement_ratio"]), int(data["rounds_used"]))


@dataclass
class SimulationReport:
    case: CaseFile
    config: SimulationConfig
    verdict: Verdict
    transcript: DeliberationTranscript
    metrics: MetricsSummary
    call_log: list[dict[str, Any]]
    started_at: str
    finished_at: str
    run_index: int = 1
    backend_id: str = ""
    consensus_trace: list[dict[str, Any]] = field(default_factory=list)

    @property
    def case_id(self) -> str:
        return self.case.case_id


def declare_hung(transcript: DeliberationTranscript, config: SimulationConfig) -> Verdict:
    if len(transcript.rounds) != config.max_rounds:
        raise ValueError(
            f"hung panel needs {config.max_rounds} completed rounds, transcript has {len(transcript.rounds)}"
        )
    last = check_consensus(transcript.rounds[-1], config.consensus_threshold, config.threshold_rule)
    return Verdict(Outcome.HUNG, last.agreement_ratio, config.max_rounds)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def _deliberation_round(
    number: int,
    case: CaseFile,
    transcript: DeliberationTranscript,
    gateway: Gateway,
    config: SimulationConfig,
) -> list[AgentStatement]:
    instructions, pros, defense = transcript.preparation
    ids = adjudicator_ids(config.num_adjudicators)

    def speak(agent_id: str, same_round: list[AgentStatement]) -> AgentStatement:
        return adjudicator_statement(
            agent_id, number, case, instructions, pros, defense, transcript.rounds,
            gateway, config, same_round=same_round,
        )

    if config.sequential_rounds:
        said: list[AgentStatement] = []
        for agent_id in ids:
            said.append(speak(agent_id, list(said)))
        return said
    if config.parallel_adjudicators and len(ids) > 1:
        with ThreadPoolExecutor(max_workers=len(ids), thread_name_prefix="adjudicator") as pool:
            return list(pool.map(lambda a: speak(a, []), ids))
    return [speak(a, []) for a in ids]


def run_simulation(
    config: SimulationConfig,
    case: CaseFile,
    kb: VectorStore | None,
    gateway: Gateway,
    *,
    run_index: int = 1,
) -> SimulationReport:
    if config.uses_rag and kb is None:
        raise ValueError("RAG is enabled but no knowledge base was provided")
    started = _now()
    first_call = len(gateway.call_log)
    transcript = DeliberationTranscript()
    trace: list[dict[str, Any]] = []
    phase = "preparation"

    def abort(exc: BaseException) -> RunAborted:
        return RunAborted(
            phase,
            exc,
            {
                "case_id": case.case_id,
                "run_index": run_index,
                "phase": phase,
                "error": f"{type(exc).__name__}: {exc}",
                "config": config.to_dict(),
                "transcript": transcript.to_dict(),
                "consensus_trace": trace,
                "call_log": gateway.call_log.to_list()[first_call:],
                "started_at": started,
                "finished_at": _now(),
            },
        )

    log.info("[%s] preparation: judge, prosecution, defense", case.case_id)
    try:
        transcript.preparation.append(judge_instructions(case, kb, gateway, config))
        transcript.preparation.append(counsel_argument("prosecution", case, kb, gateway, config))
        transcript.preparation.append(counsel_argument("defense", case, kb, gateway, config))
    except (GatewayError, KnowledgeBaseError) as exc:
        raise abort(exc) from exc

    verdict = None
    for number in range(1, config.max_rounds + 1):
        phase = f"deliberation round {number}"
        log.info("[%s] deliberation round %d", case.case_id, number)
        try:
            statements = _deliberation_round(number, case, transcript, gateway, config)
        except (GatewayError, KnowledgeBaseError) as exc:
            raise abort(exc) from exc
        transcript.add_round(statements)
        result = check_consensus(transcript.rounds[-1], config.consensus_threshold, config.threshold_rule)
        trace.append(
            {
                "round": number,
                "agreement_ratio": result.agreement_ratio,
                "modal_leaning": result.modal_leaning.value if result.modal_leaning else None,
                "consensus": result.consensus,
            }
        )
        log.info(
            "[%s] round %d: ratio %.2f modal %s consensus %s",
            case.case_id, number, result.agreement_ratio, result.modal_leaning, result.consensus,
        )
        if result.consensus:
            verdict = Verdict(Outcome.from_leaning(result.modal_leaning), result.agreement_ratio, number)
            break
    if verdict is None:
        verdict = declare_hung(transcript, config)
    log.info("[%s] verdict: %s after %d round(s)", case.case_id, verdict.outcome, verdict.rounds_used)

    calls = gateway.call_log.to_list()[first_call:]
    return SimulationReport(
        case=case,
        config=config,
        verdict=verdict,
        transcript=transcript,
        metrics=summarize(transcript, calls, case, config),
        call_log=calls,
        started_at=started,
        finished_at=_now(),
        run_index=run_index,
        backend_id=gateway.backend_id,
        consensus_trace=trace,
    )
