"""Judge, counsel and adjudicator agents.

Agents are stateless: each call renders a prompt from a template, optionally
retrieves context from the knowledge base, calls the gateway, and parses the
reply into an ``AgentStatement``.

Output contract the prompts ask for, and the parsers expect::

    LEANING: Guilty | Not Guilty | Undecided
    JUSTIFICATION: free text
    citations anywhere as [Source: <document>, chunk <id>]
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

from .case_model import CaseFile
from .config import SimulationConfig
from .knowledge_base import RetrievalResult, VectorStore, format_context
from .knowledge_base import query as kb_query
from .llm_gateway import Gateway, GenerationRequest

ROLES = ("judge", "prosecution", "defense", "adjudicator")
COUNSEL_SIDES = ("prosecution", "defense")
NO_PRIOR_STATEMENTS = "(no prior statements)"

_QUERY_LAW_HEAD = 300
_QUERY_EVIDENCE_HEAD = 200
_QUERY_EVIDENCE_ITEMS = 3


class Leaning(str, enum.Enum):
    GUILTY = "Guilty"
    NOT_GUILTY = "Not Guilty"
    UNDECIDED = "Undecided"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class Citation:
    source_document: str
    chunk_id: int

    def __post_init__(self) -> None:
        if self.chunk_id < 0:
            raise ValueError("chunk_id must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {"source_document": self.source_document, "chunk_id": self.chunk_id}


@dataclass
class AgentStatement:
    agent_id: str
    role: str
    round: int
    justification: str
    leaning: Leaning | None = None
    citations: list[Citation] = field(default_factory=list)
    citation_validity: list[bool] = field(default_factory=list)
    latency_ms: float = 0.0
    parse_warning: bool = False
    # chunks offered to the agent as context (empty when RAG is off)
    context: list[Citation] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.round < 0:
            raise ValueError("round must be >= 0")
        if (self.role == "adjudicator") != (self.leaning is not None):
            raise ValueError("adjudicator statements carry a leaning; other roles must not")
        if len(self.citations) != len(self.citation_validity):
            raise ValueError("citation_validity must parallel citations")

    @property
    def key(self) -> str:
        return f"{self.role}:{self.agent_id}:{self.round}"

    @property
    def valid_citations(self) -> int:
        return sum(self.citation_validity)

    def to_dict(self, include_latency: bool = True) -> dict[str, Any]:
        out: dict[str, Any] = {
            "agent_id": self.agent_id,
            "role": self.role,
            "round": self.round,
            "leaning": self.leaning.value if self.leaning is not None else None,
            "justification": self.justification,
            "citations": [c.to_dict() for c in self.citations],
            "citation_validity": list(self.citation_validity),
            "context": [c.to_dict() for c in self.context],
            "parse_warning": self.parse_warning,
        }
        if include_latency:
            out["latency_ms"] = self.latency_ms
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AgentStatement":
        kind = {"judge": JudgeInstructions, "prosecution": CounselArgument, "defense": CounselArgument}
        target = kind.get(data["role"], AgentStatement)
        return target(
            agent_id=data["agent_id"],
            role=data["role"],
            round=data["round"],
            justification=data["justification"],
            leaning=Leaning(data["leaning"]) if data.get("leaning") else None,
            citations=[Citation(**c) for c in data.get("citations", [])],
            citation_validity=list(data.get("citation_validity", [])),
            latency_ms=float(data.get("latency_ms", 0.0)),
            parse_warning=bool(data.get("parse_warning", False)),
            context=[Citation(**c) for c in data.get("context", [])],
        )


class JudgeInstructions(AgentStatement):
    pass


class CounselArgument(AgentStatement):
    @property
    def side(self) -> str:
        return self.role


# -- templates ----------------------------------------------------------------

_PLACEHOLDER = re.compile(r"\{\{(\w+)\}\}")


def render_template(template: str, values: dict[str, Any]) -> str:
    def sub(m: re.Match[str]) -> str:
        name = m.group(1)
        if name not in values:
            raise KeyError(f"template placeholder {{{{{name}}}}} has no value")
        return str(values[name])

    return _PLACEHOLDER.sub(sub, template)


@lru_cache(maxsize=16)
def load_templates(template_set: str = "default") -> dict[str, tuple[str, str]]:
    """Return ``{role: (system_template, user_template)}``.

    ``template_set`` is either the name of a bundled set or a directory
    holding ``<role>.system.txt`` and ``<role>.user.txt`` for every role.
    """
    path = Path(template_set)
    if path.is_dir():
        read = lambda name: (path / name).read_text(encoding="utf-8")  # noqa: E731
    else:
        base = resources.files("courtsim") / "templates" / template_set
        if not base.is_dir():
            raise FileNotFoundError(f"no template set named {template_set!r}")
        read = lambda name: (base / name).read_text(encoding="utf-8")  # noqa: E731
    return {role: (read(f"{role}.system.txt"), read(f"{role}.user.txt")) for role in ROLES}


def _bullets(items: Iterable[str]) -> str:
    lines = [f"- {item}" for item in items]
    return "\n".join(lines) if lines else "(none)"


def _head(text: str, limit: int) -> str:
    text = " ".join(text.split())
    return text if len(text) <= limit else text[:limit].rsplit(" ", 1)[0]


def _case_values(case: CaseFile) -> dict[str, Any]:
    return {
        "case_id": case.case_id,
        "summary": case.summary,
        "charges": _bullets(case.charges),
        "law_explanation": case.law_explanation,
        "prosecution_evidence": _bullets(case.prosecution_evidence),
        "defense_evidence": _bullets(case.defense_evidence),
    }


# -- parsing ------------------------------------------------------------------

_LEANING_LINE = re.compile(
    r"^[\s*_#>-]*leaning[\s*_]*:[\s*_]*(not[\s_-]*guilty|guilty|undecided)\b",
    re.IGNORECASE,
)
_JUSTIFICATION = re.compile(r"^[\s*_#>-]*justification[\s*_]*:[\s*_]*", re.IGNORECASE | re.MULTILINE)
_CITATION = re.compile(r"\[\s*Source:\s*([^,\]\n]+?)\s*,\s*chunk\s+(\d+)\s*\]", re.IGNORECASE)


def parse_leaning(text: str) -> tuple[Leaning, bool]:
    """First ``LEANING: <value>`` line wins; no such line gives (Undecided, True)."""
    for line in text.splitlines():
        m = _LEANING_LINE.match(line)
        if m is None:
            continue
        value = m.group(1).lower()
        # "not guilty" is checked first so the "guilty" suffix cannot shadow it
        if value.startswith("not"):
            return Leaning.NOT_GUILTY, False
        if value == "guilty":
            return Leaning.GUILTY, False
        return Leaning.UNDECIDED, False
    return Leaning.UNDECIDED, True


def parse_justification(text: str) -> str:
    m = _JUSTIFICATION.search(text)
    if m is not None:
        return text[m.end():].strip()
    kept = [line for line in text.splitlines() if not _LEANING_LINE.match(line)]
    return "\n".join(kept).strip()


def extract_citations(
    text: str, offered_context: Sequence[RetrievalResult] | Sequence[Citation]
) -> tuple[list[Citation], list[bool]]:
    offered = {_as_citation(item) for item in offered_context}
    citations = [Citation(m.group(1).strip(), int(m.group(2))) for m in _CITATION.finditer(text)]
    return citations, [c in offered for c in citations]


def _as_citation(item: RetrievalResult | Citation) -> Citation:
    if isinstance(item, Citation):
        return item
    return Citation(item.chunk.source_document, item.chunk.chunk_id)


# -- prompts ------------------------------------------------------------------


def build_rag_query(role: str, case: CaseFile) -> str:
    charges = "; ".join(case.charges)
    if role == "judge":
        return f"{charges}\n{_head(case.law_explanation, _QUERY_LAW_HEAD)}"
    if role in COUNSEL_SIDES:
        evidence = case.prosecution_evidence if role == "prosecution" else case.defense_evidence
        heads = [_head(e, _QUERY_EVIDENCE_HEAD) for e in evidence[:_QUERY_EVIDENCE_ITEMS]]
        return "\n".join([charges, *heads])
    raise ValueError(f"no retrieval query for role {role!r}")


def retrieve_context(
    role: str, case: CaseFile, kb: VectorStore, gateway: Gateway, config: SimulationConfig
) -> list[RetrievalResult]:
    embedder = gateway.embedder(config.embed_model_id, role=role, agent_id=role, round=0)
    return kb_query(kb, build_rag_query(role, case), config.retrieval_k, embedder)


def preparation_prompt(
    role: str, case: CaseFile, context: Sequence[RetrievalResult], config: SimulationConfig
) -> tuple[str, str]:
    system, user = load_templates(config.template_set)[role]
    values = _case_values(case) | {"context": format_context(context)}
    return render_template(system, values), render_template(user, values)


def format_peer_statements(statements: Iterable[AgentStatement]) -> str:
    lines = [
        f"[Round {s.round}] Adjudicator {s.agent_id} ({s.leaning}): {s.justification}"
        for s in statements
    ]
    return "\n\n".join(lines) if lines else NO_PRIOR_STATEMENTS


def adjudicator_prompt(
    agent_id: str,
    round: int,
    case: CaseFile,
    instructions: AgentStatement,
    pros_arg: AgentStatement,
    def_arg: AgentStatement,
    peers: Sequence[AgentStatement],
    config: SimulationConfig,
) -> tuple[str, str]:
    system, user = load_templates(config.template_set)["adjudicator"]
    values = _case_values(case) | {
        "agent_id": agent_id,
        "round": round,
        "instructions": instructions.justification,
        "prosecution_argument": pros_arg.justification,
        "defense_argument": def_arg.justification,
        "peer_statements": format_peer_statements(peers),
    }
    return render_template(system, values), render_template(user, values)


def _request(config: SimulationConfig, system: str, user: str, role: str, agent_id: str, round: int) -> GenerationRequest:
    return GenerationRequest(
        system_prompt=system,
        user_prompt=user,
        model_id=config.model_id,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
        seed=config.seed,
        role=role,
        agent_id=agent_id,
        round=round,
    )


# -- agents -------------------------------------------------------------------


def _prepare(
    role: str,
    rag: bool,
    case: CaseFile,
    kb: VectorStore | None,
    gateway: Gateway,
    config: SimulationConfig,
) -> tuple[str, float, list[RetrievalResult]]:
    if rag:
        if kb is None:
            raise ValueError(f"RAG is enabled for {role} but no knowledge base was given")
        context = retrieve_context(role, case, kb, gateway, config)
    else:
        context = []
    system, user = preparation_prompt(role, case, context, config)
    resp = gateway.generate(_request(config, system, user, role, role, 0))
    return resp.text, resp.latency_ms, context


def judge_instructions(
    case: CaseFile, kb: VectorStore | None, gateway: Gateway, config: SimulationConfig
) -> JudgeInstructions:
    text, latency, context = _prepare("judge", config.rag_judge, case, kb, gateway, config)
    citations, validity = extract_citations(text, context)
    return JudgeInstructions(
        agent_id="judge",
        role="judge",
        round=0,
        justification=text.strip(),
        citations=citations,
        citation_validity=validity,
        latency_ms=latency,
        context=[_as_citation(r) for r in context],
    )


def counsel_argument(
    side: str, case: CaseFile, kb: VectorStore | None, gateway: Gateway, config: SimulationConfig
) -> CounselArgument:
    if side not in COUNSEL_SIDES:
        raise ValueError(f"side must be one of {COUNSEL_SIDES}, got {side!r}")
    text, latency, context = _prepare(side, config.rag_counsel, case, kb, gateway, config)
    citations, validity = extract_citations(text, context)
    return CounselArgument(
        agent_id=side,
        role=side,
        round=0,
        justification=text.strip(),
        citations=citations,
        citation_validity=validity,
        latency_ms=latency,
        context=[_as_citation(r) for r in context],
    )


def adjudicator_statement(
    agent_id: str,
    round: int,
    case: CaseFile,
    instructions: AgentStatement,
    pros_arg: AgentStatement,
    def_arg: AgentStatement,
    prior_rounds: Sequence[AgentStatement] | Sequence[Sequence[AgentStatement]],
    gateway: Gateway,
    config: SimulationConfig,
    same_round: Sequence[AgentStatement] = (),
) -> AgentStatement:
    """One adjudicator's leaning for ``round``.

    ``prior_rounds`` may be a flat list of statements or a list of rounds;
    everything in it must come from earlier rounds. ``same_round`` is only
    used in sequential mode and must hold statements from ``round`` itself.
    """
    if round < 1:
        raise ValueError("deliberation rounds start at 1")
    peers = _flatten(prior_rounds)
    if any(s.round >= round for s in peers):
        raise ValueError("prior_rounds may only contain statements from earlier rounds")
    if any(s.round != round for s in same_round):
        raise ValueError("same_round statements must belong to the current round")

    system, user = adjudicator_prompt(
        agent_id, round, case, instructions, pros_arg, def_arg, [*peers, *same_round], config
    )
    resp = gateway.generate(_request(config, system, user, "adjudicator", agent_id, round))
    leaning, warning = parse_leaning(resp.text)
    # adjudicators get no retrieved context, so any citation they emit is unverified
    citations, validity = extract_citations(resp.text, [])
    return AgentStatement(
        agent_id=agent_id,
        role="adjudicator",
        round=round,
        justification=parse_justification(resp.text),
        leaning=leaning,
        citations=citations,
        citation_validity=validity,
        latency_ms=resp.latency_ms,
        parse_warning=warning,
    )


def _flatten(rounds: Sequence[Any]) -> list[AgentStatement]:
    out: list[AgentStatement] = []
    for item in rounds:
        if isinstance(item, AgentStatement):
            out.append(item)
        else:
            out.extend(item)
    return out


def adjudicator_ids(n: int) -> list[str]:
    return [str(i) for i in range(1, n + 1)]


def agent_sort_key(agent_id: str) -> tuple[int, int | str]:
    return (0, int(agent_id)) if agent_id.isdigit() else (1, agent_id)

