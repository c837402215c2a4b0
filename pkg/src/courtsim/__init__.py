"""Multi-agent judicial deliberation simulator with retrieval-grounded citations."""

from .agents import AgentStatement, Citation, Leaning, extract_citations, parse_leaning
from .case_model import CaseFile, load_case, validate_case
from .config import SimulationConfig
from .consensus import ConsensusResult, check_consensus
from .knowledge_base import (
    DocumentChunk,
    HashingEmbedder,
    RetrievalResult,
    VectorStore,
    build_store,
    chunk_document,
    format_context,
    load_store,
    persist_store,
    query,
)
from .llm_gateway import CallLog, Gateway, GenerationRequest, GenerationResponse, HttpBackend, MockBackend
from .orchestrator import DeliberationTranscript, Outcome, SimulationReport, Verdict, declare_hung, run_simulation

__version__ = "0.1.0"

__all__ = [
    "AgentStatement",
    "CallLog",
    "CaseFile",
    "Citation",
    "ConsensusResult",
    "DeliberationTranscript",
    "DocumentChunk",
    "Gateway",
    "GenerationRequest",
    "GenerationResponse",
    "HashingEmbedder",
    "HttpBackend",
    "Leaning",
    "MockBackend",
    "Outcome",
    "RetrievalResult",
    "SimulationConfig",
    "SimulationReport",
    "Verdict",
    "VectorStore",
    "build_store",
    "check_consensus",
    "chunk_document",
    "declare_hung",
    "extract_citations",
    "format_context",
    "load_case",
    "load_store",
    "parse_leaning",
    "persist_store",
    "query",
    "run_simulation",
    "validate_case",
]
