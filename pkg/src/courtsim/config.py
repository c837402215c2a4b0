"""Run configuration shared by the agents, the orchestrator and the CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Any

THRESHOLD_RULES = ("greater", "greater_or_equal")


@dataclass(frozen=True)
class SimulationConfig:
    num_adjudicators: int = 5
    consensus_threshold: float = 0.80
    threshold_rule: str = "greater_or_equal"
    max_rounds: int = 5
    rag_judge: bool = False
    rag_counsel: bool = False
    model_id: str = "local-model"
    temperature: float = 0.2
    max_tokens: int = 1024
    retrieval_k: int = 5
    seed: int | None = None
    embed_model_id: str = "text-embedding"
    template_set: str = "default"
    # adjudicators also see same-round statements already made (forces serial calls)
    sequential_rounds: bool = False
    parallel_adjudicators: bool = True
    meaningful_min_words: int = 30

    def __post_init__(self) -> None:
        if self.num_adjudicators < 1:
            raise ValueError("num_adjudicators must be >= 1")
        if not 0.0 < self.consensus_threshold <= 1.0:
            raise ValueError("consensus_threshold must be in (0, 1]")
        if self.threshold_rule not in THRESHOLD_RULES:
            raise ValueError(f"threshold_rule must be one of {THRESHOLD_RULES}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.retrieval_k < 1:
            raise ValueError("retrieval_k must be >= 1")
        if self.meaningful_min_words < 0:
            raise ValueError("meaningful_min_words must be >= 0")

    @property
    def uses_rag(self) -> bool:
        return self.rag_judge or self.rag_counsel

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimulationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def with_overrides(self, **overrides: Any) -> "SimulationConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})
