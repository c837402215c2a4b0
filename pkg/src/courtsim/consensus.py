"""Per-round consensus rule."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .agents import AgentStatement, Leaning


@dataclass(frozen=True)
class ConsensusResult:
    agreement_ratio: float
    modal_leaning: Leaning | None  # None when the top count is tied
    consensus: bool


def meets_threshold(ratio: float, threshold: float, rule: str) -> bool:
    if rule == "greater":
        return ratio > threshold
    if rule == "greater_or_equal":
        return ratio >= threshold
    raise ValueError(f"unknown threshold rule {rule!r}")


def check_consensus(
    statements: Iterable[AgentStatement | Leaning], threshold: float, rule: str = "greater_or_equal"
) -> ConsensusResult:
    """Agreement ratio is the modal leaning's share of all adjudicators.

    Undecided counts toward the ratio like any other leaning, but a modal
    Undecided, or a tie for the top count, never yields consensus.
    """
    leanings = [s.leaning if isinstance(s, AgentStatement) else Leaning(s) for s in statements]
    if not leanings:
        raise ValueError("consensus check needs at least one statement")
    if any(x is None for x in leanings):
        raise ValueError("every statement must carry a leaning")
    counts = Counter(leanings).most_common()
    top = counts[0][1]
    ratio = top / len(leanings)
    if len(counts) > 1 and counts[1][1] == top:
        return ConsensusResult(ratio, None, False)
    modal = counts[0][0]
    ok = modal is not Leaning.UNDECIDED and meets_threshold(ratio, threshold, rule)
    return ConsensusResult(ratio, modal, ok)
