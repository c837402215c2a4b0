"""Structured case files: loading, validation, serialization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import EmptyField, MalformedFile, MissingField

log = logging.getLogger(__name__)

CASE_FIELDS = (
    "case_id",
    "summary",
    "charges",
    "law_explanation",
    "prosecution_evidence",
    "defense_evidence",
    "keywords",
)
_TEXT_FIELDS = ("case_id", "summary", "law_explanation")
_LIST_FIELDS = ("charges", "prosecution_evidence", "defense_evidence", "keywords")


@dataclass(frozen=True)
class CaseFile:
    case_id: str
    summary: str
    charges: tuple[str, ...]
    law_explanation: str
    prosecution_evidence: tuple[str, ...] = ()
    defense_evidence: tuple[str, ...] = ()
    keywords: tuple[str, ...] = ()
    # lower-cased, trimmed keywords used for matching; `keywords` keeps display casing
    normalized_keywords: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self) -> None:
        for name in _LIST_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        if not self.normalized_keywords:
            object.__setattr__(
                self, "normalized_keywords", tuple(normalize_keyword(k) for k in self.keywords)
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "summary": self.summary,
            "charges": list(self.charges),
            "law_explanation": self.law_explanation,
            "prosecution_evidence": list(self.prosecution_evidence),
            "defense_evidence": list(self.defense_evidence),
            "keywords": list(self.keywords),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CaseFile":
        """Build a case from a parsed JSON object, raising on the first bad field."""
        if not isinstance(data, dict):
            raise MalformedFile("top-level JSON value must be an object")
        for name in CASE_FIELDS:
            if name not in data:
                raise MissingField(name)
        extra = sorted(set(data) - set(CASE_FIELDS))
        if extra:
            log.warning("ignoring unknown case-file fields: %s", ", ".join(extra))

        for name in _TEXT_FIELDS:
            if not isinstance(data[name], str):
                raise MalformedFile(f"field {name!r} must be a string")
        for name in _LIST_FIELDS:
            value = data[name]
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise MalformedFile(f"field {name!r} must be a list of strings")

        case = cls(
            case_id=data["case_id"],
            summary=data["summary"],
            charges=tuple(data["charges"]),
            law_explanation=data["law_explanation"],
            prosecution_evidence=tuple(data["prosecution_evidence"]),
            defense_evidence=tuple(data["defense_evidence"]),
            keywords=tuple(data["keywords"]),
        )
        problems = validate_case(case)
        if problems:
            first = problems[0]
            if first.kind == "empty":
                raise EmptyField(first.field)
            raise MalformedFile(first.message)
        return case


@dataclass(frozen=True)
class Violation:
    field: str
    kind: str  # "empty" | "invalid"
    message: str


def normalize_keyword(keyword: str) -> str:
    return " ".join(keyword.split()).lower()


def validate_case(case: CaseFile) -> list[Violation]:
    out: list[Violation] = []
    if not case.case_id.strip():
        out.append(Violation("case_id", "empty", "case_id is empty"))
    elif "/" in case.case_id or "\\" in case.case_id:
        out.append(Violation("case_id", "invalid", "case_id contains a path separator"))
    if not case.summary.strip():
        out.append(Violation("summary", "empty", "summary is empty"))
    if not case.law_explanation.strip():
        out.append(Violation("law_explanation", "empty", "law_explanation is empty"))
    if not case.charges:
        out.append(Violation("charges", "empty", "charges list is empty"))
    elif any(not c.strip() for c in case.charges):
        out.append(Violation("charges", "invalid", "blank charge"))
    if not case.keywords:
        out.append(Violation("keywords", "empty", "keywords list is empty"))
    elif any(not k.strip() for k in case.keywords):
        out.append(Violation("keywords", "invalid", "blank keyword"))
    return out


def load_case(path: str | Path) -> CaseFile:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedFile(f"{path}: not valid UTF-8 ({exc})") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid JSON ({exc})") from exc
    return CaseFile.from_dict(data)


def write_case(case: CaseFile, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(case.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path
