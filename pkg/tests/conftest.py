from __future__ import annotations

import json
from pathlib import Path

import pytest

from courtsim.case_model import load_case
from courtsim.config import SimulationConfig
from courtsim.knowledge_base import HashingEmbedder, build_store, load_corpus
from courtsim.llm_gateway import Gateway, MockBackend

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "fixtures"
CASES = FIXTURES / "cases"
CORPUS = FIXTURES / "corpus"
SCRIPTS = FIXTURES / "scripts"


@pytest.fixture
def case():
    return load_case(CASES / "case_001.json")


@pytest.fixture(scope="session")
def corpus_store():
    return build_store(load_corpus(CORPUS), chunk_size=1000, overlap=150, embedder=HashingEmbedder(384))


def script(name: str) -> dict[str, str]:
    return json.loads((SCRIPTS / name).read_text(encoding="utf-8"))


def mock_gateway(script_data: dict[str, str] | str, run_index: int | None = None) -> Gateway:
    if isinstance(script_data, str):
        script_data = script(script_data)
    return Gateway(MockBackend(script_data, run_index=run_index))


def adj_reply(leaning: str, why: str = "reasons") -> str:
    return f"LEANING: {leaning}\nJUSTIFICATION: {why}"


def prep_script(**extra: str) -> dict[str, str]:
    base = {
        "judge:judge:0": "Instructions on the burden of proof.",
        "prosecution:prosecution:0": "The charge is proven.",
        "defense:defense:0": "Reasonable doubt remains.",
    }
    base.update({k.replace("__", ":"): v for k, v in extra.items()})
    return base


@pytest.fixture
def config():
    return SimulationConfig(parallel_adjudicators=False)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
