from __future__ import annotations

from importlib import resources
from pathlib import Path

import pytest

from medrec.agents import MockBackend
from medrec.ehr import load_cases
from medrec.knowledge import build_kb
from medrec.ontology import Ontology
from medrec.panel import load_panel

ASSETS = Path(str(resources.files("medrec").joinpath("assets")))
DEMO = ASSETS / "demo"
FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def demo_dir() -> Path:
    return DEMO


@pytest.fixture(scope="session")
def ontology() -> Ontology:
    return Ontology.load(DEMO / "ontology")


@pytest.fixture(scope="session")
def kb_and_report():
    return build_kb(
        DEMO / "twosides.tsv",
        DEMO / "openfda_labels.jsonl",
        DEMO / "medi.tsv",
        DEMO / "rxcui_atc.tsv",
        DEMO / "vocab.txt",
        DEMO / "contra_lexicon.tsv",
    )


@pytest.fixture(scope="session")
def kb(kb_and_report):
    return kb_and_report[0]


@pytest.fixture(scope="session")
def panel():
    return load_panel()


@pytest.fixture(scope="session")
def demo_cases(kb):
    return load_cases(DEMO / "cases.jsonl", kb.vocab)


@pytest.fixture(scope="session")
def case_study(kb):
    return load_cases(DEMO / "case_study.jsonl", kb.vocab)[0]


@pytest.fixture
def case_study_backend() -> MockBackend:
    return MockBackend.from_file(ASSETS / "fixtures" / "case_study.json")


@pytest.fixture
def kb_file(kb, tmp_path) -> Path:
    from medrec.knowledge import save_kb

    path = tmp_path / "kb.zip"
    save_kb(kb, path)
    return path
