"""Shared fixtures: the replay fixture store, scripted mock, orchestrator."""

from __future__ import annotations

import pytest

from pubbie.llm import MockChatProvider, MockScript, StageId
from pubbie.orchestrator import Orchestrator, SessionStore
from pubbie.store import Database, PublicationStore
from pubbie.templates import TemplateRegistry

# The canonical four-turn replay conversation.
TITLE_ENGINE = (
    "A Study on the Use of Intake Flow Path Modification to Reduce Methane "
    "Slip of a Natural Gas-Diesel Dual-Fuel Engine"
)
USER_1 = "Hi!"
USER_2 = "What is the data about?"
USER_3 = "Give me the challenge program of this publication."
USER_4 = "About this author, how many publications were written?"

REWRITE_2 = "What is the NRC publication dataset about?"
REWRITE_3 = f'Give me the challenge program of the publication "{TITLE_ENGINE}".'
REWRITE_4 = "About Alysa, how many publications were written?"

SQL_3 = f"SELECT prog FROM pub WHERE title = '{TITLE_ENGINE}';"
SQL_4 = "SELECT COUNT(*) FROM pub WHERE authors_with_affil LIKE '%Alysa%';"

AGENT_1 = "Hello! How can I assist you today?"
AGENT_2 = (
    "The NRC publication dataset contains information about publications at "
    "the National Research Council of Canada. It includes details such as titles ..."
)
AGENT_3 = (
    f'The challenge program for the publication "{TITLE_ENGINE}" is '
    '"Materials for Clean Fuels".'
)
AGENT_4 = "Alysa has not written any publications."
INGEST_SUMMARY = "The uploaded CSV has been ingested into the publication store."
EXPORT_SUMMARY = "Your query result has been exported to a CSV file."


def replay_script() -> MockScript:
    """Mock entries reproducing the four-turn conversation."""
    script = MockScript()
    script.add(StageId.A1, USER_2, "YES")
    script.add(StageId.A1, USER_3, "YES")
    script.add(StageId.A1, "About this author", "YES")
    script.add(StageId.A2, USER_2, REWRITE_2)
    script.add(StageId.A2, USER_3, REWRITE_3)
    script.add(StageId.A2, "About this author", REWRITE_4)
    script.add(StageId.B, USER_1, "Generic")
    script.add(StageId.B, REWRITE_2, "Generic")
    script.add(StageId.B, 'the publication "A Study', "SQL")
    script.add(StageId.B, "About Alysa", "SQL")
    script.add(StageId.C, USER_1, AGENT_1)
    script.add(StageId.C, REWRITE_2, AGENT_2)
    script.add(StageId.D, 'the publication "A Study', SQL_3)
    script.add(StageId.D, "About Alysa", SQL_4)
    script.add(StageId.E, 'the publication "A Study', AGENT_3)
    script.add(StageId.E, "About Alysa", AGENT_4)
    script.add(StageId.E, "Summarize the completed CSV ingest.", INGEST_SUMMARY)
    script.add(StageId.E, "Summarize the exported result.", EXPORT_SUMMARY)
    return script


FIXTURE_CSV = (
    "eid,title,year,authors,authors_with_affil,author_keywords,abstract,prog\n"
    f'2-s2.0-0001,"{TITLE_ENGINE}",2023,"Smith J.; Lee K.",'
    '"Smith J., Marine Engineering Lab; Lee K., Engine Research Centre",'
    '"methane slip; dual-fuel engine","Intake flow path modification is '
    'examined for methane slip reduction in dual-fuel engines.",'
    "Materials for Clean Fuels\n"
    '2-s2.0-0002,"Quantum Sensor Networks for Arctic Monitoring",2022,'
    '"Tremblay A.","Tremblay A., Northern Institute",'
    '"quantum sensors; arctic","Distributed quantum sensing for remote '
    'northern infrastructure monitoring.",Internet of Things: Quantum Sensors\n'
    '2-s2.0-0003,"Rapid Antigen Screening at Scale",2021,"Singh R.",'
    '"Singh R., Health Innovation Hub","antigen; screening","Scalable '
    'screening pipelines for pandemic response.",Pandemic Response\n'
).encode("utf-8")


@pytest.fixture
def db():
    return Database(":memory:")


@pytest.fixture
def pub_store(db):
    store = PublicationStore(db)
    store.ingest_csv(FIXTURE_CSV)
    return store


@pytest.fixture
def empty_store(db):
    return PublicationStore(db)


def make_orchestrator(
    db=None, provider=None, script=None, ingest=FIXTURE_CSV, **kwargs
) -> Orchestrator:
    db = db or Database(":memory:")
    store = PublicationStore(db)
    if ingest:
        store.ingest_csv(ingest)
    provider = provider or MockChatProvider(script or replay_script())
    return Orchestrator(
        store=store,
        sessions=SessionStore(db),
        provider=provider,
        templates=TemplateRegistry(),
        **kwargs,
    )


@pytest.fixture
def orchestrator():
    return make_orchestrator()
