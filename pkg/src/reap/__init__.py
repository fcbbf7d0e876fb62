"""Recursive plan-and-extract multi-hop question answering."""

from .engine import Engine, RunStatus
from .facts import Fact, FactsList, FulfillmentLevel, verify_grounding
from .plan import SubTask, TaskPlan, TaskStatus, ready_set, validate_plan
from .retrieval import CorpusIndex, Document, ingest_corpus, lexical_search

__version__ = "0.1.0"

__all__ = [
    "CorpusIndex", "Document", "Engine", "Fact", "FactsList", "FulfillmentLevel", "RunStatus",
    "SubTask", "TaskPlan", "TaskStatus", "ingest_corpus", "lexical_search", "ready_set",
    "validate_plan", "verify_grounding",
]
