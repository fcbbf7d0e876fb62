"""Extracted facts, the append-only facts list, and evidence grounding."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Sequence

from .errors import DuplicateDirectAnswer, InvalidFact


class FulfillmentLevel(str, Enum):
    DIRECT_ANSWER = "DirectAnswer"
    PARTIAL_CLUE = "PartialClue"
    FAILED = "Failed"

    @classmethod
    def parse(cls, label: str) -> "FulfillmentLevel":
        """Strict lookup; any label outside the three variants raises ValueError."""
        for level in cls:
            if level.value == label:
                return level
        raise ValueError(f"unknown fulfillment level {label!r}")


@dataclass(frozen=True)
class Fact:
    fact_id: str
    task_id: str
    statement: str
    level: FulfillmentLevel
    answers: tuple[str, ...] = ()
    evidence: tuple[str, ...] = ()
    reasoning: str = ""
    doc_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("answers", "evidence", "doc_ids"):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                object.__setattr__(self, name, tuple(value))
        if not isinstance(self.level, FulfillmentLevel):
            object.__setattr__(self, "level", FulfillmentLevel(self.level))

    def problems(self) -> list[str]:
        out = []
        if self.level is FulfillmentLevel.DIRECT_ANSWER:
            if not self.answers:
                out.append("DirectAnswer fact has no answers")
            if not self.evidence:
                out.append("DirectAnswer fact has no evidence")
        if self.level is FulfillmentLevel.FAILED and self.answers:
            out.append("Failed fact carries answers")
        if any(not s for s in self.evidence):
            out.append("empty evidence snippet")
        if any(not a for a in self.answers):
            out.append("empty answer string")
        return out

    def check(self) -> None:
        problems = self.problems()
        if problems:
            raise InvalidFact(f"fact {self.fact_id}: " + "; ".join(problems))

    def to_dict(self) -> dict[str, Any]:
        return {
            "fact_id": self.fact_id,
            "task_id": self.task_id,
            "statement": self.statement,
            "answers": list(self.answers),
            "evidence": list(self.evidence),
            "reasoning": self.reasoning,
            "level": self.level.value,
            "doc_ids": list(self.doc_ids),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Fact":
        return cls(
            fact_id=data["fact_id"],
            task_id=data["task_id"],
            statement=data.get("statement", ""),
            level=FulfillmentLevel.parse(data["level"]),
            answers=tuple(data.get("answers", ())),
            evidence=tuple(data.get("evidence", ())),
            reasoning=data.get("reasoning", ""),
            doc_ids=tuple(data.get("doc_ids", ())),
        )


@dataclass(frozen=True)
class FactsList:
    """Append-only list of facts.

    ``inactive`` holds ids of facts that no longer describe the live plan:
    their task was pruned, or its query was refined after they were
    extracted. They stay in the list for traceability, are flagged when
    rendered, and do not count toward the one-DirectAnswer-per-task rule.
    """

    facts: tuple[Fact, ...] = ()
    inactive: frozenset[str] = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.facts)

    def __iter__(self):
        return iter(self.facts)

    def __getitem__(self, index: int) -> Fact:
        return self.facts[index]

    def get(self, fact_id: str) -> Fact:
        for f in self.facts:
            if f.fact_id == fact_id:
                return f
        raise KeyError(fact_id)

    def active(self) -> list[Fact]:
        return [f for f in self.facts if f.fact_id not in self.inactive]

    def deactivate(self, task_ids: Iterable[str]) -> "FactsList":
        """Retire every fact recorded so far for the given tasks."""
        tasks = set(task_ids)
        retired = {f.fact_id for f in self.facts if f.task_id in tasks}
        return FactsList(self.facts, self.inactive | retired)


def add_fact(facts: FactsList, fact: Fact) -> FactsList:
    fact.check()
    if any(f.fact_id == fact.fact_id for f in facts.facts):
        raise InvalidFact(f"duplicate fact id {fact.fact_id}")
    if fact.level is FulfillmentLevel.DIRECT_ANSWER:
        for f in facts.active():
            if f.task_id == fact.task_id and f.level is FulfillmentLevel.DIRECT_ANSWER:
                raise DuplicateDirectAnswer(
                    f"task {fact.task_id} already answered by {f.fact_id}"
                )
    return FactsList(facts.facts + (fact,), facts.inactive)


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


@dataclass
class GroundingVerdict:
    ungrounded: list[str] = field(default_factory=list)

    @property
    def grounded(self) -> bool:
        return not self.ungrounded

    def to_dict(self) -> dict[str, Any]:
        return {"grounded": self.grounded, "violations": list(self.ungrounded)}


def verify_grounding(fact: Fact, docs: Sequence[Any]) -> GroundingVerdict:
    """Every evidence snippet must appear verbatim (modulo whitespace) in some doc text."""
    texts = [normalize_whitespace(d.text) for d in docs]
    verdict = GroundingVerdict()
    for snippet in fact.evidence:
        needle = normalize_whitespace(snippet)
        if not needle or not any(needle in t for t in texts):
            verdict.ungrounded.append(snippet)
    return verdict


def render_facts(facts: FactsList) -> str:
    lines = []
    for i, f in enumerate(facts.facts, start=1):
        line = f"F{i}. {f.statement} ({f.level.value})"
        if f.fact_id in facts.inactive:
            line += " [inactive]"
        lines.append(line)
    return "\n".join(lines)
