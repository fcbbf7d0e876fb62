"""Structured-output extraction and per-role schema validation.

Every parser raises :class:`MalformedOutput` with a message meant to be fed
back to the model on the next repair attempt.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

from ..errors import EmptyPlan, MalformedOutput
from ..facts import Fact, FulfillmentLevel
from ..plan import SubTask, TaskPlan, validate_plan

_FENCED = re.compile(r"```(?:json|JSON)?[ \t]*\n?(.*?)```", re.DOTALL)


def extract_object(text: str) -> dict[str, Any]:
    """Return the first well-formed JSON object in a completion.

    Fenced blocks are tried first, then every ``{`` in the raw text.
    """
    if not isinstance(text, str):
        raise MalformedOutput("completion is not text")
    decoder = json.JSONDecoder()
    for block in _FENCED.findall(text):
        block = block.strip()
        try:
            value = json.loads(block)
        except json.JSONDecodeError:
            continue
        if isinstance(value, dict):
            return value
    pos = text.find("{")
    while pos >= 0:
        try:
            value, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(value, dict):
                return value
        pos = text.find("{", pos + 1)
    raise MalformedOutput("no JSON object found in the reply")


def _str(obj: dict, key: str, *, required: bool = True, allow_empty: bool = False) -> str:
    value = obj.get(key)
    if value is None:
        if required:
            raise MalformedOutput(f"missing field {key!r}")
        return ""
    if not isinstance(value, str):
        raise MalformedOutput(f"field {key!r} must be a string")
    if required and not allow_empty and not value.strip():
        raise MalformedOutput(f"field {key!r} must be non-empty")
    return value


def _str_list(obj: dict, key: str) -> list[str]:
    value = obj.get(key, [])
    if value is None:
        return []
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedOutput(f"field {key!r} must be a list of strings")
    return value


def parse_subtasks(items: Any, field_name: str = "tasks") -> list[SubTask]:
    if not isinstance(items, list):
        raise MalformedOutput(f"field {field_name!r} must be a list")
    tasks = []
    for n, item in enumerate(items):
        if not isinstance(item, dict):
            raise MalformedOutput(f"{field_name}[{n}] must be an object")
        tid = item.get("id")
        if isinstance(tid, int):
            tid = str(tid)
        if not isinstance(tid, str) or not tid:
            raise MalformedOutput(f"{field_name}[{n}].id must be a non-empty string")
        tasks.append(SubTask(id=tid, query=_str(item, "query"), deps=tuple(_str_list(item, "deps"))))
    return tasks


def parse_plan(text: str) -> TaskPlan:
    obj = extract_object(text)
    if "tasks" not in obj:
        raise MalformedOutput("missing field 'tasks'")
    tasks = parse_subtasks(obj["tasks"])
    if not tasks:
        raise EmptyPlan("plan has no sub-tasks")
    plan = TaskPlan(tasks=tuple(tasks))
    result = validate_plan(plan)
    if not result.ok:
        raise MalformedOutput("invalid plan: " + "; ".join(result.violations))
    return plan


def parse_fact(text: str, *, fact_id: str, task_id: str, doc_ids: Sequence[str]) -> Fact:
    obj = extract_object(text)
    label = _str(obj, "level")
    try:
        level = FulfillmentLevel.parse(label)
    except ValueError:
        raise MalformedOutput(
            f"level {label!r} is not one of DirectAnswer, PartialClue, Failed"
        ) from None
    cited = _str_list(obj, "doc_ids")
    unknown = [d for d in cited if d not in doc_ids]
    if unknown:
        raise MalformedOutput(f"doc_ids {unknown} were not retrieved")
    fact = Fact(
        fact_id=fact_id,
        task_id=task_id,
        statement=_str(obj, "statement", allow_empty=level is FulfillmentLevel.FAILED),
        level=level,
        answers=tuple(a.strip() for a in _str_list(obj, "answers")),
        evidence=tuple(_str_list(obj, "evidence")),
        reasoning=_str(obj, "reasoning", required=False),
        doc_ids=tuple(cited or doc_ids),
    )
    problems = fact.problems()
    if problems:
        raise MalformedOutput("; ".join(problems))
    return fact


class Verdict(str, Enum):
    SUFFICIENT_AS_IS = "SufficientAsIs"
    REFINE_QUERY = "RefineQuery"
    OVERHAUL = "Overhaul"


_VERDICT_FIELDS = {
    Verdict.SUFFICIENT_AS_IS: set(),
    Verdict.REFINE_QUERY: {"target_task", "new_query"},
    Verdict.OVERHAUL: {"prune_root", "injected_tasks"},
}
_OPTIONAL_FIELDS = {"target_task", "new_query", "prune_root", "injected_tasks"}


@dataclass(frozen=True)
class ReplanDecision:
    verdict: Verdict
    justification: str = ""
    target_task: str | None = None
    new_query: str | None = None
    prune_root: str | None = None
    injected_tasks: tuple[SubTask, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"verdict": self.verdict.value}
        if self.verdict is Verdict.REFINE_QUERY:
            out["target_task"] = self.target_task
            out["new_query"] = self.new_query
        elif self.verdict is Verdict.OVERHAUL:
            out["prune_root"] = self.prune_root
            out["injected_tasks"] = [
                {"id": t.id, "query": t.query, "deps": list(t.deps)} for t in self.injected_tasks
            ]
        out["justification"] = self.justification
        return out


def parse_decision(text: str) -> ReplanDecision:
    obj = extract_object(text)
    label = _str(obj, "verdict")
    try:
        verdict = Verdict(label)
    except ValueError:
        raise MalformedOutput(
            f"verdict {label!r} is not one of SufficientAsIs, RefineQuery, Overhaul"
        ) from None
    present = {k for k in _OPTIONAL_FIELDS if obj.get(k) not in (None, "", [])}
    required = _VERDICT_FIELDS[verdict]
    missing = required - present
    extra = present - required
    if missing:
        raise MalformedOutput(f"{label} requires {sorted(missing)}")
    if extra:
        raise MalformedOutput(f"{label} must not populate {sorted(extra)}")
    justification = _str(obj, "justification", required=False)
    if verdict is Verdict.REFINE_QUERY:
        return ReplanDecision(verdict, justification, target_task=_str(obj, "target_task"),
                              new_query=_str(obj, "new_query"))
    if verdict is Verdict.OVERHAUL:
        return ReplanDecision(verdict, justification, prune_root=_str(obj, "prune_root"),
                              injected_tasks=tuple(parse_subtasks(obj["injected_tasks"],
                                                                  "injected_tasks")))
    return ReplanDecision(verdict, justification)


def parse_answer(text: str) -> str:
    obj = extract_object(text)
    value = obj.get("answer")
    if not isinstance(value, str):
        raise MalformedOutput("field 'answer' must be a string")
    return value.strip()


def parse_judgement(text: str) -> bool:
    obj = extract_object(text)
    value = obj.get("correct")
    if not isinstance(value, bool):
        raise MalformedOutput("field 'correct' must be true or false")
    return value
