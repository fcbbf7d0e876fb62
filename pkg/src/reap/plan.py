"""Task-plan data model and the deterministic plan transformations.

Plans are immutable values. Every transformation validates its input,
returns a new :class:`TaskPlan` with ``generation`` advanced by one and
leaves the argument untouched.

Placeholders take the form ``{<id>.answer}`` and are located by brace
scanning, not regular expressions, so ids may contain any character other
than braces (fork clones use ``<orig>#<k>``).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Sequence

from .errors import (
    CannotPruneResolved,
    CannotRefineResolved,
    IdCollision,
    PlanInvalid,
    PlanPreconditionError,
    RetryExhausted,
    TaskNotLive,
    TooManyBranches,
    UnknownTask,
)

DEFAULT_FORK_CAP = 4
DEFAULT_REFINE_CAP = 2

_ANSWER_SUFFIX = ".answer"


class TaskStatus(str, Enum):
    PENDING = "Pending"
    READY = "Ready"
    IN_PROGRESS = "InProgress"
    RESOLVED = "Resolved"
    FAILED = "Failed"
    PRUNED = "Pruned"


_UNRESOLVED = (TaskStatus.PENDING, TaskStatus.READY, TaskStatus.IN_PROGRESS)


@dataclass(frozen=True)
class SubTask:
    id: str
    query: str
    deps: tuple[str, ...] = ()
    status: TaskStatus = TaskStatus.PENDING
    fact_ref: str | None = None
    retries: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.deps, tuple):
            object.__setattr__(self, "deps", tuple(self.deps))
        if not isinstance(self.status, TaskStatus):
            object.__setattr__(self, "status", TaskStatus(self.status))

    @property
    def live(self) -> bool:
        return self.status is not TaskStatus.PRUNED

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "query": self.query,
            "deps": list(self.deps),
            "status": self.status.value,
        }
        if self.fact_ref is not None:
            out["fact_ref"] = self.fact_ref
        if self.retries:
            out["retries"] = self.retries
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SubTask":
        return cls(
            id=str(data["id"]),
            query=str(data["query"]),
            deps=tuple(str(d) for d in data.get("deps", ())),
            status=TaskStatus(data.get("status", TaskStatus.PENDING.value)),
            fact_ref=data.get("fact_ref"),
            retries=int(data.get("retries", 0)),
        )


@dataclass(frozen=True)
class TaskPlan:
    tasks: tuple[SubTask, ...] = ()
    generation: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.tasks, tuple):
            object.__setattr__(self, "tasks", tuple(self.tasks))

    @property
    def ids(self) -> list[str]:
        return [t.id for t in self.tasks]

    def get(self, task_id: str) -> SubTask:
        for t in self.tasks:
            if t.id == task_id:
                return t
        raise UnknownTask(f"unknown task {task_id!r}")

    def __contains__(self, task_id: object) -> bool:
        return any(t.id == task_id for t in self.tasks)

    def live_tasks(self) -> list[SubTask]:
        return [t for t in self.tasks if t.live]

    def to_dict(self) -> dict[str, Any]:
        return {"tasks": [t.to_dict() for t in self.tasks], "generation": self.generation}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TaskPlan":
        return cls(
            tasks=tuple(SubTask.from_dict(t) for t in data.get("tasks", ())),
            generation=int(data.get("generation", 0)),
        )

    def _evolve(self, tasks: Iterable[SubTask]) -> "TaskPlan":
        return TaskPlan(tasks=tuple(tasks), generation=self.generation + 1)


def placeholder(task_id: str) -> str:
    return "{" + task_id + _ANSWER_SUFFIX + "}"


def find_placeholders(query: str) -> list[str]:
    """Return the task ids named by ``{<id>.answer}`` placeholders, in order."""
    found: list[str] = []
    i = 0
    while True:
        start = query.find("{", i)
        if start < 0:
            return found
        end = query.find("}", start + 1)
        if end < 0:
            return found
        inner = query[start + 1 : end]
        nested = inner.rfind("{")
        if nested >= 0:
            # restart at the innermost opening brace
            i = start + 1 + nested
            continue
        if inner.endswith(_ANSWER_SUFFIX) and len(inner) > len(_ANSWER_SUFFIX):
            found.append(inner[: -len(_ANSWER_SUFFIX)])
        i = end + 1


# -- validation --------------------------------------------------------------


@dataclass
class ValidationResult:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def _find_cycles(tasks: Sequence[SubTask]) -> list[list[str]]:
    known = {t.id for t in tasks}
    deps = {t.id: [d for d in t.deps if d in known] for t in tasks}
    color: dict[str, int] = {}
    stack: list[str] = []
    cycles: list[list[str]] = []

    def visit(node: str) -> None:
        color[node] = 1
        stack.append(node)
        for d in deps[node]:
            c = color.get(d, 0)
            if c == 0:
                visit(d)
            elif c == 1:
                loop = stack[stack.index(d) :]
                start = loop.index(min(loop))
                cycles.append(loop[start:] + loop[:start])
        stack.pop()
        color[node] = 2

    for t in tasks:
        if color.get(t.id, 0) == 0:
            visit(t.id)
    return cycles


def validate_plan(plan: TaskPlan) -> ValidationResult:
    """Check every plan and sub-task invariant, reporting each violation."""
    result = ValidationResult()
    v = result.violations
    by_id: dict[str, SubTask] = {}
    for t in plan.tasks:
        if not t.id:
            v.append("empty task id")
        elif "{" in t.id or "}" in t.id:
            v.append(f"task id {t.id!r} contains a brace")
        if t.id in by_id:
            v.append(f"duplicate id {t.id}")
        by_id.setdefault(t.id, t)

    for t in plan.tasks:
        if len(set(t.deps)) != len(t.deps):
            v.append(f"duplicate dep in {t.id}")
        for d in t.deps:
            if d == t.id:
                continue  # reported as a cycle
            if d not in by_id:
                v.append(f"dangling dep {d} in {t.id}")
            elif t.live and not by_id[d].live:
                v.append(f"live task {t.id} depends on pruned {d}")
        for ref in find_placeholders(t.query):
            if ref not in t.deps:
                v.append(f"placeholder {{{ref}.answer}} in {t.id} not in deps")
        if t.status is TaskStatus.RESOLVED and t.fact_ref is None:
            v.append(f"resolved task {t.id} has no fact_ref")
        if t.status in _UNRESOLVED and t.fact_ref is not None:
            v.append(f"{t.status.value} task {t.id} has fact_ref")
        if t.retries < 0:
            v.append(f"negative retry count on {t.id}")

    for cycle in _find_cycles(plan.tasks):
        v.append("cycle " + "↔".join(cycle))
    return result


def _require_valid(plan: TaskPlan, context: str) -> None:
    result = validate_plan(plan)
    if not result.ok:
        raise PlanInvalid(f"{context}: " + "; ".join(result.violations), result.violations)


# -- queries -------------------------------------------------------------------


def dependents_closure(plan: TaskPlan, task_id: str) -> list[str]:
    """Live transitive dependents of ``task_id`` (excluding it), in plan order."""
    plan.get(task_id)
    children: dict[str, list[str]] = {}
    for t in plan.tasks:
        if t.live:
            for d in t.deps:
                children.setdefault(d, []).append(t.id)
    seen: set[str] = set()
    queue = deque([task_id])
    while queue:
        for child in children.get(queue.popleft(), ()):
            if child not in seen:
                seen.add(child)
                queue.append(child)
    seen.discard(task_id)
    return [t.id for t in plan.tasks if t.id in seen]


def ready_set(plan: TaskPlan) -> list[SubTask]:
    """Pending tasks whose dependencies are all resolved, in ascending id order."""
    _require_valid(plan, "ready_set")
    status = {t.id: t.status for t in plan.tasks}
    ready = [
        t
        for t in plan.tasks
        if t.status is TaskStatus.PENDING
        and all(status[d] is TaskStatus.RESOLVED for d in t.deps)
    ]
    for t in ready:
        refs = find_placeholders(t.query)
        if refs:
            raise PlanInvalid(
                f"ready task {t.id} still holds placeholders {refs}; substitute first",
                [f"unsubstituted placeholder in {t.id}"],
            )
    return sorted(ready, key=lambda t: t.id)


def is_fully_resolved(plan: TaskPlan) -> bool:
    return all(t.status is TaskStatus.RESOLVED for t in plan.live_tasks())


# -- transformations -----------------------------------------------------------


def _live(plan: TaskPlan, task_id: str) -> SubTask:
    task = plan.get(task_id)
    if not task.live:
        raise TaskNotLive(f"task {task_id!r} is pruned")
    return task


def substitute_placeholders(plan: TaskPlan, task_id: str, answer: str) -> TaskPlan:
    """Replace ``{task_id.answer}`` with ``answer`` in every unresolved live task."""
    plan.get(task_id)
    if not answer:
        raise PlanPreconditionError("substitution answer must be non-empty")
    token = placeholder(task_id)
    tasks = []
    for t in plan.tasks:
        if t.live and t.status is not TaskStatus.RESOLVED and token in t.query:
            t = replace(t, query=t.query.replace(token, answer))
        tasks.append(t)
    return plan._evolve(tasks)


def mark_in_progress(plan: TaskPlan, task_ids: Iterable[str]) -> TaskPlan:
    wanted = set(task_ids)
    for tid in wanted:
        if _live(plan, tid).status is not TaskStatus.PENDING:
            raise PlanPreconditionError(f"task {tid!r} is not pending")
    return plan._evolve(
        replace(t, status=TaskStatus.IN_PROGRESS) if t.id in wanted else t for t in plan.tasks
    )


def resolve_task(plan: TaskPlan, task_id: str, fact_ref: str) -> TaskPlan:
    task = _live(plan, task_id)
    if task.status is TaskStatus.RESOLVED:
        raise PlanPreconditionError(f"task {task_id!r} is already resolved")
    if not fact_ref:
        raise PlanPreconditionError("fact_ref must be non-empty")
    return plan._evolve(
        replace(t, status=TaskStatus.RESOLVED, fact_ref=fact_ref) if t.id == task_id else t
        for t in plan.tasks
    )


def fail_task(plan: TaskPlan, task_id: str) -> TaskPlan:
    task = _live(plan, task_id)
    if task.status is TaskStatus.RESOLVED:
        raise PlanPreconditionError(f"task {task_id!r} is already resolved")
    return plan._evolve(
        replace(t, status=TaskStatus.FAILED) if t.id == task_id else t for t in plan.tasks
    )


def fork_branches(
    plan: TaskPlan,
    task_id: str,
    answers: Sequence[str],
    fork_cap: int = DEFAULT_FORK_CAP,
) -> TaskPlan:
    """Clone the dependent closure of a resolved task once per answer.

    Clone ids are ``<orig>#<k>`` (k is 1-based). Inside each branch deps and
    placeholders pointing into the closure are remapped to the sibling
    clones, and ``{task_id.answer}`` is replaced with that branch's answer.
    The originals in the closure are pruned.
    """
    task = _live(plan, task_id)
    if task.status is not TaskStatus.RESOLVED:
        raise PlanPreconditionError(f"task {task_id!r} must be resolved before forking")
    if len(answers) < 2:
        raise PlanPreconditionError("forking needs at least two answers")
    if len(answers) > fork_cap:
        raise TooManyBranches(f"{len(answers)} answers exceed fork cap {fork_cap}")
    if any(not a for a in answers):
        raise PlanPreconditionError("fork answers must be non-empty")

    closure = dependents_closure(plan, task_id)
    if not closure:
        return plan._evolve(plan.tasks)
    in_closure = set(closure)
    originals = [t for t in plan.tasks if t.id in in_closure]
    for t in originals:
        if t.status is TaskStatus.RESOLVED:
            raise PlanPreconditionError(f"dependent {t.id!r} is already resolved")

    existing = set(plan.ids)
    token = placeholder(task_id)
    clones: list[SubTask] = []
    for k, answer in enumerate(answers, start=1):
        suffix = f"#{k}"
        for t in originals:
            query = t.query.replace(token, answer)
            for d in t.deps:
                if d in in_closure:
                    query = query.replace(placeholder(d), placeholder(d + suffix))
            clone = SubTask(
                id=t.id + suffix,
                query=query,
                deps=tuple(d + suffix if d in in_closure else d for d in t.deps),
            )
            if clone.id in existing:
                raise IdCollision(f"fork clone id {clone.id!r} already exists")
            existing.add(clone.id)
            clones.append(clone)

    kept = [replace(t, status=TaskStatus.PRUNED) if t.id in in_closure else t for t in plan.tasks]
    out = plan._evolve(kept + clones)
    _require_valid(out, "fork_branches")
    return out


def prune_branch(plan: TaskPlan, task_id: str) -> TaskPlan:
    """Prune ``task_id`` together with all of its live transitive dependents."""
    task = _live(plan, task_id)
    if task.status is TaskStatus.RESOLVED:
        raise CannotPruneResolved(f"task {task_id!r} is resolved")
    doomed = {task_id, *dependents_closure(plan, task_id)}
    for t in plan.tasks:
        if t.id in doomed and t.status is TaskStatus.RESOLVED:
            raise CannotPruneResolved(f"dependent {t.id!r} is resolved")
    return plan._evolve(
        replace(t, status=TaskStatus.PRUNED) if t.id in doomed else t for t in plan.tasks
    )


def inject_subtasks(plan: TaskPlan, new_tasks: Sequence[SubTask]) -> TaskPlan:
    """Append new pending tasks; deps may name live tasks or other new tasks."""
    existing = {t.id: t for t in plan.tasks}
    new_ids: set[str] = set()
    for t in new_tasks:
        if t.id in existing or t.id in new_ids:
            raise IdCollision(f"task id {t.id!r} already in use")
        new_ids.add(t.id)
    for t in new_tasks:
        for d in t.deps:
            if d in existing and not existing[d].live:
                raise PlanInvalid(f"{t.id} depends on pruned task {d}", [f"pruned dep {d}"])
    fresh = [SubTask(id=t.id, query=t.query, deps=t.deps) for t in new_tasks]
    out = plan._evolve(list(plan.tasks) + fresh)
    _require_valid(out, "inject_subtasks")
    return out


def refine_query(
    plan: TaskPlan,
    task_id: str,
    new_query: str,
    refine_cap: int = DEFAULT_REFINE_CAP,
) -> TaskPlan:
    """Replace an unresolved task's query and send it back to Pending."""
    task = _live(plan, task_id)
    if task.status is TaskStatus.RESOLVED:
        raise CannotRefineResolved(f"task {task_id!r} is resolved")
    if not new_query:
        raise PlanPreconditionError("refined query must be non-empty")
    if task.retries >= refine_cap:
        raise RetryExhausted(f"task {task_id!r} already refined {task.retries} times")
    updated = replace(task, query=new_query, status=TaskStatus.PENDING, retries=task.retries + 1)
    out = plan._evolve(updated if t.id == task_id else t for t in plan.tasks)
    _require_valid(out, "refine_query")
    return out


def render_plan(plan: TaskPlan) -> str:
    """Plain-text plan listing used inside prompts."""
    lines = []
    for t in plan.tasks:
        deps = ", ".join(t.deps) if t.deps else "-"
        line = f"{t.id} [{t.status.value}] {t.query} (deps: {deps})"
        if t.fact_ref:
            line += f" -> {t.fact_ref}"
        lines.append(line)
    return "\n".join(lines)


# operation registry used for trace replay
OPERATIONS = {
    "substitute": lambda p, a: substitute_placeholders(p, a["task_id"], a["answer"]),
    "fork": lambda p, a: fork_branches(p, a["task_id"], a["answers"], a.get("fork_cap", DEFAULT_FORK_CAP)),
    "prune": lambda p, a: prune_branch(p, a["task_id"]),
    "inject": lambda p, a: inject_subtasks(p, [SubTask.from_dict(t) for t in a["tasks"]]),
    "refine": lambda p, a: refine_query(p, a["task_id"], a["new_query"], a.get("refine_cap", DEFAULT_REFINE_CAP)),
    "start": lambda p, a: mark_in_progress(p, a["task_ids"]),
    "resolve": lambda p, a: resolve_task(p, a["task_id"], a["fact_ref"]),
    "fail": lambda p, a: fail_task(p, a["task_id"]),
}


def apply_operation(plan: TaskPlan, op: str, args: dict[str, Any]) -> TaskPlan:
    try:
        fn = OPERATIONS[op]
    except KeyError:
        raise PlanPreconditionError(f"unknown plan operation {op!r}") from None
    return fn(plan, args)
