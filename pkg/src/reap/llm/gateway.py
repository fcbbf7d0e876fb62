"""Role operations over pluggable backends, with a bounded repair loop."""

from __future__ import annotations

import logging
from typing import Any, Callable, Mapping, Sequence, TypeVar

from ..errors import BackendUnavailable, ConfigError, InapplicableDecision, MalformedOutput, PlanError
from ..facts import Fact, FactsList, FulfillmentLevel, render_facts
from ..plan import TaskPlan, TaskStatus, inject_subtasks, prune_branch, render_plan
from .backends import Backend, script_key
from .parsing import (
    ReplanDecision,
    Verdict,
    parse_answer,
    parse_decision,
    parse_fact,
    parse_judgement,
    parse_plan,
)
from .prompts import BUDGETS, Role, RoleRequest, render_messages

log = logging.getLogger(__name__)

T = TypeVar("T")
AttemptLog = list  # list[dict]; gateway appends one record per backend attempt


def render_documents(docs: Sequence[Any]) -> str:
    return "\n\n".join(f"[{d.doc_id}] {d.title}\n{d.text}" for d in docs)


def render_trigger(fact: Fact, query: str) -> str:
    lines = [
        f"task: {fact.task_id}",
        f"query: {query}",
        f"statement: {fact.statement}",
        f"answers: {', '.join(fact.answers) if fact.answers else '(none)'}",
        f"level: {fact.level.value}",
    ]
    if fact.reasoning:
        lines.append(f"reasoning: {fact.reasoning}")
    return "\n".join(lines)


class Gateway:
    """Every LLM-backed role. Holds no engine state; each call is independent."""

    def __init__(self, backends: Mapping[Role, Backend], temperature: float = 0.0):
        self.backends = dict(backends)
        self.temperature = temperature

    def has_role(self, role: Role) -> bool:
        return role in self.backends

    def _backend(self, role: Role) -> Backend:
        try:
            return self.backends[role]
        except KeyError:
            raise ConfigError(f"no backend configured for role {role.value}") from None

    def _call(self, role: Role, context: dict[str, str], parse: Callable[[str], T],
              log_to: AttemptLog | None) -> T:
        backend = self._backend(role)
        retries = getattr(backend, "max_retries", 2)
        notes: list[str] = []
        last: MalformedOutput | None = None
        for attempt in range(retries + 1):
            request = RoleRequest(role, context, BUDGETS[role], self.temperature, attempt, tuple(notes))
            messages = render_messages(request)
            record: dict[str, Any] = {
                "type": "backend_attempt",
                "role": role.value,
                "attempt": attempt,
                "key": script_key(role, context),
                "prompt": messages[-1]["content"],
            }
            try:
                text = backend.complete(request, messages)
            except BackendUnavailable as exc:
                record.update(ok=False, error=f"BackendUnavailable: {exc}")
                if log_to is not None:
                    log_to.append(record)
                raise
            record["completion"] = text
            try:
                value = parse(text)
            except MalformedOutput as exc:
                record.update(ok=False, error=f"{type(exc).__name__}: {exc}")
                if log_to is not None:
                    log_to.append(record)
                log.debug("%s attempt %d rejected: %s", role.value, attempt, exc)
                if isinstance(exc, _FinalEmpty):
                    raise MalformedOutput(f"{role.value}: {exc}") from None
                notes.append(str(exc))
                last = exc
                continue
            record["ok"] = True
            if log_to is not None:
                log_to.append(record)
            return value
        assert last is not None
        raise type(last)(f"{role.value}: {last} (after {retries + 1} attempts)")

    # roles -------------------------------------------------------------------

    def decompose(self, question: str, log_to: AttemptLog | None = None) -> TaskPlan:
        if not question.strip():
            raise ValueError("question must be non-empty")
        return self._call(Role.DECOMPOSE, {"question": question}, parse_plan, log_to)

    def extract_fact(self, query: str, docs: Sequence[Any], facts: FactsList, *,
                     task_id: str, fact_id: str, log_to: AttemptLog | None = None) -> Fact:
        if not docs:
            raise ValueError("extract_fact needs at least one document")
        doc_ids = [d.doc_id for d in docs]
        context = {"query": query, "facts": render_facts(facts), "documents": render_documents(docs)}
        return self._call(
            Role.EXTRACT_FACT, context,
            lambda text: parse_fact(text, fact_id=fact_id, task_id=task_id, doc_ids=doc_ids),
            log_to,
        )

    def assess_and_replan(self, question: str, plan: TaskPlan, facts: FactsList, trigger: Fact,
                          *, feedback: str = "", log_to: AttemptLog | None = None) -> ReplanDecision:
        """Ask the Re-Planner what to do about a partial or failed fact.

        ``feedback`` carries engine notes (an escalated fork, a rejected
        earlier decision); a DirectAnswer trigger is accepted only with it.
        """
        if trigger.level is FulfillmentLevel.DIRECT_ANSWER and not feedback:
            raise ValueError("the Re-Planner handles PartialClue or Failed facts")
        query = plan.get(trigger.task_id).query
        context = {
            "question": question,
            "plan": render_plan(plan),
            "facts": render_facts(facts),
            "trigger": render_trigger(trigger, query),
            "trigger_task": trigger.task_id,
            "trigger_query": query,
            "trigger_level": trigger.level.value,
            "feedback": feedback,
        }
        decision = self._call(Role.REPLAN, context, parse_decision, log_to)
        try:
            check_applicable(plan, decision)
        except InapplicableDecision as exc:
            exc.decision = decision  # type: ignore[attr-defined]
            raise
        return decision

    def synthesize(self, question: str, facts: FactsList, log_to: AttemptLog | None = None) -> str:
        empties = 0

        def parse(text: str) -> str:
            nonlocal empties
            answer = parse_answer(text)
            if not answer:
                empties += 1
                if empties > 1:
                    raise _FinalEmpty("synthesizer returned an empty answer twice")
                raise MalformedOutput("field 'answer' must be non-empty")
            return answer

        context = {"question": question, "facts": render_facts(facts)}
        return self._call(Role.SYNTHESIZE, context, parse, log_to)

    def judge(self, question: str, gold: str, prediction: str,
              log_to: AttemptLog | None = None) -> bool:
        context = {"question": question, "gold": gold, "prediction": prediction}
        return self._call(Role.JUDGE, context, parse_judgement, log_to)


class _FinalEmpty(MalformedOutput):
    """Escapes the repair loop after the single permitted empty-answer re-prompt."""


def check_applicable(plan: TaskPlan, decision: ReplanDecision) -> None:
    if decision.verdict is Verdict.REFINE_QUERY:
        target = decision.target_task
        if target not in plan:
            raise InapplicableDecision(f"refine target {target!r} does not exist")
        task = plan.get(target)
        if task.status is TaskStatus.PRUNED:
            raise InapplicableDecision(f"refine target {target!r} is pruned")
        if task.status is TaskStatus.RESOLVED:
            raise InapplicableDecision(f"refine target {target!r} is already resolved")
    elif decision.verdict is Verdict.OVERHAUL:
        try:
            inject_subtasks(prune_branch(plan, decision.prune_root), decision.injected_tasks)
        except PlanError as exc:
            raise InapplicableDecision(f"overhaul cannot be applied: {exc}") from None
