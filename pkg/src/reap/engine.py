"""The recursive plan-and-extract loop.

One :class:`Engine` serves any number of questions; each :meth:`Engine.run`
owns its plan and facts list and returns the answer with a full trace.

An iteration is one batch: every ready sub-task is retrieved for and
extracted in the same iteration, and the resulting facts are merged and
dispatched in ascending task-id order so the outcome does not depend on
completion order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

from .config import Config, EngineSettings, build_gateway, build_retriever
from .errors import (
    DecomposeFailed,
    InapplicableDecision,
    MalformedOutput,
    PlanError,
    ReapError,
    TooManyBranches,
    attach_trace,
)
from .facts import (
    Fact,
    FactsList,
    FulfillmentLevel,
    GroundingVerdict,
    add_fact,
    verify_grounding,
)
from .llm.gateway import Gateway
from .llm.parsing import ReplanDecision, Verdict
from .plan import (
    SubTask,
    TaskPlan,
    TaskStatus,
    apply_operation,
    find_placeholders,
    is_fully_resolved,
    ready_set,
)
from .retrieval import Document, Retriever
from .trace import Trace

log = logging.getLogger(__name__)


class RunStatus(str, Enum):
    RUNNING = "Running"
    SYNTHESIZING = "Synthesizing"
    DONE = "Done"
    ABORTED = "Aborted"


class Route(str, Enum):
    PLAN_UPDATER = "PlanUpdater"
    RE_PLANNER = "RePlanner"


@dataclass(frozen=True)
class EngineState:
    question: str
    plan: TaskPlan = field(default_factory=TaskPlan)
    facts: FactsList = field(default_factory=FactsList)
    iteration: int = 0
    status: RunStatus = RunStatus.RUNNING


def dispatch(fact: Fact) -> Route:
    if fact.level is FulfillmentLevel.DIRECT_ANSWER:
        return Route.PLAN_UPDATER
    return Route.RE_PLANNER


def ground_fact(fact: Fact, docs: Sequence[Document]) -> tuple[Fact, GroundingVerdict]:
    """Check evidence against the retrieved docs; ungrounded facts become Failed."""
    verdict = verify_grounding(fact, docs)
    if not verdict.grounded and fact.level is not FulfillmentLevel.FAILED:
        fact = replace(fact, level=FulfillmentLevel.FAILED, answers=())
    return fact, verdict


def answer_value(fact: Fact) -> str:
    """Text substituted for a placeholder once the task a fact answers is resolved."""
    if len(fact.answers) == 1:
        return fact.answers[0]
    if fact.answers:
        return ", ".join(fact.answers)
    return fact.statement


class _PlanTxn:
    """Applies plan operations to a local copy, committing events only on success."""

    def __init__(self, plan: TaskPlan):
        self.plan = plan
        self.events: list[dict[str, Any]] = []

    def apply(self, op: str, args: dict[str, Any]) -> TaskPlan:
        self.plan = apply_operation(self.plan, op, args)
        self.events.append({"type": "plan", "op": op, "args": args,
                            "generation": self.plan.generation, "plan": self.plan.to_dict()})
        return self.plan


@dataclass
class _ActionResult:
    task: SubTask
    fact: Fact | None
    docs: list[Document]
    events: list[dict[str, Any]]
    error: ReapError | None = None


class Engine:
    def __init__(self, gateway: Gateway, retriever: Retriever,
                 settings: EngineSettings | None = None, config_snapshot: dict[str, Any] | None = None):
        self.gateway = gateway
        self.retriever = retriever
        self.settings = settings or EngineSettings()
        self.config_snapshot = config_snapshot or {"engine": self.settings.__dict__.copy()}

    @classmethod
    def from_config(cls, config: Config) -> "Engine":
        return cls(build_gateway(config), build_retriever(config), config.engine, config.to_dict())

    # -- main loop ---------------------------------------------------------

    def run(self, question: str, gold: Sequence[str] | None = None) -> tuple[str, Trace]:
        trace = Trace(question=question, config=self.config_snapshot,
                      gold=list(gold) if gold is not None else None)
        state = EngineState(question)
        try:
            state = self._decompose(state, trace)
            cause = None
            while cause is None:
                ready = ready_set(state.plan)
                if not ready:
                    cause = "resolved" if is_fully_resolved(state.plan) else "deadlock"
                elif state.iteration >= self.settings.max_iterations:
                    cause = "budget"
                else:
                    state = self._iterate(state, ready, trace)
            trace.termination = cause
            trace.emit({"type": "termination", "cause": cause, "iteration": state.iteration,
                        "pending": [t.id for t in state.plan.live_tasks()
                                    if t.status is not TaskStatus.RESOLVED]})
            state = replace(state, status=RunStatus.SYNTHESIZING)
            attempts: list[dict[str, Any]] = []
            try:
                answer = self.gateway.synthesize(question, state.facts, log_to=attempts)
            finally:
                trace.extend(attempts)
            trace.emit({"type": "answer", "answer": answer})
            trace.answer = answer
            state = replace(state, status=RunStatus.DONE)
            return answer, trace
        except ReapError as exc:
            state = replace(state, status=RunStatus.ABORTED)
            trace.emit({"type": "error", "error": type(exc).__name__, "message": str(exc)})
            raise attach_trace(exc, trace)
        finally:
            trace.status = state.status.value
            trace.iterations = state.iteration
            trace.finish()

    def _decompose(self, state: EngineState, trace: Trace) -> EngineState:
        attempts: list[dict[str, Any]] = []
        try:
            plan = self.gateway.decompose(state.question, log_to=attempts)
        except MalformedOutput as exc:
            raise DecomposeFailed(str(exc)) from exc
        finally:
            trace.extend(attempts)
        trace.emit({"type": "plan", "op": "init", "args": {}, "generation": plan.generation,
                    "plan": plan.to_dict(), "retries": len(attempts) - 1})
        return replace(state, plan=plan)

    def _iterate(self, state: EngineState, ready: list[SubTask], trace: Trace) -> EngineState:
        iteration = state.iteration + 1
        trace.emit({"type": "iteration", "iteration": iteration, "actions": [t.id for t in ready]})
        state = replace(state, iteration=iteration)
        state = self._commit(state, trace, "start", {"task_ids": [t.id for t in ready]})
        base = len(state.facts)
        jobs = [(task, f"f{base + n}") for n, task in enumerate(ready, start=1)]
        if self.settings.action_workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self.settings.action_workers) as pool:
                results = list(pool.map(lambda j: self._act(j[0], j[1], state.facts), jobs))
        else:
            results = [self._act(task, fid, state.facts) for task, fid in jobs]
        results.sort(key=lambda r: r.task.id)
        for result in results:
            if result.error is not None:
                # keep what was recorded for every action before giving up
                for r in results:
                    trace.extend(r.events)
                raise result.error
        for result in results:
            trace.extend(result.events)
            state = self._absorb(state, result, trace)
        return state

    def _act(self, task: SubTask, fact_id: str, facts: FactsList) -> _ActionResult:
        """Retrieve and extract for one sub-task; touches no shared state."""
        events: list[dict[str, Any]] = []
        docs = self.retriever.search(task.query, self.settings.top_k)
        events.append({"type": "retrieval", "task_id": task.id, "query": task.query,
                       "doc_ids": [d.doc_id for d in docs],
                       "scores": [d.score for d in docs]})
        if not docs:
            fact = Fact(fact_id=fact_id, task_id=task.id, level=FulfillmentLevel.FAILED,
                        statement=f"No documents were retrieved for: {task.query}",
                        reasoning="retrieval returned no documents")
            return _ActionResult(task, fact, docs, events)
        try:
            fact = self.gateway.extract_fact(task.query, docs, facts, task_id=task.id,
                                             fact_id=fact_id, log_to=events)
        except ReapError as exc:
            return _ActionResult(task, None, docs, events, exc)
        return _ActionResult(task, fact, docs, events)

    def _absorb(self, state: EngineState, result: _ActionResult, trace: Trace) -> EngineState:
        assert result.fact is not None
        fact, verdict = ground_fact(result.fact, result.docs)
        state = replace(state, facts=add_fact(state.facts, fact))
        event: dict[str, Any] = {"type": "fact", "fact": fact.to_dict(), "grounding": verdict.to_dict()}
        if fact.level is not result.fact.level:
            event["downgraded_from"] = result.fact.level.value
        trace.emit(event)
        route = dispatch(fact)
        dispatched: dict[str, Any] = {"type": "dispatch", "fact_id": fact.fact_id,
                                      "task_id": fact.task_id, "route": route.value}
        if not state.plan.get(fact.task_id).live:
            # pruned by a decision taken earlier in this batch
            trace.emit({**dispatched, "skipped": "task pruned"})
            return state
        trace.emit(dispatched)
        if route is Route.PLAN_UPDATER:
            try:
                return self.apply_plan_update(state, fact, trace)
            except TooManyBranches as exc:
                trace.emit({"type": "escalation", "task_id": fact.task_id,
                            "reason": "TooManyBranches", "message": str(exc)})
                return self._replan(state, fact, trace,
                                    feedback=f"TooManyBranches: {exc}. Choose a narrower path.")
        return self._replan(state, fact, trace)

    # -- plan updater ----------------------------------------------------------

    def apply_plan_update(self, state: EngineState, trigger: Fact, trace: Trace) -> EngineState:
        """Resolve the task, then substitute (one answer) or fork (several)."""
        if trigger.level is not FulfillmentLevel.DIRECT_ANSWER:
            raise ValueError("the Plan Updater only takes DirectAnswer facts")
        if len(trigger.answers) > self.settings.fork_cap:
            raise TooManyBranches(
                f"{len(trigger.answers)} answers exceed fork cap {self.settings.fork_cap}")
        txn = _PlanTxn(state.plan)
        txn.apply("resolve", {"task_id": trigger.task_id, "fact_ref": trigger.fact_id})
        if len(trigger.answers) == 1:
            txn.apply("substitute", {"task_id": trigger.task_id, "answer": trigger.answers[0]})
        else:
            before = {t.id for t in txn.plan.tasks if not t.live}
            txn.apply("fork", {"task_id": trigger.task_id, "answers": list(trigger.answers),
                               "fork_cap": self.settings.fork_cap})
            pruned = {t.id for t in txn.plan.tasks if not t.live} - before
            state = replace(state, facts=state.facts.deactivate(pruned))
        trace.extend(txn.events)
        return replace(state, plan=txn.plan)

    # -- re-planner --------------------------------------------------------------

    def _replan(self, state: EngineState, trigger: Fact, trace: Trace, feedback: str = "") -> EngineState:
        """Ask for a decision; one re-prompt if it cannot be applied, then give up on the task."""
        for _ in range(2):
            attempts: list[dict[str, Any]] = []
            try:
                decision = self.gateway.assess_and_replan(
                    state.question, state.plan, state.facts, trigger,
                    feedback=feedback, log_to=attempts)
            except ReapError as exc:
                trace.extend(attempts)
                if isinstance(exc, InapplicableDecision):
                    rejected = getattr(exc, "decision", None)
                    trace.emit({"type": "replan", "trigger": trigger.fact_id,
                                "decision": rejected.to_dict() if rejected else None,
                                "applied": False, "error": str(exc)})
                    feedback = f"Your previous decision was rejected: {exc}"
                    continue
                if isinstance(exc, MalformedOutput):
                    trace.emit({"type": "replan_error", "trigger": trigger.fact_id, "error": str(exc)})
                    break
                raise
            trace.extend(attempts)
            try:
                new_state, events = self._apply_replan(state, decision, trigger)
            except (PlanError, InapplicableDecision) as exc:
                trace.emit({"type": "replan", "trigger": trigger.fact_id,
                            "decision": decision.to_dict(), "applied": False, "error": str(exc)})
                feedback = f"Your previous decision was rejected: {type(exc).__name__}: {exc}"
                continue
            trace.emit({"type": "replan", "trigger": trigger.fact_id,
                        "decision": decision.to_dict(), "applied": True})
            trace.extend(events)
            return new_state
        trace.emit({"type": "replan_abort", "task_id": trigger.task_id})
        task = state.plan.get(trigger.task_id)
        if task.live and task.status is not TaskStatus.RESOLVED:
            return self._commit(state, trace, "fail", {"task_id": task.id})
        return state

    def apply_replan(self, state: EngineState, decision: ReplanDecision, trigger: Fact,
                     trace: Trace) -> EngineState:
        new_state, events = self._apply_replan(state, decision, trigger)
        trace.extend(events)
        return new_state

    def _apply_replan(self, state: EngineState, decision: ReplanDecision,
                      trigger: Fact) -> tuple[EngineState, list[dict[str, Any]]]:
        txn = _PlanTxn(state.plan)
        facts = state.facts
        task = state.plan.get(trigger.task_id)
        if decision.verdict is Verdict.SUFFICIENT_AS_IS:
            if not task.live or task.status is TaskStatus.RESOLVED:
                raise InapplicableDecision(f"task {task.id} cannot be resolved now")
            txn.apply("resolve", {"task_id": task.id, "fact_ref": trigger.fact_id})
            txn.apply("substitute", {"task_id": task.id, "answer": answer_value(trigger)})
        elif decision.verdict is Verdict.REFINE_QUERY:
            txn.apply("refine", {"task_id": decision.target_task, "new_query": decision.new_query,
                                 "refine_cap": self.settings.refine_cap})
            # facts gathered under the old query no longer describe the task
            facts = facts.deactivate({decision.target_task})
        else:
            before = {t.id for t in txn.plan.tasks if not t.live}
            txn.apply("prune", {"task_id": decision.prune_root})
            pruned = {t.id for t in txn.plan.tasks if not t.live} - before
            facts = facts.deactivate(pruned)
            txn.apply("inject", {"tasks": [
                {"id": t.id, "query": t.query, "deps": list(t.deps)} for t in decision.injected_tasks]})
        self._ground_placeholders(txn, facts)
        current = txn.plan.get(task.id)
        if current.status is TaskStatus.IN_PROGRESS:
            # the trigger task was neither refined nor pruned: it cannot make progress
            txn.apply("fail", {"task_id": task.id})
        return replace(state, plan=txn.plan, facts=facts), txn.events

    def _ground_placeholders(self, txn: _PlanTxn, facts: FactsList) -> None:
        """Substitute placeholders that point at already resolved tasks."""
        status = {t.id: t for t in txn.plan.tasks}
        refs = sorted({
            ref for t in txn.plan.tasks
            if t.live and t.status is not TaskStatus.RESOLVED
            for ref in find_placeholders(t.query)
            if ref in status and status[ref].status is TaskStatus.RESOLVED
        })
        for ref in refs:
            fact = facts.get(status[ref].fact_ref)  # type: ignore[arg-type]
            txn.apply("substitute", {"task_id": ref, "answer": answer_value(fact)})

    def _commit(self, state: EngineState, trace: Trace, op: str, args: dict[str, Any]) -> EngineState:
        txn = _PlanTxn(state.plan)
        txn.apply(op, args)
        trace.extend(txn.events)
        return replace(state, plan=txn.plan)


__all__ = ["Engine", "EngineState", "Route", "RunStatus", "answer_value", "dispatch", "ground_fact"]
