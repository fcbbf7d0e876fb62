"""Prompt templates for every LLM-backed role.

Each role has a fixed system prompt and a fixed ordering of context
sections. Bump ``PROMPT_VERSION`` whenever any template text changes; the
version is echoed into every trace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

PROMPT_VERSION = "reap-prompts/1"


class Role(str, Enum):
    DECOMPOSE = "decompose"
    EXTRACT_FACT = "extract_fact"
    REPLAN = "replan"
    SYNTHESIZE = "synthesize"
    JUDGE = "judge"


SECTION_ORDER: dict[Role, tuple[str, ...]] = {
    Role.DECOMPOSE: ("question",),
    Role.EXTRACT_FACT: ("query", "facts", "documents"),
    Role.REPLAN: ("question", "plan", "facts", "trigger", "trigger_task", "trigger_query",
                  "trigger_level", "feedback"),
    Role.SYNTHESIZE: ("question", "facts"),
    Role.JUDGE: ("question", "gold", "prediction"),
}

# sections hashed into the scripted-backend request key
SCRIPT_KEY_SECTIONS: dict[Role, tuple[str, ...]] = {
    Role.DECOMPOSE: ("question",),
    Role.EXTRACT_FACT: ("query",),
    Role.REPLAN: ("question", "trigger_task", "trigger_query", "trigger_level", "feedback"),
    Role.SYNTHESIZE: ("question",),
    Role.JUDGE: ("question", "gold", "prediction"),
}

BUDGETS: dict[Role, int] = {
    Role.DECOMPOSE: 768,
    Role.EXTRACT_FACT: 768,
    Role.REPLAN: 768,
    Role.SYNTHESIZE: 96,
    Role.JUDGE: 16,
}

_FENCE = "Reply with a single JSON object inside a ```json fenced block and nothing else."

SYSTEM_PROMPTS: dict[Role, str] = {
    Role.DECOMPOSE: f"""You are the Decomposer of a multi-hop question answering system.
Break the question into the smallest set of single-hop sub-questions that together answer it.
Each sub-task has an id ("p1", "p2", ...), a query, and the ids it depends on.
When a query needs the answer of an earlier sub-task, write the placeholder {{<id>.answer}}
(for example "Who directed {{p1.answer}}?") and list that id in deps.
Sub-tasks that do not depend on each other must not list each other in deps.
Schema: {{"tasks": [{{"id": str, "query": str, "deps": [str]}}]}}
{_FENCE}""",
    Role.EXTRACT_FACT: f"""You are the Fact Extractor of a multi-hop question answering system.
Answer the sub-query using only the retrieved documents; the known facts may help resolve references.
Return:
- statement: one concise, self-contained factual assertion;
- answers: the answer strings stated by the statement (several if the query has multiple valid answers);
- evidence: snippets copied verbatim from the documents that support the statement;
- reasoning: how the statement follows from the evidence;
- level: "DirectAnswer" if the documents answer the query, "PartialClue" if they only give a
  clue useful for later steps, "Failed" if they contain nothing relevant (then answers is empty).
Schema: {{"statement": str, "answers": [str], "evidence": [str], "reasoning": str,
"level": "DirectAnswer" | "PartialClue" | "Failed"}}
{_FENCE}""",
    Role.REPLAN: f"""You are the Re-Planner of a multi-hop question answering system.
A sub-task came back with a partial clue or no answer. Decide, in this order:
1. SufficientAsIs: the information already obtained is enough for the remaining steps
   toward the original question, so the sub-task counts as resolved.
2. RefineQuery: the failure is local (for example a badly phrased query); give target_task
   and a better new_query.
3. Overhaul: the reasoning path is wrong; give prune_root (an unresolved task to drop together
   with its dependents) and injected_tasks, a new sequence of sub-tasks. Injected tasks may
   depend on resolved tasks or on each other and use {{<id>.answer}} placeholders.
Populate only the fields required by the chosen verdict, plus justification.
Schema: {{"verdict": "SufficientAsIs" | "RefineQuery" | "Overhaul", "target_task": str,
"new_query": str, "prune_root": str, "injected_tasks": [{{"id": str, "query": str, "deps": [str]}}],
"justification": str}}
{_FENCE}""",
    Role.SYNTHESIZE: f"""You are the Synthesizer of a multi-hop question answering system.
Answer the original question from the collected facts. Give the shortest complete answer
(an entity, date, number or short phrase). If the facts list several valid answers, name all
of them. If the facts are insufficient, still give your best guess.
Schema: {{"answer": str}}
{_FENCE}""",
    Role.JUDGE: f"""You judge answers to questions. Decide whether the prediction is
semantically equivalent to the gold answer. Ignore formatting, word order and extra detail
that does not contradict the gold answer.
Schema: {{"correct": bool}}
{_FENCE}""",
}

_TITLES = {
    "question": "Question",
    "query": "Sub-query",
    "facts": "Known facts",
    "documents": "Retrieved documents",
    "plan": "Current plan",
    "trigger": "Latest fact",
    "trigger_task": "Sub-task id",
    "trigger_query": "Sub-task query",
    "trigger_level": "Fulfillment level",
    "feedback": "Engine feedback",
    "gold": "Gold answer",
    "prediction": "Prediction",
}


@dataclass(frozen=True)
class RoleRequest:
    role: Role
    context: dict[str, str]
    budget: int
    temperature: float = 0.0
    attempt: int = 0
    repair_notes: tuple[str, ...] = field(default_factory=tuple)

    def section(self, name: str) -> str:
        return self.context.get(name, "")


def render_messages(request: RoleRequest) -> list[dict[str, str]]:
    parts = []
    for name in SECTION_ORDER[request.role]:
        body = request.context.get(name, "")
        parts.append(f"### {_TITLES[name]}\n{body if body else '(none)'}")
    for note in request.repair_notes:
        parts.append(
            "### Your previous reply was rejected\n"
            f"{note}\nReturn a corrected JSON object that follows the schema."
        )
    return [
        {"role": "system", "content": SYSTEM_PROMPTS[request.role]},
        {"role": "user", "content": "\n\n".join(parts)},
    ]
