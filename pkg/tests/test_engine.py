import pytest

from reap.config import EngineSettings
from reap.engine import Engine, EngineState, Route, RunStatus, answer_value, dispatch, ground_fact
from reap.errors import BackendUnavailable, DecomposeFailed, MalformedRecord
from reap.facts import Fact, FactsList, FulfillmentLevel, add_fact
from reap.llm import Gateway, Role, ScriptedBackend, script_key
from reap.plan import TaskStatus, mark_in_progress, ready_set
from reap.retrieval import Document, StaticRetriever
from reap.trace import Trace, comparison_json, replay_plan

DA, PC, FL = FulfillmentLevel.DIRECT_ANSWER, FulfillmentLevel.PARTIAL_CLUE, FulfillmentLevel.FAILED
DOC = Document("d1", "t", "alpha beta gamma delta epsilon")
QUESTION = "What is the question?"


def task(id, query, deps=()):
    return {"id": id, "query": query, "deps": list(deps)}


def extraction(answers, level="DirectAnswer", evidence=("beta gamma",)):
    return {"statement": "s " + " ".join(answers), "answers": list(answers),
            "evidence": list(evidence) if level != "Failed" else [], "level": level}


def make_engine(entries, docs=(DOC,), fallbacks=None, **settings):
    script = {"entries": entries, "fallbacks": fallbacks or {}}
    backend = ScriptedBackend(script)
    gw = Gateway({r: backend for r in (Role.DECOMPOSE, Role.EXTRACT_FACT, Role.REPLAN, Role.SYNTHESIZE)})
    return Engine(gw, StaticRetriever(default=list(docs)), EngineSettings(**settings))


def decompose(*tasks):
    return {"role": "decompose", "match": {"question": QUESTION}, "response": {"tasks": list(tasks)}}


def extract(query, response):
    return {"role": "extract_fact", "match": {"query": query}, "response": response}


def replan(task_id, query, level, response, feedback=""):
    match = {"question": QUESTION, "trigger_task": task_id, "trigger_query": query, "trigger_level": level}
    if feedback:
        match["feedback"] = feedback
    return {"role": "replan", "match": match, "response": response}


SYNTH = {"role": "synthesize", "match": {"question": QUESTION}, "response": {"answer": "final"}}


def decisions(trace):
    return [e for e in trace.events if e["type"] == "replan"]


def replay_ok(trace):
    replayed, recorded = replay_plan(trace)
    return replayed == recorded


class TestDispatch:
    def test_table(self):
        expected = {DA: Route.PLAN_UPDATER, PC: Route.RE_PLANNER, FL: Route.RE_PLANNER}
        for level in FulfillmentLevel:
            answers = ("a",) if level is not FL else ()
            evidence = ("e",) if level is DA else ()
            assert dispatch(Fact("f", "p", "s", level, answers, evidence)) is expected[level]

    def test_ungrounded_direct_is_downgraded(self):
        f = Fact("f", "p", "s", DA, ("a",), ("not in the doc",))
        out, verdict = ground_fact(f, [DOC])
        assert out.level is FL and out.answers == ()
        assert verdict.ungrounded == ["not in the doc"]
        assert dispatch(out) is Route.RE_PLANNER

    def test_grounded_untouched(self):
        f = Fact("f", "p", "s", DA, ("a",), ("beta  gamma",))
        assert ground_fact(f, [DOC])[0] is f

    def test_answer_value(self):
        assert answer_value(Fact("f", "p", "s", DA, ("a",), ("e",))) == "a"
        assert answer_value(Fact("f", "p", "s", PC, ("a", "b"))) == "a, b"
        assert answer_value(Fact("f", "p", "stmt", PC)) == "stmt"


class TestLoop:
    def test_two_hop(self):
        eng = make_engine([
            decompose(task("p1", "first?"), task("p2", "second {p1.answer}?", ["p1"])),
            extract("first?", extraction(["A"])),
            extract("second A?", extraction(["B"])),
            SYNTH,
        ])
        answer, trace = eng.run(QUESTION)
        assert answer == "final" and trace.iterations == 2
        assert trace.status == "Done" and trace.termination == "resolved"
        assert [e["query"] for e in trace.of_type("retrieval")] == ["first?", "second A?"]
        assert replay_ok(trace)

    def test_single_answer_makes_dependent_ready(self):
        eng = make_engine([decompose(task("p1", "first?"), task("p2", "x {p1.answer}", ["p1"]))])
        plan = mark_in_progress(eng.gateway.decompose(QUESTION), ["p1"])
        fact = Fact("f1", "p1", "s", DA, ("Parasite",), ("e",))
        state = EngineState(QUESTION, plan=plan, facts=add_fact(FactsList(), fact))
        state = eng.apply_plan_update(state, fact, Trace(QUESTION))
        assert [t.id for t in ready_set(state.plan)] == ["p2"]
        assert state.plan.get("p2").query == "x Parasite"

    def test_fork_batch(self):
        eng = make_engine([
            decompose(task("p1", "which?"), task("p2", "who {p1.answer}?", ["p1"])),
            extract("which?", extraction(["A", "B"])),
            extract("who A?", extraction(["a"])),
            extract("who B?", extraction(["b"])),
            SYNTH,
        ])
        _, trace = eng.run(QUESTION)
        assert trace.iterations == 2
        assert trace.of_type("iteration")[1]["actions"] == ["p2#1", "p2#2"]
        final = replay_plan(trace)[0]
        assert final.get("p2").status is TaskStatus.PRUNED
        assert replay_ok(trace)

    def test_too_many_branches_escalates(self):
        feedback = "TooManyBranches: 5 answers exceed fork cap 4. Choose a narrower path."
        eng = make_engine([
            decompose(task("p1", "which?"), task("p2", "who {p1.answer}?", ["p1"])),
            extract("which?", extraction(list("ABCDE"))),
            replan("p1", "which?", "DirectAnswer",
                   {"verdict": "RefineQuery", "target_task": "p1", "new_query": "which one?"}, feedback),
            extract("which one?", extraction(["A"])),
            extract("who A?", extraction(["a"])),
            SYNTH,
        ])
        answer, trace = eng.run(QUESTION)
        assert answer == "final"
        assert len(trace.of_type("escalation")) == 1
        assert decisions(trace)[0]["decision"]["verdict"] == "RefineQuery"
        assert trace.iterations == 3 and trace.termination == "resolved"
        assert replay_ok(trace)

    def test_sufficient_as_is(self):
        eng = make_engine([
            decompose(task("p1", "first?"), task("p2", "then {p1.answer}", ["p1"])),
            extract("first?", extraction(["clue"], level="PartialClue")),
            replan("p1", "first?", "PartialClue", {"verdict": "SufficientAsIs"}),
            extract("then clue", extraction(["B"])),
            SYNTH,
        ])
        _, trace = eng.run(QUESTION)
        plans = [e for e in trace.of_type("plan") if e["op"] == "resolve"]
        assert plans[0]["args"]["task_id"] == "p1"
        assert trace.of_type("plan")[-1]["plan"]["tasks"][0]["status"] == "Resolved"
        assert len(trace.of_type("plan")[-1]["plan"]["tasks"]) == 2  # no new sub-tasks

    def test_refine_exactly_one_decision(self):
        eng = make_engine([
            decompose(task("p1", "first?"), task("p2", "bad {p1.answer}", ["p1"])),
            extract("first?", extraction(["A"])),
            replan("p2", "bad A", "Failed",
                   {"verdict": "RefineQuery", "target_task": "p2", "new_query": "good A"}),
            extract("good A", extraction(["B"])),
            SYNTH,
        ], fallbacks={"extract_fact": extraction([], level="Failed")})
        _, trace = eng.run(QUESTION)
        ds = decisions(trace)
        assert len(ds) == 1 and ds[0]["decision"]["verdict"] == "RefineQuery"
        assert trace.termination == "resolved" and trace.iterations == 3

    def test_overhaul_grows_plan(self):
        eng = make_engine([
            decompose(task("p1", "first?"), task("p2", "wrong {p1.answer}", ["p1"])),
            extract("first?", extraction(["A"])),
            replan("p2", "wrong A", "Failed", {
                "verdict": "Overhaul", "prune_root": "p2",
                "injected_tasks": [task("n1", "new {p1.answer}", ["p1"]), task("n2", "then {n1.answer}", ["n1"])]}),
            extract("new A", extraction(["X"])),
            extract("then X", extraction(["Y"])),
            SYNTH,
        ], fallbacks={"extract_fact": extraction([], level="Failed")})
        _, trace = eng.run(QUESTION)
        inject = [e for e in trace.of_type("plan") if e["op"] == "inject"][0]
        live = [t for t in inject["plan"]["tasks"] if t["status"] != "Pruned"]
        assert [t["id"] for t in live] == ["p1", "n1", "n2"]
        assert "p2" not in {a for it in trace.of_type("iteration")[2:] for a in it["actions"]}
        assert trace.termination == "resolved" and replay_ok(trace)

    def test_inapplicable_refine_reprompts(self):
        bad = {"verdict": "RefineQuery", "target_task": "ghost", "new_query": "x"}
        eng = make_engine([
            decompose(task("p1", "first?")),
            replan("p1", "first?", "Failed", bad),
            replan("p1", "first?", "Failed", bad,
                   feedback="Your previous decision was rejected: refine target 'ghost' does not exist"),
            SYNTH,
        ], fallbacks={"extract_fact": extraction([], level="Failed")})
        answer, trace = eng.run(QUESTION)
        ds = decisions(trace)
        assert [d["applied"] for d in ds] == [False, False]
        assert len(trace.of_type("replan_abort")) == 1
        assert trace.termination == "deadlock" and answer == "final"

    def test_budget(self):
        eng = make_engine([
            decompose(task("p1", "q0")),
            replan("p1", "q0", "Failed", {"verdict": "RefineQuery", "target_task": "p1", "new_query": "q1"}),
            replan("p1", "q1", "Failed", {"verdict": "RefineQuery", "target_task": "p1", "new_query": "q2"}),
            SYNTH,
        ], fallbacks={"extract_fact": extraction([], level="Failed")}, max_iterations=2)
        answer, trace = eng.run(QUESTION)
        assert trace.iterations == 2 and trace.termination == "budget"
        assert answer == "final" and trace.status == RunStatus.DONE.value

    def test_empty_retrieval_skips_extractor(self):
        eng = make_engine([decompose(task("p1", "first?")), SYNTH], docs=(),
                          fallbacks={"replan": "I cannot decide."})
        answer, trace = eng.run(QUESTION)
        facts = trace.of_type("fact")
        assert facts[0]["fact"]["level"] == "Failed"
        assert not [e for e in trace.of_type("backend_attempt") if e["role"] == "extract_fact"]
        assert answer == "final"

    def test_downgrade_recorded(self):
        eng = make_engine([
            decompose(task("p1", "first?")),
            extract("first?", extraction(["A"], evidence=["fabricated"])),
            replan("p1", "first?", "Failed", {"verdict": "SufficientAsIs"}),
            SYNTH,
        ])
        _, trace = eng.run(QUESTION)
        fact = trace.of_type("fact")[0]
        assert fact["downgraded_from"] == "DirectAnswer" and fact["fact"]["level"] == "Failed"
        assert trace.of_type("dispatch")[0]["route"] == "RePlanner"

    def test_malformed_replan_fails_task(self):
        eng = make_engine([
            decompose(task("p1", "first?")),
            replan("p1", "first?", "Failed", "no json here"),
            SYNTH,
        ], fallbacks={"extract_fact": extraction([], level="Failed")})
        _, trace = eng.run(QUESTION)
        assert len(trace.of_type("replan_error")) == 1
        assert replay_plan(trace)[0].get("p1").status is TaskStatus.FAILED


class TestFailures:
    def test_decompose_failed(self):
        eng = make_engine([{"role": "decompose", "match": {"question": QUESTION}, "response": "prose"}])
        with pytest.raises(DecomposeFailed) as err:
            eng.run(QUESTION)
        trace = err.value.trace
        assert trace.status == "Aborted"
        assert len(trace.of_type("backend_attempt")) == 3
        assert trace.events[-1]["type"] == "error"

    def test_backend_unavailable_keeps_trace(self):
        eng = make_engine([])
        with pytest.raises(BackendUnavailable) as err:
            eng.run(QUESTION)
        assert err.value.trace.events[-1]["error"] == "BackendUnavailable"

    def test_non_reap_errors_propagate(self):
        class Broken:
            def search(self, q, k):
                raise MalformedRecord("boom", 1)

        eng = make_engine([decompose(task("p1", "q"))])
        eng.retriever = Broken()
        with pytest.raises(MalformedRecord):
            eng.run(QUESTION)


def test_parallel_actions_match_sequential():
    entries = [
        decompose(task("p1", "a?"), task("p2", "b?"), task("p3", "c {p1.answer} {p2.answer}", ["p1", "p2"])),
        extract("a?", extraction(["A"])),
        extract("b?", extraction(["B"])),
        extract("c A B", extraction(["C"])),
        SYNTH,
    ]
    seq = make_engine(entries).run(QUESTION)[1]
    par = make_engine(entries, action_workers=4).run(QUESTION)[1]
    assert comparison_json(seq).replace('"action_workers": 1', "") == \
        comparison_json(par).replace('"action_workers": 4', "")


def test_script_key_stable():
    assert script_key("decompose", {"question": QUESTION}) == script_key("decompose", {"question": QUESTION})
