import pytest

from reap.errors import (
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
from reap.plan import (
    SubTask,
    TaskPlan,
    TaskStatus,
    apply_operation,
    dependents_closure,
    find_placeholders,
    fork_branches,
    inject_subtasks,
    is_fully_resolved,
    mark_in_progress,
    placeholder,
    prune_branch,
    ready_set,
    refine_query,
    render_plan,
    resolve_task,
    substitute_placeholders,
    validate_plan,
)

R, P, X = TaskStatus.RESOLVED, TaskStatus.PENDING, TaskStatus.PRUNED


def T(id, query=None, deps=(), status=P, fact_ref=None, retries=0):
    if status is R and fact_ref is None:
        fact_ref = f"f_{id}"
    return SubTask(id, query or f"q {id}", tuple(deps), status, fact_ref, retries)


def plan(*tasks):
    return TaskPlan(tuple(tasks))


def chain3():
    return plan(T("p1", status=R), T("p2", "after {p1.answer}", ["p1"]), T("p3", "then {p2.answer}", ["p2"]))


def diamond(root_status=R):
    return plan(
        T("p1", status=root_status),
        T("p2", "b {p1.answer}", ["p1"]),
        T("p3", "c {p1.answer}", ["p1"]),
        T("p4", "d {p2.answer} {p3.answer}", ["p2", "p3"]),
    )


class TestValidate:
    def test_single_node_ok(self):
        assert validate_plan(plan(T("p1"))).ok

    def test_two_cycle(self):
        result = validate_plan(plan(T("p1", deps=["p2"]), T("p2", deps=["p1"])))
        assert not result.ok
        assert any(v.startswith("cycle p1↔p2") for v in result.violations)

    def test_dangling_dep(self):
        result = validate_plan(plan(T("p1", deps=["p9"])))
        assert any(v.startswith("dangling dep p9") for v in result.violations)

    def test_duplicate_id(self):
        assert not validate_plan(plan(T("p1"), T("p1"))).ok

    def test_placeholder_must_be_a_dep(self):
        result = validate_plan(plan(T("p1"), T("p2", "who {p1.answer}")))
        assert not result.ok

    def test_live_task_on_pruned_dep(self):
        result = validate_plan(plan(T("p1", status=X), T("p2", deps=["p1"])))
        assert not result.ok

    def test_pruned_on_pruned_is_fine(self):
        assert validate_plan(plan(T("p1", status=X), T("p2", deps=["p1"], status=X))).ok

    def test_resolved_needs_fact_ref(self):
        bad = plan(SubTask("p1", "q", (), R, None))
        assert not validate_plan(bad).ok

    def test_three_cycle_reported(self):
        result = validate_plan(plan(T("a", deps=["c"]), T("b", deps=["a"]), T("c", deps=["b"])))
        assert any(v.startswith("cycle") for v in result.violations)


class TestReadySet:
    def test_dependent_of_resolved(self):
        p = plan(T("p1", status=R), T("p2", deps=["p1"]))
        assert [t.id for t in ready_set(p)] == ["p2"]

    def test_root_only(self):
        p = plan(T("p1"), T("p2", deps=["p1"]))
        assert [t.id for t in ready_set(p)] == ["p1"]

    def test_unsubstituted_placeholder_is_invalid(self):
        p = plan(T("p1", status=R), T("p2", "who {p1.answer}", ["p1"]))
        with pytest.raises(PlanInvalid):
            ready_set(p)

    def test_pruned_excluded(self):
        p = plan(T("p1", status=X), T("p2"))
        assert [t.id for t in ready_set(p)] == ["p2"]

    def test_sorted_by_id(self):
        p = plan(T("p3"), T("p1"), T("p2"))
        assert [t.id for t in ready_set(p)] == ["p1", "p2", "p3"]

    def test_invalid_plan_raises(self):
        with pytest.raises(PlanInvalid):
            ready_set(plan(T("p1", deps=["p2"]), T("p2", deps=["p1"])))

    def test_fully_resolved(self):
        assert is_fully_resolved(plan(T("p1", status=R), T("p2", status=X)))
        assert not is_fully_resolved(plan(T("p1", status=R), T("p2")))


class TestPlaceholders:
    def test_find(self):
        assert find_placeholders("a {p1.answer} b {p2#1.answer} {x}") == ["p1", "p2#1"]
        assert placeholder("p3") == "{p3.answer}"

    def test_substitute_example(self):
        p = plan(T("p1", status=R), T("p2", "Who directed {p1.answer}?", ["p1"]))
        out = substitute_placeholders(p, "p1", "Parasite")
        assert out.get("p2").query == "Who directed Parasite?"
        assert out.generation == p.generation + 1
        assert p.get("p2").query == "Who directed {p1.answer}?"  # input untouched

    def test_substitute_noop(self):
        p = plan(T("p1", status=R), T("p2", "static", ["p1"]))
        out = substitute_placeholders(p, "p1", "x")
        assert out.tasks == p.tasks and out.generation == 1

    def test_substitute_rewrites_all(self):
        p = plan(T("p1", status=R), T("p2", "a {p1.answer}", ["p1"]), T("p3", "b {p1.answer} {p1.answer}", ["p1"]))
        out = substitute_placeholders(p, "p1", "Z")
        text = " ".join(t.query for t in out.tasks)
        assert text.count("{p1.answer}") == 0
        assert out.get("p3").query == "b Z Z"

    def test_substitute_unknown_task(self):
        with pytest.raises(UnknownTask):
            substitute_placeholders(plan(T("p1")), "p7", "x")


class TestFork:
    def test_chain(self):
        out = fork_branches(chain3(), "p1", ["A", "B"])
        live = [t.id for t in out.tasks if t.live]
        pruned = [t.id for t in out.tasks if not t.live]
        assert live == ["p1", "p2#1", "p3#1", "p2#2", "p3#2"]
        assert pruned == ["p2", "p3"]
        assert len(out.tasks) == 7
        assert out.get("p2#1").query == "after A"
        assert out.get("p3#2").query == "then {p2#2.answer}"
        assert out.get("p3#2").deps == ("p2#2",)
        assert validate_plan(out).ok

    def test_no_dependents(self):
        p = plan(T("p1", status=R))
        out = fork_branches(p, "p1", ["A", "B"])
        assert out.tasks == p.tasks
        assert out.generation == 1

    def test_diamond(self):
        out = fork_branches(diamond(), "p1", ["A", "B"])
        for k in (1, 2):
            assert out.get(f"p4#{k}").deps == (f"p2#{k}", f"p3#{k}")
            assert out.get(f"p2#{k}").deps == ("p1",)
        assert sum(t.id.startswith("p4#") for t in out.tasks) == 2

    def test_cap(self):
        with pytest.raises(TooManyBranches):
            fork_branches(chain3(), "p1", list("ABCDE"))
        fork_branches(chain3(), "p1", list("ABCD"))

    def test_needs_resolved(self):
        with pytest.raises(PlanPreconditionError):
            fork_branches(diamond(P), "p1", ["A", "B"])

    def test_needs_two_answers(self):
        with pytest.raises(PlanPreconditionError):
            fork_branches(chain3(), "p1", ["A"])

    def test_collision(self):
        p = plan(T("p1", status=R), T("p2", deps=["p1"]), T("p2#1"))
        with pytest.raises(IdCollision):
            fork_branches(p, "p1", ["A", "B"])


class TestPrune:
    def test_chain_middle(self):
        out = prune_branch(chain3(), "p2")
        assert out.get("p1").status is R
        assert out.get("p2").status is X and out.get("p3").status is X

    def test_leaf(self):
        out = prune_branch(chain3(), "p3")
        assert [t.id for t in out.tasks if not t.live] == ["p3"]

    def test_diamond_root(self):
        out = prune_branch(diamond(P), "p1")
        assert all(not t.live for t in out.tasks)

    def test_resolved_refused(self):
        with pytest.raises(CannotPruneResolved):
            prune_branch(chain3(), "p1")

    def test_already_pruned(self):
        with pytest.raises(TaskNotLive):
            prune_branch(prune_branch(chain3(), "p3"), "p3")

    def test_closure(self):
        assert sorted(dependents_closure(diamond(), "p1")) == ["p2", "p3", "p4"]


class TestInject:
    def test_single(self):
        p = plan(T("p1", status=R))
        out = inject_subtasks(p, [T("p5", deps=["p1"])])
        assert out.get("p5").status is P and validate_plan(out).ok

    def test_pruned_dep(self):
        p = plan(T("p1"), T("p2", status=X))
        with pytest.raises(PlanInvalid):
            inject_subtasks(p, [T("p5", deps=["p2"])])

    def test_two_in_sequence(self):
        out = inject_subtasks(plan(T("p1")), [T("p5"), T("p6", "{p5.answer}", ["p5"])])
        assert out.get("p6").deps == ("p5",)
        assert [t.id for t in ready_set(out)] == ["p1", "p5"]

    def test_collision_with_pruned(self):
        with pytest.raises(IdCollision):
            inject_subtasks(plan(T("p1", status=X)), [T("p1")])

    def test_cycle_rejected(self):
        with pytest.raises(PlanInvalid):
            inject_subtasks(plan(T("p1")), [T("a", deps=["b"]), T("b", deps=["a"])])

    def test_status_forced_pending(self):
        out = inject_subtasks(plan(T("p1")), [T("p2", status=R)])
        assert out.get("p2").status is P and out.get("p2").fact_ref is None


class TestRefine:
    def test_example(self):
        p = plan(T("p1", status=R), T("p2", "Who directed it?", ["p1"]))
        out = refine_query(p, "p2", "Who directed the film Parasite?")
        assert out.get("p2").query == "Who directed the film Parasite?"
        assert out.get("p2").retries == 1

    def test_cap(self):
        p = plan(T("p2"))
        p = refine_query(refine_query(p, "p2", "a"), "p2", "b")
        with pytest.raises(RetryExhausted):
            refine_query(p, "p2", "c")

    def test_resolved(self):
        with pytest.raises(CannotRefineResolved):
            refine_query(chain3(), "p1", "x")
        assert issubclass(CannotRefineResolved, UnknownTask)

    def test_pruned(self):
        with pytest.raises(TaskNotLive):
            refine_query(plan(T("p1", status=X)), "p1", "x")

    def test_resets_to_pending(self):
        p = mark_in_progress(plan(T("p1")), ["p1"])
        assert refine_query(p, "p1", "again").get("p1").status is P


class TestMisc:
    def test_serialization_roundtrip(self):
        p = fork_branches(chain3(), "p1", ["A", "B"])
        assert TaskPlan.from_dict(p.to_dict()) == p
        assert "retries" not in p.to_dict()["tasks"][0]

    def test_apply_operation(self):
        p = apply_operation(chain3(), "prune", {"task_id": "p2"})
        assert p == prune_branch(chain3(), "p2")
        with pytest.raises(PlanPreconditionError):
            apply_operation(p, "explode", {})

    def test_render(self):
        text = render_plan(chain3())
        assert text.splitlines()[0] == "p1 [Resolved] q p1 (deps: -) -> f_p1"

    def test_resolve_twice(self):
        with pytest.raises(PlanPreconditionError):
            resolve_task(chain3(), "p1", "f9")

    def test_immutable(self):
        p = chain3()
        with pytest.raises(AttributeError):
            p.generation = 3  # type: ignore[misc]
