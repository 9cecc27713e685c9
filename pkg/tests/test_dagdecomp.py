import json
import random

import pytest

from conftest import dag_json, make_gateway, rule, task
from ragdag.dagdecomp import (
    DAG_TEMPLATE,
    TaskGraph,
    TaskNode,
    decompose,
    extract_first_json_array,
    fallback_single,
    parse_task_list,
    render_dag_prompt,
    topo_order,
)
from ragdag.errors import (
    CycleDetected,
    EmptyTaskList,
    MalformedJson,
    UnknownDependency,
)

EXPECTED_TEMPLATE = (
    "Below is an instruction that describes a task. "
    "Write a response that appropriately completes the request.\n"
    "\n"
    "### Instruction:\n"
    "Please analyze the medical question provided and try to break the "
    "question into smaller, distinct sub-questions. By subsequently solving "
    "the sub-problems and combining the answers to the sub-problems, the "
    "original question can be better answered. A problem consists of one to "
    "four sub-problems.\n"
    "\n"
    "When posing questions based on patient symptom data, all sub-questions "
    "should be expanded from the given options to include corresponding "
    "background information, rather than directly asking questions based on "
    "the patient's symptom data.\n"
    "If the problem can be decomposed, carefully follow the instruction, "
    "don't make unnecessary changes and do not answer any sub-questions.\n"
    "\n"
    "Output a list of Json following the format:\n"
    "[\n"
    " {\n"
    '"task_id": "unique identifier for a sub-problem, can be an ordinal",\n'
    '"dependent_task_ids": ["The sub-issue ID of the prerequisite for this '
    'sub-issue"],\n'
    '"instruction": "what you should do in this sub-problem, one short '
    "phrase or sentence\n"
    ' "},...\n'
    "]\n"
    "If the problem does not need to be broken down into sub-problems, your "
    "output format is:\n"
    "[\n"
    " {\n"
    '    "task_id": "1",\n'
    '    "dependent_task_ids": [],\n'
    '    "instruction": original question\n'
    " }\n"
    "]\n"
    "Medical question: {Query}\n"
    "\n"
    "### Response:\n"
)


def kahn_oracle(nodes):
    """Independent validity check: repeatedly remove zero-in-degree nodes.

    Returns the set of orders' first constraint violations as booleans:
    (all ids unique, all deps known, acyclic).
    """
    ids = [n["task_id"] for n in nodes]
    if len(set(ids)) != len(ids):
        return False
    known = set(ids)
    deps = {n["task_id"]: list(n["dependent_task_ids"]) for n in nodes}
    for tid, ds in deps.items():
        for d in ds:
            if d not in known:
                return False
    remaining = dict(deps)
    while remaining:
        free = [tid for tid, ds in remaining.items() if not ds]
        if not free:
            return False  # cycle
        for tid in free:
            del remaining[tid]
        for ds in remaining.values():
            for tid in free:
                while tid in ds:
                    ds.remove(tid)
    return True


def test_template_bytes_pinned():
    assert DAG_TEMPLATE == EXPECTED_TEMPLATE
    assert DAG_TEMPLATE.count("{Query}") == 1


def test_render_single_pass():
    out = render_dag_prompt("why {Query} here?")
    assert out.count("{Query}") == 1
    with pytest.raises(ValueError):
        render_dag_prompt(" ")


class TestExtractArray:
    def test_bare_array(self):
        assert extract_first_json_array('[1, 2, 3]') == [1, 2, 3]

    def test_array_inside_prose(self):
        text = 'Sure! Here is the plan: [{"task_id": "1"}] hope that helps'
        assert extract_first_json_array(text) == [{"task_id": "1"}]

    def test_fenced_block_preferred_over_earlier_prose(self):
        text = 'not this [1,2]\n```json\n[{"task_id": "9"}]\n```'
        assert extract_first_json_array(text) == [{"task_id": "9"}]

    def test_skips_false_bracket_starts(self):
        text = "scores [not json] then [5, 6]"
        assert extract_first_json_array(text) == [5, 6]

    def test_nested_array_returns_outer(self):
        assert extract_first_json_array('[[1], [2]]') == [[1], [2]]

    def test_no_array_raises(self):
        with pytest.raises(MalformedJson):
            extract_first_json_array('{"task_id": "1"}')
        with pytest.raises(MalformedJson):
            extract_first_json_array("no brackets at all")


class TestParseTaskList:
    def test_happy_path_two_tasks(self):
        text = dag_json([task("1"), task("2", deps=["1"])])
        graph = parse_task_list(text)
        assert graph.origin == "decomposed"
        assert [n.task_id for n in graph.nodes] == ["1", "2"]
        assert graph.nodes[1].dependent_task_ids == ["1"]
        assert all(n.status == "pending" for n in graph.nodes)
        assert graph.warnings == []

    def test_empty_list_rejected(self):
        with pytest.raises(EmptyTaskList):
            parse_task_list("[]")

    def test_non_object_entry(self):
        with pytest.raises(MalformedJson):
            parse_task_list('["just a string"]')

    def test_numeric_task_id_rejected(self):
        bad = json.dumps([{"task_id": 1, "dependent_task_ids": [], "instruction": "x"}])
        with pytest.raises(MalformedJson):
            parse_task_list(bad)

    def test_missing_fields_rejected(self):
        with pytest.raises(MalformedJson):
            parse_task_list('[{"task_id": "1"}]')

    def test_duplicate_task_id(self):
        with pytest.raises(MalformedJson):
            parse_task_list(dag_json([task("1"), task("1")]))

    def test_dep_list_must_hold_strings(self):
        bad = json.dumps(
            [{"task_id": "1", "dependent_task_ids": [2], "instruction": "x"}]
        )
        with pytest.raises(MalformedJson):
            parse_task_list(bad)

    def test_self_dependency_is_cycle(self):
        with pytest.raises(CycleDetected):
            parse_task_list(dag_json([task("1", deps=["1"])]))

    def test_two_node_cycle(self):
        with pytest.raises(CycleDetected):
            parse_task_list(dag_json([task("1", deps=["2"]), task("2", deps=["1"])]))

    def test_unknown_dependency(self):
        with pytest.raises(UnknownDependency):
            parse_task_list(dag_json([task("1", deps=["7"])]))

    def test_more_than_four_warns_but_parses(self):
        graph = parse_task_list(dag_json([task(str(i)) for i in range(1, 7)]))
        assert len(graph.nodes) == 6
        assert len(graph.warnings) == 1
        assert "6" in graph.warnings[0]

    def test_parser_agrees_with_kahn_oracle_on_generated_lists(self):
        # 500 random task lists; parser accept/reject must match an
        # independently written zero-in-degree elimination check.
        rng = random.Random(2024)
        agreements = 0
        for case in range(500):
            n = rng.randint(1, 6)
            ids = [str(i) for i in range(1, n + 1)]
            if rng.random() < 0.15 and n >= 2:
                ids[-1] = ids[0]  # duplicate id
            nodes = []
            for i, tid in enumerate(ids):
                pool = ids + (["99"] if rng.random() < 0.1 else [])
                k = rng.randint(0, min(2, len(pool)))
                deps = rng.sample(pool, k)
                nodes.append(
                    {"task_id": tid, "dependent_task_ids": deps, "instruction": f"s{i}"}
                )
            want_ok = kahn_oracle(nodes)
            try:
                parse_task_list(json.dumps(nodes))
                got_ok = True
            except (MalformedJson, CycleDetected, UnknownDependency, EmptyTaskList):
                got_ok = False
            assert got_ok == want_ok, f"case {case}: {nodes}"
            agreements += 1
        assert agreements == 500


class TestTopoOrder:
    def test_respects_dependencies(self):
        graph = parse_task_list(
            dag_json([task("3", deps=["1", "2"]), task("1"), task("2", deps=["1"])])
        )
        assert topo_order(graph) == ["1", "2", "3"]

    def test_ties_drain_ascending(self):
        graph = parse_task_list(dag_json([task("b"), task("a"), task("c")]))
        assert topo_order(graph) == ["a", "b", "c"]

    def test_every_order_is_valid_on_random_dags(self):
        rng = random.Random(7)
        for _ in range(100):
            n = rng.randint(1, 8)
            nodes = []
            for i in range(n):
                # edges only to lower-numbered ids keeps generation acyclic
                deps = [str(j) for j in range(i) if rng.random() < 0.3]
                nodes.append(task(str(i), deps=deps))
            graph = parse_task_list(dag_json(nodes))
            order = topo_order(graph)
            assert sorted(order) == sorted(n_.task_id for n_ in graph.nodes)
            pos = {tid: i for i, tid in enumerate(order)}
            for node in graph.nodes:
                for dep in node.dependent_task_ids:
                    assert pos[dep] < pos[node.task_id]


def test_fallback_single_shape():
    graph = fallback_single("the original question")
    assert graph.origin == "fallback_single"
    assert len(graph.nodes) == 1
    assert graph.nodes[0].task_id == "1"
    assert graph.nodes[0].dependent_task_ids == []
    assert graph.nodes[0].instruction == "the original question"


class TestDecompose:
    def test_parses_on_first_try(self):
        gw = make_gateway(rule("break the question into smaller", dag_json([task("1")])))
        graph = decompose("q", gw)
        assert graph.origin == "decomposed"
        assert len(gw.calls) == 1

    def test_retries_then_succeeds(self):
        gw = make_gateway(
            rule("break the question", "gibberish", consumes=True),
            rule("break the question", dag_json([task("1"), task("2", deps=["1"])])),
        )
        graph = decompose("q", gw, retries=2)
        assert graph.origin == "decomposed"
        assert len(graph.nodes) == 2
        assert len(gw.calls) == 2

    def test_exhausted_retries_fall_back(self):
        gw = make_gateway(rule("", "never valid json here"))
        graph = decompose("the question", gw, retries=2)
        assert graph.origin == "fallback_single"
        assert graph.nodes[0].instruction == "the question"
        assert len(gw.calls) == 3  # initial try plus two retries

    def test_transport_errors_propagate(self):
        from ragdag.errors import NoScriptMatch

        gw = make_gateway()  # no rules at all
        with pytest.raises(NoScriptMatch):
            decompose("q", gw)


def test_graph_to_dict_round_trip_fields():
    graph = TaskGraph(
        nodes=[TaskNode("1", [], "do a thing", status="done", result="42")],
        origin="decomposed",
        warnings=["w"],
    )
    d = graph.to_dict()
    assert d["origin"] == "decomposed"
    assert d["nodes"][0]["result"] == "42"
    assert d["warnings"] == ["w"]
