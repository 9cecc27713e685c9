"""Question decomposition into a dependency graph of subtasks.

The decomposition prompt asks the model for a JSON list of subtasks with
explicit dependency edges. Parsing is defensive: the first JSON array is
dug out of arbitrary surrounding prose, then validated into an acyclic
graph. Repeated parse failures fall back to a single-node graph holding
the original question, which is the format the prompt itself prescribes
for questions that need no decomposition.
"""

from __future__ import annotations

import heapq
import json
import re
from dataclasses import dataclass, field

from .errors import (
    CycleDetected,
    EmptyTaskList,
    MalformedJson,
    UnknownDependency,
)
from .modelgw import CompletionRequest, ModelGateway

DAG_TEMPLATE = (
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

STATUSES = ("pending", "running", "done", "failed")

SOFT_NODE_LIMIT = 4


@dataclass
class TaskNode:
    task_id: str
    dependent_task_ids: list[str]
    instruction: str
    status: str = "pending"
    result: str | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "dependent_task_ids": list(self.dependent_task_ids),
            "instruction": self.instruction,
            "status": self.status,
            "result": self.result,
        }


@dataclass
class TaskGraph:
    nodes: list[TaskNode]
    origin: str  # "decomposed" | "fallback_single"
    warnings: list[str] = field(default_factory=list)

    def node_map(self) -> dict[str, TaskNode]:
        return {n.task_id: n for n in self.nodes}

    def to_dict(self) -> dict:
        return {
            "origin": self.origin,
            "warnings": list(self.warnings),
            "nodes": [n.to_dict() for n in self.nodes],
        }


def render_dag_prompt(question: str) -> str:
    """Single-pass substitution, same contract as the gate renderer."""
    if not question or not question.strip():
        raise ValueError("decomposition question must be non-empty")
    return DAG_TEMPLATE.replace("{Query}", question)


_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)


def _first_array_in(text: str) -> list | None:
    decoder = json.JSONDecoder()
    pos = text.find("[")
    while pos != -1:
        try:
            value, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(value, list):
                return value
        pos = text.find("[", pos + 1)
    return None


def extract_first_json_array(text: str) -> list:
    """First parseable JSON array, preferring fenced code blocks."""
    for block in _FENCE.findall(text):
        arr = _first_array_in(block)
        if arr is not None:
            return arr
    arr = _first_array_in(text)
    if arr is not None:
        return arr
    raise MalformedJson("no JSON array in model output", text_head=text[:120])


def _check_acyclic(nodes: list[TaskNode]) -> None:
    # Iterative three-color DFS; reports one cycle when found.
    ids = {n.task_id for n in nodes}
    deps = {n.task_id: n.dependent_task_ids for n in nodes}
    color: dict[str, int] = {tid: 0 for tid in ids}  # 0 new, 1 open, 2 done
    for root in (n.task_id for n in nodes):
        if color[root] != 0:
            continue
        stack: list[tuple[str, int]] = [(root, 0)]
        path: list[str] = []
        while stack:
            tid, di = stack[-1]
            if di == 0:
                color[tid] = 1
                path.append(tid)
            if di < len(deps[tid]):
                stack[-1] = (tid, di + 1)
                nxt = deps[tid][di]
                if color[nxt] == 1:
                    cycle = path[path.index(nxt) :] + [nxt]
                    raise CycleDetected("dependency cycle", cycle=cycle)
                if color[nxt] == 0:
                    stack.append((nxt, 0))
            else:
                color[tid] = 2
                path.pop()
                stack.pop()


def parse_task_list(model_text: str) -> TaskGraph:
    """Extract and validate the subtask list from raw model text.

    All nodes come back pending. Lists longer than the prompt's stated
    one-to-four expectation are accepted with a warning, not rejected.
    """
    data = extract_first_json_array(model_text)
    if len(data) == 0:
        raise EmptyTaskList("model returned an empty task list")

    nodes: list[TaskNode] = []
    seen: set[str] = set()
    for pos, item in enumerate(data):
        if not isinstance(item, dict):
            raise MalformedJson("task entry is not an object", position=pos)
        task_id = item.get("task_id")
        instruction = item.get("instruction")
        deps = item.get("dependent_task_ids")
        if not isinstance(task_id, str) or not task_id.strip():
            raise MalformedJson("task_id must be a non-empty string", position=pos)
        if not isinstance(instruction, str) or not instruction.strip():
            raise MalformedJson("instruction must be a non-empty string", position=pos)
        if not isinstance(deps, list) or not all(isinstance(d, str) for d in deps):
            raise MalformedJson(
                "dependent_task_ids must be a list of strings", position=pos
            )
        if task_id in seen:
            raise MalformedJson("duplicate task_id", task_id=task_id)
        seen.add(task_id)
        nodes.append(TaskNode(task_id=task_id, dependent_task_ids=list(deps), instruction=instruction))

    for node in nodes:
        for dep in node.dependent_task_ids:
            if dep == node.task_id:
                raise CycleDetected("task depends on itself", task_id=node.task_id)
            if dep not in seen:
                raise UnknownDependency(
                    "dependency names no task", task_id=node.task_id, dependency=dep
                )
    _check_acyclic(nodes)

    warnings = []
    if len(nodes) > SOFT_NODE_LIMIT:
        warnings.append(
            f"task list has {len(nodes)} subtasks, more than the expected one to four"
        )
    return TaskGraph(nodes=nodes, origin="decomposed", warnings=warnings)


def topo_order(graph: TaskGraph) -> list[str]:
    """Dependency-respecting order; ready nodes drain in ascending task_id."""
    indeg = {n.task_id: 0 for n in graph.nodes}
    children: dict[str, list[str]] = {n.task_id: [] for n in graph.nodes}
    for n in graph.nodes:
        for dep in n.dependent_task_ids:
            indeg[n.task_id] += 1
            children[dep].append(n.task_id)
    ready = [tid for tid, d in sorted(indeg.items()) if d == 0]
    heapq.heapify(ready)
    out: list[str] = []
    while ready:
        tid = heapq.heappop(ready)
        out.append(tid)
        for child in children[tid]:
            indeg[child] -= 1
            if indeg[child] == 0:
                heapq.heappush(ready, child)
    return out


def fallback_single(question: str) -> TaskGraph:
    """The no-decomposition form: one task holding the whole question."""
    node = TaskNode(task_id="1", dependent_task_ids=[], instruction=question)
    return TaskGraph(nodes=[node], origin="fallback_single")


def decompose(
    question: str,
    gateway: ModelGateway,
    *,
    retries: int = 2,
    max_output_tokens: int = 512,
) -> TaskGraph:
    """Prompt, parse, retry on parse errors, fall back when exhausted.

    Transport errors propagate; malformed model output never does.
    """
    prompt = render_dag_prompt(question)
    for _ in range(retries + 1):
        result = gateway.complete(
            CompletionRequest(role="dag", prompt=prompt, max_output_tokens=max_output_tokens)
        )
        try:
            return parse_task_list(result.text)
        except (MalformedJson, EmptyTaskList, UnknownDependency, CycleDetected):
            continue
    return fallback_single(question)
