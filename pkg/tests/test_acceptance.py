"""Acceptance gate: ten end-to-end checks, one test per criterion.

Each test owns an independent oracle (brute-force search, zero-in-degree
graph elimination, exhaustive center enumeration, byte recounts) so a
pass means the library agrees with a second implementation, not with
itself. Thresholds and tolerances are pinned in the assertions.
"""

import itertools
import json
import math
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from conftest import DAG_MARK, GATE_MARK, build_tiny_rag, dag_json, make_gateway, rule, task
from ragdag.bench import BenchItem, ablate, evaluate, standard_ablation_toggles
from ragdag.curate import k_center_greedy
from ragdag.dagdecomp import parse_task_list, render_dag_prompt, topo_order
from ragdag.errors import BudgetExceeded, FormatVersionMismatch, RagdagError
from ragdag.gate import render_gate_prompt
from ragdag.modelgw import DEFAULT_BUDGETS, CompletionRequest, ModelGateway, ROLES, ScriptedBackend
from ragdag.pipeline import (
    SEC_DRAFT,
    SEC_QUESTION,
    Pipeline,
    PipelineConfig,
    compose_final_prompt,
    enforce_budget,
)
from ragdag.rerank import RerankConfig, rerank
from ragdag.vindex import IndexParams, VectorIndex


def ok(n: int, msg: str) -> None:
    print(f"[criterion {n:02d}] PASS: {msg}")


def gate_regex(marker: str) -> str:
    # matches only gate prompts whose embedded question carries the marker
    return rf"(?s)^(?=.*{re.escape(GATE_MARK)})(?=.*{re.escape(marker)})"


# =====================================================================
# criterion 1: routing conformance, 20 hand-traced control-flow cases
# =====================================================================


@dataclass
class RouteCase:
    name: str
    gate: bool
    dag: bool
    rag: bool
    question: str
    rules: object  # zero-arg callable, fresh rules per run
    purposes: list
    direct: bool = False
    origin: str | None = "decomposed"
    answers: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)
    retrieved_scopes: set | None = None
    retrieval_calls: int | None = None
    ambiguous_at: list = field(default_factory=list)
    warning_contains: str | None = None


G_KNOW = lambda: rule(GATE_MARK, "know")
G_UNKNOW = lambda: rule(GATE_MARK, "unknow")
FINAL = lambda: rule(SEC_DRAFT, "synthesized final")
CATCH = lambda: rule("", "plain answer")


def chain2():
    return rule(DAG_MARK, dag_json([
        task("1", instr="s one"), task("2", deps=["1"], instr="s two"),
    ]))


def single(instr="s only"):
    return rule(DAG_MARK, dag_json([task("1", instr=instr)]))


ROUTE_CASES = [
    RouteCase(
        name="know answers directly",
        gate=True, dag=True, rag=False, question="q1",
        rules=lambda: [G_KNOW(), CATCH()],
        purposes=["gate:base", "direct_answer"],
        direct=True, origin=None,
    ),
    RouteCase(
        name="unknow runs a two-node chain",
        gate=True, dag=True, rag=False, question="q2",
        rules=lambda: [G_UNKNOW(), chain2(), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "gate:1", "node:1",
                  "gate:2", "node:2", "draft", "final"],
        answers=["1", "2"],
    ),
    RouteCase(
        name="unknow runs a single node",
        gate=True, dag=True, rag=False, question="q3",
        rules=lambda: [G_UNKNOW(), single(), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "gate:1", "node:1", "draft", "final"],
        answers=["1"],
    ),
    RouteCase(
        name="gate off skips all gating",
        gate=False, dag=True, rag=False, question="q4",
        rules=lambda: [rule(DAG_MARK, dag_json([
            task("1", instr="p one"), task("2", instr="p two")])), FINAL(), CATCH()],
        purposes=["decompose:0", "node:1", "node:2", "draft", "final"],
        answers=["1", "2"],
    ),
    RouteCase(
        name="gate and graphing both off",
        gate=False, dag=False, rag=False, question="q5",
        rules=lambda: [FINAL(), CATCH()],
        purposes=["node:1", "draft", "final"],
        origin="fallback_single", answers=["1"],
    ),
    RouteCase(
        name="know is direct even without graphing",
        gate=True, dag=False, rag=False, question="q6",
        rules=lambda: [G_KNOW(), CATCH()],
        purposes=["gate:base", "direct_answer"],
        direct=True, origin=None,
    ),
    RouteCase(
        name="ambiguous gate output routes to retrieval path",
        gate=True, dag=True, rag=False, question="q7",
        rules=lambda: [rule(GATE_MARK, "not sure really"), single("s7a"),
                       FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "gate:1", "node:1", "draft", "final"],
        answers=["1"], ambiguous_at=[(0, True)],
    ),
    RouteCase(
        name="persistently malformed plan falls back after retries",
        gate=True, dag=True, rag=False, question="q8",
        rules=lambda: [G_UNKNOW(), rule(DAG_MARK, "still not json"),
                       FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "decompose:1", "decompose:2",
                  "gate:1", "node:1", "draft", "final"],
        origin="fallback_single", answers=["1"],
        warning_contains="decomposition failed, using single-task fallback",
    ),
    RouteCase(
        name="one bad plan then a good one",
        gate=True, dag=True, rag=False, question="q9",
        rules=lambda: [G_UNKNOW(), rule(DAG_MARK, "garbage", consumes=True),
                       single("s9a"), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "decompose:1",
                  "gate:1", "node:1", "draft", "final"],
        answers=["1"],
    ),
    RouteCase(
        name="node-level know skips that node's retrieval",
        gate=True, dag=True, rag=True, question="q10 topic5",
        rules=lambda: [rule(gate_regex("s10easy"), "know", regex=True),
                       G_UNKNOW(),
                       rule(DAG_MARK, dag_json([
                           task("1", instr="s10easy topic1"),
                           task("2", instr="s10hard topic7")])),
                       FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "gate:1", "node:1",
                  "gate:2", "node:2", "draft", "final"],
        answers=["1", "2"],
        retrieved_scopes={"2", "base"}, retrieval_calls=2,
    ),
    RouteCase(
        name="independent node failure spares the rest",
        gate=True, dag=True, rag=False, question="q11",
        rules=lambda: [G_UNKNOW(),
                       rule(DAG_MARK, dag_json([
                           task("1", instr="s11a"),
                           task("2", instr="s11b unmatched")])),
                       FINAL(),
                       rule(f"{SEC_QUESTION}\ns11a", "a1"),
                       rule(f"{SEC_QUESTION}\nq11", "draft text")],
        purposes=["gate:base", "decompose:0", "gate:1", "node:1",
                  "gate:2", "draft", "final"],
        answers=["1"], failed={"2": "NoScriptMatch"},
    ),
    RouteCase(
        name="failure cascades along dependencies",
        gate=True, dag=True, rag=False, question="q12",
        rules=lambda: [G_UNKNOW(),
                       rule(DAG_MARK, dag_json([
                           task("1", instr="s12 unmatched"),
                           task("2", deps=["1"], instr="s12b"),
                           task("3", deps=["2"], instr="s12c")])),
                       FINAL(),
                       rule(f"{SEC_QUESTION}\nq12", "draft text")],
        purposes=["gate:base", "decompose:0", "gate:1", "draft", "final"],
        failed={"1": "NoScriptMatch", "2": "NodeFailed", "3": "NodeFailed"},
    ),
    RouteCase(
        name="diamond graph executes in dependency order",
        gate=False, dag=True, rag=False, question="q13",
        rules=lambda: [rule(DAG_MARK, dag_json([
            task("1", instr="d1"), task("2", deps=["1"], instr="d2"),
            task("3", deps=["1"], instr="d3"),
            task("4", deps=["2", "3"], instr="d4")])), FINAL(), CATCH()],
        purposes=["decompose:0", "node:1", "node:2", "node:3", "node:4",
                  "draft", "final"],
        answers=["1", "2", "3", "4"],
    ),
    RouteCase(
        name="declaration order does not drive execution order",
        gate=False, dag=True, rag=False, question="q14",
        rules=lambda: [rule(DAG_MARK, dag_json([
            task("3", deps=["1"], instr="o3"), task("2", instr="o2"),
            task("1", instr="o1")])), FINAL(), CATCH()],
        purposes=["decompose:0", "node:1", "node:2", "node:3", "draft", "final"],
        answers=["1", "2", "3"],
    ),
    RouteCase(
        name="single-task fallback shares one retrieval",
        gate=True, dag=False, rag=True, question="topic3 alpha beta",
        rules=lambda: [G_UNKNOW(), FINAL(), CATCH()],
        purposes=["gate:base", "gate:1", "node:1", "draft", "final"],
        origin="fallback_single", answers=["1"],
        retrieved_scopes={"1", "base"}, retrieval_calls=1,
    ),
    RouteCase(
        name="retrieval off leaves no passage trace",
        gate=True, dag=True, rag=False, question="q16",
        rules=lambda: [G_UNKNOW(), single("s16a"), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "gate:1", "node:1", "draft", "final"],
        answers=["1"], retrieved_scopes=set(), retrieval_calls=0,
    ),
    RouteCase(
        name="oversized plans run with a warning",
        gate=True, dag=True, rag=False, question="q17",
        rules=lambda: [G_UNKNOW(), rule(DAG_MARK, dag_json([
            task(str(i), instr=f"w{i}") for i in range(1, 6)])), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0",
                  "gate:1", "node:1", "gate:2", "node:2", "gate:3", "node:3",
                  "gate:4", "node:4", "gate:5", "node:5", "draft", "final"],
        answers=["1", "2", "3", "4", "5"], warning_contains="5 subtasks",
    ),
    RouteCase(
        name="plan naming a missing dependency is rejected",
        gate=True, dag=True, rag=False, question="q18",
        rules=lambda: [G_UNKNOW(), rule(DAG_MARK, dag_json([
            task("1", deps=["9"], instr="bad")])), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "decompose:1", "decompose:2",
                  "gate:1", "node:1", "draft", "final"],
        origin="fallback_single", answers=["1"],
        warning_contains="decomposition failed",
    ),
    RouteCase(
        name="ambiguous node gate still fetches passages",
        gate=True, dag=True, rag=True, question="q19 topic5",
        rules=lambda: [rule(gate_regex("s19x"), "hmm unclear", regex=True),
                       G_UNKNOW(), single("s19x topic1"), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "gate:1", "node:1", "draft", "final"],
        answers=["1"], ambiguous_at=[(0, False), (1, True)],
        retrieved_scopes={"1", "base"}, retrieval_calls=2,
    ),
    RouteCase(
        name="empty plan falls back after retries",
        gate=True, dag=True, rag=False, question="q20",
        rules=lambda: [G_UNKNOW(), rule(DAG_MARK, "[]"), FINAL(), CATCH()],
        purposes=["gate:base", "decompose:0", "decompose:1", "decompose:2",
                  "gate:1", "node:1", "draft", "final"],
        origin="fallback_single", answers=["1"],
        warning_contains="decomposition failed",
    ),
]


def test_criterion_01_routing_conformance():
    assert len(ROUTE_CASES) == 20
    started = time.monotonic()
    rag_parts = build_tiny_rag(n=12, dims=32)
    failures = []
    for case in ROUTE_CASES:
        gw = make_gateway(*case.rules())
        cfg = PipelineConfig(enable_gate=case.gate, enable_dag=case.dag,
                             enable_rag=case.rag, retrieve_n=2, coarse_k=5)
        kw = {}
        if case.rag:
            enc, index, texts = rag_parts
            kw = dict(encoder=enc, index=index, chunk_texts=texts)
        res = Pipeline(gw, cfg, **kw).answer(case.question)

        got = {
            "purposes": [c["purpose"] for c in res.model_calls],
            "direct": res.direct,
            "origin": None if res.graph is None else res.graph.origin,
            "answers": sorted(res.node_answers),
            "failed": {k: v["error"] for k, v in res.failed_nodes.items()},
        }
        want = {
            "purposes": case.purposes,
            "direct": case.direct,
            "origin": case.origin,
            "answers": sorted(case.answers),
            "failed": case.failed,
        }
        if got != want:
            failures.append(f"{case.name}: {got} != {want}")
            continue
        if case.retrieved_scopes is not None and set(res.retrieved) != case.retrieved_scopes:
            failures.append(f"{case.name}: scopes {set(res.retrieved)}")
        if case.retrieval_calls is not None and res.retrieval_calls != case.retrieval_calls:
            failures.append(f"{case.name}: calls {res.retrieval_calls}")
        for idx, flag in case.ambiguous_at:
            if res.gate_decisions[idx]["ambiguous"] is not flag:
                failures.append(f"{case.name}: ambiguity at {idx}")
        if case.warning_contains and not any(
            case.warning_contains in w for w in res.warnings
        ):
            failures.append(f"{case.name}: warning missing")
    elapsed = time.monotonic() - started
    assert not failures, "[criterion 01] FAIL:\n" + "\n".join(failures)
    assert elapsed < 5.0, f"[criterion 01] FAIL: took {elapsed:.1f}s"
    ok(1, f"20/20 routing cases match the hand-traced table ({elapsed:.2f}s)")


# =====================================================================
# criterion 2: exact search vs brute force; graph recall at scale
# =====================================================================


@pytest.fixture(scope="module")
def grid_pack():
    """1,000 integer-valued vectors, d=16: dot products are exact."""
    rng = np.random.default_rng(7)
    vecs = rng.integers(-8, 9, size=(1000, 16)).astype(np.float64)
    ids = [f"custom:{i:04d}:0" for i in range(1000)]
    params = IndexParams(dims=16, max_neighbors=8, ef_construction=64,
                         ef_search=32, seed=3)
    index = VectorIndex.build(zip(ids, vecs), params)
    queries = rng.integers(-8, 9, size=(250, 16)).astype(np.float64)
    return index, vecs, ids, queries


def brute_topk(vecs, ids, q, k):
    scores = vecs @ q  # integer-valued, so exact under any summation order
    order = sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return [(ids[i], float(scores[i])) for i in order[:k]]


def test_criterion_02_index_fidelity_and_recall(grid_pack):
    started = time.monotonic()
    index, vecs, ids, queries = grid_pack

    for q in queries[:200]:
        hits = index.search_exact(q, 10)
        assert [(h.chunk_id, h.score) for h in hits] == brute_topk(vecs, ids, q, 10), \
            "[criterion 02] FAIL: exact search disagrees with brute force"

    rng = np.random.default_rng(42)
    centers = rng.normal(size=(50, 64))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    assign = rng.integers(0, 50, size=10_000)
    big = centers[assign] + 0.35 * rng.normal(size=(10_000, 64))
    big /= np.linalg.norm(big, axis=1, keepdims=True)
    params = IndexParams(dims=64, max_neighbors=16, ef_construction=200,
                         ef_search=128, seed=7)
    big_index = VectorIndex.build(
        ((f"custom:{i}:0", big[i]) for i in range(10_000)), params
    )
    probes = centers[rng.integers(0, 50, size=100)] + 0.35 * rng.normal(size=(100, 64))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    overlap = 0
    for q in probes:
        approx = {h.chunk_id for h in big_index.search(q, 10)}
        exact = {h.chunk_id for h in big_index.search_exact(q, 10)}
        overlap += len(approx & exact)
    recall = overlap / 1000.0
    elapsed = time.monotonic() - started
    assert recall >= 0.95, f"[criterion 02] FAIL: recall@10 {recall:.4f} < 0.95"
    assert elapsed < 60.0, f"[criterion 02] FAIL: took {elapsed:.1f}s"
    ok(2, f"200/200 exact-search matches; recall@10 {recall:.4f} on 10k vectors "
          f"({elapsed:.1f}s, backend {big_index.backend_name})")


# =====================================================================
# criterion 3: persistence round trip and corrupt-file rejection
# =====================================================================


def test_criterion_03_persistence(grid_pack, tmp_path):
    index, vecs, ids, queries = grid_pack
    path = tmp_path / "grid.idx"
    index.save(path)
    loaded = VectorIndex.load(path)

    for q in queries[200:250]:
        before = [(h.chunk_id, h.score) for h in index.search(q, 10)]
        after = [(h.chunk_id, h.score) for h in loaded.search(q, 10)]
        assert before == after, "[criterion 03] FAIL: results changed after reload"

    data = path.read_bytes()
    bad_magic = tmp_path / "bad_magic.idx"
    bad_magic.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(FormatVersionMismatch):
        VectorIndex.load(bad_magic)
    truncated = tmp_path / "truncated.idx"
    truncated.write_bytes(data[: len(data) // 3])
    with pytest.raises(FormatVersionMismatch):
        VectorIndex.load(truncated)
    ok(3, "50/50 query sets identical after save/load; corrupt headers rejected")


# =====================================================================
# criterion 4: task-list accept/reject vs zero-in-degree elimination
# =====================================================================


def oracle_accepts(tasks) -> bool:
    if not isinstance(tasks, list) or not tasks:
        return False
    seen: list[str] = []
    for t in tasks:
        if not isinstance(t, dict):
            return False
        tid = t.get("task_id")
        instr = t.get("instruction")
        deps = t.get("dependent_task_ids")
        if not isinstance(tid, str) or not tid.strip():
            return False
        if not isinstance(instr, str) or not instr.strip():
            return False
        if not isinstance(deps, list) or any(not isinstance(d, str) for d in deps):
            return False
        if tid in seen:
            return False
        seen.append(tid)
    idset = set(seen)
    for t in tasks:
        for d in t["dependent_task_ids"]:
            if d == t["task_id"] or d not in idset:
                return False
    remaining = {t["task_id"]: set(t["dependent_task_ids"]) for t in tasks}
    while remaining:
        ready = [tid for tid, deps in remaining.items() if not deps]
        if not ready:
            return False  # nothing has zero in-degree: a cycle remains
        for tid in ready:
            del remaining[tid]
        for deps in remaining.values():
            deps.difference_update(ready)
    return True


def order_respects(tasks, order) -> bool:
    ids = [t["task_id"] for t in tasks]
    if sorted(order) != sorted(ids):
        return False
    pos = {tid: i for i, tid in enumerate(order)}
    return all(
        pos[d] < pos[t["task_id"]] for t in tasks for d in t["dependent_task_ids"]
    )


def generate_task_case(rng: random.Random):
    n = rng.randint(2, 6)
    ids = [str(i + 1) for i in range(n)]
    tasks = []
    for i, tid in enumerate(ids):
        pool = ids[:i]
        deps = rng.sample(pool, k=rng.randint(0, len(pool))) if pool else []
        tasks.append({"task_id": tid, "dependent_task_ids": deps,
                      "instruction": f"find part {tid}"})
    roll = rng.random()
    if roll < 0.55:
        pass  # keep valid
    elif roll < 0.62:
        tasks[-1]["task_id"] = tasks[0]["task_id"]
    elif roll < 0.68:
        tasks[rng.randrange(n)]["dependent_task_ids"] = ["99"]
    elif roll < 0.74:
        t = tasks[rng.randrange(n)]
        t["dependent_task_ids"] = list(t["dependent_task_ids"]) + [t["task_id"]]
    elif roll < 0.80:
        tasks[0]["dependent_task_ids"] = [ids[1]]
        tasks[1]["dependent_task_ids"] = [ids[0]]
    elif roll < 0.85:
        tasks[rng.randrange(n)]["task_id"] = 42
    elif roll < 0.89:
        del tasks[rng.randrange(n)]["instruction"]
    elif roll < 0.93:
        tasks[rng.randrange(n)]["dependent_task_ids"] = "1"
    elif roll < 0.96:
        tasks = []
    else:
        tasks[rng.randrange(n)] = "just a string"
    body = json.dumps(tasks)
    if rng.random() < 0.5:
        text = body
    else:
        text = f"Here is the plan.\n```json\n{body}\n```\nDone."
    return tasks, text


def test_criterion_04_task_list_validation():
    rng = random.Random(4242)
    mismatches = []
    for trial in range(500):
        tasks, text = generate_task_case(rng)
        expected = oracle_accepts(tasks)
        try:
            graph = parse_task_list(text)
            accepted = True
        except RagdagError:
            accepted = False
        if accepted != expected:
            mismatches.append(f"trial {trial}: parser={accepted} oracle={expected}")
            continue
        if accepted:
            order = topo_order(graph)
            if not order_respects(tasks, order):
                mismatches.append(f"trial {trial}: bad topo order {order}")
    assert not mismatches, "[criterion 04] FAIL:\n" + "\n".join(mismatches[:10])
    ok(4, "500/500 accept/reject decisions match the elimination oracle; "
          "all emitted orders respect dependencies")


# =====================================================================
# criterion 5: two-stage retrieval keeps five of the thirty-two
# =====================================================================


def test_criterion_05_retrieval_staging():
    enc, index, texts = build_tiny_rag(n=64, dims=32)
    rng = random.Random(55)
    cfg = RerankConfig(coarse_k=32, final_n=5)
    for _ in range(25):
        query = f"topic{rng.randrange(64)} alpha delta{rng.randrange(64)}"
        coarse = index.search(enc.encode(query), 32)
        assert len(coarse) == 32
        assert all(h.stage == "coarse" for h in coarse)
        fine = rerank(query, [(h.chunk_id, texts[h.chunk_id]) for h in coarse], cfg)
        assert len(fine) == 5, "[criterion 05] FAIL: wrong final count"
        assert {d.chunk_id for d in fine} <= {h.chunk_id for h in coarse}, \
            "[criterion 05] FAIL: reranker invented a candidate"
        assert all(d.stage == "fine" for d in fine)

    # the pipeline wires the same staging end to end
    gw = make_gateway(rule(GATE_MARK, "unknow"), rule(SEC_DRAFT, "f"), rule("", "x"))
    pipe = Pipeline(
        gw,
        PipelineConfig(enable_dag=False, retrieve_n=5, coarse_k=32),
        encoder=enc, index=index, chunk_texts=texts,
    )
    res = pipe.answer("topic9 alpha beta")
    coarse_ids = {h.chunk_id for h in index.search(enc.encode("topic9 alpha beta"), 32)}
    for scope, docs in res.retrieved.items():
        assert len(docs) == 5, f"[criterion 05] FAIL: scope {scope}"
        assert {d.chunk_id for d in docs} <= coarse_ids
    ok(5, "25/25 staged retrievals return 5 of the 32 coarse candidates; "
          "pipeline path agrees")


# =====================================================================
# criterion 6: fuzzed prompts never exceed role budgets
# =====================================================================


class RecordingScripted(ScriptedBackend):
    def __init__(self, rules):
        super().__init__(rules)
        self.prompts = []

    def complete_text(self, prompt, max_output_tokens, temperature):
        self.prompts.append(prompt)
        return super().complete_text(prompt, max_output_tokens, temperature)


def byte_token_oracle(text: str) -> int:
    if not text:
        return 0
    return math.ceil(len(text.encode("utf-8")) / 4)


def test_criterion_06_budget_safety():
    from ragdag.pipeline import DepQA, RetrievedPassage

    rng = random.Random(6006)
    alphabet = "abcdefghijklmnopqrstuvwxyz    "

    def blob(lo, hi):
        return "".join(rng.choices(alphabet, k=rng.randint(lo, hi))).strip() or "x"

    backend = RecordingScripted([rule("", "ok")])
    gw = ModelGateway({r: backend for r in ROLES})
    budgets = dict(DEFAULT_BUDGETS)
    assert budgets == {"know": 1024, "dag": 2048, "medical": 2816}

    issued = []
    for trial in range(1000):
        role = rng.choices(ROLES, weights=(0.15, 0.15, 0.70))[0]
        if role == "know":
            prompt = render_gate_prompt(blob(1, 1200))
        elif role == "dag":
            prompt = render_dag_prompt(blob(1, 1200))
        else:
            docs = [
                RetrievedPassage(chunk_id=f"custom:{i}:0", score=0.5, stage="fine",
                                 text=blob(1, 1200))
                for i in range(rng.randint(0, 8))
            ]
            deps = [DepQA(blob(1, 300), blob(1, 300))
                    for _ in range(rng.randint(0, 6))]
            draft = blob(1, 2000) if rng.random() < 0.6 else None
            prompt = compose_final_prompt(blob(1, 120), docs, draft, deps)
        shrunk = enforce_budget(prompt, budgets[role], gw.tokenizer)
        gw.complete(CompletionRequest(role=role, prompt=shrunk, max_output_tokens=8))
        issued.append((role, shrunk))

    assert len(backend.prompts) == 1000
    violations = [
        (i, role) for i, (role, p) in enumerate(issued)
        if byte_token_oracle(p) > budgets[role]
    ]
    assert not violations, f"[criterion 06] FAIL: {len(violations)} over budget"
    assert all(c.prompt_tokens <= budgets[c.role] for c in gw.calls)

    # the gateway backstop rejects anything oversized that slips through
    blocked = 0
    for _ in range(20):
        with pytest.raises(BudgetExceeded):
            gw.complete(CompletionRequest(role="medical", prompt="x" * 20000))
        blocked += 1
    assert blocked == 20 and len(backend.prompts) == 1000, \
        "[criterion 06] FAIL: oversized prompt reached the backend"
    ok(6, "1000/1000 fuzzed prompts within role budgets (1024/2048/2816); "
          "20/20 oversized prompts blocked before the backend")


# =====================================================================
# criterion 7: coverage selection within twice the exhaustive optimum
# =====================================================================


def cover_radius(X, centers):
    d = np.linalg.norm(X[:, None, :] - X[None, centers, :], axis=2)
    return float(d.min(axis=1).max())


def test_criterion_07_center_selection_quality():
    picks = k_center_greedy([[0.0], [1.0], [2.0], [10.0]], 2)
    assert picks == [0, 3], "[criterion 07] FAIL: worked example"

    rng = random.Random(707)
    for trial in range(100):
        n = rng.randint(2, 8)
        m = rng.randint(1, min(3, n))
        X = np.array([[rng.uniform(-4, 4) for _ in range(3)] for _ in range(n)])
        got = cover_radius(X, k_center_greedy(X, m))
        best = min(
            cover_radius(X, list(combo))
            for combo in itertools.combinations(range(n), m)
        )
        assert got <= 2.0 * best + 1e-9, \
            f"[criterion 07] FAIL: trial {trial} radius {got} vs optimum {best}"
    ok(7, "greedy radius within 2x the exhaustive optimum in 100/100 instances; "
          "worked example picks values {0, 10}")


# =====================================================================
# criterion 8: byte-identical traces and exact accuracy arithmetic
# =====================================================================


def fixed_gold_items(n, n_gold_a):
    items = []
    rest = itertools.cycle("BCD")
    for i in range(n):
        gold = "A" if i < n_gold_a else next(rest)
        items.append(BenchItem(
            id=f"it{i:03d}",
            question=f"synthetic question {i}",
            kind="mcq",
            options=tuple(zip("ABCD", (f"c{i}a", f"c{i}b", f"c{i}c", f"c{i}d"))),
            gold=gold,
        ))
    return items


def always_a_pipeline():
    gw = make_gateway(rule(GATE_MARK, "know"), rule("", "A"))
    return Pipeline(gw, PipelineConfig(enable_rag=False))


def test_criterion_08_determinism_and_accuracy(tmp_path):
    items = fixed_gold_items(50, 13)
    r1 = evaluate(items, always_a_pipeline(), trace_dir=tmp_path / "one")
    r2 = evaluate(items, always_a_pipeline(), trace_dir=tmp_path / "two")

    names1 = sorted(p.name for p in (tmp_path / "one").iterdir())
    names2 = sorted(p.name for p in (tmp_path / "two").iterdir())
    assert names1 == names2 and len(names1) == 51
    for name in names1:
        a = (tmp_path / "one" / name).read_bytes()
        b = (tmp_path / "two" / name).read_bytes()
        assert a == b, f"[criterion 08] FAIL: {name} differs between runs"

    assert r1.correct_count == 13
    assert r1.accuracy == 0.26, f"[criterion 08] FAIL: accuracy {r1.accuracy}"
    assert r1.to_json() == r2.to_json()

    quarter = evaluate(fixed_gold_items(20, 5), always_a_pipeline())
    assert quarter.correct_count == 5
    assert quarter.accuracy == 0.25, "[criterion 08] FAIL: quarter fixture"
    ok(8, "51/51 trace files byte-identical across reruns; accuracy exactly "
          "0.26 (13/50) and 0.25 (5/20) on the fixed-gold fixtures")


# =====================================================================
# criterion 9: ablation plumbing and gate-driven retrieval savings
# =====================================================================


def marker_items(n_know, n_unknow):
    items = []
    options = tuple(zip("ABCD", ("alpha", "beta", "gamma", "delta")))
    for i in range(n_know):
        items.append(BenchItem(id=f"k{i}", question=f"familiar fact {i} topic{i}",
                               kind="mcq", options=options, gold="B"))
    for i in range(n_unknow):
        items.append(BenchItem(id=f"u{i}", question=f"obscure fact {i} topic{i}",
                               kind="mcq", options=options, gold="B"))
    return items


def variant_rules():
    return [
        rule(gate_regex("familiar"), "know", regex=True),
        rule(GATE_MARK, "unknow"),
        rule(DAG_MARK, dag_json([task("1", instr="look at records")])),
        rule(SEC_DRAFT, "B"),
        rule("", "B"),
    ]


def test_criterion_09_ablation_plumbing():
    enc, index, texts = build_tiny_rag(n=12, dims=32)
    items = marker_items(6, 4)

    variants = []
    for name, toggles in standard_ablation_toggles():
        cfg = PipelineConfig(retrieve_n=2, coarse_k=5, **toggles)
        kw = dict(encoder=enc, index=index, chunk_texts=texts) \
            if toggles["enable_rag"] else {}
        variants.append((name, Pipeline(make_gateway(*variant_rules()), cfg, **kw)))

    rows = ablate(items, variants)
    by_name = {r["variant"]: r for r in rows}
    assert [r["variant"] for r in rows] == ["base", "rag", "gate_rag", "dag", "full"]
    assert all(r["n_items"] == 10 for r in rows)

    assert by_name["base"]["index_accesses"] == 0, "[criterion 09] FAIL: base"
    assert by_name["dag"]["index_accesses"] == 0, "[criterion 09] FAIL: dag"

    # ungated: every item fetches once (single-task run reuses the query)
    assert by_name["rag"]["retrieval_calls"] == 10
    # gated: the six known items answer directly and skip retrieval
    assert by_name["gate_rag"]["know_count"] == 6
    assert by_name["gate_rag"]["retrieval_calls"] == 4
    saved = by_name["rag"]["retrieval_calls"] - by_name["gate_rag"]["retrieval_calls"]
    assert saved == by_name["gate_rag"]["know_count"] == 6, \
        "[criterion 09] FAIL: retrieval savings != scripted know fraction"
    ok(9, "five variants ran; retrieval-off rows touched the index 0 times; "
          "gating saved exactly the 6 known items' retrievals (10 -> 4)")


# =====================================================================
# criterion 10: report statistics equal recounts over raw trace files
# =====================================================================


def recount_trace_files(trace_dir: Path) -> dict:
    know = unknow = ambiguous = 0
    graphed = nodes_total = retrieval = accesses = 0
    for path in sorted(trace_dir.glob("*.json")):
        if path.name == "report.json":
            continue
        payload = json.loads(path.read_text(encoding="utf-8"))
        for row in payload["trials"]:
            trace = row.get("trace")
            if trace is None:
                continue
            for g in trace["gate_decisions"]:
                if g["decision"] == "know":
                    know += 1
                elif g.get("ambiguous"):
                    ambiguous += 1
                else:
                    unknow += 1
            if trace["graph"] is not None:
                graphed += 1
                nodes_total += len(trace["graph"]["nodes"])
            retrieval += trace["retrieval_calls"]
            accesses += trace["index_accesses"]
    return {
        "know": know,
        "unknow": unknow,
        "ambiguous": ambiguous,
        "mean_subquestions": (nodes_total / graphed) if graphed else None,
        "retrieval_calls": retrieval,
        "index_accesses": accesses,
    }


def test_criterion_10_statistics_reporting(tmp_path):
    enc, index, texts = build_tiny_rag(n=12, dims=32)
    gw = make_gateway(
        rule(gate_regex("familiar"), "know", regex=True),
        rule(GATE_MARK, "unknow"),
        rule(DAG_MARK, dag_json([
            task("1", instr="alpha lookup"), task("2", instr="beta lookup"),
        ])),
        rule(SEC_DRAFT, "B"),
        rule("", "B"),
    )
    pipe = Pipeline(gw, PipelineConfig(retrieve_n=2, coarse_k=5),
                    encoder=enc, index=index, chunk_texts=texts)
    report = evaluate(marker_items(4, 4), pipe, trace_dir=tmp_path)

    recount = recount_trace_files(tmp_path)
    assert recount["know"] == report.know_count == 4
    assert recount["unknow"] == report.unknow_count == 12
    assert recount["ambiguous"] == report.ambiguous_count == 0
    assert recount["mean_subquestions"] == report.mean_subquestions == 2.0
    assert recount["retrieval_calls"] == report.retrieval_calls == 12
    assert recount["index_accesses"] == report.index_accesses == 12
    ok(10, "gate counts (4 know / 12 unknow), mean subquestions 2.0, and "
           "retrieval counters all equal the trace-file recounts exactly")
