import json

import pytest

from ragdag.embed import HashEncoder
from ragdag.modelgw import ROLES, ModelGateway, ScriptedBackend, ScriptedRule
from ragdag.vindex import IndexParams, VectorIndex

# Substrings unique to each template, used to route scripted replies.
GATE_MARK = "determine whether you can answer this medical question"
DAG_MARK = "break the question into smaller"


def rule(matcher: str, response: str, **kw) -> ScriptedRule:
    return ScriptedRule(matcher=matcher, response=response, **kw)


def task(tid, deps=(), instr="look something up"):
    return {"task_id": tid, "dependent_task_ids": list(deps), "instruction": instr}


def dag_json(tasks) -> str:
    return json.dumps(tasks)


def make_gateway(*rules_, budgets=None, tokenizer=None) -> ModelGateway:
    backend = ScriptedBackend(list(rules_))
    kw = {}
    if budgets is not None:
        kw["budgets"] = budgets
    if tokenizer is not None:
        kw["tokenizer"] = tokenizer
    return ModelGateway({r: backend for r in ROLES}, **kw)


@pytest.fixture
def gateway_factory():
    return make_gateway


def build_tiny_rag(n=12, dims=32, encoder_seed=0):
    texts = {
        f"custom:{i}:0": f"topic{i} alpha beta gamma delta{i} epsilon{i % 3}"
        for i in range(n)
    }
    enc = HashEncoder(dims=dims, seed=encoder_seed)
    index = VectorIndex.build(
        ((cid, enc.encode(t)) for cid, t in sorted(texts.items())),
        IndexParams(dims=dims, max_neighbors=4, ef_construction=32, ef_search=16, seed=1),
    )
    return enc, index, texts


@pytest.fixture(scope="session")
def tiny_rag():
    return build_tiny_rag()
