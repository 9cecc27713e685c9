"""End-to-end answering flow.

A question first hits the answerability gate. "know" means the medical
role answers directly and the run ends. Otherwise the question is
decomposed into a task graph; each subtask is gated again, optionally
retrieves passages, and is answered with its dependencies' answers in
context. A final synthesis prompt stitches together the base-question
passages, a drafted answer paragraph, and all subtask Q/A pairs.

Prompts are assembled from marker-delimited sections so the budget
enforcer can shrink them structurally: lowest-ranked passages go first,
then the oldest dependency pairs, then the draft. The question and any
instruction header are never dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .dagdecomp import (
    CycleDetected,
    EmptyTaskList,
    MalformedJson,
    TaskGraph,
    UnknownDependency,
    fallback_single,
    parse_task_list,
    render_dag_prompt,
    topo_order,
)
from .embed import Encoder
from .errors import (
    BackendTimeout,
    BackendUnavailable,
    BudgetImpossible,
    ConfigError,
    NoScriptMatch,
)
from .gate import normalize_gate_output, render_gate_prompt
from .modelgw import DEFAULT_BUDGETS, CompletionRequest, ModelGateway
from .rerank import RerankConfig, Scorer, TokenOverlapScorer, rerank
from .tokenization import DEFAULT_TOKENIZER, Tokenizer
from .vindex import VectorIndex

SEC_DOCS = "### Retrieved documents"
SEC_DRAFT = "### Draft answer"
SEC_DEPS = "### Prior findings"
SEC_QUESTION = "### Question"

_MARKERS = (SEC_DOCS, SEC_DRAFT, SEC_DEPS, SEC_QUESTION)


def _flat(text: str) -> str:
    # Section bodies are single-line so the budget parser can invert them.
    return " ".join(text.split())


@dataclass(frozen=True)
class RetrievedPassage:
    chunk_id: str
    score: float
    stage: str
    text: str

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "score": self.score,
            "stage": self.stage,
            "text": self.text,
        }


@dataclass(frozen=True)
class DepQA:
    question: str
    answer: str


@dataclass
class PipelineConfig:
    enable_gate: bool = True
    enable_dag: bool = True
    enable_rag: bool = True
    retrieve_n: int = 5
    coarse_k: int = 32
    budgets: dict = field(default_factory=lambda: dict(DEFAULT_BUDGETS))
    decompose_retries: int = 2
    gate_max_output_tokens: int = 8
    dag_max_output_tokens: int = 512
    answer_max_output_tokens: int = 256

    def __post_init__(self) -> None:
        if self.retrieve_n < 1 or self.coarse_k < self.retrieve_n:
            raise ConfigError(
                "need 1 <= retrieve_n <= coarse_k",
                retrieve_n=self.retrieve_n,
                coarse_k=self.coarse_k,
            )
        for role in ("know", "dag", "medical"):
            if role not in self.budgets:
                raise ConfigError("missing budget", role=role)
            if self.budgets[role] < 1:
                raise ConfigError(
                    "budget must be positive", role=role, budget=self.budgets[role]
                )


# -- prompt composition ----------------------------------------------


def _docs_section(docs: Sequence[RetrievedPassage]) -> str:
    lines = [SEC_DOCS]
    for rank, d in enumerate(docs, 1):
        lines.append(f"[{rank}] (chunk_id={d.chunk_id}, score={d.score:.6f}) {_flat(d.text)}")
    return "\n".join(lines)


def _deps_section(pairs: Sequence[DepQA]) -> str:
    lines = [SEC_DEPS]
    for qa in pairs:
        lines.append(f"Q: {_flat(qa.question)}")
        lines.append(f"A: {_flat(qa.answer)}")
    return "\n".join(lines)


def compose_subtask_prompt(
    question: str,
    docs: Sequence[RetrievedPassage],
    dep_answers: Sequence[DepQA],
) -> str:
    """Passages (descending rank), then dependency Q/A pairs in execution
    order, then the question. Deterministic for identical inputs."""
    parts = []
    if docs:
        parts.append(_docs_section(docs))
    if dep_answers:
        parts.append(_deps_section(dep_answers))
    parts.append(f"{SEC_QUESTION}\n{_flat(question)}")
    return "\n\n".join(parts)


def compose_final_prompt(
    question: str,
    docs: Sequence[RetrievedPassage],
    draft: str | None,
    subqa: Sequence[DepQA],
) -> str:
    """Synthesis prompt: passages, draft paragraph, subtask findings,
    question, in that fixed order."""
    parts = []
    if docs:
        parts.append(_docs_section(docs))
    if draft is not None:
        parts.append(f"{SEC_DRAFT}\n{_flat(draft)}")
    if subqa:
        parts.append(_deps_section(subqa))
    parts.append(f"{SEC_QUESTION}\n{_flat(question)}")
    return "\n\n".join(parts)


@dataclass
class _Sections:
    doc_lines: list[str]
    draft: str | None
    dep_lines: list[str]  # alternating Q:/A: lines
    question: str

    def render(self) -> str:
        parts = []
        if self.doc_lines:
            parts.append("\n".join([SEC_DOCS] + self.doc_lines))
        if self.draft is not None:
            parts.append(f"{SEC_DRAFT}\n{self.draft}")
        if self.dep_lines:
            parts.append("\n".join([SEC_DEPS] + self.dep_lines))
        parts.append(f"{SEC_QUESTION}\n{self.question}")
        return "\n\n".join(parts)


def _parse_sections(prompt: str) -> _Sections | None:
    """Invert the composers. None when the prompt is not in canonical
    section form (such prompts are treated as unshrinkable)."""
    lines = prompt.split("\n")
    sections: dict[str, list[str]] = {}
    current: str | None = None
    order: list[str] = []
    for ln in lines:
        if ln in _MARKERS:
            if ln in sections:
                return None
            current = ln
            sections[ln] = []
            order.append(ln)
            continue
        if current is None:
            return None
        sections[current].append(ln)

    if order != [m for m in _MARKERS if m in sections]:
        return None  # out of canonical order
    if SEC_QUESTION not in sections:
        return None

    def strip_gap(body: list[str]) -> list[str]:
        # The "\n\n" joiner leaves one trailing blank line per section.
        while body and body[-1] == "":
            body.pop()
        return body

    doc_lines = strip_gap(sections.get(SEC_DOCS, []))
    draft_lines = strip_gap(sections.get(SEC_DRAFT, []))
    dep_lines = strip_gap(sections.get(SEC_DEPS, []))
    q_lines = strip_gap(sections[SEC_QUESTION])
    if len(q_lines) != 1:
        return None
    if SEC_DRAFT in sections and len(draft_lines) != 1:
        return None
    if any("" == ln for ln in doc_lines + dep_lines):
        return None
    if len(dep_lines) % 2 != 0:
        return None
    draft = draft_lines[0] if SEC_DRAFT in sections else None
    return _Sections(doc_lines, draft, dep_lines, q_lines[0])


def enforce_budget(
    prompt: str, budget_tokens: int, tokenizer: Tokenizer = DEFAULT_TOKENIZER
) -> str:
    """Shrink a canonical prompt until it fits the token budget.

    Drop order: lowest-ranked passage, oldest dependency pair, draft.
    Prompts without recognizable sections pass through when under budget
    and fail as impossible when over.
    """
    if budget_tokens < 64:
        raise ValueError(f"budget_tokens must be >= 64, got {budget_tokens}")
    if tokenizer.count(prompt) <= budget_tokens:
        return prompt
    sections = _parse_sections(prompt)
    if sections is None:
        raise BudgetImpossible(
            "prompt has no removable sections",
            tokens=tokenizer.count(prompt),
            budget=budget_tokens,
        )
    while True:
        if sections.doc_lines:
            sections.doc_lines.pop()
        elif sections.dep_lines:
            del sections.dep_lines[:2]
        elif sections.draft is not None:
            sections.draft = None
        else:
            raise BudgetImpossible(
                "question alone exceeds the budget",
                tokens=tokenizer.count(sections.render()),
                budget=budget_tokens,
            )
        rendered = sections.render()
        if tokenizer.count(rendered) <= budget_tokens:
            return rendered


# -- result record ----------------------------------------------------


@dataclass
class PipelineResult:
    question: str
    final_answer: str
    direct: bool
    gate_decisions: list[dict]
    graph: TaskGraph | None
    node_answers: dict[str, str]
    retrieved: dict[str, list[RetrievedPassage]]
    draft_answer: str | None
    subqa_block: str | None
    failed_nodes: dict[str, dict]
    model_calls: list[dict]
    retrieval_calls: int
    index_accesses: int
    warnings: list[str]
    schema_version: int = 1

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "question": self.question,
            "final_answer": self.final_answer,
            "direct": self.direct,
            "gate_decisions": list(self.gate_decisions),
            "graph": self.graph.to_dict() if self.graph is not None else None,
            "node_answers": dict(self.node_answers),
            "retrieved": {
                scope: [p.to_dict() for p in docs]
                for scope, docs in self.retrieved.items()
            },
            "draft_answer": self.draft_answer,
            "subqa_block": self.subqa_block,
            "failed_nodes": dict(self.failed_nodes),
            "model_calls": list(self.model_calls),
            "retrieval_calls": self.retrieval_calls,
            "index_accesses": self.index_accesses,
            "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)


# -- the orchestrator --------------------------------------------------


class Pipeline:
    """Wires gateway, index, encoder and reranker into the answer flow."""

    def __init__(
        self,
        gateway: ModelGateway,
        cfg: PipelineConfig,
        *,
        encoder: Encoder | None = None,
        index: VectorIndex | None = None,
        chunk_texts: Mapping[str, str] | None = None,
        scorer: Scorer | None = None,
    ) -> None:
        if cfg.enable_rag and (encoder is None or index is None or chunk_texts is None):
            raise ConfigError(
                "enable_rag requires encoder, index and chunk_texts",
                have_encoder=encoder is not None,
                have_index=index is not None,
                have_chunk_texts=chunk_texts is not None,
            )
        self.gateway = gateway
        self.cfg = cfg
        self._encoder = encoder
        self._index = index
        self._chunk_texts = chunk_texts
        self._rerank_cfg = RerankConfig(
            coarse_k=cfg.coarse_k,
            final_n=cfg.retrieve_n,
            scorer=scorer if scorer is not None else TokenOverlapScorer(),
        )
        self._tok: Tokenizer = gateway.tokenizer

    # one answer() run carries its state in a plain dict to keep the
    # pipeline object reusable and thread-safe per question
    def answer(self, question: str) -> PipelineResult:
        if not question or not question.strip():
            raise ValueError("question must be non-empty")
        run = {
            "gate_decisions": [],
            "model_calls": [],
            "retrieved": {},
            "cache": {},
            "retrieval_calls": 0,
            "index_accesses": 0,
            "warnings": [],
            "failed": {},
        }
        cfg = self.cfg

        if cfg.enable_gate:
            decision = self._classify(question, "base", run)
            if decision == "know":
                prompt = compose_subtask_prompt(question, [], [])
                text = self._call(run, "medical", prompt, "direct_answer",
                                  cfg.answer_max_output_tokens)
                return self._result(run, question, text, direct=True, graph=None,
                                    node_answers={}, draft=None, subqa_block=None)

        if cfg.enable_dag:
            graph = self._decompose(question, run)
        else:
            graph = fallback_single(question)
        run["warnings"].extend(graph.warnings)

        order = topo_order(graph)
        pos = {tid: i for i, tid in enumerate(order)}
        nmap = graph.node_map()
        node_answers: dict[str, str] = {}

        for tid in order:
            node = nmap[tid]
            bad = [d for d in node.dependent_task_ids if d in run["failed"]]
            if bad:
                node.status = "failed"
                run["failed"][tid] = {
                    "error": "NodeFailed",
                    "detail": f"dependency {bad[0]} failed",
                }
                continue
            deps = sorted(node.dependent_task_ids, key=pos.get)
            dep_qa = [DepQA(nmap[d].instruction, node_answers[d]) for d in deps]

            if cfg.enable_gate:
                node_decision = self._classify(node.instruction, tid, run)
                wants_docs = node_decision == "unknow"
            else:
                wants_docs = True
            docs = (
                self._retrieve(node.instruction, tid, run)
                if (cfg.enable_rag and wants_docs)
                else []
            )

            prompt = compose_subtask_prompt(node.instruction, docs, dep_qa)
            try:
                text = self._call(run, "medical", prompt, f"node:{tid}",
                                  cfg.answer_max_output_tokens)
            except (BackendTimeout, BackendUnavailable, NoScriptMatch) as exc:
                node.status = "failed"
                run["failed"][tid] = {"error": exc.name, "detail": str(exc)}
                continue
            node.status = "done"
            node.result = text
            node_answers[tid] = text

        base_docs = self._retrieve(question, "base", run) if cfg.enable_rag else []
        draft_prompt = compose_subtask_prompt(question, base_docs, [])
        draft = self._call(run, "medical", draft_prompt, "draft",
                           cfg.answer_max_output_tokens)

        subqa = [DepQA(nmap[t].instruction, node_answers[t]) for t in order
                 if t in node_answers]
        subqa_block = _deps_section(subqa) if subqa else None

        final_prompt = compose_final_prompt(question, base_docs, draft, subqa)
        final = self._call(run, "medical", final_prompt, "final",
                           cfg.answer_max_output_tokens)
        return self._result(run, question, final, direct=False, graph=graph,
                            node_answers=node_answers, draft=draft,
                            subqa_block=subqa_block)

    # -- helpers -------------------------------------------------------

    def _classify(self, question: str, scope: str, run: dict) -> str:
        prompt = render_gate_prompt(question)
        record = {"scope": scope, "decision": None, "raw_output": None,
                  "ambiguous": False}
        text = self._call(run, "know", prompt, f"gate:{scope}",
                          self.cfg.gate_max_output_tokens)
        decision = normalize_gate_output(text)
        if decision is None:
            # Ambiguity policy: prefer retrieval over unsupported answers.
            record.update(decision="unknow", raw_output=text, ambiguous=True)
        else:
            record.update(decision=decision, raw_output=text)
        run["gate_decisions"].append(record)
        return record["decision"]

    def _decompose(self, question: str, run: dict) -> TaskGraph:
        prompt = render_dag_prompt(question)
        for attempt in range(self.cfg.decompose_retries + 1):
            text = self._call(run, "dag", prompt, f"decompose:{attempt}",
                              self.cfg.dag_max_output_tokens)
            try:
                return parse_task_list(text)
            except (MalformedJson, EmptyTaskList, UnknownDependency, CycleDetected):
                continue
        run["warnings"].append("decomposition failed, using single-task fallback")
        return fallback_single(question)

    def _retrieve(self, query: str, scope: str, run: dict) -> list[RetrievedPassage]:
        cache = run["cache"]
        if query in cache:
            run["retrieved"][scope] = cache[query]
            return cache[query]
        run["retrieval_calls"] += 1
        qvec = self._encoder.encode(query)
        run["index_accesses"] += 1
        coarse = self._index.search(qvec, self.cfg.coarse_k)
        if not coarse:
            docs: list[RetrievedPassage] = []
        else:
            cands = [(d.chunk_id, self._chunk_texts[d.chunk_id]) for d in coarse]
            fine = rerank(query, cands, self._rerank_cfg)
            text_of = dict(cands)
            docs = [
                RetrievedPassage(d.chunk_id, d.score, d.stage, text_of[d.chunk_id])
                for d in fine
            ]
        cache[query] = docs
        run["retrieved"][scope] = docs
        return docs

    def _call(self, run: dict, role: str, prompt: str, purpose: str,
              max_output_tokens: int) -> str:
        pre = self._tok.count(prompt)
        fitted = enforce_budget(prompt, self.cfg.budgets[role], self._tok)
        result = self.gateway.complete(
            CompletionRequest(role=role, prompt=fitted,
                              max_output_tokens=max_output_tokens)
        )
        run["model_calls"].append({
            "role": role,
            "purpose": purpose,
            "tokens_pre_budget": pre,
            "prompt_tokens": result.usage.prompt_tokens,
            "output_tokens": result.usage.output_tokens,
        })
        return result.text

    def _result(self, run: dict, question: str, final_answer: str, *,
                direct: bool, graph: TaskGraph | None,
                node_answers: dict[str, str], draft: str | None,
                subqa_block: str | None) -> PipelineResult:
        return PipelineResult(
            question=question,
            final_answer=final_answer,
            direct=direct,
            gate_decisions=run["gate_decisions"],
            graph=graph,
            node_answers=node_answers,
            retrieved=run["retrieved"],
            draft_answer=draft,
            subqa_block=subqa_block,
            failed_nodes=run["failed"],
            model_calls=run["model_calls"],
            retrieval_calls=run["retrieval_calls"],
            index_accesses=run["index_accesses"],
            warnings=run["warnings"],
        )
