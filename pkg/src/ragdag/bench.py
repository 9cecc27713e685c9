"""Benchmark harness: datasets in, accuracy and trace reports out.

Items are multiple-choice (A-D), yes/no, or yes/no/maybe. Each item is
rendered to a question string, pushed through a pipeline, and the answer
label is extracted from the final text by a fixed rule cascade. Accuracy
is exact integer counting. An optional choice-shuffling ensemble runs
several option permutations per item and majority-votes the de-permuted
labels; trial zero is always the identity permutation, so a single-trial
ensemble is identical to no ensemble at all.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .errors import FormatError, MissingGold, RagdagError, StoreIO

KINDS = ("mcq", "boolean", "boolean3")
MCQ_LABELS = ("A", "B", "C", "D")
UNPARSED = "Unparsed"

_BOOL_OPTIONS = {
    "boolean": (("Yes", "Yes"), ("No", "No")),
    "boolean3": (("Yes", "Yes"), ("No", "No"), ("Maybe", "Maybe")),
}


@dataclass(frozen=True)
class BenchItem:
    id: str
    question: str
    kind: str
    options: tuple[tuple[str, str], ...]
    gold: str
    context: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise FormatError(f"unknown item kind {self.kind!r}", item=self.id)
        labels = tuple(lab for lab, _ in self.options)
        if self.kind == "mcq":
            if labels != MCQ_LABELS:
                raise FormatError(
                    "mcq items need exactly options A, B, C, D",
                    item=self.id,
                    labels=labels,
                )
            if any(not text.strip() for _, text in self.options):
                raise FormatError("empty option text", item=self.id)
        else:
            expected = tuple(lab for lab, _ in _BOOL_OPTIONS[self.kind])
            if labels != expected:
                raise FormatError(
                    "boolean item has wrong options", item=self.id, labels=labels
                )
        if self.gold not in labels:
            raise MissingGold(
                "gold label is not among the options", item=self.id, gold=self.gold
            )

    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.options)


# -- dataset loading ---------------------------------------------------


def _ctx_join(raw) -> str | None:
    if raw is None:
        return None
    if isinstance(raw, str):
        return raw
    if isinstance(raw, dict):
        raw = raw.get("contexts", [])
    return "\n".join(str(part) for part in raw)


def _adapt_native(obj: dict, line_no: int) -> BenchItem:
    kind = obj["kind"]
    if kind == "mcq":
        options = tuple((str(lab), str(text)) for lab, text in obj["options"])
    else:
        options = _BOOL_OPTIONS.get(kind, ())
    return BenchItem(
        id=str(obj["id"]),
        question=str(obj["question"]),
        kind=kind,
        options=options,
        gold=str(obj["gold"]),
        context=obj.get("context"),
    )


def _adapt_medqa(obj: dict, line_no: int) -> BenchItem:
    opts = obj["options"]
    options = tuple((lab, str(opts[lab])) for lab in MCQ_LABELS)
    gold = obj.get("answer_idx") or obj.get("answer")
    return BenchItem(
        id=str(obj.get("id", f"medqa-{line_no}")),
        question=str(obj["question"]),
        kind="mcq",
        options=options,
        gold=str(gold),
    )


def _adapt_medmcqa(obj: dict, line_no: int) -> BenchItem:
    options = tuple(
        (lab, str(obj[key])) for lab, key in zip(MCQ_LABELS, ("opa", "opb", "opc", "opd"))
    )
    cop = int(obj["cop"])
    if not (0 <= cop <= 3):
        raise FormatError("cop must be 0..3", cop=cop)
    return BenchItem(
        id=str(obj.get("id", f"medmcqa-{line_no}")),
        question=str(obj["question"]),
        kind="mcq",
        options=options,
        gold=MCQ_LABELS[cop],
    )


def _adapt_mmlu(obj: dict, line_no: int) -> BenchItem:
    choices = obj["choices"]
    if len(choices) != 4:
        raise FormatError("mmlu items need 4 choices", got=len(choices))
    answer = int(obj["answer"])
    if not (0 <= answer <= 3):
        raise FormatError("answer must be 0..3", answer=answer)
    return BenchItem(
        id=str(obj.get("id", f"mmlu-{line_no}")),
        question=str(obj["question"]),
        kind="mcq",
        options=tuple(zip(MCQ_LABELS, (str(c) for c in choices))),
        gold=MCQ_LABELS[answer],
    )


def _adapt_pubmedqa(obj: dict, line_no: int) -> BenchItem:
    decision = str(obj["final_decision"]).strip().lower()
    gold = {"yes": "Yes", "no": "No", "maybe": "Maybe"}.get(decision)
    if gold is None:
        raise FormatError("final_decision must be yes/no/maybe", got=decision)
    return BenchItem(
        id=str(obj.get("id", f"pubmedqa-{line_no}")),
        question=str(obj["question"]),
        kind="boolean3",
        options=_BOOL_OPTIONS["boolean3"],
        gold=gold,
        context=_ctx_join(obj.get("context")),
    )


def _adapt_bioasq(obj: dict, line_no: int) -> BenchItem:
    raw = str(obj.get("exact_answer") or obj.get("answer", "")).strip().lower()
    gold = {"yes": "Yes", "no": "No"}.get(raw)
    if gold is None:
        raise FormatError("exact_answer must be yes/no", got=raw)
    question = obj.get("body") or obj.get("question")
    return BenchItem(
        id=str(obj.get("id", f"bioasq-{line_no}")),
        question=str(question),
        kind="boolean",
        options=_BOOL_OPTIONS["boolean"],
        gold=gold,
    )


_ADAPTERS: Mapping[str, Callable[[dict, int], BenchItem]] = {
    "native": _adapt_native,
    "medqa": _adapt_medqa,
    "medmcqa": _adapt_medmcqa,
    "mmlu": _adapt_mmlu,
    "pubmedqa": _adapt_pubmedqa,
    "bioasq": _adapt_bioasq,
}

FORMATS = tuple(_ADAPTERS)


def load_dataset(
    path: str | Path, format: str = "native", questions_only: bool = False
) -> list[BenchItem]:
    """Load a JSONL benchmark file through the named adapter.

    ``questions_only`` strips golden contexts, for runs that must rely on
    retrieval instead of provided passages.
    """
    if format not in _ADAPTERS:
        raise FormatError(f"unknown dataset format {format!r}", known=FORMATS)
    adapter = _ADAPTERS[format]
    items: list[BenchItem] = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(
                        "bad JSON line", path=str(path), line=line_no
                    ) from exc
                try:
                    item = adapter(obj, line_no)
                except (KeyError, TypeError, ValueError) as exc:
                    raise FormatError(
                        f"bad record: {exc}", path=str(path), line=line_no
                    ) from exc
                except (FormatError, MissingGold) as exc:
                    exc.context.setdefault("path", str(path))
                    exc.context.setdefault("line", line_no)
                    raise
                if questions_only and item.context is not None:
                    item = BenchItem(
                        id=item.id,
                        question=item.question,
                        kind=item.kind,
                        options=item.options,
                        gold=item.gold,
                        context=None,
                    )
                items.append(item)
    except OSError as exc:
        raise StoreIO("cannot read dataset", path=str(path), cause=str(exc)) from exc
    return items


# -- rendering and answer extraction ------------------------------------


def render_item_question(item: BenchItem) -> str:
    """The question string a pipeline sees, options included for mcq."""
    parts = []
    if item.context:
        parts.append(f"Context: {item.context}")
    parts.append(item.question)
    if item.kind == "mcq":
        parts.append("Options:")
        parts.extend(f"{lab}. {text}" for lab, text in item.options)
    elif item.kind == "boolean":
        parts.append("Answer Yes or No.")
    else:
        parts.append("Answer Yes, No, or Maybe.")
    return "\n".join(parts)


def _norm_text(text: str) -> str:
    return " ".join(text.lower().split()).rstrip(".")


def extract_answer(model_text: str, item: BenchItem) -> str:
    """Label extraction cascade: standalone label word, exact option
    text, then Unparsed. Total on any input."""
    labels = item.labels()
    if item.kind == "mcq":
        pattern = r"\b([A-Da-d])\b"
        m = re.search(pattern, model_text)
        if m:
            return m.group(1).upper()
    else:
        words = "|".join(lab.lower() for lab in labels)
        m = re.search(rf"\b({words})\b", model_text, re.IGNORECASE)
        if m:
            return m.group(1).capitalize()
    normed = _norm_text(model_text)
    for lab, text in item.options:
        if normed == _norm_text(text):
            return lab
    return UNPARSED


# -- choice shuffling ----------------------------------------------------


@dataclass(frozen=True)
class EnsembleConfig:
    shuffle_trials: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shuffle_trials < 1:
            raise ValueError("shuffle_trials must be >= 1")


def _trial_perm(item: BenchItem, cfg: EnsembleConfig, trial: int) -> list[int]:
    # perm[i] = original option index shown at position i this trial
    n = len(item.options)
    if trial == 0:
        return list(range(n))
    rng = random.Random(f"{cfg.seed}:{item.id}:{trial}")
    perm = list(range(n))
    rng.shuffle(perm)
    return perm


def _permute_item(item: BenchItem, perm: Sequence[int]) -> BenchItem:
    labels = item.labels()
    texts = [text for _, text in item.options]
    new_options = tuple(
        (labels[i], texts[perm[i]]) for i in range(len(labels))
    )
    gold_idx = labels.index(item.gold)
    new_gold = labels[perm.index(gold_idx)]
    return BenchItem(
        id=item.id,
        question=item.question,
        kind=item.kind,
        options=new_options,
        gold=new_gold,
        context=item.context,
    )


def _map_back(label: str, item: BenchItem, perm: Sequence[int]) -> str:
    if label == UNPARSED:
        return UNPARSED
    labels = item.labels()
    return labels[perm[labels.index(label)]]


# -- evaluation ----------------------------------------------------------


@dataclass
class BenchReport:
    dataset: str | None
    n_items: int
    correct_count: int
    unparsed_count: int
    errored_count: int
    accuracy: float
    know_count: int
    unknow_count: int
    ambiguous_count: int
    gated_calls: int
    mean_subquestions: float | None
    retrieval_calls: int
    index_accesses: int
    items: list[dict]
    config: dict

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "n_items": self.n_items,
            "correct_count": self.correct_count,
            "unparsed_count": self.unparsed_count,
            "errored_count": self.errored_count,
            "accuracy": self.accuracy,
            "know_count": self.know_count,
            "unknow_count": self.unknow_count,
            "ambiguous_count": self.ambiguous_count,
            "gated_calls": self.gated_calls,
            "mean_subquestions": self.mean_subquestions,
            "retrieval_calls": self.retrieval_calls,
            "index_accesses": self.index_accesses,
            "items": list(self.items),
            "config": dict(self.config),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)


def _safe_name(raw: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", raw)


def _vote(mapped: Sequence[str], original_labels: Sequence[str]) -> str:
    counts: dict[str, int] = {}
    for lab in mapped:
        if lab != UNPARSED:
            counts[lab] = counts.get(lab, 0) + 1
    if not counts:
        return UNPARSED
    best = max(counts.values())
    # tie-break: earliest label in the item's original option order
    for lab in original_labels:
        if counts.get(lab) == best:
            return lab
    return UNPARSED


def evaluate(
    items: Sequence[BenchItem],
    pipeline,
    *,
    ensemble: EnsembleConfig | None = None,
    trace_dir: str | Path | None = None,
    dataset_name: str | None = None,
) -> BenchReport:
    """Run every item, count exactly, and optionally write trace files.

    Per-item pipeline errors mark the item errored (scored incorrect);
    they never abort the run. Gate statistics and subtask means aggregate
    over every pipeline run recorded in the traces: mean_subquestions is
    (total subtasks across graphed runs) / (number of graphed runs).
    """
    ens = ensemble or EnsembleConfig()
    out_dir = Path(trace_dir) if trace_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    item_rows: list[dict] = []
    correct = unparsed = errored = 0
    know = unknow = ambiguous = 0
    graphed_runs = 0
    subtask_total = 0
    retrieval_calls = index_accesses = 0

    for item in items:
        trials = ens.shuffle_trials if item.kind == "mcq" else 1
        trial_rows: list[dict] = []
        mapped_votes: list[str] = []
        trial_errors = 0
        for t in range(trials):
            perm = _trial_perm(item, ens, t)
            p_item = _permute_item(item, perm)
            qtext = render_item_question(p_item)
            row: dict = {"trial": t, "perm": list(perm)}
            try:
                result = pipeline.answer(qtext)
            except RagdagError as exc:
                trial_errors += 1
                row.update(error=exc.name, detail=str(exc))
                trial_rows.append(row)
                continue
            raw_label = extract_answer(result.final_answer, p_item)
            mapped = _map_back(raw_label, p_item, perm)
            mapped_votes.append(mapped)
            for g in result.gate_decisions:
                if g["decision"] == "know":
                    know += 1
                elif g.get("ambiguous"):
                    ambiguous += 1
                else:
                    unknow += 1
            if result.graph is not None:
                graphed_runs += 1
                subtask_total += len(result.graph.nodes)
            retrieval_calls += result.retrieval_calls
            index_accesses += result.index_accesses
            row.update(extracted=raw_label, mapped=mapped, trace=result.to_dict())
            trial_rows.append(row)

        if trial_errors == trials:
            verdict = UNPARSED
            errored += 1
        else:
            verdict = _vote(mapped_votes, item.labels())
        if verdict == UNPARSED and trial_errors < trials:
            unparsed += 1
        is_correct = verdict == item.gold
        correct += int(is_correct)

        item_rows.append({
            "id": item.id,
            "kind": item.kind,
            "gold": item.gold,
            "verdict": verdict,
            "correct": is_correct,
            "errored_trials": trial_errors,
            "trials": trials,
        })
        if out_dir is not None:
            payload = {
                "item": {
                    "id": item.id,
                    "kind": item.kind,
                    "question": item.question,
                    "gold": item.gold,
                    "options": [list(o) for o in item.options],
                },
                "verdict": verdict,
                "correct": is_correct,
                "trials": trial_rows,
            }
            path = out_dir / f"{_safe_name(item.id)}.json"
            path.write_text(
                json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2),
                encoding="utf-8",
            )

    n = len(items)
    cfg = getattr(pipeline, "cfg", None)
    config_summary = {
        "ensemble_trials": ens.shuffle_trials,
        "ensemble_seed": ens.seed,
    }
    if cfg is not None:
        config_summary.update(
            enable_gate=cfg.enable_gate,
            enable_dag=cfg.enable_dag,
            enable_rag=cfg.enable_rag,
            retrieve_n=cfg.retrieve_n,
            coarse_k=cfg.coarse_k,
        )
    report = BenchReport(
        dataset=dataset_name,
        n_items=n,
        correct_count=correct,
        unparsed_count=unparsed,
        errored_count=errored,
        accuracy=(correct / n) if n else 0.0,
        know_count=know,
        unknow_count=unknow,
        ambiguous_count=ambiguous,
        gated_calls=know + unknow + ambiguous,
        mean_subquestions=(subtask_total / graphed_runs) if graphed_runs else None,
        retrieval_calls=retrieval_calls,
        index_accesses=index_accesses,
        items=item_rows,
        config=config_summary,
    )
    if out_dir is not None:
        (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    return report


def sweep_docs(
    items: Sequence[BenchItem],
    pipeline_factory: Callable[[int], object],
    n_values: Sequence[int],
    **kwargs,
) -> dict[int, BenchReport]:
    """One evaluation per retrieve_n value, everything else fixed."""
    out: dict[int, BenchReport] = {}
    for n in n_values:
        kw = dict(kwargs)
        if kwargs.get("trace_dir") is not None:
            kw["trace_dir"] = Path(kwargs["trace_dir"]) / f"n{n}"
        out[n] = evaluate(items, pipeline_factory(n), **kw)
    return out


def standard_ablation_toggles() -> list[tuple[str, dict]]:
    """The five component-toggle rows compared in evaluation."""
    return [
        ("base", {"enable_gate": False, "enable_dag": False, "enable_rag": False}),
        ("rag", {"enable_gate": False, "enable_dag": False, "enable_rag": True}),
        ("gate_rag", {"enable_gate": True, "enable_dag": False, "enable_rag": True}),
        ("dag", {"enable_gate": False, "enable_dag": True, "enable_rag": False}),
        ("full", {"enable_gate": True, "enable_dag": True, "enable_rag": True}),
    ]


def ablate(
    items: Sequence[BenchItem],
    variants: Sequence[tuple[str, object]],
    **kwargs,
) -> list[dict]:
    """Evaluate each named pipeline variant; one comparison row each."""
    rows: list[dict] = []
    for name, pipeline in variants:
        kw = dict(kwargs)
        if kwargs.get("trace_dir") is not None:
            kw["trace_dir"] = Path(kwargs["trace_dir"]) / _safe_name(name)
        report = evaluate(items, pipeline, **kw)
        rows.append({
            "variant": name,
            "n_items": report.n_items,
            "correct": report.correct_count,
            "accuracy": report.accuracy,
            "retrieval_calls": report.retrieval_calls,
            "index_accesses": report.index_accesses,
            "know_count": report.know_count,
            "unknow_count": report.unknow_count,
        })
    return rows


def aggregate_traces(trace_dir: str | Path) -> dict:
    """Recount verdicts and gate stats from per-item trace files.

    Reads only the raw item traces, never report.json, so the result can
    be checked against a live BenchReport.
    """
    out_dir = Path(trace_dir)
    counts = {
        "n_items": 0,
        "correct_count": 0,
        "unparsed_count": 0,
        "know_count": 0,
        "unknow_count": 0,
        "ambiguous_count": 0,
        "retrieval_calls": 0,
        "index_accesses": 0,
    }
    graphed = 0
    subtasks = 0
    try:
        paths = sorted(p for p in out_dir.glob("*.json") if p.name != "report.json")
        for path in paths:
            payload = json.loads(path.read_text(encoding="utf-8"))
            counts["n_items"] += 1
            counts["correct_count"] += int(payload["correct"])
            trial_list = payload["trials"]
            all_errored = all("error" in row for row in trial_list)
            if payload["verdict"] == UNPARSED and not all_errored:
                counts["unparsed_count"] += 1
            for row in trial_list:
                trace = row.get("trace")
                if trace is None:
                    continue
                for g in trace["gate_decisions"]:
                    if g["decision"] == "know":
                        counts["know_count"] += 1
                    elif g.get("ambiguous"):
                        counts["ambiguous_count"] += 1
                    else:
                        counts["unknow_count"] += 1
                if trace.get("graph") is not None:
                    graphed += 1
                    subtasks += len(trace["graph"]["nodes"])
                counts["retrieval_calls"] += trace["retrieval_calls"]
                counts["index_accesses"] += trace["index_accesses"]
    except OSError as exc:
        raise StoreIO("cannot read traces", path=str(out_dir), cause=str(exc)) from exc
    counts["mean_subquestions"] = (subtasks / graphed) if graphed else None
    counts["accuracy"] = (
        counts["correct_count"] / counts["n_items"] if counts["n_items"] else 0.0
    )
    return counts


# -- text rendering -------------------------------------------------------


def render_report_table(reports: Mapping[str, BenchReport]) -> str:
    headers = ["run", "n", "correct", "accuracy", "know", "unknow", "retrievals"]
    rows = [headers]
    for name, r in reports.items():
        rows.append([
            name,
            str(r.n_items),
            str(r.correct_count),
            f"{r.accuracy:.4f}",
            str(r.know_count),
            str(r.unknow_count),
            str(r.retrieval_calls),
        ])
    return _align(rows)


def render_ablation_table(rows: Sequence[dict]) -> str:
    headers = ["variant", "n", "correct", "accuracy", "retrievals", "index_accesses"]
    table = [headers]
    for row in rows:
        table.append([
            str(row["variant"]),
            str(row["n_items"]),
            str(row["correct"]),
            f"{row['accuracy']:.4f}",
            str(row["retrieval_calls"]),
            str(row["index_accesses"]),
        ])
    return _align(table)


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
