"""Training-data curation: score filters, diversity selection, and
golden/distractor record construction.

Instruction records arrive pre-scored (scoring models are out of scope);
this module screens them by threshold, picks a diverse subset with
k-center greedy over their embeddings, and builds retrieval-training
records that pair golden documents with hard negatives mined from the
index.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embed import Encoder
from .errors import DimensionMismatch, FormatError, InsufficientPool, InvalidM, StoreIO
from .vindex import VectorIndex


@dataclass
class CurationRecord:
    id: str
    instruction: str
    response: str
    quality_score: float
    embedding: list[float] | None = None
    extra_scores: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not math.isfinite(self.quality_score):
            raise ValueError(f"quality_score must be finite, got {self.quality_score}")

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "instruction": self.instruction,
            "response": self.response,
            "quality_score": self.quality_score,
        }
        if self.embedding is not None:
            out["embedding"] = list(self.embedding)
        if self.extra_scores:
            out["extra_scores"] = dict(self.extra_scores)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "CurationRecord":
        return cls(
            id=str(obj["id"]),
            instruction=str(obj["instruction"]),
            response=str(obj.get("response", "")),
            quality_score=float(obj["quality_score"]),
            embedding=list(obj["embedding"]) if obj.get("embedding") is not None else None,
            extra_scores={k: float(v) for k, v in obj.get("extra_scores", {}).items()},
        )


def filter_by_score(
    records: Sequence[CurationRecord], threshold: float, field_name: str = "quality_score"
) -> list[CurationRecord]:
    """Keep records scoring at or above the threshold, order preserved.

    ``field_name`` selects the primary score or any named extra score, so
    multi-stage screens compose as repeated calls.
    """
    out = []
    for r in records:
        if field_name == "quality_score":
            score = r.quality_score
        else:
            try:
                score = r.extra_scores[field_name]
            except KeyError:
                raise ValueError(
                    f"record {r.id!r} has no score field {field_name!r}"
                ) from None
        if score >= threshold:
            out.append(r)
    return out


def dedupe_by_instruction(records: Sequence[CurationRecord]) -> list[CurationRecord]:
    """Drop exact duplicates by whitespace/case-normalized instruction,
    keeping the first occurrence."""
    seen: set[str] = set()
    out = []
    for r in records:
        key = " ".join(r.instruction.lower().split())
        if key in seen:
            continue
        seen.add(key)
        out.append(r)
    return out


def k_center_greedy(
    embeddings: Sequence[Sequence[float]] | np.ndarray, m: int, seed_index: int = 0
) -> list[int]:
    """Pick m indices maximizing spread: the seed first, then repeatedly
    the point farthest (Euclidean) from its nearest picked center.

    Ties break toward the lower index. Classic 2-approximation for the
    k-center covering objective.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch("embeddings must be a 2-D array", shape=X.shape)
    n = X.shape[0]
    if not (1 <= m <= n):
        raise InvalidM("need 1 <= m <= n", m=m, n=n)
    if not (0 <= seed_index < n):
        raise ValueError(f"seed_index {seed_index} out of range for n={n}")

    picks = [seed_index]
    min_dist = np.linalg.norm(X - X[seed_index], axis=1)
    while len(picks) < m:
        nxt = int(np.argmax(min_dist))  # first max wins: lowest index
        picks.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(X - X[nxt], axis=1))
    return picks


@dataclass
class RagTrainingRecord:
    question: str
    golden_docs: list[str]
    distractor_docs: list[str]
    answer: str = ""

    def __post_init__(self) -> None:
        if not self.golden_docs:
            raise ValueError("need at least one golden doc")
        overlap = set(self.golden_docs) & set(self.distractor_docs)
        if overlap:
            raise ValueError(f"golden and distractor sets overlap: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "golden_docs": list(self.golden_docs),
            "distractor_docs": list(self.distractor_docs),
            "answer": self.answer,
        }


def build_rag_record(
    question: str,
    golden: Sequence[str],
    pool: VectorIndex,
    n_distractors: int,
    *,
    encoder: Encoder,
    answer: str = "",
) -> RagTrainingRecord:
    """Mine hard negatives: the question's top exact-search hits from the
    pool, skipping golden ids. Highly-ranked non-golden passages are the
    most confusable, which is the point."""
    golden_ids = list(golden)
    if not golden_ids:
        raise ValueError("golden must be non-empty")
    if n_distractors < 0:
        raise ValueError("n_distractors must be >= 0")
    golden_set = set(golden_ids)
    available = sum(1 for cid in pool.chunk_ids if cid not in golden_set)
    if available < n_distractors:
        raise InsufficientPool(
            "pool too small after excluding golden docs",
            available=available,
            needed=n_distractors,
        )
    distractors: list[str] = []
    if n_distractors > 0:
        qvec = encoder.encode(question)
        hits = pool.search_exact(qvec, n_distractors + len(golden_set))
        distractors = [h.chunk_id for h in hits if h.chunk_id not in golden_set]
        distractors = distractors[:n_distractors]
    return RagTrainingRecord(
        question=question,
        golden_docs=golden_ids,
        distractor_docs=distractors,
        answer=answer,
    )


# -- JSONL IO ----------------------------------------------------------


def load_curation_records(path: str | Path) -> list[CurationRecord]:
    out = []
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(CurationRecord.from_dict(json.loads(line)))
                except json.JSONDecodeError as exc:
                    raise FormatError(
                        "bad JSON line", path=str(path), line=line_no
                    ) from exc
                except (KeyError, TypeError, ValueError) as exc:
                    raise FormatError(
                        f"bad record: {exc}", path=str(path), line=line_no
                    ) from exc
    except OSError as exc:
        raise StoreIO("cannot read records", path=str(path), cause=str(exc)) from exc
    return out


def save_curation_records(records: Sequence[CurationRecord], path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for r in records:
                f.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False))
                f.write("\n")
    except OSError as exc:
        raise StoreIO("cannot write records", path=str(path), cause=str(exc)) from exc


def save_rag_records(records: Sequence[RagTrainingRecord], path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            for r in records:
                f.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False))
                f.write("\n")
    except OSError as exc:
        raise StoreIO("cannot write records", path=str(path), cause=str(exc)) from exc
