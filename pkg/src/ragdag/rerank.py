"""Second retrieval stage: rescore coarse candidates, keep the best few.

The first stage hands over a generous candidate set (32 by default); this
module scores each candidate against the query and keeps the top 5. The
scorer is pluggable: a deterministic lexical-overlap scorer for offline
and test use, or a remote scoring service for real deployments.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import requests

from .errors import ScorerUnavailable
from .vindex import ScoredDocument

_WORD = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> Counter:
    return Counter(_WORD.findall(text.lower()))


class Scorer(Protocol):
    def score(self, query: str, passages: Sequence[str]) -> list[float]: ...


class TokenOverlapScorer:
    """Multiset token-overlap F1 between query and passage.

    Deterministic and dependency-free; the stand-in for a neural reranker
    when running offline.
    """

    def score(self, query: str, passages: Sequence[str]) -> list[float]:
        q = _tokens(query)
        q_total = sum(q.values())
        out: list[float] = []
        for passage in passages:
            p = _tokens(passage)
            p_total = sum(p.values())
            overlap = sum((q & p).values())
            if overlap == 0 or q_total == 0 or p_total == 0:
                out.append(0.0)
                continue
            precision = overlap / p_total
            recall = overlap / q_total
            out.append(2 * precision * recall / (precision + recall))
        return out


class RemoteScorer:
    """HTTP scorer: POST {"query", "passages"} -> {"scores"}."""

    def __init__(
        self,
        url: str,
        timeout: float = 30.0,
        batch_size: int = 32,
        retries: int = 3,
        backoff: Sequence[float] = (0.5, 1.0, 2.0),
        session: requests.Session | None = None,
    ) -> None:
        self.url = url
        self.timeout = timeout
        self.batch_size = batch_size
        self.retries = retries
        self.backoff = tuple(backoff)
        self._session = session or requests.Session()

    def _post(self, query: str, passages: Sequence[str]) -> list[float]:
        import time as _time

        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._session.post(
                    self.url,
                    json={"query": query, "passages": list(passages)},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                scores = resp.json().get("scores")
                if not isinstance(scores, list) or len(scores) != len(passages):
                    raise ScorerUnavailable(
                        "scorer returned wrong number of scores",
                        url=self.url,
                        expected=len(passages),
                        got=len(scores) if isinstance(scores, list) else None,
                    )
                return [float(s) for s in scores]
            except ScorerUnavailable:
                raise
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    _time.sleep(self.backoff[min(attempt, len(self.backoff) - 1)])
        raise ScorerUnavailable(
            "scorer unreachable", url=self.url, attempts=self.retries, cause=str(last)
        )

    def score(self, query: str, passages: Sequence[str]) -> list[float]:
        out: list[float] = []
        for start in range(0, len(passages), self.batch_size):
            out.extend(self._post(query, passages[start : start + self.batch_size]))
        return out


@dataclass
class RerankConfig:
    coarse_k: int = 32
    final_n: int = 5
    scorer: Scorer = field(default_factory=TokenOverlapScorer)

    def __post_init__(self) -> None:
        if not (1 <= self.final_n <= self.coarse_k):
            raise ValueError(
                f"need 1 <= final_n <= coarse_k, got final_n={self.final_n} "
                f"coarse_k={self.coarse_k}"
            )


def _norm_candidate(cand) -> tuple[str, str]:
    if isinstance(cand, Mapping):
        return str(cand["chunk_id"]), str(cand["text"])
    if hasattr(cand, "chunk_id") and hasattr(cand, "text"):
        return str(cand.chunk_id), str(cand.text)
    chunk_id, text = cand
    return str(chunk_id), str(text)


def rerank(query: str, candidates: Sequence, cfg: RerankConfig) -> list[ScoredDocument]:
    """Score candidates and keep the best ``final_n``, stage ``fine``.

    Candidates may be (chunk_id, text) pairs, dicts, or objects with those
    attributes. Output order is descending score, ties by ascending
    chunk_id, so the input order never matters.
    """
    if not candidates:
        raise ValueError("rerank requires a non-empty candidate list")
    pairs = [_norm_candidate(c) for c in candidates]
    scores = cfg.scorer.score(query, [text for _, text in pairs])
    if len(scores) != len(pairs):
        raise ScorerUnavailable(
            "scorer returned wrong number of scores",
            expected=len(pairs),
            got=len(scores),
        )
    ranked = sorted(zip(pairs, scores), key=lambda t: (-t[1], t[0][0]))
    return [
        ScoredDocument(chunk_id=cid, score=float(s), stage="fine")
        for (cid, _), s in ranked[: cfg.final_n]
    ]
