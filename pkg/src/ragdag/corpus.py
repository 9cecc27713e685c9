"""Corpus ingestion: raw documents -> uniquely identified text chunks.

Chunks are the retrievable unit. Splitting happens on paragraph boundaries
(blank-line delimited); a paragraph over the token cap is hard-split, first
on whitespace and as a last resort mid-word. Chunk ids are
``{source}:{document-index}:{chunk-index}`` so re-running an ingest produces
the same ids. The chunk store is append-only JSONL, one chunk per line.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DuplicateId, EmptyDocument, StoreIO
from .tokenization import DEFAULT_TOKENIZER, Tokenizer

SOURCES = ("pubmed", "wikipedia", "statpearls", "textbooks", "custom")

_PARAGRAPH_SPLIT = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class ChunkPolicy:
    """Paragraph-boundary chunking with a per-chunk token cap."""

    max_tokens: int = 256

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class CorpusChunk:
    id: str
    source: str
    title: str
    text: str
    token_estimate: int

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("chunk id must be non-empty")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if not self.text.strip():
            raise ValueError("chunk text must be non-empty")
        if self.token_estimate < 0:
            raise ValueError("token_estimate must be non-negative")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "id": self.id,
                "source": self.source,
                "title": self.title,
                "text": self.text,
                "token_estimate": self.token_estimate,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json_line(cls, line: str) -> "CorpusChunk":
        obj = json.loads(line)
        return cls(
            id=obj["id"],
            source=obj["source"],
            title=obj.get("title", ""),
            text=obj["text"],
            token_estimate=obj["token_estimate"],
        )


def _split_word(word: str, max_tokens: int, tokenizer: Tokenizer) -> list[str]:
    # Last-resort split of a single oversized word into character slices.
    pieces = []
    rest = word
    while rest:
        hi = len(rest)
        lo = 1
        # longest prefix that fits; always make progress by at least 1 char
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if tokenizer.count(rest[:mid]) <= max_tokens:
                lo = mid
            else:
                hi = mid - 1
        pieces.append(rest[:lo])
        rest = rest[lo:]
    return pieces


def _hard_split(paragraph: str, max_tokens: int, tokenizer: Tokenizer) -> list[str]:
    """Split an oversized paragraph on whitespace into fitting pieces."""
    out: list[str] = []
    current: list[str] = []
    for word in paragraph.split():
        if tokenizer.count(word) > max_tokens:
            if current:
                out.append(" ".join(current))
                current = []
            out.extend(_split_word(word, max_tokens, tokenizer))
            continue
        candidate = current + [word]
        if current and tokenizer.count(" ".join(candidate)) > max_tokens:
            out.append(" ".join(current))
            current = [word]
        else:
            current = candidate
    if current:
        out.append(" ".join(current))
    return out


def chunk_document(
    raw_text: str,
    policy: ChunkPolicy = ChunkPolicy(),
    *,
    source: str = "custom",
    title: str = "",
    doc_index: int = 0,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> list[CorpusChunk]:
    """Split one document into chunks, one per paragraph.

    Every paragraph boundary is a chunk boundary; a single paragraph whose
    token count exceeds ``policy.max_tokens`` is hard-split. Raises
    EmptyDocument for all-whitespace input.
    """
    if not raw_text.strip():
        raise EmptyDocument("document text is empty or all whitespace")
    paragraphs = [p.strip() for p in _PARAGRAPH_SPLIT.split(raw_text) if p.strip()]
    texts: list[str] = []
    for para in paragraphs:
        if tokenizer.count(para) <= policy.max_tokens:
            texts.append(para)
        else:
            texts.extend(_hard_split(para, policy.max_tokens, tokenizer))
    return [
        CorpusChunk(
            id=f"{source}:{doc_index}:{i}",
            source=source,
            title=title,
            text=text,
            token_estimate=tokenizer.count(text),
        )
        for i, text in enumerate(texts)
    ]


class ChunkStore:
    """Append-only JSONL chunk store; single writer, any number of readers.

    Existing ids are loaded at open time so duplicate ingestion fails
    loudly instead of silently duplicating rows.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._ids: set[str] = set()
        if self.path.exists():
            try:
                for line in self.path.read_text(encoding="utf-8").splitlines():
                    if line.strip():
                        self._ids.add(json.loads(line)["id"])
            except OSError as exc:
                raise StoreIO(f"cannot read chunk store: {exc}", path=str(self.path))

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, chunk_id: str) -> bool:
        return chunk_id in self._ids

    def append(self, chunks: Iterable[CorpusChunk]) -> int:
        chunks = list(chunks)
        for chunk in chunks:
            if chunk.id in self._ids:
                raise DuplicateId("chunk id already stored", chunk_id=chunk.id)
        try:
            with self.path.open("a", encoding="utf-8") as fh:
                for chunk in chunks:
                    fh.write(chunk.to_json_line() + "\n")
                    self._ids.add(chunk.id)
        except OSError as exc:
            raise StoreIO(f"cannot write chunk store: {exc}", path=str(self.path))
        return len(chunks)

    def __iter__(self) -> Iterator[CorpusChunk]:
        if not self.path.exists():
            return
        try:
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        yield CorpusChunk.from_json_line(line)
        except OSError as exc:
            raise StoreIO(f"cannot read chunk store: {exc}", path=str(self.path))

    def texts_by_id(self) -> dict[str, str]:
        return {chunk.id: chunk.text for chunk in self}


@dataclass
class ManifestEntry:
    source: str
    chunk_count: int
    embedding_bytes: int = 0
    description: str = ""

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "chunk_count": self.chunk_count,
            "embedding_bytes": self.embedding_bytes,
            "description": self.description,
        }


@dataclass
class CorpusManifest:
    """Per-source chunk statistics plus a consistency-checked total row."""

    sources: list[ManifestEntry] = field(default_factory=list)

    @property
    def total(self) -> ManifestEntry:
        return ManifestEntry(
            source="total",
            chunk_count=sum(e.chunk_count for e in self.sources),
            embedding_bytes=sum(e.embedding_bytes for e in self.sources),
            description="all sources combined",
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "sources": [e.to_dict() for e in self.sources],
                "total": self.total.to_dict(),
            },
            indent=2,
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "CorpusManifest":
        obj = json.loads(text)
        manifest = cls(
            sources=[
                ManifestEntry(
                    source=e["source"],
                    chunk_count=e["chunk_count"],
                    embedding_bytes=e.get("embedding_bytes", 0),
                    description=e.get("description", ""),
                )
                for e in obj["sources"]
            ]
        )
        stated = obj.get("total")
        if stated is not None and stated["chunk_count"] != manifest.total.chunk_count:
            raise ValueError(
                "manifest total.chunk_count disagrees with per-source sum"
            )
        return manifest

    def save(self, path: str | Path) -> None:
        try:
            Path(path).write_text(self.to_json() + "\n", encoding="utf-8")
        except OSError as exc:
            raise StoreIO(f"cannot write manifest: {exc}", path=str(path))

    @classmethod
    def load(cls, path: str | Path) -> "CorpusManifest":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise StoreIO(f"cannot read manifest: {exc}", path=str(path))


def ingest(
    documents: Iterable[dict],
    policy: ChunkPolicy,
    store: ChunkStore,
    *,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    descriptions: dict[str, str] | None = None,
) -> CorpusManifest:
    """Chunk and persist a stream of ``{source, title, raw_text}`` documents.

    Returns a manifest whose per-source counts match the rows written in
    this call. Raises DuplicateId before writing anything for a colliding
    document, so a re-ingest never silently duplicates.
    """
    counts: dict[str, int] = {}
    doc_index: dict[str, int] = {}
    for doc in documents:
        source = doc["source"]
        idx = doc_index.get(source, 0)
        doc_index[source] = idx + 1
        chunks = chunk_document(
            doc["raw_text"],
            policy,
            source=source,
            title=doc.get("title", ""),
            doc_index=idx,
            tokenizer=tokenizer,
        )
        store.append(chunks)
        counts[source] = counts.get(source, 0) + len(chunks)
    descriptions = descriptions or {}
    return CorpusManifest(
        sources=[
            ManifestEntry(
                source=source,
                chunk_count=count,
                description=descriptions.get(source, ""),
            )
            for source, count in sorted(counts.items())
        ]
    )


def human_count(n: int) -> str:
    """Format a count the way corpus tables do: 125.8K, 23.9M, 54.2M."""
    for cut, suffix in ((1_000_000_000, "B"), (1_000_000, "M"), (1_000, "K")):
        if n >= cut:
            return f"{n / cut:.1f}{suffix}"
    return str(n)
