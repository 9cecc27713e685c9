"""Query/passage encoder abstraction.

Retrieval uses two independently configurable encoders, one for passages
and one for queries (they may be the same object). Two backends ship:

* HashEncoder — deterministic test encoder. Tokens are hashed with a
  seeded 64-bit hash into d signed buckets and the sum is L2-normalized.
  Reproducible bit-for-bit across runs and platforms; texts sharing tokens
  correlate, which is enough to exercise retrieval logic without weights.
* RemoteEncoder — HTTP client for an external embedding service
  (POST {"texts": [...]} -> {"vectors": [[...]]}), batched at 32 texts.

Every vector leaving this module is validated: exactly ``dims`` finite
float64 values.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
import requests

from .errors import DimensionMismatch, EncoderUnavailable, StoreIO

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def check_vector(values: np.ndarray | Sequence[float], dims: int) -> np.ndarray:
    """Validate and return a finite float64 vector of exactly ``dims``."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.shape[0] != dims:
        raise DimensionMismatch(
            "vector has wrong dimensionality",
            expected=dims,
            got=int(vec.shape[0]) if vec.ndim == 1 else f"shape {vec.shape}",
        )
    if not np.all(np.isfinite(vec)):
        raise ValueError("vector contains non-finite values")
    return vec


class Encoder(Protocol):
    dims: int

    def encode(self, text: str) -> np.ndarray: ...


@dataclass(frozen=True)
class HashEncoder:
    """Seeded hashed bag-of-tokens encoder, L2-normalized.

    Token order does not matter; two encoders with the same dims and seed
    produce identical vectors, which is how a shared query/passage
    configuration is expressed.
    """

    dims: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dims < 1:
            raise ValueError("dims must be >= 1")

    def _token_hash(self, token: str, salt: bytes = b"") -> int:
        key = self.seed.to_bytes(8, "little", signed=False) + salt
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key)
        return int.from_bytes(digest.digest(), "little")

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot encode empty text")
        acc = np.zeros(self.dims, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            h = self._token_hash(token)
            sign = 1.0 if (h >> 63) & 1 else -1.0
            acc[h % self.dims] += sign
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            # No tokens, or signed buckets cancelled: hash the whole text
            # once so the output is still deterministic and unit-norm.
            h = self._token_hash(text, salt=b"whole-text")
            acc[h % self.dims] = 1.0 if (h >> 63) & 1 else -1.0
            norm = 1.0
        return check_vector(acc / norm, self.dims)


class RemoteEncoder:
    """HTTP embedding client with retries and a max-in-flight bound."""

    def __init__(
        self,
        url: str,
        dims: int,
        *,
        timeout: float = 30.0,
        batch_size: int = 32,
        max_in_flight: int = 4,
        retries: int = 3,
        backoff: Sequence[float] = (0.5, 1.0, 2.0),
        session: requests.Session | None = None,
    ) -> None:
        self.url = url
        self.dims = dims
        self.timeout = timeout
        self.batch_size = batch_size
        self.retries = retries
        self.backoff = list(backoff)
        self._session = session or requests.Session()
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _post(self, texts: list[str]) -> list[np.ndarray]:
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._gate:
                    resp = self._session.post(
                        self.url, json={"texts": texts}, timeout=self.timeout
                    )
                resp.raise_for_status()
                vectors = resp.json()["vectors"]
                if len(vectors) != len(texts):
                    raise EncoderUnavailable(
                        "encoder returned wrong number of vectors",
                        expected=len(texts),
                        got=len(vectors),
                    )
                return [check_vector(v, self.dims) for v in vectors]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff[min(attempt, len(self.backoff) - 1)])
        raise EncoderUnavailable(f"encoder unreachable: {last}", url=self.url)

    def encode(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot encode empty text")
        return self._post([text])[0]

    def encode_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            out.extend(self._post(list(texts[start : start + self.batch_size])))
        return out


def encode_batch(encoder: Encoder, texts: Sequence[str]) -> list[np.ndarray]:
    """Batch helper that uses the backend's native batching when it has one."""
    native = getattr(encoder, "encode_batch", None)
    if native is not None:
        return native(texts)
    return [encoder.encode(t) for t in texts]


class EmbeddingCache:
    """Optional JSONL cache of {id, values} rows keyed by chunk id."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)

    def load(self) -> dict[str, np.ndarray]:
        if not self.path.exists():
            return {}
        out: dict[str, np.ndarray] = {}
        try:
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    obj = json.loads(line)
                    out[obj["id"]] = np.asarray(obj["values"], dtype=np.float64)
        except OSError as exc:
            raise StoreIO(f"cannot read embedding cache: {exc}", path=str(self.path))
        return out

    def save(self, items: Iterable[tuple[str, np.ndarray]]) -> None:
        try:
            with self.path.open("w", encoding="utf-8") as fh:
                for chunk_id, vec in items:
                    fh.write(
                        json.dumps(
                            {"id": chunk_id, "values": [float(x) for x in vec]},
                            sort_keys=True,
                        )
                        + "\n"
                    )
        except OSError as exc:
            raise StoreIO(f"cannot write embedding cache: {exc}", path=str(self.path))
