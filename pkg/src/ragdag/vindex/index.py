"""Layered proximity graph for approximate nearest-neighbor search.

Build inserts points one at a time. Each point draws a top layer from a
geometric distribution, links into every layer it occupies via beam
search plus a diversity-aware neighbor pick, and over-full neighbor
lists are re-pruned with the same pick. Queries descend greedily from
the top layer and run a beam at layer 0.

Scores are dot products: higher is closer. Internal ties break toward
the lower node index (insertion order); results returned to callers
break ties by ascending chunk id.
"""

from __future__ import annotations

import json
import math
import random
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from types import ModuleType
from typing import Iterable, Sequence

import numpy as np

from ..embed import check_vector
from ..errors import DuplicateId, FormatVersionMismatch, InvalidM, StoreIO
from . import _backend

_MAGIC = b"RGDX"
_VERSION = 1
_LEVEL_CAP = 32


@dataclass(frozen=True)
class IndexParams:
    """Construction and query knobs for the proximity graph."""

    dims: int
    max_neighbors: int = 16
    ef_construction: int = 200
    ef_search: int = 128
    level_probability: float = math.exp(-1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dims < 1:
            raise ValueError(f"dims must be positive, got {self.dims}")
        if self.max_neighbors < 2:
            raise InvalidM(
                "max_neighbors must be at least 2",
                max_neighbors=self.max_neighbors,
            )
        if self.ef_construction < 1 or self.ef_search < 1:
            raise ValueError("ef_construction and ef_search must be >= 1")
        if not (0.0 < self.level_probability < 1.0):
            raise ValueError(
                f"level_probability must be in (0, 1), got {self.level_probability}"
            )


@dataclass(frozen=True)
class ScoredDocument:
    """A retrieval hit: chunk id, dot-product score, producing stage."""

    chunk_id: str
    score: float
    stage: str


@dataclass
class _Layer:
    neigh: np.ndarray  # (n, m_max) intc, -1 padded
    deg: np.ndarray  # (n,) intc
    m_max: int


class VectorIndex:
    """Approximate and exact dot-product search over fixed vectors."""

    def __init__(
        self,
        params: IndexParams,
        chunk_ids: list[str],
        vectors: np.ndarray,
        levels: list[int],
        layers: list[_Layer],
        entry: int,
        max_level: int,
        kernels: ModuleType | None = None,
    ) -> None:
        self.params = params
        self._chunk_ids = chunk_ids
        self._vectors = vectors
        self._levels = levels
        self._layers = layers
        self._entry = entry
        self._max_level = max_level
        self._kernels = kernels if kernels is not None else _backend.get_kernels()

    def __len__(self) -> int:
        return len(self._chunk_ids)

    @property
    def dims(self) -> int:
        return self.params.dims

    @property
    def chunk_ids(self) -> tuple[str, ...]:
        return tuple(self._chunk_ids)

    @property
    def backend_name(self) -> str:
        return "compiled" if self._kernels.__name__.endswith("_cy") else "python"

    # -- construction -------------------------------------------------

    @classmethod
    def build(
        cls,
        entries: Iterable[tuple[str, Sequence[float] | np.ndarray]],
        params: IndexParams,
        kernels: ModuleType | None = None,
    ) -> "VectorIndex":
        kern = kernels if kernels is not None else _backend.get_kernels()
        chunk_ids: list[str] = []
        rows: list[np.ndarray] = []
        seen: set[str] = set()
        for chunk_id, vec in entries:
            if chunk_id in seen:
                raise DuplicateId("chunk id repeated in index input", chunk_id=chunk_id)
            seen.add(chunk_id)
            chunk_ids.append(chunk_id)
            rows.append(check_vector(vec, params.dims))

        n = len(chunk_ids)
        if n == 0:
            return cls(params, [], np.zeros((0, params.dims)), [], [], -1, -1, kern)

        vectors = np.ascontiguousarray(np.stack(rows), dtype=np.float64)

        # All layer assignments come from one seeded stream, drawn in
        # insertion order, so a (seed, input order) pair fixes the graph.
        rng = random.Random(params.seed)
        levels: list[int] = []
        for _ in range(n):
            level = 0
            while rng.random() < params.level_probability and level < _LEVEL_CAP:
                level += 1
            levels.append(level)

        max_level = max(levels)
        m = params.max_neighbors
        layers = [
            _Layer(
                neigh=np.full((n, 2 * m if lc == 0 else m), -1, dtype=np.intc),
                deg=np.zeros(n, dtype=np.intc),
                m_max=2 * m if lc == 0 else m,
            )
            for lc in range(max_level + 1)
        ]

        entry = 0
        cur_max = levels[0]
        for i in range(1, n):
            q = vectors[i]
            node_level = levels[i]
            ep = np.array([entry], dtype=np.intc)
            for lc in range(cur_max, node_level, -1):
                layer = layers[lc]
                ids, _ = kern.search_layer(vectors, layer.neigh, layer.deg, q, ep, 1)
                ep = np.ascontiguousarray(ids[:1], dtype=np.intc)
            for lc in range(min(node_level, cur_max), -1, -1):
                layer = layers[lc]
                w_ids, _ = kern.search_layer(
                    vectors, layer.neigh, layer.deg, q, ep, params.ef_construction
                )
                cand = np.ascontiguousarray(w_ids, dtype=np.intc)
                sel = kern.select_heuristic(vectors, i, cand, m, True)
                layer.neigh[i, : len(sel)] = sel
                layer.deg[i] = len(sel)
                for s in sel:
                    ds = int(layer.deg[s])
                    if ds < layer.m_max:
                        layer.neigh[s, ds] = i
                        layer.deg[s] = ds + 1
                    else:
                        over = np.empty(ds + 1, dtype=np.intc)
                        over[:ds] = layer.neigh[s, :ds]
                        over[ds] = i
                        kept = kern.select_heuristic(
                            vectors, int(s), over, layer.m_max, True
                        )
                        layer.neigh[s, : len(kept)] = kept
                        layer.neigh[s, len(kept) :] = -1
                        layer.deg[s] = len(kept)
                ep = cand
            if node_level > cur_max:
                entry = i
                cur_max = node_level

        return cls(params, chunk_ids, vectors, levels, layers, entry, max_level, kern)

    # -- queries ------------------------------------------------------

    def search(self, query: Sequence[float] | np.ndarray, k: int) -> list[ScoredDocument]:
        """Approximate top-k by beam search, stage ``coarse``."""
        q = check_vector(query, self.params.dims)
        if len(self._chunk_ids) == 0 or k <= 0:
            return []
        kern = self._kernels
        ef = max(self.params.ef_search, k)
        ep = np.array([self._entry], dtype=np.intc)
        for lc in range(self._max_level, 0, -1):
            layer = self._layers[lc]
            ids, _ = kern.search_layer(self._vectors, layer.neigh, layer.deg, q, ep, 1)
            ep = np.ascontiguousarray(ids[:1], dtype=np.intc)
        layer = self._layers[0]
        ids, scores = kern.search_layer(
            self._vectors, layer.neigh, layer.deg, q, ep, ef
        )
        hits = [
            (float(scores[j]), self._chunk_ids[int(ids[j])]) for j in range(len(ids))
        ]
        hits.sort(key=lambda t: (-t[0], t[1]))
        return [ScoredDocument(cid, s, "coarse") for s, cid in hits[:k]]

    def search_exact(
        self, query: Sequence[float] | np.ndarray, k: int
    ) -> list[ScoredDocument]:
        """Exhaustive top-k by full scan, stage ``exact``."""
        q = check_vector(query, self.params.dims)
        n = len(self._chunk_ids)
        if n == 0 or k <= 0:
            return []
        scores = self._vectors @ q
        if k >= n:
            idx = np.arange(n)
        else:
            # Take everything tied with the k-th score, then let the
            # chunk-id sort decide which boundary ties survive the cut.
            kth = np.partition(scores, n - k)[n - k]
            idx = np.nonzero(scores >= kth)[0]
        hits = [(float(scores[i]), self._chunk_ids[int(i)]) for i in idx]
        hits.sort(key=lambda t: (-t[0], t[1]))
        return [ScoredDocument(cid, s, "exact") for s, cid in hits[:k]]

    # -- persistence --------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Serialize to one file; layout is header JSON plus raw blobs."""
        header = {
            "count": len(self._chunk_ids),
            "dims": self.params.dims,
            "entry": self._entry,
            "max_level": self._max_level,
            "levels": self._levels,
            "chunk_ids": self._chunk_ids,
            "layers": [{"m_max": layer.m_max} for layer in self._layers],
            "params": asdict(self.params),
        }
        blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
        try:
            with open(path, "wb") as f:
                f.write(_MAGIC)
                f.write(struct.pack("<I", _VERSION))
                f.write(struct.pack("<Q", len(blob)))
                f.write(blob)
                f.write(np.ascontiguousarray(self._vectors, dtype="<f8").tobytes())
                for layer in self._layers:
                    f.write(np.ascontiguousarray(layer.deg, dtype="<i4").tobytes())
                    f.write(np.ascontiguousarray(layer.neigh, dtype="<i4").tobytes())
        except OSError as exc:
            raise StoreIO("index write failed", path=str(path), cause=str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path, kernels: ModuleType | None = None) -> "VectorIndex":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise StoreIO("index read failed", path=str(path), cause=str(exc)) from exc
        if len(raw) < 16 or raw[:4] != _MAGIC:
            raise FormatVersionMismatch("not an index file", path=str(path))
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != _VERSION:
            raise FormatVersionMismatch(
                "unsupported index version", path=str(path), version=version
            )
        (header_len,) = struct.unpack_from("<Q", raw, 8)
        off = 16
        try:
            header = json.loads(raw[off : off + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatVersionMismatch(
                "corrupt index header", path=str(path)
            ) from exc
        off += header_len

        params = IndexParams(**header["params"])
        n = int(header["count"])
        need = n * params.dims * 8
        vectors = (
            np.frombuffer(raw, dtype="<f8", count=n * params.dims, offset=off)
            .reshape(n, params.dims)
            .copy()
        ) if need <= len(raw) - off else None
        if vectors is None:
            raise FormatVersionMismatch("truncated index payload", path=str(path))
        off += need
        layers: list[_Layer] = []
        for meta in header["layers"]:
            m_max = int(meta["m_max"])
            if off + n * 4 + n * m_max * 4 > len(raw):
                raise FormatVersionMismatch(
                    "truncated index payload", path=str(path)
                )
            deg = np.frombuffer(raw, dtype="<i4", count=n, offset=off).astype(np.intc)
            off += n * 4
            neigh = (
                np.frombuffer(raw, dtype="<i4", count=n * m_max, offset=off)
                .reshape(n, m_max)
                .astype(np.intc)
            )
            off += n * m_max * 4
            layers.append(_Layer(neigh=np.ascontiguousarray(neigh), deg=deg, m_max=m_max))
        return cls(
            params,
            list(header["chunk_ids"]),
            np.ascontiguousarray(vectors),
            [int(x) for x in header["levels"]],
            layers,
            int(header["entry"]),
            int(header["max_level"]),
            kernels,
        )

    # -- diagnostics --------------------------------------------------

    def validate_graph(self) -> list[str]:
        """Structural invariant check; returns human-readable violations."""
        problems: list[str] = []
        n = len(self._chunk_ids)
        for lc, layer in enumerate(self._layers):
            for i in range(n):
                d = int(layer.deg[i])
                if d < 0 or d > layer.m_max:
                    problems.append(f"layer {lc} node {i}: degree {d} out of range")
                    continue
                if d > 0 and self._levels[i] < lc:
                    problems.append(f"layer {lc} node {i}: below its top layer")
                row = layer.neigh[i]
                seen: set[int] = set()
                for j in range(layer.m_max):
                    v = int(row[j])
                    if j < d:
                        if v < 0 or v >= n:
                            problems.append(
                                f"layer {lc} node {i}: neighbor {v} out of range"
                            )
                        elif v == i:
                            problems.append(f"layer {lc} node {i}: self link")
                        elif v in seen:
                            problems.append(
                                f"layer {lc} node {i}: duplicate neighbor {v}"
                            )
                        elif self._levels[v] < lc:
                            problems.append(
                                f"layer {lc} node {i}: neighbor {v} below layer"
                            )
                        seen.add(v)
                    elif v != -1:
                        problems.append(f"layer {lc} node {i}: unpadded tail slot {j}")
        if n > 0 and not (0 <= self._entry < n):
            problems.append(f"entry point {self._entry} out of range")
        return problems

    def stats(self) -> dict:
        layer_stats = []
        for lc, layer in enumerate(self._layers):
            on_layer = sum(1 for lv in self._levels if lv >= lc)
            layer_stats.append(
                {
                    "level": lc,
                    "nodes": on_layer,
                    "edges": int(layer.deg.sum()),
                    "m_max": layer.m_max,
                }
            )
        return {
            "count": len(self._chunk_ids),
            "dims": self.params.dims,
            "max_level": self._max_level,
            "entry_chunk_id": self._chunk_ids[self._entry] if self._chunk_ids else None,
            "backend": self.backend_name,
            "layers": layer_stats,
            "params": asdict(self.params),
        }
