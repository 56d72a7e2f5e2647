"""Keyword embedding store and nearest-neighbor search.

The serving path: keyword embeddings are computed offline, unit-normalized,
and stored with a navigable proximity graph; at query time a greedy beam
search over the graph returns approximate top results, with brute-force
exact search available as the recall oracle. Because stored vectors are
unit-norm, descending cosine equals ascending Euclidean distance exactly.

Graph construction inserts nodes one at a time. Every inserted node receives
a protected "parent" edge from its nearest already-inserted node that still
has parent capacity, which makes every node reachable from the entry point
by construction; the remaining out-degree budget holds prunable similarity
edges that give the graph its navigability.

A raw (unnormalized, float64) store variant exists for serving the residual
head, which needs raw embeddings; it carries no graph.
"""

from __future__ import annotations

import heapq
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import atomic_write
from .model import TwinModel

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"TWIX"
INDEX_FORMAT_VERSION = 1

METRIC_UNIT = "l2_unit"
METRIC_RAW = "raw_f64"

_NORM_TOL = 1e-6


@dataclass
class SearchCounters:
    distance_computations: int = 0
    hops: int = 0

    def reset(self) -> None:
        self.distance_computations = 0
        self.hops = 0


@dataclass
class SearchResult:
    keyword_id: str
    cosine_score: float
    rank: int


@dataclass
class EmbeddingIndex:
    """ids + vectors (+ optional proximity graph) over one keyword corpus.

    ``metric`` is ``l2_unit`` for the searchable unit-normalized store and
    ``raw_f64`` for the raw-embedding cache (no search, no graph).
    """

    ids: list[str]
    vectors: np.ndarray
    metric: str = METRIC_UNIT
    graph: list[np.ndarray] | None = None
    degree_bound: int | None = None
    build_beam: int | None = None
    entry_point: int = 0
    counters: SearchCounters = field(default_factory=SearchCounters)

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.vectors):
            raise ValueError("ids and vectors must align")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("keyword ids must be unique")
        if self.metric == METRIC_UNIT:
            norms = np.linalg.norm(np.asarray(self.vectors, dtype=np.float64), axis=1)
            off = np.abs(norms - 1.0)
            if off.size and off.max() > _NORM_TOL:
                bad = int(np.argmax(off))
                raise ValueError(
                    f"vector for id {self.ids[bad]!r} is not unit-norm (|v| = {norms[bad]!r})"
                )
        elif self.metric != METRIC_RAW:
            raise ValueError(f"unknown metric tag: {self.metric!r}")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def vector_for(self, keyword_id: str) -> np.ndarray:
        return self.vectors[self.ids.index(keyword_id)]

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        header = {
            "n": len(self.ids),
            "dim": self.dim,
            "metric": self.metric,
            "degree_bound": self.degree_bound,
            "build_beam": self.build_beam,
            "entry_point": self.entry_point,
            "has_graph": self.graph is not None,
        }
        header_json = json.dumps(header, sort_keys=True).encode("utf-8")
        chunks = [INDEX_MAGIC, struct.pack("<I", INDEX_FORMAT_VERSION)]
        chunks.append(struct.pack("<I", len(header_json)))
        chunks.append(header_json)
        dtype = "<f8" if self.metric == METRIC_RAW else "<f4"
        chunks.append(np.ascontiguousarray(self.vectors, dtype=dtype).tobytes())
        for kid in self.ids:
            raw = kid.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)))
            chunks.append(raw)
        if self.graph is not None:
            for nbrs in self.graph:
                chunks.append(struct.pack("<I", len(nbrs)))
                chunks.append(np.ascontiguousarray(nbrs, dtype="<u4").tobytes())
        atomic_write(path, b"".join(chunks))

    @classmethod
    def load(cls, path: str | Path) -> EmbeddingIndex:
        data = Path(path).read_bytes()
        off = 0
        if data[:4] != INDEX_MAGIC:
            raise ValueError(f"not an index file: {path}")
        off = 4
        version = struct.unpack_from("<I", data, off)[0]
        off += 4
        if version != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index format version {version}")
        hlen = struct.unpack_from("<I", data, off)[0]
        off += 4
        header = json.loads(data[off : off + hlen].decode("utf-8"))
        off += hlen
        n, dim = header["n"], header["dim"]
        dtype = "<f8" if header["metric"] == METRIC_RAW else "<f4"
        itemsize = 8 if header["metric"] == METRIC_RAW else 4
        nbytes = n * dim * itemsize
        vectors = np.frombuffer(data[off : off + nbytes], dtype=dtype).reshape(n, dim).copy()
        off += nbytes
        ids = []
        for _ in range(n):
            slen = struct.unpack_from("<I", data, off)[0]
            off += 4
            ids.append(data[off : off + slen].decode("utf-8"))
            off += slen
        graph = None
        if header["has_graph"]:
            graph = []
            for _ in range(n):
                cnt = struct.unpack_from("<I", data, off)[0]
                off += 4
                nbrs = np.frombuffer(data[off : off + 4 * cnt], dtype="<u4").astype(np.int64)
                off += 4 * cnt
                graph.append(nbrs)
        return cls(
            ids=ids, vectors=vectors, metric=header["metric"], graph=graph,
            degree_bound=header["degree_bound"], build_beam=header["build_beam"],
            entry_point=header["entry_point"],
        )


def normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero vector")
    return vectors / norms


def encode_corpus(
    keywords,
    model: TwinModel,
    ids: list[str] | None = None,
    batch_size: int = 256,
    normalize: bool = True,
) -> EmbeddingIndex:
    """Encode a keyword stream into an embedding store.

    Unit-normalized float32 by default (the searchable store); with
    ``normalize=False`` the raw float64 embeddings are kept instead (the
    residual-head serving cache). Keywords that cannot be encoded (text that
    normalizes to empty) are skipped with a warning and their ids excluded.
    """
    keywords = list(keywords)
    if ids is None:
        width = max(6, len(str(max(len(keywords) - 1, 0))))
        ids = [f"k{i:0{width}d}" for i in range(len(keywords))]
    if len(ids) != len(keywords):
        raise ValueError("ids and keywords must align")
    kept_ids: list[str] = []
    kept_texts: list[str] = []
    for kid, text in zip(ids, keywords):
        try:
            model.tokenize(text)
        except ValueError:
            logger.warning("skipping unencodable keyword %r (id %s)", text, kid)
            continue
        kept_ids.append(kid)
        kept_texts.append(text)
    if not kept_texts:
        raise ValueError("corpus is empty after filtering unencodable keywords")
    blocks = []
    for lo in range(0, len(kept_texts), batch_size):
        blocks.append(model.encode_keywords(kept_texts[lo : lo + batch_size]))
    vectors = np.vstack(blocks)
    if normalize:
        vectors = normalize_rows(vectors).astype(np.float32)
        metric = METRIC_UNIT
    else:
        vectors = vectors.astype(np.float64)
        metric = METRIC_RAW
    return EmbeddingIndex(ids=kept_ids, vectors=vectors, metric=metric)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

def _check_query(q: np.ndarray, index: EmbeddingIndex) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).ravel()
    if q.shape[0] != index.dim:
        raise ValueError(f"query dim {q.shape[0]} != index dim {index.dim}")
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > _NORM_TOL:
        raise ValueError(f"query vector must be unit-norm (|q| = {norm!r})")
    return q


def _ranked_results(index: EmbeddingIndex, node_ids, scores, top_n: int) -> list[SearchResult]:
    order = sorted(range(len(node_ids)), key=lambda i: (-scores[i], index.ids[node_ids[i]]))
    results = []
    for rank, i in enumerate(order[:top_n], start=1):
        results.append(
            SearchResult(keyword_id=index.ids[node_ids[i]], cosine_score=float(scores[i]), rank=rank)
        )
    return results


def knn_exact(q: np.ndarray, index: EmbeddingIndex, top_n: int) -> list[SearchResult]:
    """True top-n by cosine over every stored vector (the recall oracle).

    Ties break by ascending keyword id; results are independent of corpus
    storage order.
    """
    if index.metric != METRIC_UNIT:
        raise ValueError("search requires a unit-normalized index")
    if len(index) == 0:
        raise ValueError("cannot search an empty index")
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    q = _check_query(q, index)
    scores = index.vectors.astype(np.float64) @ q
    index.counters.distance_computations += len(index)
    return _ranked_results(index, np.arange(len(index)), scores, top_n)


def build_graph(index: EmbeddingIndex, degree_bound: int = 16, build_beam: int = 64) -> EmbeddingIndex:
    """Attach a navigable proximity graph to the index (in place).

    Deterministic: nodes are inserted in storage order; node i's neighbors
    come from a beam search over the partial graph. Out-degree never exceeds
    ``degree_bound``, and protected parent edges keep every node reachable
    from the entry point.
    """
    if index.metric != METRIC_UNIT:
        raise ValueError("graphs are built over unit-normalized vectors only")
    if degree_bound < 1:
        raise ValueError("degree_bound must be >= 1")
    if build_beam < 1:
        raise ValueError("build_beam must be >= 1")
    n = len(index)
    vectors = index.vectors.astype(np.float64)
    graph: list[list[int]] = [[] for _ in range(n)]
    protected: list[set[int]] = [set() for _ in range(n)]  # parent -> child edges
    parent_slots = max(1, degree_bound // 2)
    build_counters = SearchCounters()

    def _add_edge(src: int, dst: int) -> None:
        # keep out-degree bounded; never evict a protected parent edge
        if dst in graph[src]:
            return
        if len(graph[src]) < degree_bound:
            graph[src].append(dst)
            return
        evictable = [v for v in graph[src] if v not in protected[src]]
        if not evictable:
            return
        sims = vectors[evictable] @ vectors[src]
        worst_pos = int(np.argmin(sims))
        if float(vectors[dst] @ vectors[src]) > float(sims[worst_pos]):
            graph[src][graph[src].index(evictable[worst_pos])] = dst

    for i in range(1, n):
        qv = vectors[i]
        cands = _beam_search(vectors, graph, index.entry_point, qv, build_beam, build_counters)
        # protected parent edge: nearest candidate with spare parent capacity;
        # by pigeonhole some earlier node always has a spare slot
        parent = None
        for _, node in cands:
            if len(protected[node]) < parent_slots:
                parent = node
                break
        if parent is None:
            spare = [u for u in range(i) if len(protected[u]) < parent_slots]
            parent = max(spare, key=lambda u: float(vectors[u] @ qv))
        if i not in graph[parent]:
            if len(graph[parent]) >= degree_bound:
                evictable = [v for v in graph[parent] if v not in protected[parent]]
                sims = vectors[evictable] @ vectors[parent]
                graph[parent].remove(evictable[int(np.argmin(sims))])
            graph[parent].append(i)
        protected[parent].add(i)
        # similarity edges: node i links to its nearest candidates, and back
        for _, node in cands[:degree_bound]:
            if node not in graph[i] and len(graph[i]) < degree_bound:
                graph[i].append(node)
            _add_edge(node, i)

    index.graph = [np.asarray(sorted(nbrs), dtype=np.int64) for nbrs in graph]
    index.degree_bound = degree_bound
    index.build_beam = build_beam
    return index


def _beam_search(vectors, graph, entry: int, qv: np.ndarray, beam: int,
                 counters: SearchCounters) -> list[tuple[float, int]]:
    """Greedy best-first beam traversal; returns candidates sorted by score desc."""
    entry_score = float(vectors[entry] @ qv)
    counters.distance_computations += 1
    visited = {entry}
    frontier = [(-entry_score, entry)]
    beam_heap: list[tuple[float, int]] = [(entry_score, entry)]
    while frontier:
        neg_score, node = heapq.heappop(frontier)
        if len(beam_heap) >= beam and -neg_score < beam_heap[0][0]:
            break
        counters.hops += 1
        nbrs = [v for v in graph[node] if v not in visited]
        if not nbrs:
            continue
        visited.update(nbrs)
        scores = vectors[nbrs] @ qv
        counters.distance_computations += len(nbrs)
        for score, nbr in zip(scores, nbrs):
            score = float(score)
            if len(beam_heap) < beam or score > beam_heap[0][0]:
                heapq.heappush(frontier, (-score, nbr))
                heapq.heappush(beam_heap, (score, nbr))
                if len(beam_heap) > beam:
                    heapq.heappop(beam_heap)
    return sorted(((s, n) for s, n in beam_heap), key=lambda t: -t[0])


def knn_approx(q: np.ndarray, index: EmbeddingIndex, top_n: int, search_beam: int = 64) -> list[SearchResult]:
    """Approximate top-n via greedy beam traversal of the proximity graph."""
    if index.graph is None:
        raise ValueError("index has no graph; call build_graph first")
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    if search_beam < top_n:
        raise ValueError(f"search_beam ({search_beam}) must be >= top_n ({top_n})")
    q = _check_query(q, index)
    vectors = index.vectors.astype(np.float64)
    cands = _beam_search(vectors, index.graph, index.entry_point, q, search_beam, index.counters)
    nodes = [n for _, n in cands]
    scores = [s for s, _ in cands]
    return _ranked_results(index, nodes, scores, top_n)
