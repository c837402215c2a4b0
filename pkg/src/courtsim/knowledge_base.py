"""Chunked, embedded legal corpus with exact cosine retrieval.

A store on disk is a directory with three files:

    manifest.json   dimension, chunking parameters, embedder identity,
                    per-source chunk counts and SHA-256 checksums
    chunks.jsonl    one JSON object per chunk, in chunk_id order
    vectors.bin     little-endian float32, row-major, chunk_id order
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

import numpy as np

from .errors import (
    CorruptStore,
    DimensionMismatch,
    EmbedderFailure,
    EmbedderMismatch,
    InvalidChunkParams,
)

DEFAULT_CHUNK_SIZE = 1000
DEFAULT_OVERLAP = 150
DEFAULT_K = 5
NO_CONTEXT = "NO CONTEXT RETRIEVED"
STORE_FORMAT = "courtsim-store/1"

MANIFEST_NAME = "manifest.json"
CHUNKS_NAME = "chunks.jsonl"
VECTORS_NAME = "vectors.bin"

_VEC_DTYPE = np.dtype("<f4")


@dataclass(frozen=True)
class DocumentChunk:
    chunk_id: int
    source_document: str
    ordinal: int
    text: str
    char_start: int
    char_end: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "chunk_id": self.chunk_id,
            "source_document": self.source_document,
            "ordinal": self.ordinal,
            "char_start": self.char_start,
            "char_end": self.char_end,
            "text": self.text,
        }


@dataclass(frozen=True)
class RetrievalResult:
    chunk: DocumentChunk
    score: float


class Embedder(Protocol):
    @property
    def identity(self) -> str: ...

    def embed(self, text: str) -> np.ndarray: ...


_TOKEN_RE = re.compile(r"\w+")


class HashingEmbedder:
    """Deterministic bag-of-words embedder for offline runs and tests.

    Each lower-cased word token is hashed (BLAKE2b) into one of ``dimension``
    buckets; the count vector is L2-normalized.
    """

    def __init__(self, dimension: int = 384):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    @property
    def identity(self) -> str:
        return f"hashing-bow-{self.dimension}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            # punctuation/whitespace-only text still gets a stable direction
            tokens = list(text.split()) or ["<blank>"]
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            vec[self.bucket(token)] += 1.0
        return vec / np.linalg.norm(vec)


def chunk_document(
    text: str,
    source: str,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
    first_chunk_id: int = 0,
) -> list[DocumentChunk]:
    """Split ``text`` into character windows of ``chunk_size`` with a fixed stride.

    Consecutive windows share exactly ``overlap`` characters. Splitting stops
    as soon as a window reaches the end of the text, so only the final chunk
    can be shorter than ``chunk_size``.
    """
    if chunk_size <= 0 or overlap < 0 or chunk_size <= overlap:
        raise InvalidChunkParams(
            f"need chunk_size > overlap >= 0, got chunk_size={chunk_size}, overlap={overlap}"
        )
    if not text:
        raise ValueError(f"document {source!r} is empty")
    stride = chunk_size - overlap
    chunks = []
    start = 0
    ordinal = 0
    while True:
        end = min(start + chunk_size, len(text))
        chunks.append(
            DocumentChunk(first_chunk_id + ordinal, source, ordinal, text[start:end], start, end)
        )
        if end == len(text):
            return chunks
        start += stride
        ordinal += 1


@dataclass
class VectorStore:
    dimension: int
    chunks: list[DocumentChunk]
    vectors: np.ndarray  # (n, dimension) float32, unit rows
    manifest: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=_VEC_DTYPE)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.chunks):
            raise CorruptStore(
                f"{len(self.chunks)} chunks but vector table has shape {self.vectors.shape}"
            )
        if self.vectors.shape[1] != self.dimension:
            raise DimensionMismatch(self.dimension, self.vectors.shape[1])
        ids = [c.chunk_id for c in self.chunks]
        if ids != list(range(len(ids))):
            raise CorruptStore("chunk ids must be 0..n-1 in table order")
        # float32 storage is only unit length to ~1e-7; renormalize so scores are exact cosines
        v64 = self.vectors.astype(np.float64)
        norms = np.sqrt((v64 * v64).sum(axis=1, keepdims=True))
        self._unit64 = np.divide(v64, norms, out=np.zeros_like(v64), where=norms > 0)

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def embedder_identity(self) -> str:
        return self.manifest.get("embedder", "")

    def sources(self) -> list[str]:
        return [s["name"] for s in self.manifest.get("sources", [])]


def _unit(vec: Any, chunk_id: int | None, dimension: int | None = None) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64).reshape(-1)
    if dimension is not None and arr.shape[0] != dimension:
        raise DimensionMismatch(dimension, arr.shape[0])
    if not np.all(np.isfinite(arr)):
        raise EmbedderFailure(chunk_id, "non-finite embedding")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise EmbedderFailure(chunk_id, "zero vector")
    return arr / norm


def _check_source_name(name: str) -> None:
    # names appear inside "[Source: <name>, chunk <id>]" markers
    if not name or "," in name or "]" in name or "\n" in name or name != name.strip():
        raise InvalidChunkParams(f"unusable source document name: {name!r}")


def build_store(
    documents: Sequence[tuple[str, str]],
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    overlap: int = DEFAULT_OVERLAP,
    embedder: Embedder | None = None,
) -> VectorStore:
    if not documents:
        raise InvalidChunkParams("no documents to ingest")
    embedder = embedder or HashingEmbedder()
    names = [name for name, _ in documents]
    if len(set(names)) != len(names):
        raise InvalidChunkParams("duplicate source document names")

    chunks: list[DocumentChunk] = []
    sources = []
    for name, text in documents:
        _check_source_name(name)
        doc_chunks = chunk_document(text, name, chunk_size, overlap, first_chunk_id=len(chunks))
        chunks.extend(doc_chunks)
        sources.append({"name": name, "chars": len(text), "chunks": len(doc_chunks)})

    rows = []
    dimension = None
    for chunk in chunks:
        try:
            raw = embedder.embed(chunk.text)
        except EmbedderFailure as exc:
            raise EmbedderFailure(chunk.chunk_id, exc.detail) from exc
        except Exception as exc:
            raise EmbedderFailure(chunk.chunk_id, str(exc)) from exc
        vec = _unit(raw, chunk.chunk_id, dimension)
        dimension = vec.shape[0]
        rows.append(vec)

    manifest = {
        "format": STORE_FORMAT,
        "dimension": dimension,
        "chunk_size": chunk_size,
        "overlap": overlap,
        "embedder": embedder.identity,
        "num_chunks": len(chunks),
        "sources": sources,
    }
    return VectorStore(dimension, chunks, np.vstack(rows), manifest)


def load_corpus(corpus_dir: str | Path) -> list[tuple[str, str]]:
    """Read every ``*.txt`` file in a directory, named by file stem, sorted."""
    corpus_dir = Path(corpus_dir)
    paths = sorted(p for p in corpus_dir.glob("*.txt") if p.is_file())
    return [(p.stem, p.read_text(encoding="utf-8")) for p in paths]


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _serialize(store: VectorStore) -> tuple[bytes, bytes, bytes]:
    vec_bytes = store.vectors.astype(_VEC_DTYPE, copy=False).tobytes(order="C")
    chunk_bytes = "".join(
        json.dumps(c.to_dict(), ensure_ascii=False, sort_keys=True) + "\n" for c in store.chunks
    ).encode("utf-8")
    manifest = dict(store.manifest)
    manifest.update(
        dimension=store.dimension,
        num_chunks=len(store.chunks),
        vectors_sha256=_sha256(vec_bytes),
        chunks_sha256=_sha256(chunk_bytes),
    )
    store.manifest = manifest
    manifest_bytes = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")
    return manifest_bytes, chunk_bytes, vec_bytes


def persist_store(store: VectorStore, path: str | Path) -> Path:
    """Write ``store`` under directory ``path``. Output is byte-deterministic."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest_bytes, chunk_bytes, vec_bytes = _serialize(store)
    # manifest last: a directory without one is never mistaken for a complete store
    (path / VECTORS_NAME).write_bytes(vec_bytes)
    (path / CHUNKS_NAME).write_bytes(chunk_bytes)
    (path / MANIFEST_NAME).write_bytes(manifest_bytes)
    return path


def load_store(path: str | Path) -> VectorStore:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST_NAME).read_text(encoding="utf-8"))
        chunk_bytes = (path / CHUNKS_NAME).read_bytes()
        vec_bytes = (path / VECTORS_NAME).read_bytes()
    except FileNotFoundError as exc:
        raise CorruptStore(f"missing file {exc.filename}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptStore(f"unreadable manifest: {exc}") from exc

    try:
        dimension = int(manifest["dimension"])
        count = int(manifest["num_chunks"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptStore(f"manifest lacks dimension/num_chunks: {exc}") from exc
    if manifest.get("format") != STORE_FORMAT:
        raise CorruptStore(f"unknown store format {manifest.get('format')!r}")

    if _sha256(chunk_bytes) != manifest.get("chunks_sha256"):
        raise CorruptStore("chunks.jsonl checksum mismatch")
    try:
        chunks = [
            DocumentChunk(**json.loads(line)) for line in chunk_bytes.decode("utf-8").splitlines()
        ]
    except (TypeError, ValueError) as exc:
        raise CorruptStore(f"bad chunk record: {exc}") from exc
    if len(chunks) != count:
        raise CorruptStore(f"manifest says {count} chunks, found {len(chunks)}")

    itemsize = _VEC_DTYPE.itemsize
    if count and len(vec_bytes) % (itemsize * count) == 0:
        actual_dim = len(vec_bytes) // (itemsize * count)
        if actual_dim != dimension:
            raise DimensionMismatch(dimension, actual_dim)
    if len(vec_bytes) != itemsize * count * dimension:
        raise CorruptStore(
            f"vectors.bin has {len(vec_bytes)} bytes, expected {itemsize * count * dimension}"
        )
    if _sha256(vec_bytes) != manifest.get("vectors_sha256"):
        raise CorruptStore("vectors.bin checksum mismatch")

    vectors = np.frombuffer(vec_bytes, dtype=_VEC_DTYPE).reshape(count, dimension).copy()
    if not np.all(np.isfinite(vectors)):
        raise CorruptStore("non-finite values in vectors.bin")
    return VectorStore(dimension, chunks, vectors, manifest)


def score_all(store: VectorStore, query_vec: np.ndarray) -> np.ndarray:
    """Cosine similarity of a unit query against every stored (unit) vector."""
    # not `@`: BLAS gemv can round identical rows differently, which breaks the chunk_id tie-break
    return (store._unit64 * query_vec).sum(axis=1)


def top_k(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best scores; ties go to the lower index (= chunk_id)."""
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:k]


def query(store: VectorStore, query_text: str, k: int = DEFAULT_K, embedder: Embedder | None = None) -> list[RetrievalResult]:
    if k < 1:
        raise ValueError("k must be >= 1")
    embedder = embedder or HashingEmbedder(store.dimension)
    if embedder.identity != store.embedder_identity:
        raise EmbedderMismatch(store.embedder_identity, embedder.identity)
    return query_vector(store, embedder.embed(query_text), k)


def query_vector(store: VectorStore, vec: np.ndarray, k: int = DEFAULT_K) -> list[RetrievalResult]:
    if k < 1:
        raise ValueError("k must be >= 1")
    q = _unit(vec, None, store.dimension)
    scores = score_all(store, q)
    return [
        RetrievalResult(store.chunks[i], float(min(1.0, max(-1.0, scores[i]))))
        for i in top_k(scores, k)
    ]


def source_marker(source_document: str, chunk_id: int) -> str:
    return f"[Source: {source_document}, chunk {chunk_id}]"


def format_context(results: Iterable[RetrievalResult]) -> str:
    blocks = [
        f"{source_marker(r.chunk.source_document, r.chunk.chunk_id)}\n{r.chunk.text}" for r in results
    ]
    if not blocks:
        return NO_CONTEXT
    return "\n\n".join(blocks)


def store_summary(store: VectorStore) -> dict[str, Any]:
    return {
        "dimension": store.dimension,
        "chunks": len(store),
        "embedder": store.embedder_identity,
        "sources": {s["name"]: s["chunks"] for s in store.manifest.get("sources", [])},
    }
