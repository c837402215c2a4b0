import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from courtsim.errors import CorruptStore, DimensionMismatch, EmbedderFailure, EmbedderMismatch, InvalidChunkParams
from courtsim.knowledge_base import (
    MANIFEST_NAME,
    VECTORS_NAME,
    DocumentChunk,
    HashingEmbedder,
    RetrievalResult,
    VectorStore,
    build_store,
    chunk_document,
    format_context,
    load_corpus,
    load_store,
    persist_store,
    query,
    query_vector,
)

from . import oracles
from .conftest import CORPUS


def random_store(rng, n, d, duplicates=0):
    vecs = rng.standard_normal((n, d))
    if duplicates:
        vecs[rng.integers(0, n, duplicates)] = vecs[rng.integers(0, n, duplicates)]
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    chunks = [DocumentChunk(i, "DOC", i, f"chunk text {i}", i * 10, i * 10 + 12) for i in range(n)]
    manifest = {"embedder": "random", "sources": [{"name": "DOC", "chars": n * 10 + 2, "chunks": n}]}
    manifest.update(format="courtsim-store/1", dimension=d, chunk_size=12, overlap=2, num_chunks=n)
    return VectorStore(d, chunks, vecs, manifest)


# -- chunking -----------------------------------------------------------------


def test_chunk_spans_example():
    text = "".join(chr(97 + i % 26) for i in range(1000))
    chunks = chunk_document(text, "IPC", chunk_size=400, overlap=50)
    assert [(c.char_start, c.char_end) for c in chunks] == [(0, 400), (350, 750), (700, 1000)]
    assert oracles.reassemble(chunks, 50) == text
    assert [c.ordinal for c in chunks] == [0, 1, 2]


def test_short_text_single_chunk():
    chunks = chunk_document("x" * 100, "IPC", 400, 50)
    assert [(c.char_start, c.char_end) for c in chunks] == [(0, 100)]


@pytest.mark.parametrize("size,overlap", [(50, 50), (40, 50), (0, 0), (10, -1)])
def test_invalid_chunk_params(size, overlap):
    with pytest.raises(InvalidChunkParams):
        chunk_document("some text", "IPC", size, overlap)


def test_exact_fit_has_no_redundant_tail():
    chunks = chunk_document("y" * 750, "IPC", 400, 50)
    assert [(c.char_start, c.char_end) for c in chunks] == [(0, 400), (350, 750)]


@settings(max_examples=300, deadline=None)
@given(
    length=st.integers(1, 3000),
    size=st.integers(1, 500),
    overlap_frac=st.floats(0, 0.99),
)
def test_chunking_properties(length, size, overlap_frac):
    overlap = min(int(size * overlap_frac), size - 1)
    text = "".join(chr(33 + (i * 7) % 90) for i in range(length))
    chunks = chunk_document(text, "DOC", size, overlap)
    assert [(c.char_start, c.char_end) for c in chunks] == oracles.expected_spans(length, size, overlap)
    assert oracles.reassemble(chunks, overlap) == text
    for a, b in zip(chunks, chunks[1:]):
        assert a.char_end - b.char_start == overlap
    for c in chunks:
        assert 0 < len(c.text) <= size
        assert len(c.text) == c.char_end - c.char_start
        assert text[c.char_start:c.char_end] == c.text


# -- embedder -----------------------------------------------------------------


def test_hashing_embedder_deterministic_unit():
    emb = HashingEmbedder(64)
    a, b = emb.embed("knife"), emb.embed("knife")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        emb.embed("")
    assert abs(np.linalg.norm(emb.embed("... !!!")) - 1.0) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.text(min_size=1, max_size=200))
def test_hashing_embedder_norm(text):
    assert abs(np.linalg.norm(HashingEmbedder(32).embed(text)) - 1.0) < 1e-6


# -- build / persist ----------------------------------------------------------


def test_build_three_docs():
    docs = [(name, "z" * 1000) for name in ("IPC", "CrPC", "Constitution")]
    store = build_store(docs, 400, 50, HashingEmbedder(32))
    assert len(store) == 9
    assert [c.chunk_id for c in store.chunks] == list(range(9))
    assert np.allclose(np.linalg.norm(store.vectors.astype(np.float64), axis=1), 1.0, atol=1e-6)
    assert store.manifest["chunk_size"] == 400 and store.manifest["overlap"] == 50
    assert store.embedder_identity == "hashing-bow-32"


def test_build_rejects_empty_document_list():
    with pytest.raises(InvalidChunkParams):
        build_store([], 400, 50)


def test_build_rejects_bad_source_names():
    with pytest.raises(InvalidChunkParams):
        build_store([("IPC, part 2", "text")], 400, 50)


class FailingEmbedder:
    identity = "failing"

    def __init__(self, fail_on):
        self.fail_on = fail_on
        self.calls = 0

    def embed(self, text):
        self.calls += 1
        if self.calls - 1 == self.fail_on:
            return np.full(8, np.nan)
        return np.ones(8)


def test_embedder_failure_names_chunk(tmp_path):
    with pytest.raises(EmbedderFailure) as exc:
        build_store([("IPC", "a" * 1000)], 400, 50, FailingEmbedder(fail_on=1))
    assert exc.value.chunk_id == 1


def test_persist_round_trip(tmp_path, corpus_store):
    persist_store(corpus_store, tmp_path / "s")
    loaded = load_store(tmp_path / "s")
    assert loaded.chunks == corpus_store.chunks
    assert np.max(np.abs(loaded.vectors.astype(np.float64) - corpus_store.vectors.astype(np.float64))) <= 1e-9
    assert loaded.manifest == corpus_store.manifest
    persist_store(loaded, tmp_path / "t")
    assert (tmp_path / "s" / MANIFEST_NAME).read_bytes() == (tmp_path / "t" / MANIFEST_NAME).read_bytes()


def test_deterministic_bytes(tmp_path):
    docs = load_corpus(CORPUS)
    for name in ("a", "b"):
        persist_store(build_store(docs, 500, 100, HashingEmbedder(128)), tmp_path / name)
    for f in ("manifest.json", "chunks.jsonl", "vectors.bin"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_truncated_vectors_is_corrupt(tmp_path, corpus_store):
    persist_store(corpus_store, tmp_path)
    vec = tmp_path / VECTORS_NAME
    vec.write_bytes(vec.read_bytes()[:-7])
    with pytest.raises(CorruptStore):
        load_store(tmp_path)


def test_flipped_byte_is_corrupt(tmp_path, corpus_store):
    persist_store(corpus_store, tmp_path)
    vec = tmp_path / VECTORS_NAME
    data = bytearray(vec.read_bytes())
    data[10] ^= 0xFF
    vec.write_bytes(bytes(data))
    with pytest.raises(CorruptStore):
        load_store(tmp_path)


def test_dimension_mismatch(tmp_path):
    rng = np.random.default_rng(3)
    store = random_store(rng, 4, 380)
    persist_store(store, tmp_path)
    import json

    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
    manifest["dimension"] = 384
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(DimensionMismatch) as exc:
        load_store(tmp_path)
    assert (exc.value.expected, exc.value.actual) == (384, 380)


def test_missing_file_is_corrupt(tmp_path, corpus_store):
    persist_store(corpus_store, tmp_path)
    (tmp_path / VECTORS_NAME).unlink()
    with pytest.raises(CorruptStore):
        load_store(tmp_path)


# -- query --------------------------------------------------------------------


def test_self_similarity_ranks_first():
    rng = np.random.default_rng(1)
    store = random_store(rng, 30, 16)
    target = store.vectors[17].astype(np.float64)
    results = query_vector(store, target, k=3)
    assert results[0].chunk.chunk_id == 17
    assert abs(results[0].score - 1.0) <= 1e-6


def test_orthogonal_query_scores_zero():
    vecs = np.zeros((3, 4))
    vecs[0, 0] = vecs[1, 1] = vecs[2, 2] = 1.0
    chunks = [DocumentChunk(i, "D", i, "t", i, i + 1) for i in range(3)]
    store = VectorStore(4, chunks, vecs, {"embedder": "x"})
    results = query_vector(store, np.array([0.0, 0.0, 0.0, 1.0]), k=3)
    assert [r.score for r in results] == [0.0, 0.0, 0.0]
    assert [r.chunk.chunk_id for r in results] == [0, 1, 2]


def test_random_store_matches_brute_force():
    rng = np.random.default_rng(7)
    store = random_store(rng, 200, 32, duplicates=20)
    q = rng.standard_normal(32)
    got = query_vector(store, q, k=10)
    expected = oracles.cosine_ranking(store.vectors.astype(np.float64).tolist(), q.tolist())[:10]
    assert [r.chunk.chunk_id for r in got] == [i for i, _ in expected]
    assert all(abs(r.score - s) < 1e-9 for r, (_, s) in zip(got, expected))


def test_k_larger_than_store():
    rng = np.random.default_rng(2)
    store = random_store(rng, 4, 8)
    assert len(query_vector(store, rng.standard_normal(8), k=10)) == 4
    with pytest.raises(ValueError):
        query_vector(store, rng.standard_normal(8), k=0)


def test_query_text_and_embedder_mismatch(corpus_store):
    results = query(corpus_store, "knife stabbing dangerous weapon", k=3, embedder=HashingEmbedder(384))
    assert len(results) == 3
    assert results[0].chunk.source_document == "IPC"
    with pytest.raises(EmbedderMismatch):
        query(corpus_store, "knife", k=3, embedder=HashingEmbedder(128))


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    n=st.integers(1, 300),
    d=st.sampled_from([2, 3, 16, 64]),
    k=st.integers(1, 400),
    dups=st.integers(0, 30),
)
def test_query_equals_exhaustive_ranking(seed, n, d, k, dups):
    rng = np.random.default_rng(seed)
    store = random_store(rng, n, d, duplicates=min(dups, n))
    q = rng.standard_normal(d)
    got = query_vector(store, q, k)
    expected = oracles.cosine_ranking(store.vectors.astype(np.float64).tolist(), q.tolist())[:k]
    assert [r.chunk.chunk_id for r in got] == [i for i, _ in expected]
    scores = [r.score for r in got]
    assert scores == sorted(scores, reverse=True)


# -- context ------------------------------------------------------------------


def test_format_context_markers():
    chunk = DocumentChunk(42, "IPC", 3, "Section text.", 0, 13)
    ctx = format_context([RetrievalResult(chunk, 0.9)])
    assert ctx.startswith("[Source: IPC, chunk 42]\n")
    assert format_context([]) == "NO CONTEXT RETRIEVED"
    two = format_context([RetrievalResult(chunk, 0.9), RetrievalResult(DocumentChunk(1, "CrPC", 0, "x", 0, 1), 0.5)])
    assert two.index("chunk 42") < two.index("chunk 1]")
