from __future__ import annotations

import random

import numpy as np
import pytest

from medragkit.embedding import StubEmbedder
from medragkit.errors import DataError
from medragkit.retrieval import (
    Index,
    Query,
    RetrievalDoc,
    build_index,
    fusion_score,
    load_docs,
    retrieve_context,
)
from medragkit.jsonlio import write_jsonl


def unit(dim: int, axis: int) -> np.ndarray:
    v = np.zeros(dim)
    v[axis] = 1.0
    return v


def guideline(doc_id: str, text_vec: np.ndarray) -> RetrievalDoc:
    return RetrievalDoc(doc_id=doc_id, kind="text_guideline", text=f"guideline {doc_id}",
                        text_vec=text_vec)


def case_doc(doc_id: str, text_vec=None, image_vec=None, source_case=None) -> RetrievalDoc:
    return RetrievalDoc(doc_id=doc_id, kind="image_case", text=f"case {doc_id}",
                        text_vec=text_vec, image_vec=image_vec, source_case=source_case)


# ---------------------------------------------------------------------------
# fusion_score
# ---------------------------------------------------------------------------


def test_fusion_text_only_identity():
    q = Query(text_vec=unit(4, 0))
    c = guideline("g", unit(4, 0))
    assert fusion_score(q, c) == pytest.approx(1.0)


def test_fusion_both_modalities_orthonormal():
    q = Query(text_vec=unit(4, 0), image_vec=unit(4, 1))
    c = case_doc("c", text_vec=unit(4, 0), image_vec=unit(4, 1))
    assert fusion_score(q, c) == pytest.approx(2.0)


def test_fusion_orthogonal_zero():
    q = Query(text_vec=unit(4, 0))
    c = guideline("g", unit(4, 1))
    assert fusion_score(q, c) == pytest.approx(0.0)


def test_fusion_symmetric_in_fields():
    rng = np.random.default_rng(5)
    qt, qi = rng.normal(size=6), rng.normal(size=6)
    ct, ci = rng.normal(size=6), rng.normal(size=6)
    a = fusion_score(Query(text_vec=qt, image_vec=qi),
                     case_doc("c", text_vec=ct, image_vec=ci))
    b = fusion_score(Query(text_vec=ct, image_vec=ci),
                     case_doc("c", text_vec=qt, image_vec=qi))
    assert a == pytest.approx(b, abs=1e-12)


def test_fusion_bilinear_in_text_vec():
    rng = np.random.default_rng(6)
    qt, ct, ci = rng.normal(size=8), rng.normal(size=8), rng.normal(size=8)
    c = case_doc("c", text_vec=ct, image_vec=ci)
    base = fusion_score(Query(text_vec=qt), c)
    scaled = fusion_score(Query(text_vec=3.0 * qt), c)
    assert scaled == pytest.approx(3.0 * base, abs=1e-9)


def test_fusion_requires_vectors_both_sides():
    with pytest.raises(DataError):
        fusion_score(Query(), guideline("g", unit(4, 0)))
    with pytest.raises(DataError):
        fusion_score(Query(text_vec=unit(4, 0)),
                     RetrievalDoc(doc_id="empty", kind="image_case"))


# ---------------------------------------------------------------------------
# build_index
# ---------------------------------------------------------------------------


def stub_docs() -> list[RetrievalDoc]:
    docs = [RetrievalDoc(doc_id=f"g{i}", kind="text_guideline",
                         text=f"guideline body {i}") for i in range(3)]
    docs += [RetrievalDoc(doc_id=f"c{i}", kind="image_case",
                          text=f"case body {i}", image=f"img{i}".encode())
             for i in range(5)]
    return docs


def test_build_index_mixed_corpus():
    embed = StubEmbedder(dim=16)
    index = build_index(stub_docs(), embed)
    assert len(index) == 8
    assert index.dim == 16
    assert index.rejects == []
    for doc in index.docs:
        assert doc.text_vec is not None
        assert np.linalg.norm(doc.combined_vec(16)) > 0
        if doc.kind == "text_guideline":
            assert doc.image_vec is None


def test_build_index_empty_corpus_errors():
    with pytest.raises(DataError, match="empty corpus"):
        build_index([], StubEmbedder(dim=8))


def test_build_index_dimension_mismatch_rejected():
    embed = StubEmbedder(dim=8)
    good = RetrievalDoc(doc_id="ok", kind="text_guideline", text="fine")
    bad = RetrievalDoc(doc_id="bad", kind="text_guideline", text="x",
                       text_vec=np.ones(5))
    index = build_index([good, bad], embed)
    assert [d.doc_id for d in index.docs] == ["ok"]
    assert index.rejects[0].doc_id == "bad"
    assert "dimension mismatch" in index.rejects[0].reason


def test_build_index_guideline_with_image_vec_rejected():
    embed = StubEmbedder(dim=8)
    bad = RetrievalDoc(doc_id="bad", kind="text_guideline", text="x",
                       image_vec=np.ones(8))
    index = build_index([bad, RetrievalDoc(doc_id="ok", kind="text_guideline", text="y")],
                        embed)
    assert index.rejects[0].doc_id == "bad"


def test_build_index_rebuild_byte_identical(tmp_path):
    embed = StubEmbedder(dim=12)
    a, b = tmp_path / "a.idx", tmp_path / "b.idx"
    build_index(stub_docs(), embed).save(a)
    build_index(stub_docs(), embed).save(b)
    assert a.read_bytes() == b.read_bytes()


def test_index_round_trip_preserves_scores(tmp_path):
    embed = StubEmbedder(dim=12)
    index = build_index(stub_docs(), embed)
    path = tmp_path / "x.idx"
    index.save(path)
    loaded = Index.load(path)
    q = Query(text="some query")
    before = retrieve_context(index, q, k=4, embed=embed)
    q2 = Query(text="some query")
    after = retrieve_context(loaded, q2, k=4, embed=embed)
    assert [r.doc_id for r in before] == [r.doc_id for r in after]
    for r1, r2 in zip(before, after):
        assert abs(r1.score - r2.score) <= 1e-12


def test_load_docs_from_file(tmp_path):
    path = tmp_path / "docs.jsonl"
    write_jsonl(path, [
        {"doc_id": "g0", "kind": "text_guideline", "text": "alpha"},
        {"doc_id": "c0", "kind": "image_case", "text": "beta"},
    ])
    docs = load_docs(path)
    assert [d.doc_id for d in docs] == ["g0", "c0"]


# ---------------------------------------------------------------------------
# retrieve_context
# ---------------------------------------------------------------------------


def eight_doc_index() -> Index:
    """Controlled geometry: four strong cases, three weaker guidelines."""
    dim = 8
    docs = []
    for i in range(4):  # cases score 0.9, 0.8, 0.7, 0.6
        vec = np.zeros(dim)
        vec[0] = 0.9 - 0.1 * i
        vec[7] = np.sqrt(1 - vec[0] ** 2)
        docs.append(case_doc(f"c{i}", text_vec=vec))
    for i in range(3):  # guidelines score 0.5, 0.4, 0.3
        vec = np.zeros(dim)
        vec[0] = 0.5 - 0.1 * i
        vec[6] = np.sqrt(1 - vec[0] ** 2)
        docs.append(guideline(f"g{i}", vec))
    docs.append(case_doc("c9", text_vec=unit(dim, 5)))  # scores 0
    return Index(dim=dim, docs=docs)


def query_e0() -> Query:
    return Query(text_vec=unit(8, 0))


def test_constraint_swaps_in_best_guideline():
    results = retrieve_context(eight_doc_index(), query_e0(), k=4)
    assert [r.doc_id for r in results] == ["c0", "c1", "c2", "g0"]
    assert results[-1].kind == "text_guideline"


def test_only_guidelines_plain_topk():
    dim = 8
    docs = [guideline(f"g{i}", unit(dim, i)) for i in range(4)]
    index = Index(dim=dim, docs=docs)
    results = retrieve_context(index, query_e0(), k=2)
    assert [r.doc_id for r in results] == ["g0", "g1"]


def test_k1_constraint_dominates():
    results = retrieve_context(eight_doc_index(), query_e0(), k=1)
    assert len(results) == 1
    assert results[0].doc_id == "g0"


def test_constraint_disabled_returns_plain_topk():
    results = retrieve_context(eight_doc_index(), query_e0(), k=4,
                               require_guideline=False)
    assert [r.doc_id for r in results] == ["c0", "c1", "c2", "c3"]


def test_k_larger_than_corpus_returns_all():
    index = eight_doc_index()
    results = retrieve_context(index, query_e0(), k=50)
    assert len(results) == len(index.docs)
    assert any(r.kind == "text_guideline" for r in results)


def test_results_sorted_with_doc_id_tiebreak():
    dim = 4
    docs = [case_doc("b", text_vec=unit(dim, 0)),
            case_doc("a", text_vec=unit(dim, 0)),
            guideline("g", unit(dim, 0))]
    index = Index(dim=dim, docs=docs)
    results = retrieve_context(index, Query(text_vec=unit(4, 0)), k=3)
    assert [r.doc_id for r in results] == ["a", "b", "g"]


def test_exclude_source_case():
    dim = 4
    docs = [case_doc("own", text_vec=unit(dim, 0), source_case="case-1"),
            case_doc("other", text_vec=unit(dim, 0), source_case="case-2"),
            guideline("g", unit(dim, 1))]
    index = Index(dim=dim, docs=docs)
    results = retrieve_context(index, Query(text_vec=unit(4, 0)), k=2,
                               exclude_case="case-1")
    assert "own" not in [r.doc_id for r in results]


def test_empty_index_errors():
    with pytest.raises(DataError, match="empty index"):
        retrieve_context(Index(dim=4, docs=[]), query_e0(), k=2)


def test_query_requires_some_modality():
    with pytest.raises(DataError):
        retrieve_context(eight_doc_index(), Query(), k=2)


# ---------------------------------------------------------------------------
# oracle equivalence on random corpora
# ---------------------------------------------------------------------------


def brute_force(index: Index, query: Query, k: int) -> list[str]:
    """Independent selection logic: full score table, sort, swap rule."""
    qvec = query.combined_vec(index.dim)
    table = []
    for doc in index.docs:
        table.append((float(np.dot(qvec, doc.combined_vec(index.dim))), doc.doc_id,
                      doc.kind))
    table.sort(key=lambda row: (-row[0], row[1]))
    top = table[:min(k, len(table))]
    if not any(kind == "text_guideline" for _, _, kind in top):
        guidelines = [row for row in table if row[2] == "text_guideline"]
        if guidelines:
            top[-1] = guidelines[0]
            top.sort(key=lambda row: (-row[0], row[1]))
    return [doc_id for _, doc_id, _ in top]


def random_index(rng: random.Random, dim: int = 6) -> Index:
    nprng = np.random.default_rng(rng.randint(0, 2**31))
    n = rng.randint(1, 64)
    docs = []
    for i in range(n):
        kind = "text_guideline" if rng.random() < 0.3 else "image_case"
        text_vec = nprng.normal(size=dim)
        text_vec /= np.linalg.norm(text_vec)
        image_vec = None
        if kind == "image_case" and rng.random() < 0.7:
            image_vec = nprng.normal(size=dim)
            image_vec /= np.linalg.norm(image_vec)
        docs.append(RetrievalDoc(doc_id=f"d{i:03d}", kind=kind, text="t",
                                 text_vec=text_vec, image_vec=image_vec))
    return Index(dim=dim, docs=docs)


def test_oracle_equivalence_random_corpora():
    rng = random.Random(42)
    for trial in range(60):
        index = random_index(rng)
        nprng = np.random.default_rng(trial)
        qt = nprng.normal(size=index.dim)
        query = Query(text_vec=qt / np.linalg.norm(qt))
        got = [r.doc_id for r in retrieve_context(index, query, k=4)]
        assert got == brute_force(index, query, k=4), trial
