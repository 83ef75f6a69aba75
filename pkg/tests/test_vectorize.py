import numpy as np
import pytest

from clarify_rank.data_ingest import ClickRecord, Impression
from clarify_rank.preprocess import Candidate, CandidateGroup, assign_relevance
from clarify_rank.vectorize import (
    EMBEDDING_DIM,
    BadMagic,
    DimMismatch,
    EmptyCorpus,
    StandardizationStats,
    TfidfModel,
    TruncatedPayload,
    build_feature_groups,
    fit_feature_stats,
    load_embeddings,
    ranker_features,
    raw_rank_features,
    record_text,
    save_embeddings,
    tfidf_fit,
    tfidf_matrix,
    tfidf_transform,
    tokenize,
)


def rec(query="a", question="b", answers=("a",), engagement=0):
    return ClickRecord(query, question, tuple(answers), Impression.HIGH, engagement)


# --- tfidf ------------------------------------------------------------------


def test_idf_single_doc_formula():
    # text "a b a": both terms appear in the one document, idf = ln(2/2)+1 = 1
    model = tfidf_fit([rec(query="a", question="b", answers=("a",))])
    assert model.vocab_size == 2
    assert model.idf[model.vocab["a"]] == pytest.approx(1.0)
    assert model.idf[model.vocab["b"]] == pytest.approx(1.0)


def test_transform_hand_arithmetic():
    model = tfidf_fit([rec(query="a", question="b", answers=("a",))])
    vec = tfidf_transform(model, rec(query="a", question="b", answers=("a",)))
    dense = vec.to_dense()
    expected = np.array([2.0, 1.0]) / np.sqrt(5.0)
    np.testing.assert_allclose(dense[[model.vocab["a"], model.vocab["b"]]], expected)


def test_transform_empty_and_oov():
    model = tfidf_fit([rec(query="hello", question="world", answers=())])
    vec = tfidf_transform(model, rec(query="zzz", question="yyy", answers=()))
    assert vec.entries == ()
    assert vec.norm() == 0.0


def test_transform_norm_is_unit_or_zero():
    corpus = [rec(query=f"w{i} common", question=f"t{i % 3}", answers=(f"x{i}",)) for i in range(20)]
    model = tfidf_fit(corpus)
    for r in corpus:
        assert tfidf_transform(model, r).norm() == pytest.approx(1.0, abs=1e-9)


def test_vocab_cap_and_tie_break():
    # 6 distinct terms, cap 4: df(common)=3 beats the rest; ties at df=1 break
    # lexicographically
    corpus = [
        rec(query="common alpha", question="beta", answers=()),
        rec(query="common gamma", question="delta", answers=()),
        rec(query="common epsilon", question="beta", answers=()),
    ]
    model = tfidf_fit(corpus, vocab_size=4)
    assert set(model.vocab) == {"common", "beta", "alpha", "delta"}


def test_vocab_caps_at_30k_over_40k_terms():
    corpus = [
        rec(query=" ".join(f"t{d:05d}x{i:03d}" for i in range(100)), question="q", answers=())
        for d in range(400)
    ]
    model = tfidf_fit(corpus)
    assert model.vocab_size == 30_000


def test_fit_order_independent():
    corpus = [rec(query=f"w{i % 7} shared", question=f"q{i}", answers=()) for i in range(30)]
    model_a = tfidf_fit(corpus)
    model_b = tfidf_fit(list(reversed(corpus)))
    assert model_a.vocab == model_b.vocab
    np.testing.assert_array_equal(model_a.idf, model_b.idf)


def test_fit_empty_corpus():
    with pytest.raises(EmptyCorpus):
        tfidf_fit([])


def test_transform_never_mutates_model():
    model = tfidf_fit([rec(query="alpha beta", question="gamma", answers=("alpha",))])
    vocab_before = dict(model.vocab)
    idf_before = model.idf.copy()
    first = tfidf_transform(model, rec(query="alpha", question="zzz", answers=()))
    second = tfidf_transform(model, rec(query="alpha", question="zzz", answers=()))
    assert first == second
    assert model.vocab == vocab_before
    np.testing.assert_array_equal(model.idf, idf_before)


def test_model_json_round_trip():
    model = tfidf_fit([rec(query="alpha beta", question="gamma", answers=("alpha",))])
    again = TfidfModel.from_json(model.to_json())
    assert again.vocab == model.vocab
    np.testing.assert_array_equal(again.idf, model.idf)


def test_against_sklearn_oracle():
    # Independent implementation of the same smoothed-idf convention.
    sklearn_text = pytest.importorskip("sklearn.feature_extraction.text")
    corpus = [
        rec(query=f"topic{i % 5} word{i % 3}", question=f"question about thing{i % 4}", answers=(f"ans{i % 2}", "common"))
        for i in range(25)
    ]
    texts = [record_text(r.query, r.question, r.answers) for r in corpus]
    ours = tfidf_matrix(tfidf_fit(corpus), texts).toarray()

    skl = sklearn_text.TfidfVectorizer(token_pattern=r"(?u)[^\W_]+", norm="l2", smooth_idf=True)
    theirs = skl.fit_transform(texts).toarray()
    our_vocab = tfidf_fit(corpus).vocab
    col_map = [our_vocab[t] for t in skl.get_feature_names_out()]
    np.testing.assert_allclose(ours[:, col_map], theirs, atol=1e-12)


def test_tokenizer_drops_punctuation_and_underscore():
    assert tokenize("Hello, world_x 42!") == ["hello", "world", "x", "42"]


# --- EMB1 -------------------------------------------------------------------


def test_emb1_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    values = rng.standard_normal((3, EMBEDDING_DIM)).astype(np.float32)
    path = tmp_path / "e.emb1"
    save_embeddings(values, path)
    first = path.read_bytes()
    loaded = load_embeddings(path)
    assert loaded.n_rows == 3 and loaded.dim == EMBEDDING_DIM
    np.testing.assert_array_equal(loaded.values, values)
    save_embeddings(loaded, path)
    assert path.read_bytes() == first


def test_emb1_bad_magic(tmp_path):
    path = tmp_path / "bad.emb1"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(BadMagic):
        load_embeddings(path)


def test_emb1_dim_mismatch(tmp_path):
    import struct

    path = tmp_path / "dim.emb1"
    path.write_bytes(b"EMB1" + struct.pack("<II", 1, 768) + b"\x00" * (768 * 4))
    with pytest.raises(DimMismatch):
        load_embeddings(path)


def test_emb1_truncated(tmp_path):
    import struct

    path = tmp_path / "trunc.emb1"
    path.write_bytes(b"EMB1" + struct.pack("<II", 2, EMBEDDING_DIM) + b"\x00" * 100)
    with pytest.raises(TruncatedPayload):
        load_embeddings(path)


# --- ranker features --------------------------------------------------------


def test_raw_features_by_character_count():
    features = raw_rank_features("ab", rec(query="ab", question="abc", answers=("a", "abc")))
    np.testing.assert_allclose(features, [2, 3, 2, 2.0])


def test_raw_features_no_answers():
    features = raw_rank_features("q", rec(question="question", answers=()))
    assert features[2] == 0 and features[3] == 0


def test_feature_dimension_with_and_without_pue():
    stats = StandardizationStats(mean=np.zeros(5), scale=np.ones(5))
    with_pue = ranker_features("q", rec(), 0.5, stats).as_array()
    without = ranker_features("q", rec(), None, stats).as_array()
    assert with_pue.shape == (5,)
    assert without.shape == (4,)


def test_standardized_train_features_zero_mean_unit_var():
    rng = np.random.default_rng(4)
    groups = []
    for q in range(30):
        query = "x" * int(rng.integers(3, 30))
        cands = tuple(
            Candidate(
                record=rec(
                    query=query,
                    question="y" * int(rng.integers(3, 50)),
                    answers=tuple("z" * int(rng.integers(1, 9)) for _ in range(int(rng.integers(0, 6)))),
                ),
                row_index=q * 10 + i,
                is_negative=False,
            )
            for i in range(3)
        )
        group = CandidateGroup(query=query, query_row_index=q * 10, candidates=cands)
        groups.append(assign_relevance(group, rng.random(3).tolist()))

    stats = fit_feature_stats(groups)
    featured = build_feature_groups(groups, stats, with_pue=True)
    stacked = np.concatenate([fg.features for fg in featured])
    np.testing.assert_allclose(np.abs(stacked.mean(axis=0)), 0, atol=1e-6)
    np.testing.assert_allclose(stacked.var(axis=0), 1, atol=1e-6)


def test_constant_feature_passes_through_centered():
    stats = StandardizationStats.fit(np.full((10, 4), 7.0))
    np.testing.assert_allclose(stats.apply(np.full(4, 7.0)), 0.0)
