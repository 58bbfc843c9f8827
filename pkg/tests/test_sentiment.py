import numpy as np
import pytest
import torch

from cpcl.features import InvariantError
from cpcl.sentiment import (
    HashEmbedder,
    SentimentHeadParams,
    SentimentTriple,
    SkgFormatError,
    build_store,
    integrate_and_score,
    load_skg,
    match_triples,
)


@pytest.fixture
def embedder():
    return HashEmbedder(dim=16)


def head_params(rng, e_s=16, hidden=8, alpha=0.5):
    def t(*shape):
        return torch.from_numpy(0.5 * rng.standard_normal(shape))

    return SentimentHeadParams(
        alpha_kg=torch.tensor(alpha, dtype=torch.float64),
        w1=t(e_s, hidden),
        b1=t(hidden),
        w2=t(hidden, 3),
        b2=t(3),
    )


# --- embedder ----------------------------------------------------------------


def test_hash_embedder_deterministic_and_normalized(embedder):
    a = embedder.embed("孩子真可怜")
    b = embedder.embed("孩子真可怜")
    np.testing.assert_array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12


def test_hash_embedder_distinguishes_texts(embedder):
    a = embedder.embed("孩子可怜")
    b = embedder.embed("加油精彩")
    assert np.linalg.norm(a - b) > 0.1


def test_hash_embedder_empty_text(embedder):
    assert np.linalg.norm(embedder.embed("")) == 0.0


# --- triples and store ---------------------------------------------------------


def test_triple_validation():
    with pytest.raises(InvariantError):
        SentimentTriple("", "好", "positive")
    with pytest.raises(InvariantError):
        SentimentTriple("人", "", "positive")
    with pytest.raises(InvariantError):
        SentimentTriple("人", "好", "meh")


def test_load_skg_single_row(tmp_path, embedder):
    path = tmp_path / "skg.tsv"
    path.write_text("孩子\t可怜\tnegative\n", encoding="utf-8")
    store = load_skg(path, embedder)
    assert len(store) == 1
    assert store.triples[0].polarity == "negative"


def test_load_skg_malformed_row(tmp_path, embedder):
    path = tmp_path / "skg.tsv"
    path.write_text("孩子\t可怜\tnegative\n孩子\t可怜\n", encoding="utf-8")
    with pytest.raises(SkgFormatError) as exc:
        load_skg(path, embedder)
    assert exc.value.lineno == 2


def test_load_skg_unknown_polarity(tmp_path, embedder):
    path = tmp_path / "skg.tsv"
    path.write_text("孩子\t可怜\tbad\n", encoding="utf-8")
    with pytest.raises(SkgFormatError):
        load_skg(path, embedder)


def test_load_skg_1000_rows_order_preserved(tmp_path, embedder):
    path = tmp_path / "skg.tsv"
    rows = [f"属性{i}\t词{i}\t{['positive','negative','neutral'][i % 3]}" for i in range(1000)]
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    store = load_skg(path, embedder)
    assert len(store) == 1000
    assert store.embeddings.shape == (1000, 16)
    for i in (0, 499, 999):
        assert store.triples[i].attribute == f"属性{i}"
        np.testing.assert_array_equal(
            store.embeddings[i], embedder.embed(store.triples[i].text)
        )


# --- matching ---------------------------------------------------------------------


def make_store(embedder, n=10):
    triples = [
        SentimentTriple(f"属性{i}", f"情感{i}", ["positive", "negative", "neutral"][i % 3])
        for i in range(n)
    ]
    return build_store(triples, embedder)


def test_exact_text_matches_with_similarity_one(embedder):
    store = make_store(embedder)
    tokens = list(store.triples[4].text)  # joined back with spaces stripped
    matches = match_triples(store.triples[4].text.split(" "), store, k=3, threshold=0.35)
    assert matches[0][0] == store.triples[4]
    assert abs(matches[0][1] - 1.0) < 1e-9


def test_threshold_above_one_empty(embedder):
    store = make_store(embedder)
    assert match_triples(["属", "性"], store, k=3, threshold=1.1) == []


def test_matches_equal_bruteforce_topk(embedder):
    store = make_store(embedder, n=10)
    tokens = ["属", "性", "情", "感", "3"]
    got = match_triples(tokens, store, k=3, threshold=-1.0)

    query = embedder.embed(" ".join(tokens))
    sims = []
    for i, emb in enumerate(store.embeddings):
        denom = np.linalg.norm(query) * np.linalg.norm(emb)
        sims.append(float(query @ emb / denom) if denom else 0.0)
    order = sorted(range(10), key=lambda i: (-sims[i], i))[:3]
    expected = [(store.triples[i], sims[i]) for i in order]
    assert [t for t, _ in got] == [t for t, _ in expected]
    np.testing.assert_allclose([s for _, s in got], [s for _, s in expected], atol=1e-12)


def test_store_duplication_keeps_topk_set(embedder):
    store = make_store(embedder, n=6)
    doubled = build_store(store.triples + store.triples, embedder)
    tokens = ["属", "性", "1"]
    a = {t for t, _ in match_triples(tokens, store, k=3, threshold=0.0)}
    b = {t for t, _ in match_triples(tokens, doubled, k=3, threshold=0.0)}
    # duplicated triples compare equal, so the matched set is unchanged
    assert {t.text for t in a} == {t.text for t in b}


def test_empty_store_rejected(embedder):
    store = build_store([], embedder)
    with pytest.raises(InvariantError):
        match_triples(["a"], store)


# --- integration + scoring -----------------------------------------------------


def test_no_matches_scales_comment_embedding(embedder):
    rng = np.random.default_rng(0)
    p = head_params(rng, alpha=0.3)
    emb = rng.standard_normal(16)
    out = integrate_and_score(torch.from_numpy(emb), [], p)
    # reproduce by hand: enhanced = 0.7 * emb
    enhanced = 0.7 * emb
    hidden = np.maximum(enhanced @ p.w1.numpy() + p.b1.numpy(), 0.0)
    logits = hidden @ p.w2.numpy() + p.b2.numpy()
    z = np.exp(logits - logits.max())
    np.testing.assert_allclose(out.numpy(), z / z.sum(), atol=1e-12)


def test_alpha_zero_ignores_knowledge(embedder):
    rng = np.random.default_rng(1)
    p = head_params(rng, alpha=0.0)
    store = make_store(embedder, n=4)
    emb = torch.from_numpy(rng.standard_normal(16))
    with_matches = integrate_and_score(emb, [(store.triples[0], 0.9)], p, store=store)
    without = integrate_and_score(emb, [], p)
    np.testing.assert_array_equal(with_matches.numpy(), without.numpy())


def test_single_match_uses_triple_embedding_exactly(embedder):
    rng = np.random.default_rng(2)
    p = head_params(rng, alpha=0.4)
    store = make_store(embedder, n=4)
    emb_np = rng.standard_normal(16)
    s = 0.77
    out = integrate_and_score(torch.from_numpy(emb_np), [(store.triples[2], s)], p, store=store)

    # weighted mean of one match is that embedding, independent of similarity
    enhanced = 0.6 * emb_np + 0.4 * store.embeddings[2]
    hidden = np.maximum(enhanced @ p.w1.numpy() + p.b1.numpy(), 0.0)
    logits = hidden @ p.w2.numpy() + p.b2.numpy()
    z = np.exp(logits - logits.max())
    np.testing.assert_allclose(out.numpy(), z / z.sum(), atol=1e-10)


def test_output_is_distribution(embedder):
    rng = np.random.default_rng(3)
    p = head_params(rng)
    out = integrate_and_score(torch.from_numpy(rng.standard_normal(16)), [], p)
    assert abs(float(out.sum()) - 1.0) < 1e-12
    assert all(0.0 < float(v) < 1.0 for v in out)


def test_enhanced_embedding_affine_in_alpha(embedder):
    rng = np.random.default_rng(4)
    store = make_store(embedder, n=4)
    emb = torch.from_numpy(rng.standard_normal(16))
    matches = [(store.triples[0], 0.8), (store.triples[1], 0.6)]

    def enhanced(alpha):
        sims = np.array([0.8, 0.6])
        knowledge = (sims[:, None] * store.embeddings[:2]).sum(0) / sims.sum()
        return (1 - alpha) * emb.numpy() + alpha * knowledge

    mid = enhanced(0.5)
    np.testing.assert_allclose(0.5 * (enhanced(0.0) + enhanced(1.0)), mid, atol=1e-12)


def test_dim_mismatch_rejected(embedder):
    p = head_params(np.random.default_rng(5))
    with pytest.raises(InvariantError):
        integrate_and_score(torch.zeros(7, dtype=torch.float64), [], p)


def test_sentiment_gradients():
    from cpcl.gradcheck import grad_check

    assert grad_check("sentiment_head", seed=4).max_rel_err <= 1e-4
