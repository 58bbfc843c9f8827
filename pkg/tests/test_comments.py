import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cpcl.comments import (
    PAD,
    UNK,
    PAD_TOKEN,
    UNK_TOKEN,
    TextCnnParams,
    Vocabulary,
    build_vocab,
    clean_comments,
    encode_comment_batch,
    segment,
    textcnn_score,
)
from cpcl.features import CommentRecord, InvariantError


def recs(*texts, level=1):
    return [CommentRecord(t, level) for t in texts]


# --- cleaning ----------------------------------------------------------------


def test_dedup_keeps_first():
    out = clean_comments(recs("好人", "好人"))
    assert [r.text for r in out] == ["好人"]


def test_emoji_only_dropped():
    assert clean_comments(recs("😀😀")) == []
    assert clean_comments(recs("👍🏻")) == []  # emoji + skin tone modifier
    assert clean_comments(recs("❤️")) == []  # heart + variation selector


def test_meaningless_dropped_meaningful_kept():
    out = clean_comments(recs("!!!", "加油"))
    assert [r.text for r in out] == ["加油"]
    assert clean_comments(recs("12345")) == []
    assert clean_comments(recs("   ")) == []


def test_level_filter():
    out = clean_comments([CommentRecord("好", 1), CommentRecord("好人", 2)])
    assert [r.text for r in out] == ["好"]


def test_nfkc_normalization_applied():
    # fullwidth ASCII normalizes to halfwidth, then dedups with the plain form
    out = clean_comments(recs("ａｂｃ", "abc"))
    assert [r.text for r in out] == ["abc"]


def test_mixed_emoji_and_text_kept():
    out = clean_comments(recs("加油😀"))
    assert [r.text for r in out] == ["加油😀"]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.text(
            alphabet=st.sampled_from("加油好人孩子可怜😀👍! 123abcａｂ　"),
            max_size=8,
        ),
        max_size=20,
    )
)
def test_clean_is_idempotent(texts):
    once = clean_comments(recs(*texts))
    twice = clean_comments(once)
    assert once == twice


def test_clean_idempotent_on_large_fuzz_corpus():
    rng = np.random.default_rng(42)
    alphabet = list("加油好人孩子可怜真的视频😀😂👍!?。，123abcxyzＡＢ　 \t")
    corpus = []
    for _ in range(1000):
        n = int(rng.integers(0, 12))
        text = "".join(rng.choice(alphabet) for _ in range(n))
        corpus.append(CommentRecord(text, int(rng.integers(1, 3))))
    once = clean_comments(corpus)
    assert clean_comments(once) == once


# --- segmentation --------------------------------------------------------------


def test_segment_characters():
    assert segment("加油") == ["加", "油"]


def test_segment_ascii_runs():
    assert segment("abc加油") == ["abc", "加", "油"]
    assert segment("v2真好") == ["v2", "真", "好"]


def test_segment_skips_whitespace():
    assert segment("加 油") == ["加", "油"]


def test_segment_empty_rejected():
    with pytest.raises(InvariantError):
        segment("")


def test_segment_pluggable():
    assert segment("加油", segmenter=lambda s: [s]) == ["加油"]


# --- vocabulary ------------------------------------------------------------------


def test_build_vocab_basic():
    vocab = build_vocab([["a", "a", "b"]], min_freq=1, max_size=10)
    assert vocab.token_to_index == {PAD_TOKEN: 0, UNK_TOKEN: 1, "a": 2, "b": 3}


def test_min_freq_excludes_rare():
    vocab = build_vocab([["a", "a", "b"]], min_freq=2, max_size=10)
    assert "b" not in vocab.token_to_index
    assert vocab.encode("b") == UNK


def test_tie_break_lexicographic():
    vocab = build_vocab([["b", "a", "b", "a"]], min_freq=1, max_size=10)
    assert vocab.encode("a") == 2
    assert vocab.encode("b") == 3


def test_max_size_cap():
    corpus = [[f"t{i}" for i in range(50)]]
    vocab = build_vocab(corpus, min_freq=1, max_size=10)
    assert len(vocab) == 10
    with pytest.raises(InvariantError):
        build_vocab(corpus, max_size=1)


def test_vocab_save_load_round_trip(tmp_path):
    vocab = build_vocab([["加", "油", "加"]], min_freq=1, max_size=10)
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == PAD_TOKEN and lines[1] == UNK_TOKEN
    loaded = Vocabulary.load(path)
    assert loaded.token_to_index == vocab.token_to_index


# --- encoding ---------------------------------------------------------------------


@pytest.fixture
def vocab():
    return build_vocab([list("加油好人孩子")], min_freq=1, max_size=20)


def test_encode_no_comments(vocab):
    assert encode_comment_batch([], vocab, length=6) == [PAD] * 6


def test_encode_single_comment_padding(vocab):
    out = encode_comment_batch(recs("加油好"), vocab, length=5)
    t1, t2, t3 = (vocab.encode(c) for c in "加油好")
    assert out == [t1, t2, t3, PAD, PAD]


def test_encode_separator_between_comments(vocab):
    out = encode_comment_batch(recs("加油", "好人"), vocab, length=8)
    expected = [vocab.encode("加"), vocab.encode("油"), PAD,
                vocab.encode("好"), vocab.encode("人"), PAD, PAD, PAD]
    assert out == expected


def test_encode_truncates_at_exactly_length(vocab):
    comments = recs("加油好人", "孩子加油", "好人好人")
    total_tokens = sum(len(r.text) for r in comments) + 2  # separators
    assert total_tokens > 8
    out = encode_comment_batch(comments, vocab, length=8)
    assert len(out) == 8


def test_encode_respects_max_comments(vocab):
    out = encode_comment_batch(recs("加", "油", "好"), vocab, length=10, max_comments=2)
    assert out == [vocab.encode("加"), PAD, vocab.encode("油"), PAD, PAD, PAD, PAD, PAD, PAD, PAD]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text(alphabet="加油好人孩子可怜abc", min_size=1, max_size=6), max_size=10),
       st.integers(min_value=4, max_value=40))
def test_encode_always_exact_length_valid_indices(texts, length):
    vocab = build_vocab([list("加油好人")], min_freq=1, max_size=10)
    out = encode_comment_batch(recs(*texts), vocab, length=length)
    assert len(out) == length
    assert all(0 <= i < len(vocab) for i in out)


# --- textcnn -----------------------------------------------------------------------


def make_cnn(rng, n_vocab=10, e=4, filters=3, widths=(2, 3, 4), scale=0.5):
    def t(*shape):
        return torch.from_numpy(scale * rng.standard_normal(shape))

    return TextCnnParams(
        embedding=t(n_vocab, e),
        conv_w={w: t(filters, e, w) for w in widths},
        conv_b={w: t(filters) for w in widths},
        head_w=t(filters * len(widths), 2),
        head_b=t(2),
    )


def test_textcnn_output_is_distribution():
    p = make_cnn(np.random.default_rng(0))
    out = textcnn_score([1, 2, 3, 4, 5, 0, 0, 0], p)
    assert abs(float(out.sum()) - 1.0) < 1e-12
    assert all(0.0 < float(v) < 1.0 for v in out)


def test_textcnn_zero_embedding_gives_head_bias_softmax():
    rng = np.random.default_rng(1)
    p = make_cnn(rng)
    p.embedding = torch.zeros_like(p.embedding)
    for w in p.conv_b:
        p.conv_b[w] = torch.zeros_like(p.conv_b[w])
    out = textcnn_score([1, 2, 3, 4, 5], p)
    expected = torch.softmax(p.head_b, dim=0)
    np.testing.assert_allclose(out.numpy(), expected.numpy(), atol=1e-15)


def naive_textcnn(indices, p):
    """Explicit-loop convolution oracle."""
    emb = p.embedding.numpy()[indices]  # (L, e)
    feats = []
    for w in sorted(p.conv_w):
        W = p.conv_w[w].numpy()  # (F, e, w)
        b = p.conv_b[w].numpy()
        best = np.full(W.shape[0], -np.inf)
        for f in range(W.shape[0]):
            for start in range(len(indices) - w + 1):
                acc = b[f]
                for k in range(w):
                    for ch in range(emb.shape[1]):
                        acc += W[f, ch, k] * emb[start + k, ch]
                best[f] = max(best[f], max(acc, 0.0))
        feats.append(best)
    logits = np.concatenate(feats) @ p.head_w.numpy() + p.head_b.numpy()
    z = np.exp(logits - logits.max())
    return z / z.sum()


def test_textcnn_matches_naive_convolution_oracle():
    rng = np.random.default_rng(2)
    p = make_cnn(rng)
    indices = rng.integers(0, 10, size=9).tolist()
    out = textcnn_score(indices, p)
    np.testing.assert_allclose(out.numpy(), naive_textcnn(indices, p), atol=1e-10)


def test_textcnn_index_out_of_range():
    p = make_cnn(np.random.default_rng(3))
    with pytest.raises(InvariantError):
        textcnn_score([0, 99], p)


def test_textcnn_sequence_shorter_than_every_width():
    p = make_cnn(np.random.default_rng(4))
    with pytest.raises(InvariantError):
        textcnn_score([1], p)


def test_pad_extension_invariance_under_restriction():
    # zero PAD embedding + non-positive conv bias: appending PAD beyond the
    # last non-PAD token cannot change max-over-time features
    rng = np.random.default_rng(5)
    p = make_cnn(rng)
    with torch.no_grad():
        p.embedding[PAD] = 0.0
        for w in p.conv_b:
            p.conv_b[w] = -torch.abs(p.conv_b[w])
    body = rng.integers(2, 10, size=5).tolist()
    short = body + [PAD] * 5  # trailing all-PAD window already present
    long = body + [PAD] * 11
    a = textcnn_score(short, p)
    b = textcnn_score(long, p)
    np.testing.assert_allclose(a.numpy(), b.numpy(), atol=1e-15)


def test_textcnn_gradients():
    from cpcl.gradcheck import grad_check

    assert grad_check("textcnn_score", seed=2).max_rel_err <= 1e-4
