from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textdrum.contrastive import ProjectionHead
from textdrum.errors import EmptyCorpusError, UntrainedEncoderError
from textdrum.text_encoding import (
    ContrastiveEncoder,
    HashingEmbedder,
    KeywordVocab,
    MultihotEncoder,
    PrecomputedEmbedder,
    PromptText,
    build_vocab,
    clean_path,
    embed_text,
    empty_embedding,
    encode_multihot,
    extract_bpm,
    save_precomputed,
)


def P(text: str) -> PromptText:
    return PromptText(tuple(text.split()))


@pytest.mark.parametrize(
    "path, expected",
    [
        (
            "Retro Funk GM/116 Say It/Fills/116 Say It Ride Fill 11.mid",
            "retro funk 116 say it fills 116 say it ride fill 11",
        ),
        ("GM/gm.mid", ""),
        ("Progressive GM/5-4 Grooves/180 5-4 02 F1.mid", "progressive 5-4 grooves 180 5-4 02 f1"),
        ("Groove Monkee/Bonus/Rock_Slow-Ride.MIDI", "rock slow ride"),
        ("C:\\loops\\Latin GM\\Samba.mid", "c: loops latin samba"),
    ],
)
def test_clean_path_examples(path, expected):
    assert clean_path(path).text == expected


path_text = st.text(alphabet="abcGMmidBonus0123456789-_/. \\", max_size=40)


@settings(max_examples=300, deadline=None)
@given(path_text)
def test_clean_path_idempotent(path):
    once = clean_path(path)
    assert clean_path(once.text) == once


@settings(max_examples=200, deadline=None)
@given(path_text)
def test_clean_path_strips_stoplist(path):
    tokens = clean_path(path).tokens
    assert not {"gm", "bonus", "mid", "midi"} & set(tokens)
    assert all(t == t.lower() and t for t in tokens)


def test_extract_bpm_examples():
    assert extract_bpm(P("116 say it ride fill 11")) == 116
    assert extract_bpm(P("rock fill")) is None
    assert extract_bpm(P("350 fast")) is None
    assert extract_bpm(P("11 fill 40")) == 40
    assert extract_bpm(P("5-4 grooves 300")) == 300


def test_build_vocab_examples():
    v = build_vocab([P("rock fill"), P("rock ride")], coverage=1.0)
    assert v.keywords == ("rock", "fill", "ride")
    assert build_vocab([P("latin")], coverage=1.0).keywords == ("latin",)
    with pytest.raises(EmptyCorpusError):
        build_vocab([])


def test_build_vocab_drops_numbers_and_stopwords():
    v = build_vocab([P("the rock 120 fill"), P("rock and ride 11")], coverage=1.0)
    assert v.keywords == ("rock", "fill", "ride")


def test_build_vocab_coverage_cutoff():
    # document frequencies 4, 3, 2, 1 -> mass 10; 70% needs the first two
    corpus = [P("a1 b1 c1 d1"), P("a1 b1 c1"), P("a1 b1"), P("a1")]
    assert build_vocab(corpus, coverage=0.7).keywords == ("a1", "b1")
    assert build_vocab(corpus, coverage=0.71).keywords == ("a1", "b1", "c1")


def test_build_vocab_allow_deny():
    corpus = [P("rock fill ride"), P("rock shuffle")]
    assert build_vocab(corpus, 1.0, allow=["rock", "ride"]).keywords == ("rock", "ride")
    assert build_vocab(corpus, 1.0, deny=["rock"]).keywords == ("fill", "ride", "shuffle")


words = st.lists(st.sampled_from(["rock", "fill", "ride", "latin", "funky", "16th", "120", "the", "7"]), max_size=8)


@settings(max_examples=100, deadline=None)
@given(st.lists(words, min_size=1, max_size=6))
def test_full_coverage_keeps_every_eligible_token(docs):
    corpus = [PromptText(tuple(d)) for d in docs]
    eligible = {t for d in docs for t in d if not t.isdigit() and t != "the"}
    if not eligible:
        with pytest.raises(EmptyCorpusError):
            build_vocab(corpus, 1.0)
        return
    assert set(build_vocab(corpus, 1.0).keywords) == eligible


VOCAB = KeywordVocab(("rock", "latin", "funky", "16th", "fill", "ride"))


def test_multihot_examples():
    v = encode_multihot(P("latin rock"), VOCAB)
    assert v.shape == (7,)
    assert v[:-1].sum() == 2 and v[0] == v[1] == 1
    assert not encode_multihot(PromptText(), VOCAB).any()
    v = encode_multihot(P("funky 16th 120"), VOCAB)
    assert np.flatnonzero(v[:-1]).tolist() == [2, 3]
    assert v[-1] == pytest.approx(120 / 300)


@settings(max_examples=100, deadline=None)
@given(words, st.randoms(use_true_random=False))
def test_multihot_order_and_repetition_invariant(tokens, rnd):
    shuffled = list(tokens) * 2
    rnd.shuffle(shuffled)
    a = encode_multihot(PromptText(tuple(tokens)), VOCAB)
    b = encode_multihot(PromptText(tuple(shuffled)), VOCAB)
    # bpm is the first in-range integer, which shuffling may change
    assert np.array_equal(a[:-1], b[:-1])
    assert a.tobytes() == encode_multihot(PromptText(tuple(tokens)), VOCAB).tobytes()
    assert set(np.unique(a[:-1])) <= {0.0, 1.0}


def test_vocab_json_roundtrip():
    assert KeywordVocab.from_json(VOCAB.to_json()) == VOCAB
    with pytest.raises(ValueError):
        KeywordVocab(("rock", "rock"))


def test_encoders():
    mh = MultihotEncoder(VOCAB)
    assert np.array_equal(embed_text(PromptText(), mh), np.zeros(7))
    assert np.array_equal(empty_embedding(mh), np.zeros(7))
    untrained = ContrastiveEncoder(HashingEmbedder())
    with pytest.raises(UntrainedEncoderError):
        untrained.embed(P("rock"))
    trained = ContrastiveEncoder(HashingEmbedder(), ProjectionHead())
    e1 = trained.embed(P("latin rock"))
    assert e1.shape == (128,)
    assert np.linalg.norm(e1) == pytest.approx(1.0, abs=1e-5)
    assert np.array_equal(e1, trained.embed(P("latin rock")))


def test_hashing_embedder_is_stable_and_normalized():
    h = HashingEmbedder()
    a = h(P("latin rock fill"))
    assert a.shape == (512,)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-6)
    assert np.array_equal(a, HashingEmbedder()(P("fill rock latin")))
    assert not h(PromptText()).any()


def test_precomputed_embedder_roundtrip(tmp_path):
    vecs = np.random.default_rng(0).standard_normal((2, 512)).astype(np.float32)
    save_precomputed(tmp_path / "m.json", tmp_path / "b.bin", ["latin rock", "funky 16th"], vecs)
    emb = PrecomputedEmbedder.load(tmp_path / "m.json", tmp_path / "b.bin")
    assert np.array_equal(emb(P("funky 16th")), vecs[1])
    with pytest.raises(KeyError):
        emb(P("unknown"))
