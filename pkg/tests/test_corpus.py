import numpy as np
import pytest
from hypothesis import given, strategies as st

from guidecap.corpus import (AttributePredictor, DatasetSplit, ImageRecord, SynthConfig, Vocabulary,
                             attribute_vector, build_vocabulary, format_record, frequent_words,
                             oracle_attributes, parse_record, preprocess_caption, read_dataset,
                             synth_generate, train_attribute_predictor, write_dataset)
from guidecap.exceptions import ConfigError, DataError, StateError


class TestPreprocess:
    def test_rules(self):
        assert preprocess_caption("A Dog, runs!") == ["a", "dog", "runs"]

    def test_truncates_to_thirty(self):
        assert preprocess_caption(" ".join(f"w{'x' * i}" for i in range(35))) == \
            [f"w{'x' * i}" for i in range(30)]

    def test_non_alpha_only(self):
        assert preprocess_caption("123") == []

    @given(st.text(max_size=200))
    def test_idempotent(self, raw):
        once = preprocess_caption(raw)
        assert preprocess_caption(" ".join(once)) == once
        assert all(t.isalpha() and t.islower() and t.isascii() for t in once)


class TestVocabulary:
    def test_min_count(self):
        v = build_vocabulary(["a a a", "a b"], min_count=2)
        assert v.itos == ["<start>", "<end>", "<unk>", "a"]
        assert v.id("b") == v.unk_id

    def test_min_count_one_keeps_all(self):
        v = build_vocabulary(["a a a", "a b"], min_count=1)
        assert {"a", "b"} <= set(v.itos)

    def test_default_min_count_is_five(self):
        v = build_vocabulary(["x x x x x y y y y"])
        assert "x" in v and "y" not in v

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            build_vocabulary([])

    @given(st.lists(st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=8), min_size=1, max_size=10))
    def test_round_trip(self, corpus):
        v = build_vocabulary(corpus, 1)
        assert all(v.id(v.token(i)) == i for i in range(len(v)))
        for toks in corpus:
            assert v.decode(v.encode(toks)) == toks

    def test_encode_frames(self):
        v = build_vocabulary(["a b"], 1)
        ids = v.encode(["a", "zzz"])
        assert ids[0] == v.start_id and ids[-1] == v.end_id and ids[2] == v.unk_id


class TestFrequentWords:
    def test_tie_rule(self):
        corpus = [["dog"] * 5 + ["cat"] * 3 + ["sat"] * 3]
        assert frequent_words(corpus, 2).words == ["dog", "cat"]

    def test_oversize_returns_all(self):
        with pytest.warns(UserWarning):
            fws = frequent_words([["b", "a", "a"]], 10)
        assert fws.words == ["a", "b"] and fws.truncated

    def test_excludes_reserved(self):
        v = build_vocabulary(["a b b"], 1)
        fws = frequent_words(["a b b"], 5, v)
        assert not set(fws.words) & {"<start>", "<end>", "<unk>"}

    def test_indicator(self):
        fws = frequent_words([["dog", "dog", "cat"]], 2)
        np.testing.assert_array_equal(fws.indicator(["a", "dog", "runs"]), [1, 0])


class TestSynth:
    def test_deterministic(self):
        cfg = SynthConfig(n_train=5, n_val=2, n_test=2)
        a, b = synth_generate(cfg, 3), synth_generate(cfg, 3)
        assert [format_record(r) for r in a.train + a.val + a.test] == \
            [format_record(r) for r in b.train + b.val + b.test]

    def test_split_sizes_and_disjoint(self):
        d = synth_generate(SynthConfig(n_concepts=10, dim=16, k=6), 0)
        assert (len(d.train), len(d.val), len(d.test)) == (200, 50, 50)
        ids = [r.image_id for r in d.train + d.val + d.test]
        assert len(set(ids)) == len(ids)
        assert all(r.A.shape == (6, 16) for r in d.train)

    def test_noiseless_single_concept(self):
        d = synth_generate(SynthConfig(noise=0.0, max_concepts=1, n_train=40, n_val=0, n_test=0), 0)
        by_caption = {}
        for r in d.train:
            nonzero = r.A[np.abs(r.A).sum(axis=1) > 0]
            assert len(nonzero) == 1
            np.testing.assert_allclose(r.a0, r.A.mean(axis=0))
            by_caption.setdefault(r.captions[0], []).append(nonzero[0])
        repeated = [v for v in by_caption.values() if len(v) > 1]
        assert repeated
        for group in repeated:
            assert all(np.array_equal(group[0], x) for x in group)

    def test_captions_mention_concepts(self):
        d = synth_generate(SynthConfig(n_train=20, n_val=0, n_test=0), 1)
        for r in d.train:
            caps = r.tokenized()
            assert len(caps) == 3
            assert all(sorted(c) == sorted(caps[0]) for c in caps)

    @pytest.mark.parametrize("kw", [{"dim": 0}, {"k": 0}, {"n_train": 0, "n_val": 0, "n_test": 0},
                                    {"n_concepts": 99}, {"noise": -1.0}, {"max_concepts": 9}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            synth_generate(SynthConfig(**kw), 0)

    def test_overlapping_ids_rejected(self):
        r = ImageRecord("x", np.zeros(2), np.zeros((1, 2)))
        with pytest.raises(DataError):
            DatasetSplit([r], [r], [])


def _setup(noise=0.1, n=200):
    d = synth_generate(SynthConfig(noise=noise, n_train=n, n_val=10, n_test=0), 0)
    toks = [t for r in d.train for t in r.tokenized()]
    v = build_vocabulary(toks, 5)
    return d, frequent_words(toks, 50, v)


class TestAttributes:
    def test_oracle_indicator(self):
        fws = frequent_words([["dog", "dog", "cat"]], 2)
        r = ImageRecord("i", np.zeros(2), np.zeros((1, 2)), ["a dog runs"])
        np.testing.assert_array_equal(attribute_vector(r, fws, "oracle"), [1, 0])

    def test_zero_mode(self):
        d, fws = _setup(n=5)
        e = attribute_vector(d.train[0], fws, "zero")
        assert e.shape == (len(fws),) and not e.any()

    def test_predicted_needs_predictor(self):
        d, fws = _setup(n=5)
        with pytest.raises(StateError):
            attribute_vector(d.train[0], fws, "predicted")

    def test_oracle_binary(self):
        d, fws = _setup(n=20)
        for r in d.train:
            assert set(np.unique(oracle_attributes(r, fws))) <= {0.0, 1.0}

    def test_noiseless_bce(self):
        d, fws = _setup(noise=0.0)
        _, bce = train_attribute_predictor(d.train, fws)
        assert bce < 0.1

    def test_zero_epochs_half(self):
        d, fws = _setup(n=10)
        model, _ = train_attribute_predictor(d.train, fws, epochs=0)
        np.testing.assert_allclose(model.predict_proba(np.stack([r.A.mean(0) for r in d.val])), 0.5)

    def test_deterministic_and_open_interval(self):
        d, fws = _setup(n=50)
        m1, b1 = train_attribute_predictor(d.train, fws, random_state=3)
        m2, b2 = train_attribute_predictor(d.train, fws, random_state=3)
        assert b1 == b2 and m1.params_.checksum() == m2.params_.checksum()
        for r in d.val:
            e = attribute_vector(r, fws, "predicted", m1)
            assert np.all((e > 0) & (e < 1))

    def test_sklearn_params(self):
        assert AttributePredictor(lr=0.3).get_params()["lr"] == 0.3


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        d = synth_generate(SynthConfig(n_train=4, n_val=0, n_test=0), 0)
        path = tmp_path / "d.tsv"
        write_dataset(path, d.train)
        back = read_dataset(path)
        for a, b in zip(d.train, back):
            assert a.image_id == b.image_id and a.captions == b.captions
            assert np.array_equal(a.A, b.A) and np.array_equal(a.a0, b.a0)

    def test_parse_errors_carry_line(self):
        with pytest.raises(DataError, match="line 7"):
            parse_record("x\t[1,2][1,q]\tcap", 7)
        with pytest.raises(DataError):
            parse_record("x\t[1,2]\tcap", 1)
        with pytest.raises(DataError):
            parse_record("x\t[1][1,2][3]\tcap", 1)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="nope.tsv"):
            read_dataset(tmp_path / "nope.tsv")
