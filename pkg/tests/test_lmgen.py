import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoseq.codec import SPECIALS, TokenSequence, Vocabulary, build_vocab, decode, encode, is_valid
from geoseq.lmgen import (
    NgramModel,
    SamplerConfig,
    perplexity,
    property_bucket,
    quantile_edges,
    sample,
    train,
)


def toy(lines, k=1):
    corpus = [TokenSequence.from_texts(line.split()) for line in lines]
    vocab = Vocabulary(list(SPECIALS) + sorted({t for s in corpus for t in s.texts}))
    return train(corpus, vocab, k), vocab


@pytest.fixture(scope="module")
def fixture_model(qm9_style):
    corpus = [encode(m) for m in qm9_style[:400]]
    vocab = build_vocab(corpus)
    return train(corpus, vocab, 6), corpus


@pytest.fixture(scope="module")
def split_corpus(qm9_style):
    seqs = [encode(m) for m in qm9_style]
    return seqs[:1000], seqs[1000:1200], build_vocab(seqs)


class TestTrain:
    def test_single_continuation(self):
        model, vocab = toy(["A B", "A B"])
        a, b = vocab.id_of("A"), vocab.id_of("B")
        assert model.counts([a]) == {b: 2}
        # the seen continuation keeps weight 1, everything else is backed off
        unigram_b = model.counts([])[b] / sum(model.counts([]).values())
        p = model.next_distribution([a])
        assert p[b] == pytest.approx(1 / (1 + 0.4 * (1 - unigram_b)))
        assert int(np.argmax(p)) == b

    def test_even_split(self):
        model, vocab = toy(["A B", "A C"])
        a, b, c = (vocab.id_of(t) for t in "ABC")
        assert model.counts([a]) == {b: 1, c: 1}
        p = model.next_distribution([a])
        assert p[b] == p[c] and p[b] > 0.4

    def test_counts_include_bos_context(self):
        model, vocab = toy(["A B", "A C"], k=2)
        assert model.counts([vocab.bos_id]) == {vocab.id_of("A"): 2}
        assert model.first_tokens == {vocab.id_of("A"): 2}

    def test_errors(self):
        vocab = Vocabulary(list(SPECIALS) + ["A"])
        with pytest.raises(ValueError):
            train([TokenSequence.from_texts(["A"])], vocab, 0)
        with pytest.raises(ValueError):
            train([], vocab, 2)

    def test_backoff_formula(self):
        # "C" never appears as a context, so the order-1 lookup backs off to unigrams
        model, vocab = toy(["A B C", "B A"], k=2)
        unigram = np.zeros(len(vocab))
        for t, c in model.counts([]).items():
            unigram[t] = c
        unigram /= unigram.sum()
        ctx = [vocab.id_of("A"), vocab.id_of("C")]
        np.testing.assert_allclose(model.next_distribution(ctx), unigram, atol=1e-12)
        # context (B,) is seen: its counts keep full weight, other unigrams are scaled by 0.4
        p = model.next_distribution([vocab.id_of("B")])
        raw = 0.4 * unigram
        for t, c in model.counts([vocab.id_of("B")]).items():
            raw[t] = c / sum(model.counts([vocab.id_of("B")]).values())
        np.testing.assert_allclose(p, raw / raw.sum(), atol=1e-12)

    def test_unseen_longest_context_equals_suffix(self, fixture_model):
        model, corpus = fixture_model
        vocab = model.vocab
        ids = vocab.encode(corpus[0])[:6]
        unseen = [vocab.id_of("F")] * 1 + ids[1:6]
        assert tuple(unseen) not in model.tables
        np.testing.assert_allclose(
            model.next_distribution(unseen), model.next_distribution(unseen[1:]), atol=1e-12
        )

    @pytest.mark.xfail(
        strict=True,
        reason="with backoff 0.4 on the synthetic fixture, order 6 scores ~249 vs ~228 for order 1",
    )
    def test_perplexity_order6_vs_order1_default_backoff(self, split_corpus):
        train_set, held, vocab = split_corpus
        assert perplexity(train(train_set, vocab, 6), held) <= perplexity(train(train_set, vocab, 1), held)

    def test_perplexity_order6_vs_order1_milder_backoff(self, split_corpus):
        train_set, held, vocab = split_corpus
        six = perplexity(train(train_set, vocab, 6, backoff=0.6), held)
        one = perplexity(train(train_set, vocab, 1, backoff=0.6), held)
        assert six <= one

    def test_save_load(self, fixture_model, tmp_path):
        model, _ = fixture_model
        path = tmp_path / "m.json.gz"
        model.save(path)
        again = NgramModel.load(path)
        assert again.vocab.texts == model.vocab.texts
        ctx = model.vocab.encode(["H", "0.00", "0.00°", "0.00°"])
        np.testing.assert_array_equal(again.next_distribution(ctx), model.next_distribution(ctx))

    def test_rejects_foreign_file(self):
        with pytest.raises(ValueError):
            NgramModel.from_json({"format": "other"})


class TestDistribution:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 10**6), max_size=8))
    def test_sums_to_one(self, raw):
        model, _ = toy(["A B C", "A C B", "C C A"], k=3)
        ctx = [r % len(model.vocab) for r in raw]
        p = model.next_distribution(ctx)
        assert np.all(p >= 0)
        assert abs(p.sum() - 1) <= 1e-9


class TestSample:
    def test_config_defaults_and_validation(self):
        assert (SamplerConfig().top_k, SamplerConfig().temperature) == (80, 0.7)
        with pytest.raises(ValueError):
            SamplerConfig(top_k=0)
        with pytest.raises(ValueError):
            SamplerConfig(temperature=0.0)

    def test_deterministic(self, fixture_model):
        model, _ = fixture_model
        cfg = SamplerConfig(seed=9)
        assert [sample(model, cfg) for _ in range(3)] == [sample(model, cfg) for _ in range(3)]

    def test_greedy_equivalences(self, fixture_model):
        model, _ = fixture_model
        greedy = sample(model, SamplerConfig(top_k=1, seed=1))
        assert sample(model, SamplerConfig(temperature=1e-9, seed=2)) == greedy
        assert sample(model, SamplerConfig(top_k=1, seed=3)) == greedy

    def test_samples_mostly_valid(self, fixture_model):
        model, _ = fixture_model
        rng = np.random.default_rng(0)
        seqs = [sample(model, SamplerConfig(), rng=rng) for _ in range(100)]
        assert sum(is_valid(s) for s in seqs) >= 90
        assert all(s.texts[0] != "<bos>" for s in seqs)

    def test_max_len(self, fixture_model):
        model, _ = fixture_model
        seq = sample(model, SamplerConfig(max_len=5))
        assert len(seq) <= 5

    def test_condition_must_be_known(self, fixture_model):
        model, _ = fixture_model
        with pytest.raises(KeyError):
            sample(model, SamplerConfig(), condition="prop:alpha=3")

    def test_conditioning_shifts_size(self, qm9_style):
        alphas = [m.properties["alpha"] for m in qm9_style]
        edges = quantile_edges(alphas, 10)
        corpus = [encode(m, prop=property_bucket(a, "alpha", edges)) for m, a in zip(qm9_style, alphas)]
        model = train(corpus, build_vocab(corpus), 6)

        def mean_atoms(bucket):
            rng = np.random.default_rng(bucket)
            sizes = []
            for _ in range(40):
                seq = sample(model, SamplerConfig(), condition=f"prop:alpha={bucket}", rng=rng)
                if is_valid(seq):
                    sizes.append(len(decode(seq)))
            return np.mean(sizes)

        assert mean_atoms(0) < mean_atoms(9)

    def test_condition_stays_in_context(self):
        model, vocab = toy(["prop:x=0 A B A B", "prop:x=1 A C A C"], k=1)
        for bucket, nxt in ((0, "B"), (1, "C")):
            cond = vocab.id_of(f"prop:x={bucket}")
            assert model.counts([vocab.id_of("A")], cond) == {vocab.id_of(nxt): 2}
            p = model.next_distribution([vocab.id_of("A")], cond)
            assert int(np.argmax(p)) == vocab.id_of(nxt)


class TestBuckets:
    def test_examples(self):
        edges = [1.0, 2.0, 3.0]
        assert property_bucket(0.5, "alpha", edges) == "prop:alpha=0"
        assert property_bucket(1.0, "alpha", edges) == "prop:alpha=1"
        assert property_bucket(9.0, "alpha", edges) == "prop:alpha=3"

    def test_errors(self):
        with pytest.raises(ValueError):
            property_bucket(float("nan"), "a", [1.0])
        with pytest.raises(ValueError):
            property_bucket(1.0, "a", [2.0, 1.0])

    def test_deciles(self, qm9_style):
        alphas = np.array([m.properties["alpha"] for m in qm9_style])
        edges = quantile_edges(alphas, 10)
        buckets = [int(property_bucket(a, "alpha", edges).split("=")[1]) for a in alphas]
        shares = np.bincount(buckets, minlength=10) / len(alphas)
        assert np.all(np.abs(shares - 0.1) <= 0.02)
