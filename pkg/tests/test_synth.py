import numpy as np
import pytest

from visegrid.corpus import SILENCE
from visegrid.errors import ConfigError
from visegrid.synth import (
    DEFAULT_SYNTH_VOWELS,
    DEFAULT_VOCAB,
    SynthSpec,
    generate_synthetic_corpus,
)


def test_default_vocab_pronunciations_are_distinct():
    prons = list(DEFAULT_VOCAB.values())
    assert len(prons) == len(set(prons)) == 10
    used = {ph for p in prons for ph in p}
    assert used & DEFAULT_SYNTH_VOWELS == DEFAULT_SYNTH_VOWELS


def test_generate_shapes_and_ids(tiny_corpus):
    corpus, truth = tiny_corpus
    assert corpus.speakers == (1, 2)
    assert len(corpus) == 18
    u = corpus.utts_for(1)[0]
    assert u.utt_id == "sp01_0000"
    assert u.features.shape[1] == len(corpus.dictionary.phoneme_set)
    # alignments tile the whole utterance
    spans = truth.alignments[u.utt_id]
    assert spans[0][1] == 0
    assert spans[-1][2] == u.features.shape[0]
    for (_, a, b), (_, c, _d) in zip(spans, spans[1:]):
        assert b == c
    assert tuple(s[0] for s in spans) == u.phonemes


def test_generation_is_deterministic():
    spec = SynthSpec(speakers=1, sentences=3, seed=9)
    c1, t1 = generate_synthetic_corpus(spec)
    c2, _ = generate_synthetic_corpus(spec)
    for a, b in zip(c1.utterances, c2.utterances):
        assert a.utt_id == b.utt_id and a.words == b.words
        assert np.array_equal(a.features, b.features)
    c3, _ = generate_synthetic_corpus(SynthSpec(speakers=1, sentences=3, seed=10))
    assert any(
        not np.array_equal(a.features, b.features)
        for a, b in zip(c1.utterances, c3.utterances)
    )


def test_sentence_and_frame_ranges_respected():
    spec = SynthSpec(speakers=1, sentences=20, sentence_length=(2, 4),
                     frames_per_phoneme=(3, 5), seed=1)
    corpus, truth = generate_synthetic_corpus(spec)
    for u in corpus.utterances:
        assert 2 <= len(u.words) <= 4
        for _, a, b in truth.alignments[u.utt_id]:
            assert 3 <= b - a <= 5


def test_separation_is_the_pairwise_mean_distance():
    spec = SynthSpec(speakers=1, sentences=1, separation=6.0, seed=0)
    _, truth = generate_synthetic_corpus(spec)
    keys = [k for k in truth.emissions if k[0] == 1]
    means = [truth.emissions[k][0] for k in keys]
    for i in range(len(means)):
        for j in range(i + 1, len(means)):
            dist = np.linalg.norm(means[i] - means[j])
            assert dist == pytest.approx(6.0), (keys[i], keys[j])


def test_non_divergent_speakers_share_layouts():
    spec = SynthSpec(speakers=2, sentences=1, seed=0)
    _, truth = generate_synthetic_corpus(spec)
    syms = {k[1] for k in truth.emissions}
    for sym in syms:
        m1, _ = truth.emissions[(1, sym)]
        m2, _ = truth.emissions[(2, sym)]
        assert np.array_equal(m1, m2)


def test_divergent_speakers_differ_but_share_silence():
    spec = SynthSpec(speakers=3, sentences=1, divergent=True, seed=0)
    _, truth = generate_synthetic_corpus(spec)
    sil_means = {tuple(truth.emissions[(s, SILENCE)][0]) for s in (1, 2, 3)}
    assert len(sil_means) == 1
    diffs = 0
    syms = sorted({k[1] for k in truth.emissions} - {SILENCE})
    for sym in syms:
        if not np.array_equal(truth.emissions[(1, sym)][0], truth.emissions[(2, sym)][0]):
            diffs += 1
    assert diffs > 0


def test_confusable_pair_shares_one_mean_for_that_speaker_only():
    spec = SynthSpec(speakers=2, sentences=1,
                     confusable_pairs={1: ("b", "m")}, seed=0)
    _, truth = generate_synthetic_corpus(spec)
    assert np.array_equal(truth.emissions[(1, "b")][0], truth.emissions[(1, "m")][0])
    assert not np.array_equal(truth.emissions[(2, "b")][0], truth.emissions[(2, "m")][0])


def test_confusable_pair_must_share_category():
    spec = SynthSpec(speakers=1, sentences=1, confusable_pairs={1: ("b", "iy")}, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(spec)


def test_confusable_pair_cannot_use_silence():
    spec = SynthSpec(speakers=1, sentences=1, confusable_pairs={1: (SILENCE, "b")}, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(spec)


def test_feature_dim_must_fit_inventory():
    spec = SynthSpec(speakers=1, sentences=1, feature_dim=3, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic_corpus(spec)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(speakers=0, sentences=1)
    with pytest.raises(ConfigError):
        SynthSpec(speakers=1, sentences=1, sentence_length=(0, 3))
    with pytest.raises(ConfigError):
        SynthSpec(speakers=1, sentences=1, frames_per_phoneme=(4, 2))
    with pytest.raises(ConfigError):
        SynthSpec(speakers=1, sentences=1, separation=0.0)


def test_empirical_frame_means_near_truth():
    spec = SynthSpec(speakers=1, sentences=40, seed=2)
    corpus, truth = generate_synthetic_corpus(spec)
    frames_of = {}
    for u in corpus.utterances:
        for ph, a, b in truth.alignments[u.utt_id]:
            frames_of.setdefault(ph, []).append(u.features[a:b])
    for ph, chunks in frames_of.items():
        stacked = np.concatenate(chunks, axis=0)
        mean, var = truth.emissions[(1, ph)]
        err = np.abs(stacked.mean(axis=0) - mean).max()
        # ~1/sqrt(n) sampling noise; hundreds of frames per phoneme
        assert err < 5.0 / np.sqrt(len(stacked)), ph
