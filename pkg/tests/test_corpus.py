import numpy as np
import pytest

from visegrid.corpus import (
    CONSONANT,
    DEFAULT_VOWELS,
    SILENCE,
    SILENCE_CLASS,
    VOWEL,
    Corpus,
    FoldSplit,
    PhonemeSet,
    PronunciationDict,
    Utterance,
    load_dictionary,
    make_folds,
    read_corpus,
    read_features,
    read_folds,
    split_speaker,
    transcribe,
    write_corpus,
    write_features,
    write_folds,
)
from visegrid.errors import DictionaryError, FoldError, TranscriptionError


def _pdict():
    pset = PhonemeSet.from_symbols({"b", "iy", "uw", "k", SILENCE})
    return PronunciationDict({"BEE": ("b", "iy"), "BOO": ("b", "uw"), "KEY": ("k", "iy")}, pset)


def _utt(pdict, speaker, utt_id, words, t=8, d=2, fill=0.0):
    return Utterance(
        speaker_id=speaker,
        utt_id=utt_id,
        words=tuple(words),
        phonemes=tuple(transcribe(words, pdict)),
        features=np.full((t, d), fill),
    )


def test_phoneme_set_categories_and_silence_membership():
    pset = PhonemeSet.from_symbols({"iy", "b"})
    assert SILENCE in pset
    assert pset.category("iy") == VOWEL
    assert pset.category("b") == CONSONANT
    assert pset.category(SILENCE) == SILENCE_CLASS
    assert pset.symbols == ("b", "iy", SILENCE)  # sorted


def test_phoneme_set_rejects_duplicates():
    from visegrid.corpus import Phoneme

    with pytest.raises(ValueError):
        PhonemeSet([Phoneme("b", CONSONANT), Phoneme("b", VOWEL)])


def test_default_vowel_list_is_the_twenty_nuclei():
    assert len(DEFAULT_VOWELS) == 20
    assert "iy" in DEFAULT_VOWELS and "b" not in DEFAULT_VOWELS


def test_transcribe_pads_with_silence():
    pdict = _pdict()
    assert transcribe(["BEE", "BOO"], pdict) == [SILENCE, "b", "iy", "b", "uw", SILENCE]
    assert transcribe([], pdict) == [SILENCE, SILENCE]
    with pytest.raises(TranscriptionError):
        transcribe(["NOPE"], pdict)


def test_dictionary_rejects_empty_pron_and_unknown_phoneme():
    pset = PhonemeSet.from_symbols({"b"})
    with pytest.raises(DictionaryError):
        PronunciationDict({"W": ()}, pset)
    with pytest.raises(DictionaryError):
        PronunciationDict({"W": ("zz",)}, pset)


def test_load_dictionary_case_folding_and_first_variant(tmp_path):
    path = tmp_path / "dict.txt"
    path.write_text("bee B IY\nBEE b uh\n# comment\nBOO b uw\n")
    pdict = load_dictionary(path)
    assert pdict["BEE"] == ("b", "iy")  # first variant wins, case folded
    assert pdict.words == ("BEE", "BOO")
    assert SILENCE in pdict.phoneme_set


def test_load_dictionary_rejects_no_phonemes(tmp_path):
    path = tmp_path / "dict.txt"
    path.write_text("LONE\n")
    with pytest.raises(DictionaryError):
        load_dictionary(path)


def test_corpus_build_checks_ids_dims_and_transcripts():
    pdict = _pdict()
    utts = [_utt(pdict, 1, "u1", ["BEE"]), _utt(pdict, 2, "u2", ["BOO"])]
    corpus = Corpus.build(utts, pdict)
    assert corpus.speakers == (1, 2)
    assert len(corpus) == 2
    assert corpus.utts_for(1)[0].utt_id == "u1"

    with pytest.raises(ValueError):
        Corpus.build([utts[0], _utt(pdict, 1, "u1", ["BOO"])], pdict)  # dup id
    with pytest.raises(ValueError):
        Corpus.build([utts[0], _utt(pdict, 1, "u3", ["BOO"], d=5)], pdict)  # dim


def test_corpus_rejects_transcript_mismatch():
    pdict = _pdict()
    bad = _utt(pdict, 1, "u1", ["BEE"])
    bad.phonemes = ("b", "iy")  # missing silence padding
    with pytest.raises(ValueError):
        Corpus.build([bad], pdict)


def test_make_folds_partitions_each_speaker_evenly():
    pdict = _pdict()
    utts = [_utt(pdict, s, f"u{s}_{i}", ["BEE"]) for s in (1, 2) for i in range(7)]
    corpus = Corpus.build(utts, pdict)
    folds = make_folds(corpus, 3, seed=5)
    assert folds.k == 3
    for s in (1, 2):
        sizes = [0, 0, 0]
        for u in corpus.utts_for(s):
            sizes[folds.fold_of(u.utt_id)] += 1
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == 7


def test_make_folds_is_deterministic_and_seed_sensitive():
    pdict = _pdict()
    utts = [_utt(pdict, 1, f"u{i}", ["BEE"]) for i in range(12)]
    corpus = Corpus.build(utts, pdict)
    a = make_folds(corpus, 4, seed=1)
    b = make_folds(corpus, 4, seed=1)
    c = make_folds(corpus, 4, seed=2)
    assert a.assignment == b.assignment
    assert a.assignment != c.assignment


def test_make_folds_requires_enough_utterances():
    pdict = _pdict()
    corpus = Corpus.build([_utt(pdict, 1, "only", ["BEE"])], pdict)
    with pytest.raises(FoldError):
        make_folds(corpus, 2, seed=0)


def test_split_speaker_separates_train_and_test():
    pdict = _pdict()
    utts = [_utt(pdict, 1, f"u{i}", ["BEE"]) for i in range(6)]
    corpus = Corpus.build(utts, pdict)
    folds = make_folds(corpus, 3, seed=0)
    train, test = split_speaker(corpus, folds, 1, 0)
    assert {u.utt_id for u in train} | {u.utt_id for u in test} == {u.utt_id for u in utts}
    assert not ({u.utt_id for u in train} & {u.utt_id for u in test})


def test_fold_split_validates_range():
    with pytest.raises(FoldError):
        FoldSplit(1, {"u": 0})
    with pytest.raises(FoldError):
        FoldSplit(3, {"u": 3})


def test_features_roundtrip_bit_exact(tmp_path, rng):
    feats = rng.standard_normal((5, 3)) * 1e3
    path = tmp_path / "f.txt"
    write_features(path, feats, header={"seed": 0})
    back = read_features(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, feats)


def test_read_features_validates_shape_line(tmp_path):
    path = tmp_path / "f.txt"
    path.write_text("2 2\n1.0 2.0\n")
    with pytest.raises(ValueError):
        read_features(path)


def test_corpus_roundtrip(tmp_path, rng):
    pdict = _pdict()
    utts = [
        Utterance(1, "sp01_0000", ("BEE",), tuple(transcribe(["BEE"], pdict)),
                  rng.standard_normal((6, 2))),
        Utterance(2, "sp02_0000", ("BOO", "KEY"), tuple(transcribe(["BOO", "KEY"], pdict)),
                  rng.standard_normal((9, 2))),
    ]
    corpus = Corpus.build(utts, pdict)
    manifest = write_corpus(corpus, tmp_path, header={"version": "t"})
    back = read_corpus(manifest, pdict)
    assert len(back) == 2
    for orig in utts:
        twin = [u for u in back.utterances if u.utt_id == orig.utt_id][0]
        assert twin.words == orig.words
        assert twin.phonemes == orig.phonemes
        assert np.array_equal(twin.features, orig.features)


def test_folds_roundtrip(tmp_path):
    pdict = _pdict()
    utts = [_utt(pdict, 1, f"u{i}", ["BEE"]) for i in range(4)]
    corpus = Corpus.build(utts, pdict)
    folds = make_folds(corpus, 2, seed=3)
    path = tmp_path / "folds.tsv"
    write_folds(folds, path, header={"seed": 3})
    back = read_folds(path)
    assert back.k == folds.k
    assert back.assignment == folds.assignment
