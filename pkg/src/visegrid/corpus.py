"""Corpus model: phoneme inventory, pronunciation dictionary, utterances, folds.

File formats are line-oriented text. Lines starting with ``#`` are headers or
comments and are skipped by every reader here, so artifacts can carry
provenance headers without a side channel.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DictionaryError, FoldError, TranscriptionError

log = logging.getLogger(__name__)

SILENCE = "sil"

VOWEL = "vowel"
CONSONANT = "consonant"
SILENCE_CLASS = "silence"

# Vowel nuclei as spelled in BEEP-style British English dictionaries. Anything
# else (apart from the silence token) is treated as a consonant.
DEFAULT_VOWELS = frozenset(
    "aa ae ah ao aw ax ay ea eh er ey ia ih iy oh ow oy ua uh uw".split()
)


@dataclass(frozen=True)
class Phoneme:
    symbol: str
    category: str  # VOWEL, CONSONANT or SILENCE_CLASS


class PhonemeSet:
    """Closed inventory of phonemes with their vowel/consonant category.

    The silence token is always a member and always categorised as silence.
    """

    def __init__(self, phonemes: list[Phoneme], silence: str = SILENCE):
        symbols = [p.symbol for p in phonemes]
        if len(symbols) != len(set(symbols)):
            raise ValueError("duplicate phoneme symbols in inventory")
        self.silence = silence
        self._by_symbol = {p.symbol: p for p in sorted(phonemes, key=lambda p: p.symbol)}
        if silence not in self._by_symbol:
            self._by_symbol[silence] = Phoneme(silence, SILENCE_CLASS)
            self._by_symbol = dict(sorted(self._by_symbol.items()))
        elif self._by_symbol[silence].category != SILENCE_CLASS:
            raise ValueError(f"{silence!r} must have the silence category")

    @classmethod
    def from_symbols(
        cls,
        symbols,
        vowels: frozenset[str] = DEFAULT_VOWELS,
        silence: str = SILENCE,
    ) -> "PhonemeSet":
        phonemes = []
        for s in sorted(set(symbols)):
            if s == silence:
                cat = SILENCE_CLASS
            elif s in vowels:
                cat = VOWEL
            else:
                cat = CONSONANT
            phonemes.append(Phoneme(s, cat))
        return cls(phonemes, silence=silence)

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(self._by_symbol)

    def category(self, symbol: str) -> str:
        try:
            return self._by_symbol[symbol].category
        except KeyError:
            raise KeyError(f"unknown phoneme {symbol!r}") from None

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._by_symbol

    def __len__(self) -> int:
        return len(self._by_symbol)

    def __iter__(self):
        return iter(self._by_symbol.values())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PhonemeSet)
            and self._by_symbol == other._by_symbol
            and self.silence == other.silence
        )


@dataclass
class PronunciationDict:
    """Word -> phoneme string. One pronunciation per word (first variant wins)."""

    entries: dict[str, tuple[str, ...]]
    phoneme_set: PhonemeSet

    def __post_init__(self):
        for word, pron in self.entries.items():
            if not pron:
                raise DictionaryError(f"word {word!r} has an empty pronunciation")
            for ph in pron:
                if ph not in self.phoneme_set:
                    raise DictionaryError(f"word {word!r} uses unknown phoneme {ph!r}")

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __getitem__(self, word: str) -> tuple[str, ...]:
        return self.entries[word]

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(sorted(self.entries))


def load_dictionary(path, vowels: frozenset[str] = DEFAULT_VOWELS) -> PronunciationDict:
    """Parse a ``WORD ph ph ...`` dictionary file.

    Words are folded to upper case and phonemes to lower case. Duplicate words
    keep their first pronunciation; later variants are logged and dropped.
    """
    entries: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            word = parts[0].upper()
            pron = tuple(p.lower() for p in parts[1:])
            if not pron:
                raise DictionaryError(f"{path}:{lineno}: word {word!r} has no phonemes")
            if word in entries:
                log.info("dictionary %s:%d: duplicate entry for %s ignored", path, lineno, word)
                continue
            entries[word] = pron
    if not entries:
        raise DictionaryError(f"{path}: no entries")
    symbols = {ph for pron in entries.values() for ph in pron}
    symbols.add(SILENCE)
    pset = PhonemeSet.from_symbols(symbols, vowels=vowels)
    return PronunciationDict(entries, pset)


def transcribe(words, pdict: PronunciationDict) -> list[str]:
    """Expand a word sequence into phonemes with silence padding at both ends.

    An empty word list still yields ``[sil, sil]``.
    """
    out = [SILENCE]
    for word in words:
        if word not in pdict:
            raise TranscriptionError(f"word {word!r} not in dictionary")
        out.extend(pdict[word])
    out.append(SILENCE)
    return out


@dataclass(eq=False)
class Utterance:
    speaker_id: int
    utt_id: str
    words: tuple[str, ...]
    phonemes: tuple[str, ...]
    features: np.ndarray  # (T, d) float64

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(f"utterance {self.utt_id!r}: features must be (T, d) with T >= 1")


@dataclass
class Corpus:
    utterances: list[Utterance]
    dictionary: PronunciationDict
    feature_dim: int
    _by_speaker: dict[int, list[Utterance]] = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, utterances: list[Utterance], dictionary: PronunciationDict) -> "Corpus":
        if not utterances:
            raise ValueError("corpus has no utterances")
        ids = [u.utt_id for u in utterances]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate utterance ids")
        dim = utterances[0].features.shape[1]
        for u in utterances:
            if u.features.shape[1] != dim:
                raise ValueError(
                    f"utterance {u.utt_id!r}: feature dim {u.features.shape[1]} != {dim}"
                )
            expected = tuple(transcribe(u.words, dictionary))
            if u.phonemes != expected:
                raise ValueError(
                    f"utterance {u.utt_id!r}: phonemes do not match transcription of its words"
                )
        corpus = cls(list(utterances), dictionary, dim)
        for u in corpus.utterances:
            corpus._by_speaker.setdefault(u.speaker_id, []).append(u)
        return corpus

    @property
    def speakers(self) -> tuple[int, ...]:
        return tuple(sorted(self._by_speaker))

    def utts_for(self, speaker_id: int) -> list[Utterance]:
        try:
            return list(self._by_speaker[speaker_id])
        except KeyError:
            raise KeyError(f"no utterances for speaker {speaker_id}") from None

    def __len__(self) -> int:
        return len(self.utterances)


@dataclass
class FoldSplit:
    """Assignment of every utterance id to one of k folds."""

    k: int
    assignment: dict[str, int]

    def __post_init__(self):
        if self.k < 2:
            raise FoldError(f"need at least 2 folds, got {self.k}")
        bad = {i for i in self.assignment.values() if not 0 <= i < self.k}
        if bad:
            raise FoldError(f"fold ids out of range: {sorted(bad)}")

    def fold_of(self, utt_id: str) -> int:
        try:
            return self.assignment[utt_id]
        except KeyError:
            raise FoldError(f"utterance {utt_id!r} has no fold assignment") from None


def make_folds(corpus: Corpus, k: int, seed: int) -> FoldSplit:
    """Split each speaker's utterances into k folds, sizes differing by <= 1.

    Deterministic in (corpus, k, seed): utterances are sorted by id, shuffled
    with a per-speaker seeded generator, and dealt round-robin.
    """
    if k < 2:
        raise FoldError(f"need at least 2 folds, got {k}")
    assignment: dict[str, int] = {}
    for speaker in corpus.speakers:
        utts = sorted(corpus.utts_for(speaker), key=lambda u: u.utt_id)
        if len(utts) < k:
            raise FoldError(
                f"speaker {speaker} has {len(utts)} utterances, fewer than {k} folds"
            )
        rng = np.random.default_rng([seed, speaker])
        order = rng.permutation(len(utts))
        for pos, idx in enumerate(order):
            assignment[utts[idx].utt_id] = pos % k
    return FoldSplit(k, assignment)


def split_speaker(
    corpus: Corpus, folds: FoldSplit, speaker: int, fold: int
) -> tuple[list[Utterance], list[Utterance]]:
    """(train, test) for one speaker: test = the given fold, train = the rest."""
    if not 0 <= fold < folds.k:
        raise FoldError(f"fold {fold} out of range for k={folds.k}")
    train, test = [], []
    for u in corpus.utts_for(speaker):
        (test if folds.fold_of(u.utt_id) == fold else train).append(u)
    if not test or not train:
        raise FoldError(f"speaker {speaker} fold {fold}: empty train or test side")
    return train, test


# ---------------------------------------------------------------------------
# File IO


def _write_header(fh, header: dict | None):
    for key, value in (header or {}).items():
        fh.write(f"# {key}: {value}\n")


def write_features(path, features: np.ndarray, header: dict | None = None) -> None:
    """Write one utterance's features: a ``T d`` shape line, then T rows."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("features must be a (T, d) array")
    with open(path, "w", encoding="utf-8") as fh:
        _write_header(fh, header)
        fh.write(f"{arr.shape[0]} {arr.shape[1]}\n")
        for row in arr:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def read_features(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError(f"{path}: empty feature file")
    t, d = (int(x) for x in lines[0].split())
    if len(lines) - 1 != t:
        raise ValueError(f"{path}: expected {t} frames, found {len(lines) - 1}")
    arr = np.array([[float(x) for x in ln.split()] for ln in lines[1:]], dtype=np.float64)
    if arr.shape != (t, d):
        raise ValueError(f"{path}: shape line says {(t, d)}, data is {arr.shape}")
    return arr


def write_corpus(corpus: Corpus, out_dir, header: dict | None = None) -> str:
    """Write features/*.txt plus a manifest.tsv; returns the manifest path."""
    feat_dir = os.path.join(out_dir, "features")
    os.makedirs(feat_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w", encoding="utf-8") as fh:
        _write_header(fh, header)
        for u in sorted(corpus.utterances, key=lambda u: (u.speaker_id, u.utt_id)):
            rel = os.path.join("features", f"{u.utt_id}.txt")
            write_features(os.path.join(out_dir, rel), u.features)
            words = " ".join(u.words)
            fh.write(f"{u.speaker_id}\t{u.utt_id}\t{rel}\t{words}\n")
    return manifest


def read_corpus(manifest_path, dictionary: PronunciationDict) -> Corpus:
    base = os.path.dirname(os.path.abspath(manifest_path))
    utts = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{manifest_path}:{lineno}: expected 4 tab-separated fields")
            speaker, utt_id, rel, words_s = parts
            feat_path = rel if os.path.isabs(rel) else os.path.join(base, rel)
            words = tuple(words_s.split())
            utts.append(
                Utterance(
                    speaker_id=int(speaker),
                    utt_id=utt_id,
                    words=words,
                    phonemes=tuple(transcribe(words, dictionary)),
                    features=read_features(feat_path),
                )
            )
    return Corpus.build(utts, dictionary)


def write_folds(folds: FoldSplit, path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        _write_header(fh, header)
        fh.write(f"k {folds.k}\n")
        for utt_id in sorted(folds.assignment):
            fh.write(f"{utt_id}\t{folds.assignment[utt_id]}\n")


def read_folds(path) -> FoldSplit:
    k = None
    assignment = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("k "):
                k = int(line.split()[1])
                continue
            utt_id, fold = line.split("\t")
            assignment[utt_id] = int(fold)
    if k is None:
        raise FoldError(f"{path}: missing 'k' line")
    return FoldSplit(k, assignment)
