"""Synthetic corpus generator with known emission ground truth.

Each phoneme gets a Gaussian frame distribution; utterances are sampled word
sequences expanded to phoneme strings with a random frame count per phoneme.
Deterministic for a given spec: every utterance draws from its own seeded
generator stream, so corpora are reproducible regardless of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import SILENCE, Corpus, PhonemeSet, PronunciationDict, Utterance, transcribe
from .errors import ConfigError

# Ten short words over ten phonemes (3 vowels, 7 consonants), pronunciations
# pairwise distinct so word identity is recoverable from phoneme strings.
DEFAULT_VOCAB: dict[str, tuple[str, ...]] = {
    "BEE": ("b", "iy"),
    "BOO": ("b", "uw"),
    "KEY": ("k", "iy"),
    "LAW": ("l", "aa"),
    "ME": ("m", "iy"),
    "MOO": ("m", "uw"),
    "NEAT": ("n", "iy", "t"),
    "SEA": ("s", "iy"),
    "SOON": ("s", "uw", "n"),
    "TALL": ("t", "aa", "l"),
}

DEFAULT_SYNTH_VOWELS = frozenset({"aa", "iy", "uw"})


@dataclass
class SynthSpec:
    speakers: int
    sentences: int  # per speaker
    vocabulary: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_VOCAB)
    )
    vowels: frozenset[str] = DEFAULT_SYNTH_VOWELS
    sentence_length: tuple[int, int] = (3, 6)
    frames_per_phoneme: tuple[int, int] = (3, 6)
    feature_dim: int | None = None  # default: one axis per phoneme
    separation: float = 6.0  # distance between phoneme means, in sd units
    divergent: bool = False  # per-speaker layout permutations
    # speaker -> (a, b): for that speaker the two phonemes share one mean,
    # guaranteeing a confusion that other speakers do not have.
    confusable_pairs: dict[int, tuple[str, str]] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.speakers < 1 or self.sentences < 1:
            raise ConfigError("speakers and sentences must be positive")
        if not self.vocabulary:
            raise ConfigError("vocabulary is empty")
        lo, hi = self.sentence_length
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad sentence_length range {self.sentence_length}")
        flo, fhi = self.frames_per_phoneme
        if flo < 1 or fhi < flo:
            raise ConfigError(f"bad frames_per_phoneme range {self.frames_per_phoneme}")
        if self.separation <= 0:
            raise ConfigError("separation must be positive")


@dataclass
class SynthTruth:
    """Ground truth the generator knows: emissions and frame-exact alignments."""

    # (speaker, phoneme) -> (mean, var) of the frame Gaussian
    emissions: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]]
    # utt_id -> ((phoneme, start, end), ...) with end exclusive
    alignments: dict[str, tuple[tuple[str, int, int], ...]]


def _build_dictionary(spec: SynthSpec) -> PronunciationDict:
    symbols = {ph for pron in spec.vocabulary.values() for ph in pron}
    symbols.add(SILENCE)
    pset = PhonemeSet.from_symbols(symbols, vowels=spec.vowels)
    return PronunciationDict(dict(spec.vocabulary), pset)


def _speaker_layouts(
    spec: SynthSpec, symbols: tuple[str, ...], dim: int, pset: PhonemeSet
) -> dict[tuple[int, str], tuple[np.ndarray, np.ndarray]]:
    """Place each phoneme mean on its own axis, `separation` apart pairwise."""
    n = len(symbols)
    if dim < n:
        raise ConfigError(f"feature_dim {dim} < {n} phonemes; cannot separate layouts")
    scale = spec.separation / np.sqrt(2.0)
    var = np.ones(dim)
    emissions: dict[tuple[int, str], tuple[np.ndarray, np.ndarray]] = {}
    axis_of = {sym: i for i, sym in enumerate(symbols)}
    for speaker in range(1, spec.speakers + 1):
        placement = dict(axis_of)
        if spec.divergent:
            # Permute which axis each non-silence phoneme sits on; silence is
            # shared across speakers so its models stay comparable.
            movable = [s for s in symbols if s != SILENCE]
            rng = np.random.default_rng([spec.seed, 101, speaker])
            perm = rng.permutation(len(movable))
            for sym, j in zip(movable, perm):
                placement[sym] = axis_of[movable[j]]
        for sym in symbols:
            mean = np.zeros(dim)
            mean[placement[sym]] = scale
            emissions[(speaker, sym)] = (mean, var.copy())
        pair = spec.confusable_pairs.get(speaker)
        if pair is not None:
            a, b = pair
            for sym in (a, b):
                if sym not in pset or sym == SILENCE:
                    raise ConfigError(f"confusable pair {pair} uses unusable symbol {sym!r}")
            if pset.category(a) != pset.category(b):
                raise ConfigError(f"confusable pair {pair} crosses the vowel/consonant split")
            emissions[(speaker, b)] = emissions[(speaker, a)]
    return emissions


def generate_synthetic_corpus(spec: SynthSpec) -> tuple[Corpus, SynthTruth]:
    pdict = _build_dictionary(spec)
    symbols = pdict.phoneme_set.symbols
    dim = spec.feature_dim if spec.feature_dim is not None else len(symbols)
    emissions = _speaker_layouts(spec, symbols, dim, pdict.phoneme_set)
    words_sorted = sorted(spec.vocabulary)
    lo, hi = spec.sentence_length
    flo, fhi = spec.frames_per_phoneme

    utterances = []
    alignments: dict[str, tuple[tuple[str, int, int], ...]] = {}
    for speaker in range(1, spec.speakers + 1):
        for i in range(spec.sentences):
            rng = np.random.default_rng([spec.seed, 7, speaker, i])
            length = int(rng.integers(lo, hi + 1))
            words = tuple(words_sorted[j] for j in rng.integers(0, len(words_sorted), length))
            phonemes = tuple(transcribe(words, pdict))
            frames = []
            spans = []
            cursor = 0
            for ph in phonemes:
                n = int(rng.integers(flo, fhi + 1))
                mean, var = emissions[(speaker, ph)]
                frames.append(mean + rng.standard_normal((n, dim)) * np.sqrt(var))
                spans.append((ph, cursor, cursor + n))
                cursor += n
            utt_id = f"sp{speaker:02d}_{i:04d}"
            utterances.append(
                Utterance(
                    speaker_id=speaker,
                    utt_id=utt_id,
                    words=words,
                    phonemes=phonemes,
                    features=np.concatenate(frames, axis=0),
                )
            )
            alignments[utt_id] = tuple(spans)
    corpus = Corpus.build(utterances, pdict)
    return corpus, SynthTruth(emissions, alignments)
