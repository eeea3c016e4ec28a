"""Bigram language model over words (or any unit labels) with add-one smoothing.

Every (predecessor, successor) pair gets probability
``(count + 1) / (predecessor_total + V + 1)`` where V is the vocabulary size;
the extra 1 in the denominator is the end-of-sentence token's slot. Start of
sentence is a predecessor context only, end of sentence a successor only, so
every word is reachable from start and can reach end by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

START = "<s>"
END = "</s>"


@dataclass
class WordNetwork:
    vocab: tuple[str, ...]
    _logprob: dict[tuple[str, str], float] = field(repr=False)

    def __post_init__(self):
        if not self.vocab:
            raise ValueError("empty vocabulary")
        if list(self.vocab) != sorted(set(self.vocab)):
            raise ValueError("vocab must be sorted and unique")

    def logprob(self, pred: str, succ: str) -> float:
        try:
            return self._logprob[(pred, succ)]
        except KeyError:
            raise ValueError(f"no transition {pred!r} -> {succ!r} in network") from None

    def successors(self, pred: str) -> list[tuple[str, float]]:
        out = [(w, self.logprob(pred, w)) for w in self.vocab]
        out.append((END, self.logprob(pred, END)))
        return out

    def validate(self, tol: float = 1e-9) -> None:
        """Each predecessor's successor distribution sums to one."""
        for pred in (START,) + self.vocab:
            total = sum(math.exp(lp) for _, lp in self.successors(pred))
            if abs(total - 1.0) > tol:
                raise ValueError(f"successors of {pred!r} sum to {total}, not 1")


def build_bigram(transcripts, vocab=None) -> WordNetwork:
    """Estimate the smoothed bigram from training word sequences.

    With vocab=None the vocabulary is the sorted union of transcript words;
    an explicit vocab must cover every word seen.
    """
    transcripts = [tuple(t) for t in transcripts]
    if not transcripts:
        raise ValueError("no transcripts to estimate from")
    seen = {w for t in transcripts for w in t}
    if vocab is None:
        words = tuple(sorted(seen))
    else:
        words = tuple(sorted(set(vocab)))
        missing = sorted(seen - set(words))
        if missing:
            raise ValueError(f"transcript words outside the vocabulary: {missing}")
    if not words:
        raise ValueError("empty vocabulary")

    counts: dict[tuple[str, str], int] = {}
    totals: dict[str, int] = {}
    for t in transcripts:
        context = START
        for w in list(t) + [END]:
            counts[(context, w)] = counts.get((context, w), 0) + 1
            totals[context] = totals.get(context, 0) + 1
            context = w

    v = len(words)
    logprob = {}
    for pred in (START,) + words:
        denom = totals.get(pred, 0) + v + 1
        for succ in words + (END,):
            logprob[(pred, succ)] = math.log((counts.get((pred, succ), 0) + 1) / denom)
    return WordNetwork(words, logprob)


def uniform_network(vocab) -> WordNetwork:
    """Free-loop grammar: every transition equally likely."""
    words = tuple(sorted(set(vocab)))
    if not words:
        raise ValueError("empty vocabulary")
    lp = math.log(1.0 / (len(words) + 1))
    logprob = {
        (pred, succ): lp
        for pred in (START,) + words
        for succ in words + (END,)
    }
    return WordNetwork(words, logprob)


def sentence_logprob(network: WordNetwork, words) -> float:
    total = 0.0
    context = START
    for w in list(words) + [END]:
        total += network.logprob(context, w)
        context = w
    return total


def save_network(network: WordNetwork, path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#bigram v={len(network.vocab)}\n")
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        for pred in (START,) + network.vocab:
            for succ in network.vocab + (END,):
                fh.write(f"{pred} {succ} {network.logprob(pred, succ)!r}\n")


def load_network(path) -> WordNetwork:
    declared = None
    logprob = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#bigram"):
                declared = int(line.split("v=")[1])
                continue
            if line.startswith("#"):
                continue
            pred, succ, lp = line.split()
            logprob[(pred, succ)] = float(lp)
    if declared is None:
        raise ValueError(f"{path}: missing '#bigram v=' header")
    vocab = tuple(sorted({p for p, _ in logprob} - {START}))
    if len(vocab) != declared:
        raise ValueError(f"{path}: header says {declared} words, found {len(vocab)}")
    expected = (declared + 1) * (declared + 1)
    if len(logprob) != expected:
        raise ValueError(f"{path}: expected {expected} transitions, found {len(logprob)}")
    net = WordNetwork(vocab, logprob)
    net.validate(tol=1e-6)
    return net
