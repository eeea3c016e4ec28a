"""Viterbi word decoding over a statically composed recognition network.

The network is dictionary pronunciation chains glued together by bigram arcs.
Leading and trailing silence are OPTIONAL: a hypothesis may use both, either,
or neither, so short observations can still be decoded. Word-history tokens
are passed frame-synchronously; equal-scoring tokens are resolved toward the
lexicographically smaller word sequence, so decoding is deterministic.

Unit-loop decoding (phoneme or viseme recognition) uses the same machinery
with every unit acting as a one-unit word and no silence bookends.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import SILENCE
from .errors import NoHypothesisError
from .hmm import HmmSet, viterbi_align
from .lm import END, START, WordNetwork


@dataclass(frozen=True)
class DecodeConfig:
    lm_scale: float = 1.0
    word_penalty: float = 0.0  # added to the path score once per word
    beam: float | None = None  # None decodes exactly; else prune per frame
    # Unit label of the optional silence bookends; viseme-mapped model sets
    # rename silence to its viseme class.
    silence_label: str = SILENCE

    def __post_init__(self):
        if self.lm_scale < 0:
            raise ValueError("lm_scale must be >= 0")
        if self.beam is not None and self.beam <= 0:
            raise ValueError("beam must be positive")


@dataclass(frozen=True)
class DecodeResult:
    words: tuple[str, ...]
    path_logprob: float
    # (unit label, start frame, end frame) spans of the winning path,
    # including any optional silence actually used.
    unit_boundaries: tuple[tuple[str, int, int], ...]


class _Graph:
    """Flat emitting-state graph with cross arcs and entry/accept weights."""

    def __init__(self):
        self.keys: list[tuple[str, int]] = []  # (unit label, state) per node
        self.loop_lp: list[float] = []
        self.arcs: list[tuple[int, int, float, str | None]] = []
        self.init: list[tuple[int, float, str | None]] = []
        self.final: list[tuple[int, float]] = []

    def add_chain(self, models: HmmSet, labels) -> tuple[int, int, float]:
        """Append a pronunciation chain; returns (first, last, exit logprob)."""
        first = len(self.keys)
        prev_last = None
        prev_exit = None
        for lab in labels:
            unit = models.unit(lab)
            start = len(self.keys)
            for s in range(unit.n_states):
                self.keys.append((lab, s))
                with np.errstate(divide="ignore"):
                    self.loop_lp.append(float(np.log(unit.loop_prob(s))))
                if s > 0:
                    self.arcs.append(
                        (start + s - 1, start + s, _log(unit.advance_prob(s - 1)), None)
                    )
            if prev_last is not None:
                self.arcs.append((prev_last, start, prev_exit, None))
            prev_last = start + unit.n_states - 1
            prev_exit = _log(unit.advance_prob(unit.n_states - 1))
        return first, prev_last, prev_exit


def _log(p: float) -> float:
    with np.errstate(divide="ignore"):
        return float(np.log(p))


def _entries(dictionary) -> dict[str, tuple[str, ...]]:
    entries = getattr(dictionary, "entries", dictionary)
    if not entries:
        raise ValueError("empty pronunciation dictionary")
    return entries


def _build_word_graph(models: HmmSet, network: WordNetwork, entries,
                      config: DecodeConfig) -> _Graph:
    g = _Graph()
    scale, pen = config.lm_scale, config.word_penalty
    for w in network.vocab:
        if not entries.get(w):
            raise ValueError(f"vocabulary word {w!r} has no pronunciation")

    lead_first, lead_last, lead_exit = g.add_chain(models, [config.silence_label])
    trail_first, trail_last, trail_exit = g.add_chain(models, [config.silence_label])
    first: dict[str, int] = {}
    last: dict[str, int] = {}
    exit_lp: dict[str, float] = {}
    for w in network.vocab:
        first[w], last[w], exit_lp[w] = g.add_chain(models, entries[w])

    lm_end_start = scale * network.logprob(START, END)
    for w in network.vocab:
        enter = scale * network.logprob(START, w) + pen
        g.init.append((first[w], enter, w))
        g.arcs.append((lead_last, first[w], lead_exit + enter, w))
    g.init.append((lead_first, 0.0, None))
    g.init.append((trail_first, lm_end_start, None))
    g.arcs.append((lead_last, trail_first, lead_exit + lm_end_start, None))

    for v in network.vocab:
        lm_end = scale * network.logprob(v, END)
        for w in network.vocab:
            step = scale * network.logprob(v, w) + pen
            g.arcs.append((last[v], first[w], exit_lp[v] + step, w))
        g.arcs.append((last[v], trail_first, exit_lp[v] + lm_end, None))
        g.final.append((last[v], exit_lp[v] + lm_end))

    g.final.append((trail_last, trail_exit))
    g.final.append((lead_last, lead_exit + lm_end_start))
    return g


def _build_unit_graph(models: HmmSet, network: WordNetwork,
                      config: DecodeConfig) -> _Graph:
    g = _Graph()
    scale, pen = config.lm_scale, config.word_penalty
    first: dict[str, int] = {}
    last: dict[str, int] = {}
    exit_lp: dict[str, float] = {}
    for u in network.vocab:
        first[u], last[u], exit_lp[u] = g.add_chain(models, [u])
        g.init.append((first[u], scale * network.logprob(START, u) + pen, u))
    for v in network.vocab:
        for u in network.vocab:
            step = scale * network.logprob(v, u) + pen
            g.arcs.append((last[v], first[u], exit_lp[v] + step, u))
        g.final.append((last[v], exit_lp[v] + scale * network.logprob(v, END)))
    return g


def _run_tokens(models: HmmSet, g: _Graph, obs: np.ndarray,
                config: DecodeConfig) -> tuple[tuple[str, ...], float]:
    n = len(g.keys)
    uniq: dict[tuple[str, int], int] = {}
    col = np.empty(n, dtype=np.int64)
    for i, key in enumerate(g.keys):
        col[i] = uniq.setdefault(key, len(uniq))
    dens = np.stack(
        [models.unit(lab).states[s].log_density(obs) for lab, s in uniq], axis=1
    )[:, col]  # (T, n)
    loop = np.asarray(g.loop_lp)

    neg_inf = float("-inf")
    scores = np.full(n, neg_inf)
    hist: list[tuple[str, ...] | None] = [None] * n
    for node, w, word in g.init:
        cand = w + dens[0, node]
        if cand == neg_inf:
            continue
        words = (word,) if word is not None else ()
        if cand > scores[node] or (cand == scores[node] and words < hist[node]):
            scores[node] = cand
            hist[node] = words

    t_len = obs.shape[0]
    for t in range(1, t_len):
        new_scores = scores + loop
        new_hist = list(hist)
        for src, dst, w, word in g.arcs:
            base = scores[src]
            if base == neg_inf:
                continue
            cand = base + w
            if cand == neg_inf or cand < new_scores[dst]:
                continue
            words = hist[src] + (word,) if word is not None else hist[src]
            if cand > new_scores[dst] or words < new_hist[dst]:
                new_scores[dst] = cand
                new_hist[dst] = words
        new_scores += dens[t]
        if config.beam is not None:
            top = new_scores.max()
            if top > neg_inf:
                dead = new_scores < top - config.beam
                new_scores[dead] = neg_inf
                for i in np.nonzero(dead)[0]:
                    new_hist[i] = None
        scores, hist = new_scores, new_hist

    best_score = neg_inf
    best_words: tuple[str, ...] | None = None
    for node, w in g.final:
        if scores[node] == neg_inf:
            continue
        cand = scores[node] + w
        if cand == neg_inf:
            continue
        if cand > best_score or (cand == best_score and hist[node] < best_words):
            best_score = cand
            best_words = hist[node]
    if best_words is None:
        raise NoHypothesisError(
            f"no complete path for {t_len} frames"
            + (" (beam may be too narrow)" if config.beam is not None else "")
        )
    return best_words, float(best_score)


def _best_boundaries(models: HmmSet, transcripts, obs: np.ndarray):
    best = None
    for transcript in transcripts:
        try:
            fa = viterbi_align(models, transcript, obs)
        except Exception:
            continue
        if best is None or fa.loglik > best.loglik:
            best = fa
    if best is None:
        raise NoHypothesisError("winning hypothesis cannot be aligned")
    return best


def decode_words(models: HmmSet, network: WordNetwork, dictionary, obs,
                 config: DecodeConfig = DecodeConfig()) -> DecodeResult:
    """Best word sequence for one utterance; may be empty (silence only)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 1:
        raise ValueError("observations must be a (T, d) array with T >= 1")
    entries = _entries(dictionary)
    g = _build_word_graph(models, network, entries, config)
    words, score = _run_tokens(models, g, obs, config)

    core = [u for w in words for u in entries[w]]
    variants = []
    for lead in (1, 0):
        for trail in (1, 0):
            chain = [config.silence_label] * lead + core + [config.silence_label] * trail
            if chain and chain not in variants:
                variants.append(chain)
    fa = _best_boundaries(models, variants, obs)
    return DecodeResult(words, score, fa.segments)


def decode_units(models: HmmSet, network: WordNetwork, obs,
                 config: DecodeConfig = DecodeConfig()) -> DecodeResult:
    """Free unit sequence decoding under a unit bigram (no silence bookends)."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[0] < 1:
        raise ValueError("observations must be a (T, d) array with T >= 1")
    for u in network.vocab:
        models.unit(u)  # raises on unknown label
    g = _build_unit_graph(models, network, config)
    units, score = _run_tokens(models, g, obs, config)
    fa = _best_boundaries(models, [list(units)], obs)
    return DecodeResult(units, score, fa.segments)
