"""Minimum-edit-distance alignment, word correctness, confusion counting.

The alignment is the classic dynamic program with integer costs. Ties are
broken deterministically during backtrace from the end of both sequences, in
the fixed priority order match > substitution > deletion > insertion, so the
same inputs always produce the same operation sequence.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

MATCH = "match"
SUB = "sub"
DEL = "del"
INS = "ins"


@dataclass(frozen=True)
class EditCosts:
    substitution: int = 4
    deletion: int = 3
    insertion: int = 3

    def __post_init__(self):
        if min(self.substitution, self.deletion, self.insertion) <= 0:
            raise ValueError("edit costs must be positive")


DEFAULT_COSTS = EditCosts()


@dataclass
class Alignment:
    """Result of aligning a hypothesis against a reference.

    ops is a list of (kind, ref_symbol, hyp_symbol) tuples in reference order;
    the absent side of a deletion/insertion is None.
    """

    ops: list[tuple[str, object, object]]
    cost: int
    matches: int
    substitutions: int
    deletions: int
    insertions: int

    @property
    def n_ref(self) -> int:
        return self.matches + self.substitutions + self.deletions


def align(ref, hyp, costs: EditCosts = DEFAULT_COSTS) -> Alignment:
    sub_c = costs.substitution
    del_c = costs.deletion
    ins_c = costs.insertion
    n = len(ref)
    m = len(hyp)
    # Full cost table; the backtrace re-derives each step from cost equalities,
    # checking ops in priority order, so no pointer table is needed.
    rows = [list(range(0, (m + 1) * ins_c, ins_c))]
    prev = rows[0]
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row = [i * del_c] + [0] * m
        for j in range(1, m + 1):
            if ri == hyp[j - 1]:
                best = prev[j - 1]
            else:
                best = prev[j - 1] + sub_c
            d = prev[j] + del_c
            if d < best:
                best = d
            e = row[j - 1] + ins_c
            if e < best:
                best = e
            row[j] = best
        rows.append(row)
        prev = row

    ops: list[tuple[str, object, object]] = []
    i, j = n, m
    matches = subs = dels = inss = 0
    while i > 0 or j > 0:
        here = rows[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and here == rows[i - 1][j - 1]:
            ops.append((MATCH, ref[i - 1], hyp[j - 1]))
            matches += 1
            i -= 1
            j -= 1
        elif i > 0 and j > 0 and here == rows[i - 1][j - 1] + sub_c and ref[i - 1] != hyp[j - 1]:
            ops.append((SUB, ref[i - 1], hyp[j - 1]))
            subs += 1
            i -= 1
            j -= 1
        elif i > 0 and here == rows[i - 1][j] + del_c:
            ops.append((DEL, ref[i - 1], None))
            dels += 1
            i -= 1
        else:
            ops.append((INS, None, hyp[j - 1]))
            inss += 1
            j -= 1
    ops.reverse()
    return Alignment(ops, rows[n][m], matches, subs, dels, inss)


@dataclass(frozen=True)
class WordScore:
    n: int
    deletions: int
    substitutions: int
    insertions: int
    correctness: float

    @property
    def accuracy(self) -> float:
        """Insertion-penalising variant; reported in logs, never headline."""
        return (self.n - self.deletions - self.substitutions - self.insertions) / self.n


def word_correctness(ref, hyp, costs: EditCosts = DEFAULT_COSTS) -> WordScore:
    """Correctness (N - D - S) / N. Insertions are counted but not subtracted."""
    if len(ref) == 0:
        raise ValueError("reference is empty; correctness undefined")
    a = align(ref, hyp, costs)
    n = a.n_ref
    return WordScore(
        n=n,
        deletions=a.deletions,
        substitutions=a.substitutions,
        insertions=a.insertions,
        correctness=(n - a.deletions - a.substitutions) / n,
    )


class ConfusionMatrix:
    """Symbol confusion counts with deletion and insertion margins.

    Rows are reference symbols, columns hypothesis symbols. Margins keep what a
    square matrix cannot: how often each symbol was deleted or inserted.
    """

    def __init__(self, symbols):
        self.symbols = tuple(sorted(set(symbols)))
        if not self.symbols:
            raise ValueError("confusion matrix needs at least one symbol")
        self._index = {s: i for i, s in enumerate(self.symbols)}
        n = len(self.symbols)
        self.counts = np.zeros((n, n), dtype=np.int64)
        self.deletions = np.zeros(n, dtype=np.int64)
        self.insertions = np.zeros(n, dtype=np.int64)

    def _idx(self, symbol) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise KeyError(f"symbol {symbol!r} not in confusion matrix") from None

    def add(self, alignment: Alignment) -> None:
        for kind, ref, hyp in alignment.ops:
            if kind == DEL:
                self.deletions[self._idx(ref)] += 1
            elif kind == INS:
                self.insertions[self._idx(hyp)] += 1
            else:
                self.counts[self._idx(ref), self._idx(hyp)] += 1

    def count(self, ref, hyp) -> int:
        return int(self.counts[self._idx(ref), self._idx(hyp)])

    def deletion_count(self, symbol) -> int:
        return int(self.deletions[self._idx(symbol)])

    def insertion_count(self, symbol) -> int:
        return int(self.insertions[self._idx(symbol)])

    @property
    def total(self) -> int:
        """All reference events: aligned pairs plus deletions."""
        return int(self.counts.sum() + self.deletions.sum())

    def copy(self) -> "ConfusionMatrix":
        out = ConfusionMatrix(self.symbols)
        out.counts = self.counts.copy()
        out.deletions = self.deletions.copy()
        out.insertions = self.insertions.copy()
        return out

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        if self.symbols != other.symbols:
            raise ValueError("cannot pool confusion matrices over different symbol sets")
        out = self.copy()
        out.counts += other.counts
        out.deletions += other.deletions
        out.insertions += other.insertions
        return out

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ConfusionMatrix)
            and self.symbols == other.symbols
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.deletions, other.deletions)
            and np.array_equal(self.insertions, other.insertions)
        )


def accumulate_confusions(alignments, symbols) -> ConfusionMatrix:
    matrix = ConfusionMatrix(symbols)
    for a in alignments:
        matrix.add(a)
    return matrix


def write_confusion(matrix: ConfusionMatrix, path, header: dict | None = None) -> None:
    """Text form: symbol list, count rows (reference-major), margin rows."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write("symbols " + " ".join(matrix.symbols) + "\n")
        for i, sym in enumerate(matrix.symbols):
            fh.write(f"row {sym} " + " ".join(str(c) for c in matrix.counts[i]) + "\n")
        fh.write("del " + " ".join(str(c) for c in matrix.deletions) + "\n")
        fh.write("ins " + " ".join(str(c) for c in matrix.insertions) + "\n")


def read_confusion(path) -> ConfusionMatrix:
    matrix = None
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "symbols":
                matrix = ConfusionMatrix(tok[1:])
                if matrix.symbols != tuple(tok[1:]):
                    raise ValueError(f"{path}: symbols line must be sorted")
            elif tok[0] == "row":
                matrix.counts[matrix._idx(tok[1])] = [int(c) for c in tok[2:]]
            elif tok[0] == "del":
                matrix.deletions[:] = [int(c) for c in tok[1:]]
            elif tok[0] == "ins":
                matrix.insertions[:] = [int(c) for c in tok[1:]]
            else:
                raise ValueError(f"{path}: unrecognised line {line!r}")
    if matrix is None:
        raise ValueError(f"{path}: missing symbols line")
    return matrix


@dataclass(frozen=True)
class ScoreSummary:
    per_fold: tuple[float, ...]
    mean: float
    standard_error: float
    degenerate: bool = False  # single fold: no spread estimate exists


def summarize(per_fold) -> ScoreSummary:
    """Mean and standard error of per-fold correctness values.

    Standard error uses the sample standard deviation (ddof=1) over sqrt(k).
    A single fold is flagged degenerate with a zero standard error.
    """
    values = tuple(float(v) for v in per_fold)
    if not values:
        raise ValueError("no fold scores to summarize")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"correctness {v} outside [0, 1]")
    if len(values) == 1:
        return ScoreSummary(values, values[0], 0.0, degenerate=True)
    return ScoreSummary(
        values,
        statistics.mean(values),
        statistics.stdev(values) / len(values) ** 0.5,
        degenerate=False,
    )
