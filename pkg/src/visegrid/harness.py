"""Experiment grid: train/test every map-speaker pairing and report on it.

The pipeline is two passes. The phoneme pass trains phoneme models per
speaker and fold, decodes the held-out fold with a unit bigram, and pools the
resulting confusion matrices per speaker. Maps are derived from those pooled
confusions (own speaker = SD, all speakers = MS, all-but-one = SI). The
viseme pass then runs one cell per protocol entry M_n(p,q): train viseme
models on speaker p's training folds relabelled through map n, decode speaker
q's held-out fold against a word bigram built from the same training folds,
and score word correctness per fold.

Protocols: SSD (n=p=q), MS (n=[all], p=q), SI (n=!q, p=q), DSD (n!=q, p=q),
DSDD (n=p!=q). A full grid is S + S + S + S(S-1) + S(S-1) cells.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

from .align import (
    ConfusionMatrix,
    EditCosts,
    ScoreSummary,
    accumulate_confusions,
    align,
    summarize,
)
from .corpus import SILENCE, Corpus, FoldSplit, split_speaker
from .decoder import DecodeConfig, decode_units, decode_words
from .errors import LeakageError, NoHypothesisError
from .hmm import TrainSchedule, flat_start, reestimate
from .lm import build_bigram, uniform_network
from .p2v import P2VMap, apply_map, derive_map, map_dictionary, pool_confusions

log = logging.getLogger(__name__)

PROTOCOLS = ("SSD", "MS", "SI", "DSD", "DSDD")

MS_MAP_ID = "M_[all]"


def sd_map_id(speaker: int) -> str:
    return f"M_{speaker}"


def si_map_id(speaker: int) -> str:
    return f"M_!{speaker}"


@dataclass
class GridConfig:
    states: int = 3
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    costs: EditCosts = field(default_factory=EditCosts)
    threshold: int = 1  # mutual-confusion merge threshold for map derivation
    free_loop: bool = False  # uniform unit grammar in the phoneme pass
    jobs: int = 1

    def __post_init__(self):
        if self.states < 1:
            raise ValueError("states must be >= 1")
        if self.threshold < 1:
            raise ValueError("threshold must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


@dataclass
class ExperimentCell:
    """One M_n(p,q) evaluation: the map, who trains, who tests, and scores."""

    map_id: str
    train_speaker: int
    test_speaker: int
    protocol: str
    summary: ScoreSummary | None = None
    # (fold, N, D, S, I, Cw) rows filled in by run_cell
    per_fold: tuple[tuple[int, int, int, int, int, float], ...] = ()

    @property
    def key(self) -> tuple[str, str, int, int]:
        return (self.protocol, self.map_id, self.train_speaker, self.test_speaker)


def validate_cell(cell: ExperimentCell, maps: dict[str, P2VMap]) -> None:
    """Check the protocol tag against the map kind/source and p, q."""
    if cell.protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {cell.protocol!r}")
    if cell.map_id not in maps:
        raise ValueError(f"unknown map {cell.map_id!r}")
    m = maps[cell.map_id]
    p, q = cell.train_speaker, cell.test_speaker
    ok = {
        "SSD": m.kind == "SD" and m.source_speakers == {q} and p == q,
        "MS": m.kind == "MS" and p == q,
        "SI": m.kind == "SI" and q not in m.source_speakers and p == q,
        "DSD": m.kind == "SD" and q not in m.source_speakers and p == q,
        "DSDD": m.kind == "SD" and m.source_speakers == {p} and p != q,
    }[cell.protocol]
    if not ok:
        raise ValueError(
            f"cell {cell.map_id}({p},{q}) does not satisfy protocol {cell.protocol}"
        )


def enumerate_cells(speakers) -> list[ExperimentCell]:
    """The complete grid in canonical order: S+S+S+S(S-1)+S(S-1) cells."""
    speakers = sorted(speakers)
    cells = [ExperimentCell(sd_map_id(q), q, q, "SSD") for q in speakers]
    cells += [ExperimentCell(MS_MAP_ID, q, q, "MS") for q in speakers]
    cells += [ExperimentCell(si_map_id(q), q, q, "SI") for q in speakers]
    for q in speakers:
        for n in speakers:
            if n != q:
                cells.append(ExperimentCell(sd_map_id(n), q, q, "DSD"))
    for q in speakers:
        for n in speakers:
            if n != q:
                cells.append(ExperimentCell(sd_map_id(n), n, q, "DSDD"))
    return cells


# ---------------------------------------------------------------------------
# Phoneme pass


def run_phoneme_pass(corpus: Corpus, folds: FoldSplit, config: GridConfig,
                     model_supplier=None) -> dict[int, ConfusionMatrix]:
    """Per-speaker phoneme confusions from held-out fold decoding, pooled.

    model_supplier(speaker, fold, train_utts) may provide ready-trained
    models (e.g. loaded from disk); by default each fold trains from scratch.
    """
    symbols = corpus.dictionary.phoneme_set.symbols
    out: dict[int, ConfusionMatrix] = {}
    for speaker in corpus.speakers:
        per_fold = []
        for f in range(folds.k):
            train, test = split_speaker(corpus, folds, speaker, f)
            _guard({u.utt_id for u in train}, {u.utt_id for u in test},
                   f"phoneme pass speaker {speaker} fold {f}")
            if model_supplier is not None:
                models = model_supplier(speaker, f, train)
            else:
                models = train_models(
                    [list(u.phonemes) for u in train],
                    [u.features for u in train],
                    config,
                )
            if config.free_loop:
                net = uniform_network(symbols)
            else:
                net = build_bigram([u.phonemes for u in train], vocab=symbols)
            alignments = []
            for u in test:
                try:
                    hyp = decode_units(models, net, u.features, config.decode).words
                except NoHypothesisError:
                    hyp = ()
                alignments.append(align(u.phonemes, hyp, config.costs))
            per_fold.append(accumulate_confusions(alignments, symbols))
        out[speaker] = pool_confusions(per_fold)
    return out


def derive_maps_from_confusions(confusions: dict[int, ConfusionMatrix],
                                phoneme_set, threshold: int = 1) -> dict[str, P2VMap]:
    """SD map per speaker, MS from the full pool, SI per speaker from the rest."""
    speakers = sorted(confusions)
    if not speakers:
        raise ValueError("no speaker confusions")
    maps: dict[str, P2VMap] = {}
    for s in speakers:
        maps[sd_map_id(s)] = derive_map(
            confusions[s], phoneme_set, "SD", sd_map_id(s), {s}, threshold
        )
    maps[MS_MAP_ID] = derive_map(
        pool_confusions([confusions[s] for s in speakers]),
        phoneme_set, "MS", MS_MAP_ID, set(speakers), threshold,
    )
    if len(speakers) > 1:
        for s in speakers:
            rest = [confusions[r] for r in speakers if r != s]
            maps[si_map_id(s)] = derive_map(
                pool_confusions(rest), phoneme_set, "SI", si_map_id(s),
                set(speakers) - {s}, threshold,
            )
    return maps


def derive_all_maps(corpus: Corpus, folds: FoldSplit,
                    config: GridConfig | None = None) -> dict[str, P2VMap]:
    """Phoneme pass plus map derivation in one call: 2S+1 maps for S > 1."""
    config = config or GridConfig()
    confusions = run_phoneme_pass(corpus, folds, config)
    return derive_maps_from_confusions(
        confusions, corpus.dictionary.phoneme_set, config.threshold
    )


# ---------------------------------------------------------------------------
# Viseme pass


def _guard(train_ids: set[str], test_ids: set[str], where: str) -> None:
    overlap = train_ids & test_ids
    if overlap:
        raise LeakageError(f"{where}: train/test share utterances {sorted(overlap)}")


def train_models(transcripts, features, config: GridConfig):
    """Flat start plus the full re-estimation schedule over labelled data."""
    labels = sorted({lab for t in transcripts for lab in t})
    models = flat_start(features, labels, n_states=config.states)
    models, _ = reestimate(models, list(zip(transcripts, features)), config.schedule)
    return models


class TrainingCache:
    """Memo of trained viseme models keyed by (map_id, train speaker, fold).

    SSD and DSDD cells share trainings (same map, same training speaker), so
    a warm cache roughly halves grid work. Word bigrams are cached per
    (speaker, fold) since they do not depend on the map.
    """

    def __init__(self):
        self.models: dict = {}
        self.networks: dict = {}


def run_cell(cell: ExperimentCell, corpus: Corpus, folds: FoldSplit,
             maps: dict[str, P2VMap], config: GridConfig,
             cache: TrainingCache | None = None) -> ExperimentCell:
    """Train per fold on speaker p through map n, decode speaker q's fold."""
    validate_cell(cell, maps)
    cache = cache if cache is not None else TrainingCache()
    p2v = maps[cell.map_id]
    mapped = map_dictionary(corpus.dictionary, p2v)
    sil_label = p2v.phoneme_to_viseme[SILENCE]
    decode_cfg = replace(config.decode, silence_label=sil_label)
    p, q = cell.train_speaker, cell.test_speaker

    per_fold = []
    scores = []
    for f in range(folds.k):
        train, _ = split_speaker(corpus, folds, p, f)
        _, test = split_speaker(corpus, folds, q, f)
        _guard({u.utt_id for u in train}, {u.utt_id for u in test},
               f"cell {cell.map_id}({p},{q}) fold {f}")

        mkey = (cell.map_id, p, f)
        if mkey not in cache.models:
            cache.models[mkey] = train_models(
                [apply_map(u.phonemes, p2v) for u in train],
                [u.features for u in train],
                config,
            )
        models = cache.models[mkey]
        nkey = (p, f)
        if nkey not in cache.networks:
            cache.networks[nkey] = build_bigram(
                [u.words for u in train], vocab=corpus.dictionary.words
            )
        net = cache.networks[nkey]

        n_tot = d_tot = s_tot = i_tot = 0
        for u in test:
            try:
                hyp = decode_words(models, net, mapped, u.features, decode_cfg).words
            except NoHypothesisError:
                hyp = ()  # scored as all deletions
            a = align(u.words, hyp, config.costs)
            n_tot += a.n_ref
            d_tot += a.deletions
            s_tot += a.substitutions
            i_tot += a.insertions
        if n_tot == 0:
            raise ValueError(f"cell {cell.map_id}({p},{q}) fold {f}: no reference words")
        cw = (n_tot - d_tot - s_tot) / n_tot
        per_fold.append((f, n_tot, d_tot, s_tot, i_tot, cw))
        scores.append(cw)

    return replace(cell, summary=summarize(scores), per_fold=tuple(per_fold))


@dataclass
class GridResult:
    cells: list[ExperimentCell]
    failures: list[tuple[ExperimentCell, str]]
    confusions: dict[int, ConfusionMatrix]
    maps: dict[str, P2VMap]


def _run_cell_job(args):
    cell, corpus, folds, maps, config = args
    try:
        return run_cell(cell, corpus, folds, maps, config), None
    except Exception as exc:
        return None, f"{type(exc).__name__}: {exc}"


def run_grid(corpus: Corpus, folds: FoldSplit, config: GridConfig | None = None,
             cells: list[ExperimentCell] | None = None,
             maps: dict[str, P2VMap] | None = None,
             confusions: dict[int, ConfusionMatrix] | None = None) -> GridResult:
    """Run the whole grid (or a chosen subset of cells).

    A failed cell is recorded and the grid continues. With jobs > 1 cells run
    in worker processes (each re-training without the shared cache); the
    sequential path shares one training cache across cells.
    """
    config = config or GridConfig()
    if confusions is None:
        confusions = run_phoneme_pass(corpus, folds, config)
    if maps is None:
        maps = derive_maps_from_confusions(
            confusions, corpus.dictionary.phoneme_set, config.threshold
        )
    if cells is None:
        cells = enumerate_cells(corpus.speakers)

    done: list[ExperimentCell] = []
    failures: list[tuple[ExperimentCell, str]] = []
    if config.jobs > 1:
        import multiprocessing

        with multiprocessing.Pool(config.jobs) as pool:
            jobs = [(c, corpus, folds, maps, config) for c in cells]
            for cell, (result, err) in zip(cells, pool.imap(_run_cell_job, jobs)):
                if err is None:
                    done.append(result)
                else:
                    log.warning("cell %s(%s,%s) failed: %s",
                                cell.map_id, cell.train_speaker, cell.test_speaker, err)
                    failures.append((cell, err))
    else:
        cache = TrainingCache()
        for cell in cells:
            try:
                done.append(run_cell(cell, corpus, folds, maps, config, cache))
            except Exception as exc:  # record and continue
                log.warning("cell %s(%s,%s) failed: %s",
                            cell.map_id, cell.train_speaker, cell.test_speaker, exc)
                failures.append((cell, f"{type(exc).__name__}: {exc}"))
    return GridResult(done, failures, confusions, maps)


# ---------------------------------------------------------------------------
# Reports


def significance_flag(a: ScoreSummary, b: ScoreSummary) -> str:
    """Classify candidate a against baseline b by one standard error of b.

    A difference of exactly one standard error counts as within (inclusive
    boundary).
    """
    for s in (a, b):
        if s.degenerate:
            raise ValueError("significance undefined for single-fold summaries")
    diff = a.mean - b.mean
    if abs(diff) <= b.standard_error:
        return "within_1se"
    return "better_significant" if diff > 0 else "worse_significant"


@dataclass(frozen=True)
class WeightTable:
    speakers: tuple[int, ...]  # test speakers, row order
    map_ids: tuple[str, ...]  # SD maps, column order
    scores: dict[tuple[int, str], int]  # (test speaker, map) -> -2..2
    totals: dict[str, int]  # column sums


def weighting_table(dsd_cells, ssd_baselines) -> WeightTable:
    """Score each foreign SD map against every test speaker's SSD baseline.

    score = sign(mean_DSD - mean_SSD) x (1 if |diff| <= s.e._SSD else 2),
    zero on the diagonal (a speaker's own map). Totals are column sums.
    """
    ssd: dict[int, ScoreSummary] = {}
    for cell in ssd_baselines:
        if cell.protocol != "SSD" or cell.summary is None:
            raise ValueError("ssd_baselines must be completed SSD cells")
        ssd[cell.test_speaker] = cell.summary
    if not ssd:
        raise ValueError("no SSD baselines")
    by_key: dict[tuple[int, int], ScoreSummary] = {}
    for cell in dsd_cells:
        if cell.protocol != "DSD" or cell.summary is None:
            raise ValueError("dsd_cells must be completed DSD cells")
        n = int(cell.map_id.split("_")[1])
        by_key[(cell.test_speaker, n)] = cell.summary

    speakers = tuple(sorted(ssd))
    map_ids = tuple(sd_map_id(n) for n in speakers)
    scores: dict[tuple[int, str], int] = {}
    totals = {m: 0 for m in map_ids}
    for q in speakers:
        base = ssd[q]
        if base.degenerate:
            raise ValueError(f"SSD baseline for speaker {q} is single-fold")
        for n in speakers:
            if n == q:
                scores[(q, sd_map_id(n))] = 0
                continue
            if (q, n) not in by_key:
                raise ValueError(f"missing DSD cell {sd_map_id(n)}({q},{q})")
            cand = by_key[(q, n)]
            diff = cand.mean - base.mean
            if diff == 0.0:
                score = 0
            else:
                magnitude = 1 if abs(diff) <= base.standard_error else 2
                score = magnitude if diff > 0 else -magnitude
            scores[(q, sd_map_id(n))] = score
            totals[sd_map_id(n)] += score
    return WeightTable(speakers, map_ids, scores, totals)


@dataclass(frozen=True)
class DifferenceReport:
    # (test speaker, SSD mean, mean of DSDD means, difference in points)
    rows: tuple[tuple[int, float, float, float], ...]
    grand_mean: float


def difference_report(ssd_cells, dsdd_cells) -> DifferenceReport:
    """Per speaker: SSD mean minus the mean of DSDD means, in percentage points."""
    ssd: dict[int, ScoreSummary] = {}
    for cell in ssd_cells:
        if cell.protocol != "SSD" or cell.summary is None:
            raise ValueError("ssd_cells must be completed SSD cells")
        ssd[cell.test_speaker] = cell.summary
    dsdd: dict[int, list[float]] = {}
    for cell in dsdd_cells:
        if cell.protocol != "DSDD" or cell.summary is None:
            raise ValueError("dsdd_cells must be completed DSDD cells")
        dsdd.setdefault(cell.test_speaker, []).append(cell.summary.mean)
    if not ssd:
        raise ValueError("no SSD cells")
    rows = []
    for q in sorted(ssd):
        if q not in dsdd:
            raise ValueError(f"no DSDD cells for test speaker {q}")
        dsdd_mean = sum(dsdd[q]) / len(dsdd[q])
        diff = 100.0 * (ssd[q].mean - dsdd_mean)
        rows.append((q, ssd[q].mean, dsdd_mean, diff))
    grand = sum(r[3] for r in rows) / len(rows)
    return DifferenceReport(tuple(rows), grand)


# ---------------------------------------------------------------------------
# File writers (CSV; header comment lines start with '#')


def _open_csv(path, header: dict | None):
    fh = open(path, "w", encoding="utf-8", newline="")
    for key, value in (header or {}).items():
        fh.write(f"# {key}: {value}\n")
    return fh


def write_grid_manifest(cells, path, header: dict | None = None) -> None:
    with _open_csv(path, header) as fh:
        w = csv.writer(fh)
        w.writerow(["protocol", "map_id", "train", "test"])
        for c in cells:
            w.writerow([c.protocol, c.map_id, c.train_speaker, c.test_speaker])


def write_results_csv(cells, path, header: dict | None = None) -> None:
    """Per-fold rows: map_id,train_speaker,test_speaker,fold,N,D,S,I,Cw."""
    with _open_csv(path, header) as fh:
        w = csv.writer(fh)
        w.writerow(["map_id", "train_speaker", "test_speaker", "fold",
                    "N", "D", "S", "I", "Cw"])
        for c in cells:
            for f, n, d, s, i, cw in c.per_fold:
                w.writerow([c.map_id, c.train_speaker, c.test_speaker, f,
                            n, d, s, i, repr(cw)])


def write_summary_csv(cells, path, header: dict | None = None) -> None:
    with _open_csv(path, header) as fh:
        w = csv.writer(fh)
        w.writerow(["protocol", "map", "train", "test", "mean_cw", "se"])
        for c in cells:
            w.writerow([c.protocol, c.map_id, c.train_speaker, c.test_speaker,
                        repr(c.summary.mean), repr(c.summary.standard_error)])


def read_summary_csv(path) -> list[ExperimentCell]:
    """Rebuild skeleton cells (summary mean/se only) from a summary CSV."""
    cells = []
    with open(path, encoding="utf-8") as fh:
        rows = csv.reader(ln for ln in fh if not ln.startswith("#"))
        head = next(rows)
        if head != ["protocol", "map", "train", "test", "mean_cw", "se"]:
            raise ValueError(f"{path}: unexpected columns {head}")
        for protocol, map_id, train, test, mean, se in rows:
            cells.append(
                ExperimentCell(
                    map_id, int(train), int(test), protocol,
                    ScoreSummary((), float(mean), float(se), degenerate=False),
                )
            )
    if not cells:
        raise ValueError(f"{path}: no rows")
    return cells


def write_weighting_csv(table: WeightTable, path, header: dict | None = None) -> None:
    with _open_csv(path, header) as fh:
        w = csv.writer(fh)
        w.writerow(["test_speaker"] + list(table.map_ids))
        for q in table.speakers:
            w.writerow([q] + [table.scores[(q, m)] for m in table.map_ids])
        w.writerow(["total"] + [table.totals[m] for m in table.map_ids])


def write_difference_csv(report: DifferenceReport, path,
                         header: dict | None = None) -> None:
    with _open_csv(path, header) as fh:
        w = csv.writer(fh)
        w.writerow(["test_speaker", "ssd_mean_cw", "dsdd_mean_cw", "difference_points"])
        for q, ssd_mean, dsdd_mean, diff in report.rows:
            w.writerow([q, repr(ssd_mean), repr(dsdd_mean), repr(diff)])
        w.writerow(["grand_mean", "", "", repr(report.grand_mean)])


def write_plot_data(cells, protocol: str, ssd_cells, path,
                    header: dict | None = None) -> None:
    """Figure-family data: each cell of one protocol beside its SSD baseline."""
    baselines = {c.test_speaker: c.summary for c in ssd_cells if c.protocol == "SSD"}
    with _open_csv(path, header) as fh:
        w = csv.writer(fh)
        w.writerow(["test_speaker", "map", "mean", "se", "baseline_mean", "baseline_se"])
        for c in cells:
            if c.protocol != protocol:
                continue
            base = baselines.get(c.test_speaker)
            if base is None:
                raise ValueError(f"no SSD baseline for test speaker {c.test_speaker}")
            w.writerow([
                c.test_speaker, c.map_id,
                repr(c.summary.mean), repr(c.summary.standard_error),
                repr(base.mean), repr(base.standard_error),
            ])
