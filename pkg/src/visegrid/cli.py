"""Command-line driver for the experiment pipeline.

Subcommands map onto pipeline stages: synth, folds, train-phonemes, confuse,
derive-maps, train-visemes, decode, grid, report. Configuration comes from a
flat ``key = value`` file overridden by flags; every artifact written carries
a header with the tool version, a hash of the effective configuration, and
the seed, so outputs are byte-reproducible (no timestamps anywhere).

Exit codes: 0 success, 1 configuration error, 2 missing input, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import dataclass, field, fields

from . import __version__
from .align import write_confusion, read_confusion
from .corpus import (
    SILENCE,
    Corpus,
    FoldSplit,
    load_dictionary,
    make_folds,
    read_corpus,
    read_folds,
    split_speaker,
    write_corpus,
    write_folds,
)
from .decoder import DecodeConfig, decode_words
from .errors import ConfigError, MissingInputError, VisegridError
from .harness import (
    GridConfig,
    derive_maps_from_confusions,
    difference_report,
    enumerate_cells,
    read_summary_csv,
    run_grid,
    run_phoneme_pass,
    train_models,
    weighting_table,
    write_difference_csv,
    write_grid_manifest,
    write_plot_data,
    write_results_csv,
    write_summary_csv,
    write_weighting_csv,
)
from .hmm import TrainSchedule, load_models, save_models
from .lm import build_bigram, load_network, save_network
from .p2v import apply_map, load_map, map_dictionary, map_stats, save_map
from .synth import SynthSpec, generate_synthetic_corpus


@dataclass
class RunConfig:
    """Effective configuration; defaults are the reference training recipe."""

    seed: int = 0
    folds: int = 10
    jobs: int = 1
    # model topology and schedule
    states: int = 3
    max_mix: int = 5
    iterations: int = 11
    align_at: int = 7
    realign_every: bool = False
    # decoding
    lm_scale: float = 1.0
    word_penalty: float = 0.0
    beam: float | None = None
    free_loop: bool = False
    # map derivation
    threshold: int = 1
    # synthetic corpus
    speakers: int = 3
    sentences: int = 60
    separation: float = 6.0
    divergent: bool = False
    confusable: str = ""  # e.g. "1:b+m;2:k+t"
    sentence_min: int = 3
    sentence_max: int = 6
    frames_min: int = 3
    frames_max: int = 6

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError("seed: must be >= 0")
        if self.folds < 2:
            raise ConfigError("folds: must be >= 2")
        if self.jobs < 1:
            raise ConfigError("jobs: must be >= 1")
        if self.max_mix < 1 or self.max_mix > 5:
            raise ConfigError("max_mix: must be 1..5")
        if self.beam is not None and self.beam <= 0:
            raise ConfigError("beam: must be positive or 'off'")
        if self.threshold < 1:
            raise ConfigError("threshold: must be >= 1")

    def schedule(self) -> TrainSchedule:
        growth = tuple(
            (after, target)
            for after, target in ((2, 2), (4, 4), (6, 5))
            if target <= self.max_mix
        )
        return TrainSchedule(
            iterations=self.iterations,
            align_at=self.align_at,
            mixture_growth=growth,
            realign_every=self.realign_every,
        )

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            lm_scale=self.lm_scale, word_penalty=self.word_penalty, beam=self.beam
        )

    def grid_config(self) -> GridConfig:
        return GridConfig(
            states=self.states,
            schedule=self.schedule(),
            decode=self.decode_config(),
            threshold=self.threshold,
            free_loop=self.free_loop,
            jobs=self.jobs,
        )

    def synth_spec(self) -> SynthSpec:
        confusable = {}
        if self.confusable:
            for part in self.confusable.split(";"):
                speaker, _, pair = part.partition(":")
                a, _, b = pair.partition("+")
                if not (speaker.strip() and a and b):
                    raise ConfigError(f"confusable: bad entry {part!r}")
                confusable[int(speaker)] = (a.strip(), b.strip())
        return SynthSpec(
            speakers=self.speakers,
            sentences=self.sentences,
            sentence_length=(self.sentence_min, self.sentence_max),
            frames_per_phoneme=(self.frames_min, self.frames_max),
            separation=self.separation,
            divergent=self.divergent,
            confusable_pairs=confusable,
            seed=self.seed,
        )

    def as_lines(self) -> list[str]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                value = "off"
            out.append(f"{f.name} = {value}")
        return out

    def hash(self) -> str:
        text = "\n".join(sorted(self.as_lines()))
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    kind = {f.name: f.type for f in fields(RunConfig)}.get(name)
    if kind is None:
        raise ConfigError(f"{name}: unknown configuration key")
    try:
        if kind == "bool":
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            return None if raw.lower() in ("off", "none") else float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}") from None


def load_config(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = _parse_value(key.strip(), value)
    return values


def build_config(args) -> tuple[RunConfig, dict]:
    """Defaults, then config file, then explicit flags. Returns (cfg, overrides)."""
    overrides: dict = {}
    if args.config:
        _require(args.config)
        overrides.update(load_config(args.config))
    flag_map = {
        "seed": args.seed,
        "folds": args.folds,
        "jobs": args.jobs,
        "threshold": args.threshold,
        "lm_scale": args.lm_scale,
        "beam": args.beam,
    }
    for key, value in flag_map.items():
        if value is not None:
            overrides[key] = _parse_value(key, value) if isinstance(value, str) else value
    try:
        cfg = RunConfig(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return cfg, overrides


# ---------------------------------------------------------------------------
# Artifact bookkeeping


def _require(path) -> str:
    if not os.path.exists(path):
        raise MissingInputError(f"missing input: {path}")
    return path


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:12]


def _header(cfg: RunConfig) -> dict:
    return {"version": __version__, "config": cfg.hash(), "seed": cfg.seed}


def _log_command(out_dir: str, command: str, cfg: RunConfig,
                 inputs: dict, overrides: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    line = "\t".join([
        command,
        cfg.hash(),
        str(cfg.seed),
        ";".join(f"{name}={_file_hash(path)}" for name, path in sorted(inputs.items())),
        ";".join(f"{k}={v}" for k, v in sorted(overrides.items())),
    ])
    with open(os.path.join(out_dir, "commands.tsv"), "a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def _load_corpus(args) -> Corpus:
    _require(args.dictionary)
    _require(args.corpus)
    pdict = load_dictionary(args.dictionary)
    return read_corpus(args.corpus, pdict)


def _load_folds(args) -> FoldSplit:
    _require(args.folds_file)
    return read_folds(args.folds_file)


def _write_dictionary(pdict, path, header: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in header.items():
            fh.write(f"# {key}: {value}\n")
        for word in pdict.words:
            fh.write(f"{word} {' '.join(pdict[word])}\n")


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args, cfg: RunConfig, overrides: dict) -> None:
    corpus, _truth = generate_synthetic_corpus(cfg.synth_spec())
    os.makedirs(args.out, exist_ok=True)
    write_corpus(corpus, args.out, header=_header(cfg))
    _write_dictionary(corpus.dictionary, os.path.join(args.out, "dictionary.txt"),
                      _header(cfg))
    _log_command(args.out, "synth", cfg, {}, overrides)
    print(f"synth: {len(corpus)} utterances, {cfg.speakers} speakers -> {args.out}")


def cmd_folds(args, cfg: RunConfig, overrides: dict) -> None:
    corpus = _load_corpus(args)
    folds = make_folds(corpus, cfg.folds, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "folds.tsv")
    write_folds(folds, path, header=_header(cfg))
    _log_command(args.out, "folds", cfg,
                 {"corpus": args.corpus, "dictionary": args.dictionary}, overrides)
    print(f"folds: k={cfg.folds} -> {path}")


def cmd_train_phonemes(args, cfg: RunConfig, overrides: dict) -> None:
    corpus = _load_corpus(args)
    folds = _load_folds(args)
    gcfg = cfg.grid_config()
    model_dir = os.path.join(args.out, "phoneme_models")
    os.makedirs(model_dir, exist_ok=True)
    for speaker in corpus.speakers:
        for f in range(folds.k):
            train, _ = split_speaker(corpus, folds, speaker, f)
            models = train_models(
                [list(u.phonemes) for u in train],
                [u.features for u in train],
                gcfg,
            )
            path = os.path.join(model_dir, f"sp{speaker}_f{f}.txt")
            save_models(models, path, header=_header(cfg))
    _log_command(args.out, "train-phonemes", cfg,
                 {"corpus": args.corpus, "dictionary": args.dictionary,
                  "folds": args.folds_file}, overrides)
    print(f"train-phonemes: {len(corpus.speakers) * folds.k} model sets -> {model_dir}")


def cmd_confuse(args, cfg: RunConfig, overrides: dict) -> None:
    corpus = _load_corpus(args)
    folds = _load_folds(args)
    _require(args.models)

    def supplier(speaker, fold, _train):
        return load_models(_require(os.path.join(args.models, f"sp{speaker}_f{fold}.txt")))

    confusions = run_phoneme_pass(corpus, folds, cfg.grid_config(), supplier)
    conf_dir = os.path.join(args.out, "confusions")
    os.makedirs(conf_dir, exist_ok=True)
    for speaker, matrix in sorted(confusions.items()):
        write_confusion(matrix, os.path.join(conf_dir, f"sp{speaker}.txt"),
                        header=_header(cfg))
    _log_command(args.out, "confuse", cfg,
                 {"corpus": args.corpus, "dictionary": args.dictionary,
                  "folds": args.folds_file}, overrides)
    print(f"confuse: {len(confusions)} speaker matrices -> {conf_dir}")


def cmd_derive_maps(args, cfg: RunConfig, overrides: dict) -> None:
    _require(args.dictionary)
    _require(args.confusions)
    pdict = load_dictionary(args.dictionary)
    confusions = {}
    for name in sorted(os.listdir(args.confusions)):
        if name.startswith("sp") and name.endswith(".txt"):
            speaker = int(name[2:-4])
            confusions[speaker] = read_confusion(os.path.join(args.confusions, name))
    if not confusions:
        raise MissingInputError(f"missing input: no sp*.txt files in {args.confusions}")
    maps = derive_maps_from_confusions(confusions, pdict.phoneme_set, cfg.threshold)
    map_dir = os.path.join(args.out, "maps")
    os.makedirs(map_dir, exist_ok=True)
    for map_id, m in sorted(maps.items()):
        save_map(m, os.path.join(map_dir, f"{map_id}.txt"), header=_header(cfg))
    report = map_stats(list(maps.values()))
    with open(os.path.join(args.out, "map_stats.tsv"), "w", encoding="utf-8") as fh:
        for key, value in _header(cfg).items():
            fh.write(f"# {key}: {value}\n")
        fh.write("map_id\tkind\tviseme_count\n")
        for map_id, kind, count in report.rows:
            fh.write(f"{map_id}\t{kind}\t{count}\n")
        for kind, (lo, hi, rng) in sorted(report.family_range.items()):
            fh.write(f"# {kind}: min {lo} max {hi} range {rng}\n")
    _log_command(args.out, "derive-maps", cfg,
                 {"dictionary": args.dictionary}, overrides)
    print(f"derive-maps: {len(maps)} maps -> {map_dir}")


def cmd_train_visemes(args, cfg: RunConfig, overrides: dict) -> None:
    corpus = _load_corpus(args)
    folds = _load_folds(args)
    p2v = load_map(_require(args.map))
    gcfg = cfg.grid_config()
    model_dir = os.path.join(args.out, "viseme_models", p2v.map_id)
    net_dir = os.path.join(args.out, "networks")
    os.makedirs(model_dir, exist_ok=True)
    os.makedirs(net_dir, exist_ok=True)
    for speaker in corpus.speakers:
        for f in range(folds.k):
            train, _ = split_speaker(corpus, folds, speaker, f)
            models = train_models(
                [apply_map(u.phonemes, p2v) for u in train],
                [u.features for u in train],
                gcfg,
            )
            save_models(models, os.path.join(model_dir, f"sp{speaker}_f{f}.txt"),
                        header=_header(cfg))
            net_path = os.path.join(net_dir, f"sp{speaker}_f{f}.txt")
            if not os.path.exists(net_path):
                net = build_bigram([u.words for u in train],
                                   vocab=corpus.dictionary.words)
                save_network(net, net_path, header=_header(cfg))
    _log_command(args.out, "train-visemes", cfg,
                 {"corpus": args.corpus, "dictionary": args.dictionary,
                  "folds": args.folds_file, "map": args.map}, overrides)
    print(f"train-visemes: {p2v.map_id} -> {model_dir}")


def cmd_decode(args, cfg: RunConfig, overrides: dict) -> None:
    if args.fold is not None and args.folds_file is None:
        raise ConfigError("--fold requires --folds-file")
    corpus = _load_corpus(args)
    p2v = load_map(_require(args.map))
    models = load_models(_require(args.models))
    network = load_network(_require(args.network))
    mapped = map_dictionary(corpus.dictionary, p2v)
    decode_cfg = DecodeConfig(
        lm_scale=cfg.lm_scale, word_penalty=cfg.word_penalty, beam=cfg.beam,
        silence_label=p2v.phoneme_to_viseme[SILENCE],
    )
    utts = corpus.utterances
    if args.speaker is not None:
        utts = corpus.utts_for(args.speaker)
    if args.fold is not None:
        folds = _load_folds(args)
        utts = [u for u in utts if folds.fold_of(u.utt_id) == args.fold]
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "hypotheses.tsv")
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in _header(cfg).items():
            fh.write(f"# {key}: {value}\n")
        for u in sorted(utts, key=lambda u: u.utt_id):
            result = decode_words(models, network, mapped, u.features, decode_cfg)
            fh.write(f"{u.utt_id}\t{' '.join(result.words)}\t{result.path_logprob!r}\n")
    _log_command(args.out, "decode", cfg,
                 {"corpus": args.corpus, "dictionary": args.dictionary,
                  "map": args.map, "models": args.models,
                  "network": args.network}, overrides)
    print(f"decode: {len(utts)} utterances -> {path}")


def cmd_grid(args, cfg: RunConfig, overrides: dict) -> None:
    corpus = _load_corpus(args)
    folds = _load_folds(args)
    gcfg = cfg.grid_config()
    header = _header(cfg)
    os.makedirs(args.out, exist_ok=True)

    cells = enumerate_cells(corpus.speakers)
    write_grid_manifest(cells, os.path.join(args.out, "grid_manifest.csv"), header)

    confusions = run_phoneme_pass(corpus, folds, gcfg)
    conf_dir = os.path.join(args.out, "confusions")
    os.makedirs(conf_dir, exist_ok=True)
    for speaker, matrix in sorted(confusions.items()):
        write_confusion(matrix, os.path.join(conf_dir, f"sp{speaker}.txt"), header)
    maps = derive_maps_from_confusions(confusions, corpus.dictionary.phoneme_set,
                                       cfg.threshold)
    map_dir = os.path.join(args.out, "maps")
    os.makedirs(map_dir, exist_ok=True)
    for map_id, m in sorted(maps.items()):
        save_map(m, os.path.join(map_dir, f"{map_id}.txt"), header)

    result = run_grid(corpus, folds, gcfg, cells=cells, maps=maps,
                      confusions=confusions)
    write_results_csv(result.cells, os.path.join(args.out, "results.csv"), header)
    write_summary_csv(result.cells, os.path.join(args.out, "summary.csv"), header)
    if result.failures:
        with open(os.path.join(args.out, "failures.csv"), "w", encoding="utf-8") as fh:
            fh.write("protocol,map_id,train,test,error\n")
            for cell, err in result.failures:
                fh.write(f"{cell.protocol},{cell.map_id},{cell.train_speaker},"
                         f"{cell.test_speaker},{err}\n")
    _log_command(args.out, "grid", cfg,
                 {"corpus": args.corpus, "dictionary": args.dictionary,
                  "folds": args.folds_file}, overrides)
    print(f"grid: {len(result.cells)} cells ok, {len(result.failures)} failed "
          f"-> {args.out}")


def cmd_report(args, cfg: RunConfig, overrides: dict) -> None:
    cells = read_summary_csv(_require(args.summary))
    ssd = [c for c in cells if c.protocol == "SSD"]
    dsd = [c for c in cells if c.protocol == "DSD"]
    dsdd = [c for c in cells if c.protocol == "DSDD"]
    header = _header(cfg)
    os.makedirs(args.out, exist_ok=True)
    table = weighting_table(dsd, ssd)
    write_weighting_csv(table, os.path.join(args.out, "weighting.csv"), header)
    report = difference_report(ssd, dsdd)
    write_difference_csv(report, os.path.join(args.out, "difference.csv"), header)
    for protocol, name in (("MS", "plot_ms.csv"), ("SI", "plot_si.csv"),
                           ("DSD", "plot_dsd.csv"), ("DSDD", "plot_dsdd.csv")):
        write_plot_data(cells, protocol, ssd, os.path.join(args.out, name), header)
    if args.maps:
        maps = []
        for name in sorted(os.listdir(args.maps)):
            if name.endswith(".txt"):
                maps.append(load_map(os.path.join(args.maps, name)))
        if maps:
            stats = map_stats(maps)
            with open(os.path.join(args.out, "map_ranges.tsv"), "w",
                      encoding="utf-8") as fh:
                for key, value in header.items():
                    fh.write(f"# {key}: {value}\n")
                fh.write("kind\tmin\tmax\trange\n")
                for kind, (lo, hi, rng) in sorted(stats.family_range.items()):
                    fh.write(f"{kind}\t{lo}\t{hi}\t{rng}\n")
    _log_command(args.out, "report", cfg, {"summary": args.summary}, overrides)
    print(f"report: weighting, difference, plot data -> {args.out}")


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _common(sub):
    sub.add_argument("--config", help="flat key = value configuration file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--folds", type=int, default=None)
    sub.add_argument("--jobs", type=int, default=None)
    sub.add_argument("--threshold", type=int, default=None)
    sub.add_argument("--lm-scale", dest="lm_scale", type=float, default=None)
    sub.add_argument("--beam", default=None, help="log-space beam width or 'off'")
    sub.add_argument("--out", required=True, help="output directory")


def _corpus_args(sub):
    sub.add_argument("--corpus", required=True, help="corpus manifest.tsv")
    sub.add_argument("--dictionary", required=True, help="pronunciation dictionary")


def build_parser() -> _Parser:
    parser = _Parser(prog="visegrid", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    _common(s)

    s = sub.add_parser("folds", help="assign utterances to cross-validation folds")
    _common(s)
    _corpus_args(s)

    s = sub.add_parser("train-phonemes", help="train phoneme models per speaker and fold")
    _common(s)
    _corpus_args(s)
    s.add_argument("--folds-file", required=True)

    s = sub.add_parser("confuse", help="decode held-out folds into phoneme confusions")
    _common(s)
    _corpus_args(s)
    s.add_argument("--folds-file", required=True)
    s.add_argument("--models", required=True, help="phoneme model directory")

    s = sub.add_parser("derive-maps", help="derive SD/MS/SI maps from confusions")
    _common(s)
    s.add_argument("--dictionary", required=True)
    s.add_argument("--confusions", required=True, help="directory of sp<N>.txt files")

    s = sub.add_parser("train-visemes", help="train viseme models through one map")
    _common(s)
    _corpus_args(s)
    s.add_argument("--folds-file", required=True)
    s.add_argument("--map", required=True, help="map file")

    s = sub.add_parser("decode", help="decode utterances to word hypotheses")
    _common(s)
    _corpus_args(s)
    s.add_argument("--map", required=True)
    s.add_argument("--models", required=True, help="model file")
    s.add_argument("--network", required=True, help="word network file")
    s.add_argument("--speaker", type=int, default=None)
    s.add_argument("--fold", type=int, default=None)
    s.add_argument("--folds-file", default=None)

    s = sub.add_parser("grid", help="run the full experiment grid")
    _common(s)
    _corpus_args(s)
    s.add_argument("--folds-file", required=True)

    s = sub.add_parser("report", help="weighting table, difference table, plot data")
    _common(s)
    s.add_argument("--summary", required=True, help="summary.csv from a grid run")
    s.add_argument("--maps", default=None, help="map directory for granularity ranges")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "folds": cmd_folds,
    "train-phonemes": cmd_train_phonemes,
    "confuse": cmd_confuse,
    "derive-maps": cmd_derive_maps,
    "train-visemes": cmd_train_visemes,
    "decode": cmd_decode,
    "grid": cmd_grid,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg, overrides = build_config(args)
        _COMMANDS[args.command](args, cfg, overrides)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except MissingInputError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except VisegridError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # robustness for scripting: never raw traceback
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
