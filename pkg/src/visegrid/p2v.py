"""Phoneme-to-viseme maps derived from phoneme confusion matrices.

Two phonemes belong in the same viseme when the recogniser confuses them in
BOTH directions at least `threshold` times. Vowels and consonants are never
merged with each other, and silence always stays a singleton class. Viseme
classes are the connected components of the resulting mutual-confusion graph.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .align import ConfusionMatrix
from .corpus import PhonemeSet, PronunciationDict
from .errors import TranscriptionError

log = logging.getLogger(__name__)

KINDS = ("SD", "MS", "SI")


@dataclass(frozen=True)
class P2VMap:
    map_id: str
    kind: str  # SD (one source speaker), MS (all speakers), SI (all but one)
    source_speakers: frozenset[int]
    phoneme_to_viseme: dict[str, str] = field(hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        if not self.phoneme_to_viseme:
            raise ValueError("map houses no phonemes")

    @property
    def viseme_count(self) -> int:
        return len(set(self.phoneme_to_viseme.values()))

    def visemes(self) -> dict[str, tuple[str, ...]]:
        """Viseme label -> sorted member phonemes."""
        groups: dict[str, list[str]] = {}
        for ph, v in self.phoneme_to_viseme.items():
            groups.setdefault(v, []).append(ph)
        return {v: tuple(sorted(members)) for v, members in sorted(groups.items())}

    def validate(self, phoneme_set: PhonemeSet) -> None:
        """Total over the inventory, and classes never straddle categories."""
        missing = [p.symbol for p in phoneme_set if p.symbol not in self.phoneme_to_viseme]
        if missing:
            raise ValueError(f"map {self.map_id}: phonemes without a home: {missing}")
        extra = [ph for ph in self.phoneme_to_viseme if ph not in phoneme_set]
        if extra:
            raise ValueError(f"map {self.map_id}: unknown phonemes: {extra}")
        for v, members in self.visemes().items():
            cats = {phoneme_set.category(m) for m in members}
            if len(cats) > 1:
                raise ValueError(f"map {self.map_id}: viseme {v} mixes categories {cats}")


def derive_map(
    confusions: ConfusionMatrix,
    phoneme_set: PhonemeSet,
    kind: str,
    map_id: str,
    source_speakers,
    threshold: int = 1,
) -> P2VMap:
    """Cluster the inventory into visemes from mutual confusions.

    The graph has an edge a-b iff count(a,b) >= threshold AND count(b,a) >=
    threshold, a and b share a category, and neither is silence. Components
    are labelled V1..Vk in order of their lexicographically smallest member.
    """
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    symbols = [p.symbol for p in phoneme_set]
    for s in symbols:
        if s not in confusions.symbols:
            raise ValueError(f"confusion matrix lacks inventory symbol {s!r}")

    adjacency: dict[str, set[str]] = {s: set() for s in symbols}
    for a in symbols:
        if phoneme_set.category(a) == "silence":
            continue
        for b in symbols:
            if b <= a or phoneme_set.category(b) != phoneme_set.category(a):
                continue
            if confusions.count(a, b) >= threshold and confusions.count(b, a) >= threshold:
                adjacency[a].add(b)
                adjacency[b].add(a)

    components: list[list[str]] = []
    seen: set[str] = set()
    for start in symbols:
        if start in seen:
            continue
        group = []
        queue = [start]
        seen.add(start)
        while queue:
            node = queue.pop()
            group.append(node)
            for nxt in sorted(adjacency[node]):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        components.append(sorted(group))

    components.sort(key=lambda g: g[0])
    mapping = {}
    for i, group in enumerate(components, start=1):
        for ph in group:
            mapping[ph] = f"V{i}"
    out = P2VMap(map_id, kind, frozenset(source_speakers), mapping)
    out.validate(phoneme_set)
    return out


def pool_confusions(matrices) -> ConfusionMatrix:
    """Sum confusion matrices over a common symbol set."""
    matrices = list(matrices)
    if not matrices:
        raise ValueError("no confusion matrices to pool")
    total = matrices[0].copy()
    for m in matrices[1:]:
        total = total + m
    return total


def apply_map(symbols, p2v_map: P2VMap) -> list[str]:
    out = []
    for s in symbols:
        try:
            out.append(p2v_map.phoneme_to_viseme[s])
        except KeyError:
            raise TranscriptionError(
                f"phoneme {s!r} has no home in map {p2v_map.map_id}"
            ) from None
    return out


@dataclass
class MappedDictionary:
    """Word -> viseme string, plus which words collapsed together."""

    entries: dict[str, tuple[str, ...]]
    collisions: dict[tuple[str, ...], tuple[str, ...]]


def map_dictionary(pdict: PronunciationDict, p2v_map: P2VMap) -> MappedDictionary:
    """Rewrite every pronunciation through the map.

    Distinct words may end up with identical viseme strings (homophenes);
    they stay in the dictionary and are reported in `collisions` and the log.
    """
    entries = {}
    by_pron: dict[tuple[str, ...], list[str]] = {}
    for word in pdict.words:
        vpron = tuple(apply_map(pdict[word], p2v_map))
        entries[word] = vpron
        by_pron.setdefault(vpron, []).append(word)
    collisions = {
        pron: tuple(sorted(words)) for pron, words in by_pron.items() if len(words) > 1
    }
    for pron, words in sorted(collisions.items()):
        log.info(
            "map %s: words %s share viseme string %s",
            p2v_map.map_id, " ".join(words), " ".join(pron),
        )
    return MappedDictionary(entries, collisions)


@dataclass(frozen=True)
class GranularityReport:
    # (map_id, kind, viseme_count) per map, in input order
    rows: tuple[tuple[str, str, int], ...]
    # kind -> (min count, max count, range)
    family_range: dict[str, tuple[int, int, int]]


def map_stats(maps) -> GranularityReport:
    maps = list(maps)
    if not maps:
        raise ValueError("no maps to report on")
    rows = tuple((m.map_id, m.kind, m.viseme_count) for m in maps)
    family_range = {}
    for kind in sorted({m.kind for m in maps}):
        counts = [m.viseme_count for m in maps if m.kind == kind]
        family_range[kind] = (min(counts), max(counts), max(counts) - min(counts))
    return GranularityReport(rows, family_range)


def save_map(p2v_map: P2VMap, path, header: dict | None = None) -> None:
    """One `phoneme<TAB>viseme` line per phoneme, after id/kind/sources headers."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (header or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(f"# id: {p2v_map.map_id}\n")
        fh.write(f"# kind: {p2v_map.kind}\n")
        fh.write(f"# sources: {','.join(str(s) for s in sorted(p2v_map.source_speakers))}\n")
        for ph in sorted(p2v_map.phoneme_to_viseme):
            fh.write(f"{ph}\t{p2v_map.phoneme_to_viseme[ph]}\n")


def load_map(path) -> P2VMap:
    meta = {}
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" in body:
                    key, _, value = body.partition(":")
                    meta.setdefault(key.strip(), value.strip())
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}: expected 'phoneme<TAB>viseme', got {line!r}")
            ph, viseme = parts
            if ph in mapping:
                raise ValueError(f"{path}: phoneme {ph!r} listed twice")
            mapping[ph] = viseme
    for key in ("id", "kind", "sources"):
        if key not in meta:
            raise ValueError(f"{path}: missing '# {key}:' header")
    sources = frozenset(
        int(s) for s in meta["sources"].split(",") if s.strip()
    )
    return P2VMap(meta["id"], meta["kind"], sources, mapping)
