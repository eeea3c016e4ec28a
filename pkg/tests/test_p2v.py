"""Map derivation against a networkx connected-components oracle."""

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visegrid.align import ConfusionMatrix
from visegrid.corpus import SILENCE, PhonemeSet, PronunciationDict
from visegrid.errors import TranscriptionError
from visegrid.p2v import (
    P2VMap,
    apply_map,
    derive_map,
    load_map,
    map_dictionary,
    map_stats,
    pool_confusions,
    save_map,
)

# 4 vowels, 5 consonants + silence; "vowels" chosen so PhonemeSet.from_symbols
# with the default BEEP list categorises them as such.
VOWELS = ("aa", "iy", "ow", "uw")
CONSONANTS = ("b", "k", "m", "s", "t")
PSET = PhonemeSet.from_symbols(VOWELS + CONSONANTS)


def matrix_from_counts(counts: dict[tuple[str, str], int]) -> ConfusionMatrix:
    m = ConfusionMatrix(PSET.symbols)
    for (a, b), c in counts.items():
        m.counts[m._idx(a), m._idx(b)] = c
    return m


def oracle_partition(matrix: ConfusionMatrix, threshold: int) -> dict[str, frozenset]:
    """Connected components of the mutual-confusion graph via networkx."""
    g = nx.Graph()
    g.add_nodes_from(PSET.symbols)
    for a in PSET.symbols:
        for b in PSET.symbols:
            if a >= b or SILENCE in (a, b):
                continue
            if PSET.category(a) != PSET.category(b):
                continue
            if matrix.count(a, b) >= threshold and matrix.count(b, a) >= threshold:
                g.add_edge(a, b)
    return {s: frozenset(c) for c in nx.connected_components(g) for s in c}


def partition_of(m: P2VMap) -> dict[str, frozenset]:
    groups = m.visemes()
    return {ph: frozenset(groups[v]) for ph, v in m.phoneme_to_viseme.items()}


def test_diagonal_confusion_gives_identity_map():
    counts = {(s, s): 5 for s in PSET.symbols}
    m = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1})
    assert m.viseme_count == len(PSET.symbols)


def test_mutual_confusion_merges_one_directional_does_not():
    counts = {(s, s): 5 for s in PSET.symbols}
    counts[("b", "m")] = 2
    counts[("m", "b")] = 1
    m = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1}, threshold=1)
    assert m.phoneme_to_viseme["b"] == m.phoneme_to_viseme["m"]
    m2 = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1}, threshold=2)
    assert m2.phoneme_to_viseme["b"] != m2.phoneme_to_viseme["m"]


def test_vowels_and_consonants_never_merge():
    counts = {("aa", "b"): 100, ("b", "aa"): 100}
    m = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1})
    assert m.phoneme_to_viseme["aa"] != m.phoneme_to_viseme["b"]


def test_silence_stays_singleton():
    counts = {(SILENCE, "b"): 100, ("b", SILENCE): 100}
    m = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1})
    sil_label = m.phoneme_to_viseme[SILENCE]
    assert [p for p, v in m.phoneme_to_viseme.items() if v == sil_label] == [SILENCE]


def test_labels_follow_lexicographic_smallest_member():
    # all vowels merge into one class, all consonants another
    counts = {}
    for grp in (VOWELS, CONSONANTS):
        for a in grp:
            for b in grp:
                if a != b:
                    counts[(a, b)] = 3
    m = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1})
    groups = m.visemes()
    # components sorted by smallest member: aa-group, b-group, sil
    assert groups["V1"] == VOWELS
    assert groups["V2"] == CONSONANTS
    assert groups["V3"] == (SILENCE,)


def test_transitive_merging_through_chain():
    counts = {("b", "k"): 1, ("k", "b"): 1, ("k", "m"): 1, ("m", "k"): 1}
    m = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1})
    assert m.phoneme_to_viseme["b"] == m.phoneme_to_viseme["m"]


def test_derive_requires_inventory_coverage():
    small = ConfusionMatrix(("b", "k"))
    with pytest.raises(ValueError):
        derive_map(small, PSET, "SD", "M_1", {1})


def test_derive_rejects_bad_threshold_and_kind():
    m = matrix_from_counts({})
    with pytest.raises(ValueError):
        derive_map(m, PSET, "SD", "M_1", {1}, threshold=0)
    with pytest.raises(ValueError):
        derive_map(m, PSET, "XX", "M_1", {1})


@st.composite
def random_counts(draw):
    pairs = {}
    n = draw(st.integers(0, 25))
    syms = PSET.symbols
    for _ in range(n):
        a = draw(st.sampled_from(syms))
        b = draw(st.sampled_from(syms))
        pairs[(a, b)] = draw(st.integers(1, 4))
    return pairs


@given(random_counts())
@settings(max_examples=200, deadline=None)
def test_components_match_networkx_oracle(counts):
    matrix = matrix_from_counts(counts)
    m = derive_map(matrix, PSET, "SD", "M_1", {1}, threshold=1)
    assert partition_of(m) == oracle_partition(matrix, 1)


@given(random_counts(), st.integers(1, 4))
@settings(max_examples=200, deadline=None)
def test_components_match_oracle_any_threshold(counts, threshold):
    matrix = matrix_from_counts(counts)
    m = derive_map(matrix, PSET, "SD", "M_1", {1}, threshold=threshold)
    assert partition_of(m) == oracle_partition(matrix, threshold)


def test_threshold_monotonicity_over_random_matrices():
    """Raising the threshold only ever refines the partition."""
    rng = np.random.default_rng(7)
    for _ in range(1000):
        matrix = ConfusionMatrix(PSET.symbols)
        k = len(PSET.symbols)
        matrix.counts[:, :] = rng.integers(0, 4, size=(k, k))
        parts = []
        for threshold in (1, 2, 3):
            m = derive_map(matrix, PSET, "SD", "M_1", {1}, threshold=threshold)
            parts.append((m.viseme_count, partition_of(m)))
        for (n_lo, part_lo), (n_hi, part_hi) in zip(parts, parts[1:]):
            assert n_hi >= n_lo
            for ph, cls_hi in part_hi.items():
                assert cls_hi <= part_lo[ph]  # refinement: subset classwise


def test_pool_confusions_sums():
    m1 = matrix_from_counts({("b", "k"): 1})
    m2 = matrix_from_counts({("b", "k"): 2})
    pooled = pool_confusions([m1, m2])
    assert pooled.count("b", "k") == 3
    with pytest.raises(ValueError):
        pool_confusions([])


def test_apply_map_and_unknown_symbol():
    m = derive_map(matrix_from_counts({}), PSET, "SD", "M_1", {1})
    mapped = apply_map(["b", SILENCE], m)
    assert mapped == [m.phoneme_to_viseme["b"], m.phoneme_to_viseme[SILENCE]]
    with pytest.raises(TranscriptionError):
        apply_map(["zz"], m)


def test_map_dictionary_reports_homophene_collisions():
    counts = {("b", "m"): 1, ("m", "b"): 1}
    m = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1})
    pdict = PronunciationDict({"BEE": ("b", "iy"), "ME": ("m", "iy")}, PSET)
    md = map_dictionary(pdict, m)
    assert md.entries["BEE"] == md.entries["ME"]
    assert list(md.collisions.values()) == [("BEE", "ME")]


def test_map_stats_family_ranges():
    counts = {("b", "m"): 1, ("m", "b"): 1}
    merged = derive_map(matrix_from_counts(counts), PSET, "SD", "M_1", {1})
    ident = derive_map(matrix_from_counts({}), PSET, "SD", "M_2", {2})
    ms = derive_map(matrix_from_counts({}), PSET, "MS", "M_[all]", {1, 2})
    report = map_stats([merged, ident, ms])
    lo, hi, rng_ = report.family_range["SD"]
    assert (lo, hi, rng_) == (merged.viseme_count, ident.viseme_count,
                              ident.viseme_count - merged.viseme_count)
    assert report.family_range["MS"][2] == 0


def test_map_roundtrip(tmp_path):
    counts = {("b", "m"): 1, ("m", "b"): 1, ("aa", "iy"): 2, ("iy", "aa"): 2}
    m = derive_map(matrix_from_counts(counts), PSET, "SI", "M_!3", {1, 2, 4})
    path = tmp_path / "map.txt"
    save_map(m, path, header={"version": "t"})
    text = path.read_text()
    assert "# id: M_!3\n" in text and "# kind: SI\n" in text
    assert "# sources: 1,2,4\n" in text
    back = load_map(path)
    assert back.map_id == m.map_id
    assert back.kind == m.kind
    assert back.source_speakers == m.source_speakers
    assert back.phoneme_to_viseme == m.phoneme_to_viseme


def test_load_map_rejects_duplicates_and_missing_headers(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("# id: M_1\n# kind: SD\n# sources: 1\nb\tV1\nb\tV2\n")
    with pytest.raises(ValueError):
        load_map(p)
    p2 = tmp_path / "bad2.txt"
    p2.write_text("# id: M_1\nb\tV1\n")
    with pytest.raises(ValueError):
        load_map(p2)


def test_map_validate_totality():
    m = derive_map(matrix_from_counts({}), PSET, "SD", "M_1", {1})
    small = PhonemeSet.from_symbols(VOWELS + CONSONANTS + ("zz",))
    with pytest.raises(ValueError):
        m.validate(small)
