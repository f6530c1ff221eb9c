import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agtcnet.electrode_graph import (
    BCICIV2A_CHANNELS,
    EEGMMIDB_CHANNELS,
    LabelError,
    build_adjacency,
    degree_histogram,
    graph_from_matrix,
    parse_label,
)

# Hand-applied lattice rule on the 22-channel montage.
BCICIV2A_EDGES = {
    # rows
    ("FC3", "FC1"), ("FC1", "FCz"), ("FCz", "FC2"), ("FC2", "FC4"),
    ("C5", "C3"), ("C3", "C1"), ("C1", "Cz"), ("Cz", "C2"), ("C2", "C4"), ("C4", "C6"),
    ("CP3", "CP1"), ("CP1", "CPz"), ("CPz", "CP2"), ("CP2", "CP4"),
    ("P1", "Pz"), ("Pz", "P2"),
    # columns
    ("Fz", "FCz"), ("FCz", "Cz"), ("Cz", "CPz"), ("CPz", "Pz"), ("Pz", "POz"),
    ("FC1", "C1"), ("C1", "CP1"), ("CP1", "P1"),
    ("FC2", "C2"), ("C2", "CP2"), ("CP2", "P2"),
    ("FC3", "C3"), ("C3", "CP3"),
    ("FC4", "C4"), ("C4", "CP4"),
}


class TestParseLabel:
    def test_midline(self):
        l = parse_label("Cz")
        assert (l.row, l.lateral_index) == ("C", 0)

    def test_right(self):
        l = parse_label("CP4")
        assert (l.row, l.lateral_index) == ("CP", 4)

    def test_left(self):
        assert parse_label("FC3").lateral_index == -3

    @pytest.mark.parametrize("bad", ["XX9", "", "C0", "Cq", "Q1", "3"])
    def test_errors(self, bad):
        with pytest.raises(LabelError):
            parse_label(bad)

    def test_error_names_token(self):
        with pytest.raises(LabelError, match="XX"):
            parse_label("XX9")

    @pytest.mark.parametrize("raw,row,idx", [
        ("T7", "C", -7), ("T8", "C", 8), ("FT7", "FC", -7), ("TP8", "CP", 8),
        ("T9", "C", -9), ("T10", "C", 10), ("P7", "P", -7), ("F8", "F", 8),
        ("Iz", "Iz", 0), ("Fc5.", "FC", -5), ("Cz..", "C", 0), ("Fpz.", "Fp", 0),
    ])
    def test_folding(self, raw, row, idx):
        l = parse_label(raw)
        assert (l.row, l.lateral_index) == (row, idx)

    @pytest.mark.parametrize("raw", EEGMMIDB_CHANNELS + ("Fc5.", "cz", "Tp7."))
    def test_round_trip(self, raw):
        l = parse_label(raw)
        assert parse_label(l.format()) == l
        assert (l.lateral_index == 0) == raw.rstrip(".").lower().endswith("z")


class TestBciciv2a:
    g = build_adjacency(BCICIV2A_CHANNELS)

    def test_named_neighbors(self):
        assert self.g.neighbors("Cz") == {"C1", "C2", "FCz", "CPz"}
        assert self.g.neighbors("Fz") == {"FCz"}
        assert self.g.neighbors("C5") == {"C3"}

    def test_full_edge_set(self):
        names = self.g.names
        got = {frozenset((names[i], names[j])) for i, j in self.g.edges()}
        assert got == {frozenset(e) for e in BCICIV2A_EDGES}
        assert self.g.n_edges == 31

    def test_no_edge_without_shared_row_or_column(self):
        assert "P2" not in self.g.neighbors("FC3")

    def test_single_component(self):
        report = degree_histogram(self.g)
        assert report.components == 1
        assert report.degrees["Cz"] == 4 and report.degrees["Fz"] == 1
        assert sum(report.degrees.values()) == 2 * 31


class TestDegreeHistogram:
    def test_empty(self):
        report = degree_histogram(build_adjacency([]))
        assert report.degrees == {} and report.components == 0

    def test_pair(self):
        report = degree_histogram(build_adjacency(["C1", "Cz"]))
        assert report.degrees == {"C1": 1, "Cz": 1}
        assert report.components == 1

    def test_disconnected(self):
        assert degree_histogram(build_adjacency(["C3", "P2"])).components == 2


class TestBuildAdjacency:
    def test_duplicate(self):
        with pytest.raises(LabelError):
            build_adjacency(["C3", "Cz", "C3"])
        with pytest.raises(LabelError):
            build_adjacency(["Cz", "cz."])

    def test_unparseable(self):
        with pytest.raises(LabelError):
            build_adjacency(["C3", "XX9"])

    def test_temporal_folding_links(self):
        g = build_adjacency(EEGMMIDB_CHANNELS)
        assert g.neighbors("T7") == {"C5", "FT7", "TP7", "T9"}
        assert g.neighbors("Iz") == {"Oz"}
        assert degree_histogram(g).components == 1

    @pytest.mark.parametrize("rows,cols", [(1, 1), (1, 4), (3, 1), (3, 5), (5, 7), (10, 3)])
    def test_full_lattice_edge_count(self, rows, cols):
        prefixes = ["Fp", "AF", "F", "FC", "C", "CP", "P", "PO", "O", "I"][:rows]
        suffixes = ["z", "1", "2", "3", "4", "5", "6"][:cols]
        labels = [p + s for p in prefixes for s in suffixes]
        g = build_adjacency(labels)
        assert g.n_edges == rows * (cols - 1) + cols * (rows - 1)

    def test_boundary_hole_removes_incident_edges_only(self):
        full_labels = [p + s for p in ("F", "FC", "C") for s in ("3", "1", "z", "2", "4")]
        full = build_adjacency(full_labels)
        keep = [i for i, s in enumerate(full_labels) if s != "C4"]
        holed = build_adjacency([full_labels[i] for i in keep])
        np.testing.assert_array_equal(holed.matrix, full.matrix[np.ix_(keep, keep)])

    def test_interior_hole_bridges_neighbors(self):
        g = build_adjacency(["C3", "Cz", "C2"])
        assert g.neighbors("C3") == {"Cz"}
        assert g.neighbors("Cz") == {"C3", "C2"}


montage_subsets = st.lists(st.sampled_from(EEGMMIDB_CHANNELS), unique=True, max_size=30)


@settings(max_examples=60, deadline=None)
@given(montage_subsets, st.randoms(use_true_random=False))
def test_permutation_consistency(labels, rnd):
    perm = list(range(len(labels)))
    rnd.shuffle(perm)
    a = build_adjacency(labels).matrix
    b = build_adjacency([labels[i] for i in perm]).matrix
    np.testing.assert_array_equal(b, a[np.ix_(perm, perm)])


@settings(max_examples=60, deadline=None)
@given(montage_subsets)
def test_graph_invariants(labels):
    g = build_adjacency(labels)
    a = g.matrix
    assert np.array_equal(a, a.T) and np.trace(a) == 0
    assert set(np.unique(a)) <= {0, 1}
    for i, j in g.edges():
        li, lj = g.labels[i], g.labels[j]
        assert li.row == lj.row or li.lateral_index == lj.lateral_index
    # each row and column with k members contributes a k-1 chain
    parsed = [parse_label(s) for s in labels]
    rows = {}
    cols = {}
    for p in parsed:
        rows[p.row] = rows.get(p.row, 0) + 1
        cols[p.lateral_index] = cols.get(p.lateral_index, 0) + 1
    expected = sum(k - 1 for k in rows.values()) + sum(k - 1 for k in cols.values())
    assert g.n_edges == expected


def test_graph_from_matrix_validates():
    g = build_adjacency(BCICIV2A_CHANNELS)
    again = graph_from_matrix(BCICIV2A_CHANNELS, g.matrix)
    np.testing.assert_array_equal(again.matrix, g.matrix)
    bad = g.matrix.copy()
    bad[0, 1] = 1
    with pytest.raises(ValueError):
        graph_from_matrix(BCICIV2A_CHANNELS, bad)
    with pytest.raises(ValueError):
        graph_from_matrix(BCICIV2A_CHANNELS[:3], g.matrix)
