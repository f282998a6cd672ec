import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sae_ssd.exceptions import DataError
from sae_ssd.population import (
    AdjacencyGraph,
    CovariateMatrix,
    Population,
    lattice_graph,
    load_adjacency,
    load_covariates,
    load_population,
    scale_covariates,
    synth_population,
    write_adjacency,
    write_covariates,
    write_population,
)


def test_population_shapes_and_totals(tiny_pop):
    assert (tiny_pop.J, tiny_pop.D, tiny_pop.n_cells) == (2, 2, 4)
    np.testing.assert_array_equal(tiny_pop.N_area, [300, 700])
    assert tiny_pop.total == 1000
    np.testing.assert_allclose(tiny_pop.prevalence, [[0.1, 0.1], [0.2, 0.25]])
    np.testing.assert_allclose(tiny_pop.area_share(), [[10 / 300, 30 / 700], [40 / 300, 100 / 700]])


def test_population_is_immutable(tiny_pop):
    with pytest.raises(ValueError):
        tiny_pop.N[0, 0] = 5


@pytest.mark.parametrize(
    "N,Y,msg",
    [
        ([[10, 0]], [[1, 0]], "N=0"),
        ([[10, 5]], [[11, 1]], "Y=11"),
        ([[10, 5]], [[-1, 1]], "Y=-1"),
    ],
)
def test_population_rejects_bad_cells(N, Y, msg):
    with pytest.raises(DataError, match=msg) as info:
        Population(np.array(N), np.array(Y), ("a", "b"), ("g",))
    assert info.value.violations


def test_population_rejects_duplicate_ids():
    with pytest.raises(DataError):
        Population(np.ones((1, 2), int), np.zeros((1, 2), int), ("a", "a"), ("g",))


def test_population_csv_round_trip(tiny_pop, tmp_path):
    p = tmp_path / "pop.csv"
    write_population(tiny_pop, p)
    back = load_population(p)
    np.testing.assert_array_equal(back.N, tiny_pop.N)
    np.testing.assert_array_equal(back.Y, tiny_pop.Y)
    assert back.area_ids == tiny_pop.area_ids
    assert back.group_labels == tiny_pop.group_labels


def test_load_population_skips_comment_lines(tiny_pop, tmp_path):
    p = tmp_path / "pop.csv"
    write_population(tiny_pop, p)
    p.write_text("# provenance line\n" + p.read_text())
    assert load_population(p).total == tiny_pop.total


def test_load_population_errors(tmp_path):
    p = tmp_path / "pop.csv"
    p.write_text("area_id,group_id,N,Y\nA,g1,10,11\n")
    with pytest.raises(DataError, match=r"cell \(g1, A\)"):
        load_population(p)
    p.write_text("area_id,group_id,N,Y\nA,g1,10,1\nB,g2,10,1\n")
    with pytest.raises(DataError, match="incomplete"):
        load_population(p)
    p.write_text("area_id,group_id,N,Y\nA,g1,10,1\nA,g1,10,1\n")
    with pytest.raises(DataError, match="duplicate"):
        load_population(p)
    p.write_text("area,group,N,Y\n")
    with pytest.raises(DataError, match="header"):
        load_population(p)
    p.write_text("area_id,group_id,N,Y\nA,g1,ten,1\n")
    with pytest.raises(DataError, match="row 2"):
        load_population(p)


def test_graph_dedups_and_symmetrizes():
    g = AdjacencyGraph(("a", "b", "c"), np.array([[0, 1], [1, 0], [1, 1], [2, 1]]))
    assert len(g.edges) == 2
    W = g.adjacency_matrix().toarray()
    np.testing.assert_array_equal(W, W.T)
    assert np.all(np.diag(W) == 0)
    np.testing.assert_array_equal(g.neighbor_counts, [1, 2, 1])
    np.testing.assert_array_equal(g.neighbors(1), [0, 2])


def test_graph_components_and_isolated():
    g = AdjacencyGraph(("a", "b", "c", "d"), np.array([[0, 1]]))
    n, labels = g.components()
    assert n == 3
    assert labels[0] == labels[1]
    np.testing.assert_array_equal(g.isolated, [False, False, True, True])


def test_adjacency_round_trip_and_unknown_area(tmp_path):
    g = lattice_graph(6)
    p = tmp_path / "adj.csv"
    write_adjacency(g, p)
    back = load_adjacency(p, g.area_ids)
    np.testing.assert_array_equal(back.edges, g.edges)
    p.write_text("A0001,ZZZ\n")
    with pytest.raises(DataError, match="unknown area_id"):
        load_adjacency(p, g.area_ids)


def test_load_adjacency_warns_on_isolated(tmp_path, caplog):
    p = tmp_path / "adj.csv"
    p.write_text("area_id_a,area_id_b\na,b\n")
    g = load_adjacency(p, ("a", "b", "c"))
    assert g.isolated.sum() == 1
    assert "isolated" in caplog.text


def test_covariates_round_trip_and_reorder(tmp_path):
    cov = CovariateMatrix(np.array([[1.0, 2.0], [3.0, 5.0], [0.5, -1.0]]), ("x", "z"))
    p = tmp_path / "cov.csv"
    write_covariates(cov, ("a", "b", "c"), p)
    back = load_covariates(p, ("c", "a", "b"))
    np.testing.assert_array_equal(back.X, cov.X[[2, 0, 1]])
    with pytest.raises(DataError, match="no covariates for area"):
        load_covariates(p, ("a", "q"))


def test_scale_covariates():
    X = np.array([[1.0, 10.0], [2.0, 20.0], [4.0, 15.0]])
    Z = scale_covariates(X).X
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0, ddof=1), 1)
    with pytest.raises(DataError, match="constant"):
        scale_covariates(np.array([[1.0], [1.0], [1.0]]))


def test_lattice_graph_rook_neighbours():
    g = lattice_graph(9)  # 3x3
    np.testing.assert_array_equal(g.neighbor_counts, [2, 3, 2, 3, 4, 3, 2, 3, 2])
    assert g.components()[0] == 1


def test_synth_population_reproducible():
    a = synth_population(10, 3, seed=4)
    b = synth_population(10, 3, seed=4)
    np.testing.assert_array_equal(a[0].Y, b[0].Y)
    np.testing.assert_array_equal(a[1].X, b[1].X)
    c = synth_population(10, 3, seed=5)
    assert not np.array_equal(a[0].Y, c[0].Y)
    assert a[0].group_labels == ("G1", "G2", "G3")
    assert a[1].scaled


@settings(max_examples=30, deadline=None)
@given(D=st.integers(1, 40))
def test_lattice_is_connected(D):
    g = lattice_graph(D)
    assert g.components()[0] == 1
    assert len(g.edges) == len(np.unique(g.edges, axis=0))


@settings(max_examples=25, deadline=None)
@given(
    N=st.lists(st.integers(1, 500), min_size=1, max_size=12),
    frac=st.floats(0, 1),
)
def test_population_csv_round_trip_property(tmp_path_factory, N, frac):
    N = np.array(N)[None, :]
    Y = np.floor(frac * N).astype(int)
    ids = tuple(f"a{i}" for i in range(N.shape[1]))
    pop = Population(N, Y, ids, ("g",))
    p = tmp_path_factory.mktemp("rt") / "p.csv"
    write_population(pop, p)
    back = load_population(p)
    np.testing.assert_array_equal(back.N, pop.N)
    np.testing.assert_array_equal(back.Y, pop.Y)
