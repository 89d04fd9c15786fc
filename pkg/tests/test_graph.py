import pytest

from changewatch.graph import Graph


def test_full_and_empty():
    full, empty = Graph.full(4), Graph.empty(4)
    assert full.n_edges == full.max_edges == 6 and full.is_full
    assert empty.n_edges == 0 and not empty.is_full


def test_toggle_is_an_involution():
    g = Graph.from_edges(4, [(0, 1), (2, 3)])
    added = g.toggle(3, 1)
    assert added.has_edge(1, 3) and added.has_edge(3, 1) and added.n_edges == 3
    assert added.toggle(1, 3) == g


def test_neighbors_and_adjacency_are_symmetric():
    g = Graph.from_edges(3, [(0, 2)])
    assert g.neighbors(0).tolist() == [2]
    assert (g.adjacency == g.adjacency.T).all()


def test_rejects_self_loops_and_out_of_range():
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(1, 1)])
    with pytest.raises(ValueError):
        Graph.from_edges(3, [(0, 3)])


def test_decomposability():
    chain = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    cycle = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    assert chain.is_decomposable()
    assert not cycle.is_decomposable()
    assert cycle.toggle(0, 2).is_decomposable()


def test_text_form():
    g = Graph.from_edges(5, [(3, 1), (0, 4)])
    assert g.to_text() == "5\n0 4\n1 3\n"
    assert Graph.from_text(g.to_text()) == g
    assert Graph.from_text("3\n") == Graph.empty(3)


def test_graphs_are_hashable_by_value():
    assert len({Graph.from_edges(3, [(0, 1)]), Graph.from_edges(3, [(1, 0)])}) == 1
