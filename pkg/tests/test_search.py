import itertools

import networkx as nx
import numpy as np
import pytest

from src.core.errors import SizeLimitError
from src.tracelab import search
from src.tracelab.graph import Graph, complete_graph, sample_gnp
from src.tracelab.pattern import parse_pattern
from src.tracelab.search import (
    contains,
    count_copies,
    count_embeddings,
    find_disjoint_copies,
    find_disjoint_copies_segmented,
    iter_embeddings,
)
from src.tracelab.selftest import random_connected_pattern
from src.tracelab.walk import WalkRecord, make_rng, run_walk, trace

TRIANGLE = parse_pattern("triangle")
EDGE = parse_pattern("edge")
PATH2 = parse_pattern("path-2")


def _is_embedding(host, p, image):
    return len(set(image)) == p.k and all(host.has_edge(image[u], image[v]) for u, v in p.edges)


def test_contains_examples():
    assert contains(complete_graph(3), TRIANGLE) is not None
    tree = Graph.from_edges(5, [(0, 1), (0, 2), (1, 3), (1, 4)])
    assert contains(tree, TRIANGLE) is None
    assert contains(Graph.from_edges(4, [(0, 1), (2, 3)]), TRIANGLE) is None


def test_found_embedding_is_valid(rng):
    host = sample_gnp(40, 0.3, rng)
    for spec in ("triangle", "star-4", "cycle-4", "path-5"):
        p = parse_pattern(spec)
        emb = contains(host, p)
        assert emb is not None
        assert _is_embedding(host, p, emb.image)
        assert sorted(emb.map) == list(range(p.k))


def test_count_embeddings_examples():
    assert count_embeddings(complete_graph(4), TRIANGLE) == 24
    assert count_copies(complete_graph(4), TRIANGLE) == 4
    host = Graph.from_edges(6, [(0, 1), (1, 2), (2, 5), (3, 4)])
    assert count_embeddings(host, EDGE) == 2 * host.edge_count
    star = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])
    assert count_embeddings(star, PATH2) == 6
    assert count_copies(star, PATH2) == 3


def test_count_embeddings_matches_networkx_monomorphisms(rng):
    host = sample_gnp(12, 0.4, rng)
    reference = nx.Graph()
    reference.add_nodes_from(range(host.n))
    reference.add_edges_from(host.edges().tolist())
    for spec in ("triangle", "path-3", "star-3", "cycle-4"):
        p = parse_pattern(spec)
        matcher = nx.algorithms.isomorphism.GraphMatcher(reference, nx.Graph(list(p.edges)))
        expected = sum(1 for _ in matcher.subgraph_monomorphisms_iter())
        assert count_embeddings(host, p) == expected


def test_search_matches_brute_force_on_small_hosts(rng):
    for _ in range(500):
        p = random_connected_pattern(rng, max_vertices=5, max_edges=6)
        host = sample_gnp(int(rng.integers(p.k, 8)), float(rng.uniform(0.3, 0.9)), rng)
        expected = sum(1 for image in itertools.permutations(range(host.n), p.k) if _is_embedding(host, p, image))
        assert count_embeddings(host, p) == expected
        emb = contains(host, p)
        assert (emb is not None) == (expected > 0)
        if emb is not None:
            assert _is_embedding(host, p, emb.image)


def test_count_embeddings_size_limit(monkeypatch):
    monkeypatch.setattr(search, "MAX_COUNT_HOST_EDGES", 5)
    with pytest.raises(SizeLimitError):
        count_embeddings(complete_graph(5), EDGE)


def test_iter_embeddings_respects_forbidden_vertices():
    host = complete_graph(4)
    images = list(iter_embeddings(host, EDGE, forbidden={0, 1}))
    assert {e.image for e in images} == {(2, 3), (3, 2)}


def test_find_disjoint_copies_examples():
    two_edges = [EDGE, EDGE]
    assert find_disjoint_copies(complete_graph(3), two_edges) is None
    found = find_disjoint_copies(Graph.from_edges(4, [(0, 1), (2, 3)]), two_edges)
    assert found is not None
    assert set(found[0].image).isdisjoint(found[1].image)


def test_find_disjoint_copies_needs_backtracking():
    # 先找到的 (0,1) 會擋住其餘的邊
    host = Graph.from_edges(4, [(0, 1), (0, 2), (1, 3)])
    found = find_disjoint_copies(host, [EDGE, EDGE])
    assert found is not None
    assert {frozenset(e.image) for e in found} == {frozenset({0, 2}), frozenset({1, 3})}


def _brute_force_disjoint(host, components):
    n = host.n
    for images in itertools.product(*(itertools.permutations(range(n), c.k) for c in components)):
        used = [v for image in images for v in image]
        if len(used) != len(set(used)):
            continue
        if all(_is_embedding(host, c, image) for c, image in zip(components, images)):
            return True
    return False


def test_find_disjoint_copies_matches_brute_force_on_traces():
    forest = [EDGE, PATH2]
    for seed in range(15):
        w = run_walk(complete_graph(5), 4 + seed % 5, make_rng(seed))
        host = trace(w)
        assert (find_disjoint_copies(host, forest) is not None) == _brute_force_disjoint(host, forest)


def test_segmented_search_uses_disjoint_windows():
    host = Graph.from_edges(6, [(0, 1), (2, 3), (4, 5), (1, 2)])
    steps = [0, 1, 0, 1, 2, 3, 2, 3]
    w = WalkRecord(host, np.array(steps))
    found = find_disjoint_copies_segmented(w, [EDGE, EDGE])
    assert found is not None
    assert set(found[0].image) == {0, 1}
    assert set(found[1].image) == {2, 3}
    assert find_disjoint_copies_segmented(WalkRecord(host, np.array([0, 1])), [EDGE, EDGE]) is None
