import itertools
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest

from src.core.errors import InvalidArgumentError, PatternParseError, SizeLimitError
from src.tracelab.pattern import (
    Pattern,
    automorphism_count,
    is_trail_cover,
    key_lemma_dense_limit,
    key_lemma_order,
    max_density,
    min_trail_cover_bruteforce,
    non_isomorphic_trees,
    parse_pattern,
    predicted_threshold,
    static_threshold,
    trail_decomposition,
    trail_number,
    tree_canonical_form,
    tree_threshold_by_rho,
)
from src.tracelab.selftest import random_connected_pattern


def test_parse_builtin_and_text_forms():
    triangle = parse_pattern("0 1\n1 2\n0 2")
    assert (triangle.k, triangle.ell) == (3, 3)
    assert parse_pattern("triangle") == triangle
    star = parse_pattern("star-3")
    assert (star.k, star.ell) == (4, 3)
    assert parse_pattern("0-1, 0-2; 0-3") == star


def test_parse_json_forms():
    p = parse_pattern('{"k": 5, "edges": [[0, 1], [1, 2]]}')
    assert p.k == 5
    assert p.isolated_vertices == (3, 4)
    assert parse_pattern({"edges": [[0, 1]]}) == parse_pattern("edge")


@pytest.mark.parametrize(
    "spec, position",
    [
        ("0 0", 1),
        ("0 1\n1 0", 2),
        ("0 1\n1 x", 2),
        ('{"k": 2, "edges": [[0, 1], [1, 2]]}', 2),
        ('{"edges": [[0]]}', 1),
    ],
)
def test_parse_errors_carry_position(spec, position):
    with pytest.raises(PatternParseError) as info:
        parse_pattern(spec)
    assert info.value.position == position
    assert f"position {position}" in str(info.value)


def test_parse_size_limits():
    with pytest.raises(PatternParseError):
        parse_pattern("\n".join(f"{i} {i + 1}" for i in range(13)))
    with pytest.raises(SizeLimitError):
        parse_pattern("K-13")


def test_max_density_examples():
    assert max_density(parse_pattern("triangle")) == 1
    assert max_density(parse_pattern("K-4")) == Fraction(3, 2)
    assert max_density(parse_pattern("0 1\n1 2\n0 2\n2 3")) == 1
    assert max_density(parse_pattern("path-4")) == Fraction(4, 5)
    with pytest.raises(InvalidArgumentError):
        max_density(Pattern(2, []))


def test_max_density_matches_subset_enumeration(rng):
    for _ in range(50):
        p = random_connected_pattern(rng, max_vertices=7, max_edges=10)
        h = nx.Graph(list(p.edges))
        best = max(
            Fraction(h.subgraph(nodes).number_of_edges(), len(nodes))
            for size in range(1, p.k + 1)
            for nodes in itertools.combinations(range(p.k), size)
        )
        assert p.m0 == best


@pytest.mark.parametrize(
    "spec, parts",
    [("path-5", 1), ("star-3", 2), ("0 1\n2 3", 2), ("triangle", 1), ("K-4", 2), ("star-4", 2)],
)
def test_trail_decomposition_examples(spec, parts):
    p = parse_pattern(spec)
    decomposition = trail_decomposition(p)
    assert decomposition.part_count == parts == p.rho
    assert is_trail_cover(p, decomposition.trails)


def test_min_trail_cover_examples():
    assert min_trail_cover_bruteforce(parse_pattern("triangle")) == 1
    assert min_trail_cover_bruteforce(parse_pattern("star-3")) == 2
    with pytest.raises(SizeLimitError):
        min_trail_cover_bruteforce(parse_pattern("K-5"))


def test_trail_number_on_all_small_connected_graphs():
    checked = 0
    for k in range(2, 7):
        for atlas_graph in nx.graph_atlas_g():
            if atlas_graph.number_of_nodes() != k or atlas_graph.number_of_edges() > 6:
                continue
            if atlas_graph.number_of_edges() == 0 or not nx.is_connected(atlas_graph):
                continue
            p = Pattern(k, atlas_graph.edges())
            odd = sum(1 for _, d in atlas_graph.degree() if d % 2)
            assert min_trail_cover_bruteforce(p) == max(odd // 2, 1) == trail_decomposition(p).part_count
            checked += 1
    assert checked > 30


def test_trail_number_counterexamples():
    s3 = [(0, 1), (0, 2), (0, 3)]
    assert trail_number(s3) == 2
    assert trail_number(s3 + [(1, 2)]) == 1
    p3 = [(0, 1), (1, 2), (2, 3)]
    assert trail_number(p3) == 1
    assert trail_number([(0, 1), (2, 3)]) == 2


def test_euler_decomposition_on_networkx_eulerian_graphs(rng):
    for _ in range(30):
        g = nx.gnp_random_graph(8, 0.6, seed=int(rng.integers(1 << 31)))
        if g.number_of_edges() == 0 or not nx.is_connected(g) or not nx.is_eulerian(g):
            continue
        p = Pattern(8, g.edges())
        assert trail_decomposition(p).part_count == 1


@pytest.mark.parametrize("spec, count", [("triangle", 6), ("path-2", 2), ("star-3", 6), ("K-4", 24), ("cycle-5", 10)])
def test_automorphism_counts(spec, count):
    assert automorphism_count(parse_pattern(spec)) == count


def test_automorphisms_match_networkx(rng):
    for _ in range(30):
        p = random_connected_pattern(rng, max_vertices=6, max_edges=8)
        h = nx.Graph(list(p.edges))
        matcher = nx.algorithms.isomorphism.GraphMatcher(h, h)
        assert p.aut_count == sum(1 for _ in matcher.isomorphisms_iter())


def test_predicted_thresholds():
    triangle = predicted_threshold(parse_pattern("triangle"), "gnp")
    assert triangle.exponent == 1 and triangle.formula_name == "cyclic_gnp"
    star = predicted_threshold(parse_pattern("star-4"), "complete")
    assert star.exponent == Fraction(1, 2) and star.formula_name == "tree_complete"
    path = predicted_threshold(parse_pattern("path-3"), "complete")
    assert path.exponent == 0 and path.formula_name == "path_constant"
    forest_gnp = predicted_threshold(parse_pattern("star-4"), "gnp")
    assert not forest_gnp.applicable and forest_gnp.exponent is None
    assert "open problem" in forest_gnp.reason
    k4 = predicted_threshold(parse_pattern("K-4"), "complete")
    assert k4.exponent == Fraction(4, 3)


def test_forest_threshold_uses_largest_component_odd_count():
    forest = parse_pattern("0 1\n0 2\n0 3\n0 4\n5 6")
    assert forest.theta == 4
    assert forest.rho == 3
    prediction = predicted_threshold(forest, "complete")
    assert prediction.formula_name == "forest_complete"
    assert prediction.exponent == Fraction(1, 2)


def test_isolated_vertices_produce_warning():
    p = parse_pattern('{"k": 4, "edges": [[0, 1], [1, 2], [0, 2]]}')
    assert predicted_threshold(p, "gnp").warnings


def test_static_threshold_equals_trace_for_cyclic_but_not_forests():
    triangle = parse_pattern("triangle")
    assert static_threshold(triangle).exponent == predicted_threshold(triangle, "gnp").exponent
    star = parse_pattern("star-4")
    assert static_threshold(star).exponent == Fraction(3, 4)
    assert predicted_threshold(star, "complete").exponent < static_threshold(star).exponent


@pytest.mark.parametrize("spec", ["star-3", "star-4", "path-6", "0 1\n1 2\n1 3\n3 4\n3 5"])
def test_tree_threshold_rho_form(spec):
    p = parse_pattern(spec)
    assert tree_threshold_by_rho(p) == 1 - Fraction(2, p.theta)


def test_key_lemma_orders():
    assert key_lemma_order(100, 1.0, 100, 1, 1) == pytest.approx(0.01)
    n, t = 1000, 10_000_000
    # t ≫ n 時由最高次項主導
    ratio = key_lemma_order(n, 0.5, t, 3, 1) / key_lemma_dense_limit(n, 0.5, t, 3)
    assert ratio == pytest.approx(2 ** -3 * (1 + n / t + (n / t) ** 2), rel=1e-9)


def test_random_patterns_obey_invariants(rng):
    for _ in range(100):
        p = random_connected_pattern(rng)
        assert p.rho == max(p.theta // 2, 1)
        assert p.m0 >= Fraction(p.ell, p.k)
        assert np.isclose(float(p.m0), float(max_density(p)))


@pytest.mark.parametrize("k, count", [(1, 1), (2, 1), (3, 1), (4, 2), (5, 3), (6, 6), (7, 11)])
def test_non_isomorphic_tree_counts(k, count):
    trees = non_isomorphic_trees(k)
    assert len(trees) == count
    for tree in trees:
        assert len(tree) == k - 1
        if k > 1:
            assert nx.is_tree(nx.Graph(tree))


@pytest.mark.parametrize("k", [4, 5, 6, 7])
def test_non_isomorphic_trees_match_networkx(k):
    ours = {tree_canonical_form(tree) for tree in non_isomorphic_trees(k)}
    reference = {tree_canonical_form(list(t.edges())) for t in nx.nonisomorphic_trees(k)}
    assert ours == reference


def test_tree_canonical_form_is_label_invariant(rng):
    for _ in range(50):
        k = int(rng.integers(2, 9))
        tree = [(int(rng.integers(0, v)), v) for v in range(1, k)]
        perm = rng.permutation(k)
        relabeled = [(int(perm[u]), int(perm[v])) for u, v in tree]
        assert tree_canonical_form(relabeled) == tree_canonical_form(tree)
    # 路徑與星形同為 4 個頂點但不同構
    assert tree_canonical_form([(0, 1), (1, 2), (2, 3)]) != tree_canonical_form([(0, 1), (0, 2), (0, 3)])
