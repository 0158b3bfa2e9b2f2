import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semicentral.problem import INF
from semicentral.vcover import (BASIC, OPTIMIZED, DimacsError, FormatError, Graph,
                                VertexCoverProblem, bits, branch, brute_force_mvc,
                                brute_force_mvc_combinations, decode, encode,
                                expected_gnp_edges, gen_gnp, max_degree_vertex, mvc_sequential,
                                parse_dimacs, popcount, reduce, to_dimacs)


def nx_mvc(g: Graph) -> int:
    """Independent oracle: n minus the maximum clique of the complement."""
    G = nx.Graph()
    verts = list(bits(g.present))
    G.add_nodes_from(verts)
    G.add_edges_from(g.edges())
    if not verts:
        return 0
    _, w = nx.max_weight_clique(nx.complement(G), weight=None)
    return len(verts) - w


def graph(n, edges):
    return Graph.from_edges(n, edges)


def cycle(n):
    return graph(n, [(i, (i + 1) % n) for i in range(n)])


def complete(n):
    return graph(n, itertools.combinations(range(n), 2))


PETERSEN = graph(10, [(i, (i + 1) % 5) for i in range(5)]
                 + [(5 + i, 5 + (i + 2) % 5) for i in range(5)]
                 + [(i, i + 5) for i in range(5)])


def test_bitset_basics():
    g = graph(4, [(0, 1), (1, 2)])
    assert g.degree(1) == 2 and g.neighbors(1) == 0b101
    assert g.edges() == [(0, 1), (1, 2)]
    assert g.m == 2 and g.order == 4
    assert list(bits(0b1010)) == [1, 3] and popcount(0b1011) == 3


def test_reduce_path():
    g = reduce(graph(3, [(0, 1), (1, 2)]))
    assert not g.has_edges() and g.solution == 0b010


def test_reduce_triangle_with_pendant():
    # a=0, b=1, c=2 triangle; d=3 pendant on a
    g = reduce(graph(4, [(0, 1), (1, 2), (0, 2), (0, 3)]))
    assert not g.has_edges()
    assert popcount(g.solution) == 2 and g.solution & 1
    assert brute_force_mvc(graph(4, [(0, 1), (1, 2), (0, 2), (0, 3)])) == 2


def test_reduce_edgeless_drops_isolated():
    g = reduce(graph(5, []))
    assert g.present == 0 and g.solution == 0


def test_star_collapses_to_center():
    g = reduce(graph(5, [(0, i) for i in range(1, 5)]))
    assert g.solution == 1 and not g.has_edges()
    out = branch(graph(5, [(0, i) for i in range(1, 5)]), INF)
    assert out.solution == 1


def test_branch_children_order_and_prune():
    g = complete(4)
    out = branch(g, INF)
    left, right = out.children
    assert max_degree_vertex(g) == 0
    assert left.solution == 0b0001 and not left.present & 1
    assert right.solution == 0b1110
    g2 = Graph._make(4, g.rows, g.present, 0b0011)
    assert branch(g2, 2).pruned


def test_max_degree_tie_break_is_lowest_index():
    assert max_degree_vertex(cycle(6)) == 0


@pytest.mark.parametrize("g,size", [(complete(3), 2), (PETERSEN, 6), (graph(4, []), 0),
                                    (cycle(5), 3), (complete(4), 3), (cycle(6), 3),
                                    (graph(2, [(0, 1)]), 1)])
def test_known_sizes(g, size):
    # expected sizes agree with the independent oracles before being asserted
    assert nx_mvc(g) == size == brute_force_mvc_combinations(g)
    assert brute_force_mvc(g) == size
    res = mvc_sequential(g)
    assert res.size == size and g.is_cover(res.cover)


def test_petersen_edge_count():
    assert PETERSEN.m == 15


def test_brute_force_guard():
    with pytest.raises(ValueError):
        brute_force_mvc(graph(27, []))


@pytest.mark.parametrize("seed", range(60))
def test_sequential_matches_oracles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 21))
    p = [0.1, 0.3, 0.6][seed % 3]
    g = gen_gnp(n, p, seed)
    want = nx_mvc(g)
    assert brute_force_mvc(g) == want
    res = mvc_sequential(g)
    assert res.size == want and g.is_cover(res.cover)


@pytest.mark.parametrize("seed", range(40))
def test_reduction_is_safe(seed):
    g = gen_gnp(14, 0.25, seed)
    r = reduce(g)
    rest = Graph._make(g.n, g.rows, r.present, 0)
    assert popcount(r.solution) + brute_force_mvc(rest) == brute_force_mvc(g)


def test_optimized_induced_subgraph():
    base = graph(4, [(1, 3), (0, 1)])
    data = encode(Graph._make(4, base.rows, 0b1010, 0), OPTIMIZED)
    g = decode(data, OPTIMIZED, base)
    assert g.edges() == [(1, 3)]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 60), st.floats(0, 1), st.integers(0, 2**32 - 1), st.integers(0, 2**60))
def test_encodings_round_trip(n, p, seed, mask):
    base = gen_gnp(n, p, seed)
    present = mask & ((1 << n) - 1)
    sol = ~present & (mask >> 3) & ((1 << n) - 1)
    g = Graph._make(n, base.rows, present, sol)
    for enc in (BASIC, OPTIMIZED):
        back = decode(encode(g, enc), enc, base)
        assert back.same_as(g)
        assert back.edges() == g.edges()


def test_basic_decode_without_base_gives_same_graph():
    base = gen_gnp(30, 0.2, 1)
    g = branch(base, INF).children[1]
    back = decode(encode(g, BASIC), BASIC, None)
    assert back.same_as(g) and back.edges() == g.edges()


def test_encoding_length_errors():
    base = gen_gnp(10, 0.5, 0)
    with pytest.raises(FormatError):
        decode(b"\x00" * 5, OPTIMIZED, base)
    with pytest.raises(FormatError):
        decode(encode(base, BASIC)[:-1], BASIC, base)
    with pytest.raises(FormatError):
        decode(b"\xff\xff\x00\x00", OPTIMIZED, base)


def test_encoding_sizes_for_n_1000():
    g = gen_gnp(1000, 0.5, 3)
    opt, basic = encode(g, OPTIMIZED), encode(g, BASIC)
    assert len(opt) == 250
    assert len(basic) == 4 + 1002 * 125
    assert len(basic) >= 100 * len(opt)


@pytest.mark.parametrize("seed", range(5))
def test_both_encodings_give_same_node_counts(seed):
    g = gen_gnp(30, 0.15, seed)
    counts = []
    for enc in (BASIC, OPTIMIZED):
        prob = VertexCoverProblem(g, enc)
        counts.append(mvc_sequential(prob.deserialize(prob.serialize(g))).nodes)
    assert counts[0] == counts[1]


def test_parse_dimacs_examples():
    g = parse_dimacs("p edge 3 2\ne 1 2\ne 2 3")
    assert g.n == 3 and g.edges() == [(0, 1), (1, 2)]
    g = parse_dimacs("c hi\np edge 3 3\ne 1 1\ne 1 2\ne 2 1\n")
    assert g.m == 1
    assert parse_dimacs.last_warnings == {"self_loops": 1, "duplicates": 1}


@pytest.mark.parametrize("text,line", [("e 1 2\n", 1), ("p edge 3 1\n\ne 1 4\n", 3),
                                        ("p edge 3 1\ne 1\n", 2)])
def test_parse_dimacs_errors_carry_line(text, line):
    with pytest.raises(DimacsError) as e:
        parse_dimacs(text)
    assert e.value.lineno == line


def test_dimacs_round_trip():
    g = gen_gnp(25, 0.3, 2)
    assert parse_dimacs(to_dimacs(g, "test")).edges() == g.edges()


def test_gnp_extremes_and_reproducibility():
    assert gen_gnp(10, 0.0, 1).m == 0
    assert gen_gnp(10, 1.0, 1).m == 45
    assert gen_gnp(40, 0.3, 9).edges() == gen_gnp(40, 0.3, 9).edges()
    with pytest.raises(ValueError):
        gen_gnp(5, 1.5, 0)


def test_gnp_edge_count_statistics():
    n, p = 600, 4 / 599
    mean, sd = expected_gnp_edges(n, p)
    assert math.isclose(mean, 1200)
    counts = [gen_gnp(n, p, s).m for s in range(100)]
    # the mean of 100 draws has standard error sd/10
    assert abs(np.mean(counts) - mean) <= 3 * sd / 10
    assert all(abs(c - mean) <= 5 * sd for c in counts)
