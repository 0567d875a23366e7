import itertools
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import all_messages, gf2_rank, monomial_generator
from hiko.codes import (
    NodeKind,
    build_plotkin_tree,
    code_params,
    generator_matrix,
    message_layout,
    plotkin,
    rm_encode,
)

small_codes = st.integers(0, 7).flatmap(lambda m: st.tuples(st.just(m), st.integers(0, m)))


def monomial_count(m: int, r: int) -> int:
    return sum(1 for d in range(r + 1) for _ in itertools.combinations(range(m), d))


@pytest.mark.parametrize("m,r,k", [(8, 3, 93), (8, 4, 163), (9, 3, 130), (5, 3, 26), (4, 2, 11), (0, 0, 1)])
def test_code_params_known_dimensions(m, r, k):
    p = code_params(m, r)
    assert (p.n, p.k) == (2**m, k)
    assert p.rate == k / 2**m


@given(small_codes)
def test_dimension_matches_monomial_count(mr):
    m, r = mr
    assert code_params(m, r).k == monomial_count(m, r)


@pytest.mark.parametrize("m,r", [(-1, 0), (3, 4), (21, 1), (2, -1)])
def test_code_params_rejects_out_of_domain(m, r):
    with pytest.raises(ValueError):
        code_params(m, r)


def test_code_params_rejects_non_integers():
    with pytest.raises(TypeError):
        code_params(2.5, 1)
    with pytest.raises(TypeError):
        code_params(True, 0)


def test_tree_shape_of_rm_3_1():
    tree = build_plotkin_tree(3, 1)
    assert [(n.path, n.params.m, n.params.r, n.kind) for n in tree.walk()] == [
        ("", 3, 1, NodeKind.BRANCH),
        ("L", 2, 1, NodeKind.BRANCH),
        ("LL", 1, 1, NodeKind.FULL_RATE),
        ("LR", 1, 0, NodeKind.REPETITION),
        ("R", 2, 0, NodeKind.REPETITION),
    ]


@given(small_codes)
def test_tree_invariants(mr):
    m, r = mr
    tree = build_plotkin_tree(m, r)
    assert sum(leaf.k for leaf in tree.leaves()) == tree.k
    for node in tree.branches():
        assert node.left.params == code_params(node.params.m - 1, node.params.r)
        assert node.right.params == code_params(node.params.m - 1, node.params.r - 1)
        assert node.left.k + node.right.k == node.k
    for leaf in tree.leaves():
        assert leaf.params.r in (0, leaf.params.m)


def test_find_and_invalid_paths():
    tree = build_plotkin_tree(5, 3)
    assert tree.find("L").params == code_params(4, 3)
    assert tree.find("R").params == code_params(4, 2)
    with pytest.raises(KeyError):
        tree.find("X")
    with pytest.raises(KeyError):
        build_plotkin_tree(2, 0).find("L")


def test_message_layout_is_contiguous():
    layout = message_layout(build_plotkin_tree(4, 2))
    assert [(e.leaf_path, e.offset, e.length) for e in layout] == [
        ("LL", 0, 4),
        ("LRL", 4, 2),
        ("LRR", 6, 1),
        ("RLL", 7, 2),
        ("RLR", 9, 1),
        ("RR", 10, 1),
    ]
    offsets = [e.offset for e in layout]
    lengths = [e.length for e in layout]
    assert offsets == list(np.cumsum([0] + lengths[:-1]))
    assert sum(lengths) == 11


def test_plotkin_small():
    assert plotkin(np.array([1, 0]), np.array([1, 1])).tolist() == [1, 0, 0, 1]
    with pytest.raises(ValueError):
        plotkin(np.zeros(2, np.uint8), np.zeros(3, np.uint8))


def test_rm_encode_examples():
    assert rm_encode(build_plotkin_tree(1, 0), [1]).tolist() == [1, 1]
    assert rm_encode(build_plotkin_tree(2, 2), [1, 0, 1, 1]).tolist() == [1, 0, 1, 1]
    with pytest.raises(ValueError):
        rm_encode(build_plotkin_tree(3, 1), np.zeros(3, np.uint8))


@pytest.mark.parametrize("m,r", [(2, 1), (3, 1), (3, 2), (4, 1), (4, 2), (5, 2), (6, 3)])
def test_codebook_equals_monomial_construction(m, r):
    # Same linear code: the union of both bases has rank k.
    g = generator_matrix(m, r)
    ref = monomial_generator(m, r)
    k = code_params(m, r).k
    assert gf2_rank(g) == k
    assert gf2_rank(np.vstack([g, ref])) == k


@pytest.mark.parametrize("m,r", [(3, 1), (4, 2), (4, 1), (5, 2)])
def test_minimum_distance(m, r):
    tree = build_plotkin_tree(m, r)
    words = rm_encode(tree, all_messages(tree.k))
    weights = words.sum(axis=1)
    assert weights[1:].min() == 2 ** (m - r)


@settings(max_examples=50)
@given(small_codes, st.integers(0, 2**32 - 1))
def test_encoding_is_linear(mr, seed):
    m, r = mr
    tree = build_plotkin_tree(m, r)
    rng = np.random.default_rng(seed)
    a, b = rng.integers(0, 2, (2, tree.k), dtype=np.uint8)
    assert np.array_equal(rm_encode(tree, a ^ b), rm_encode(tree, a) ^ rm_encode(tree, b))


def test_batched_encoding_matches_rowwise():
    tree = build_plotkin_tree(5, 2)
    msgs = np.random.default_rng(0).integers(0, 2, (3, 4, tree.k), dtype=np.uint8)
    out = rm_encode(tree, msgs)
    assert out.shape == (3, 4, 32) and out.dtype == np.uint8
    assert np.array_equal(out[1, 2], rm_encode(tree, msgs[1, 2]))


def test_generator_rows_of_rm_3_1():
    # In the Plotkin basis no row is the all-ones word; every row has weight 4.
    g = generator_matrix(3, 1)
    assert g.tolist() == [
        [1, 0, 1, 0, 1, 0, 1, 0],
        [0, 1, 0, 1, 0, 1, 0, 1],
        [0, 0, 1, 1, 0, 0, 1, 1],
        [0, 0, 0, 0, 1, 1, 1, 1],
    ]
    assert g.shape[0] == comb(3, 0) + comb(3, 1)
    with pytest.raises(ValueError):
        generator_matrix(13, 1)
