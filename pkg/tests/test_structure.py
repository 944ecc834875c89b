import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from structiso import simgen
from structiso.datamodel import DataMatrix
from structiso.errors import ConstantColumn, DimensionMismatch, InvalidStructure, InvalidTree, ParseError
from structiso.structure import (BlockPartition, Clustered, GroupLasso, Lasso, PartialSupport,
                                 SparseGroupLasso, SparsityTree, Structure, SupportSpec, Tree,
                                 TreeNode, build_tree_from_correlation, load_structure, make_spec,
                                 parse_structure, penalty_value, split_penalty, tree_weights,
                                 validate, weights_from_s)

PART = BlockPartition(((0, 1, 2), (3, 4), (5,)), 6)
CLUSTERS = BlockPartition(((0, 1), (3, 4, 5)), 6)


def figure_tree():
    """Four leaves under two internal nodes under the root (seven nodes)."""
    return SparsityTree.from_nested(
        {"children": [{"children": [{"variable": 0}, {"variable": 1}]},
                      {"children": [{"variable": 2}, {"variable": 3}]}]})


def deep_tree():
    return SparsityTree.from_nested(
        {"children": [{"children": [{"variable": 0}, {"children": [{"variable": 1},
                                                                   {"variable": 2}]}]},
                      {"children": [{"variable": 3}, {"variable": 4}]}, {"variable": 5}]})


def all_specs(lam=0.7):
    return [
        Lasso(lam),
        PartialSupport(lam, SupportSpec((2, 4), 6)),
        GroupLasso(lam, PART),
        SparseGroupLasso(lam, 0.3, PART),
        Clustered(lam, 0.5 * lam, CLUSTERS),
        Tree(lam, deep_tree()),
    ]


SPECS = all_specs()
vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=6, max_size=6).map(np.array)


class TestTreeWeights:
    def test_figure_heights(self):
        t = figure_tree()
        h = {n.group: n.height for n in t.nodes}
        assert h[(0,)] == h[(1,)] == h[(2,)] == h[(3,)] == 0.0
        assert h[(0, 1)] == h[(2, 3)] == 0.5
        assert h[(0, 1, 2, 3)] == 1.0

    def test_figure_weights(self):
        t = figure_tree()
        w = tree_weights(t)
        omega = {n.group: o for n, o in zip(t.nodes, w.omega)}
        # hand evaluation: s = height, g = 1 - height, products over strict ancestors
        assert omega[(0,)] == 0.5 * 1.0
        assert omega[(0, 1)] == 0.5 * 1.0
        assert omega[(0, 1, 2, 3)] == 0.0
        assert np.allclose(w.s + w.g, 1.0)

    def test_single_node(self):
        t = SparsityTree((TreeNode((0,), (), 1.0),), 0)
        assert tree_weights(t).omega[0] == 0.0

    def test_invalid_tree(self):
        t = SparsityTree((TreeNode((0,), (), 0.0), TreeNode((0, 1), (0,), 1.0)), 1)
        with pytest.raises(InvalidTree):
            tree_weights(t)

    def test_paper_tree_shape(self):
        t = simgen.paper_tree()
        assert len(t.leaves) == 15 and len(t) == 20
        blocks = sorted(t.nodes[i].group for i in t.internal if i != t.root)
        assert blocks == sorted(simgen.table1_partition().blocks)

    @pytest.mark.parametrize("nodes, root, fragment", [
        ((TreeNode((0,), (), 0.0), TreeNode((1,), (), 0.0), TreeNode((0, 1), (0, 1), 0.5)), 2,
         "root height"),
        ((TreeNode((0,), (), 0.0), TreeNode((1,), (), 0.0), TreeNode((0,), (0, 1), 1.0)), 2,
         "union"),
        ((TreeNode((0,), (), 0.0), TreeNode((0,), (), 0.0), TreeNode((0,), (0, 1), 1.0)), 2,
         "exactly once"),
        ((TreeNode((0,), (), 0.0), TreeNode((1,), (), 0.0), TreeNode((0, 1), (0, 1, 1), 1.0)), 2,
         "parents"),
        ((TreeNode((0,), (), 0.3), TreeNode((1,), (), 0.0), TreeNode((0, 1), (0, 1), 1.0)), 2,
         "leaf 0"),
    ])
    def test_problems(self, nodes, root, fragment):
        problems = SparsityTree(nodes, root).problems(2)
        assert any(fragment in p for p in problems), problems


class TestPenaltyValue:
    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    def test_zero(self, spec):
        assert penalty_value(spec, np.zeros(6)) == 0.0

    def test_group_example(self):
        spec = GroupLasso(1.0, BlockPartition(((0, 1, 2, 3), (4, 5)), 6))
        assert penalty_value(spec, [1, 1, 1, 1, 0, 0]) == pytest.approx(4.0)

    def test_dimension(self):
        with pytest.raises(DimensionMismatch):
            penalty_value(GroupLasso(1.0, PART), np.zeros(3))

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    @given(f=vectors, c=st.floats(-5, 5, allow_nan=False))
    def test_homogeneous(self, spec, f, c):
        assert penalty_value(spec, c * f) == pytest.approx(abs(c) * penalty_value(spec, f),
                                                           rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    @given(f=vectors, g=vectors)
    def test_convex(self, spec, f, g):
        mid = penalty_value(spec, (f + g) / 2)
        assert mid <= (penalty_value(spec, f) + penalty_value(spec, g)) / 2 + 1e-12

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    @given(f=vectors)
    def test_split_matches(self, spec, f):
        split = split_penalty(spec, 6)
        f = f.copy()
        f[list(split.fixed_zero)] = 0.0
        assert split.value(f) == pytest.approx(penalty_value(spec, f), rel=1e-12, abs=1e-12)

    @given(f=vectors)
    def test_tree_reduces_to_lasso(self, f):
        t = deep_tree()
        w = weights_from_s(t, np.ones(len(t)))
        assert penalty_value(Tree(0.9, t, w), f) == pytest.approx(0.9 * np.abs(f).sum(),
                                                                  rel=1e-12, abs=1e-12)

    @given(f=vectors)
    def test_flat_tree_reduces_to_unit_group(self, f):
        t = SparsityTree.from_partition(PART)
        s = np.zeros(len(t))
        s[t.root] = 1.0
        w = weights_from_s(t, s)
        unit = Clustered(0.9, 0.9, PART)  # unit block weights, every variable in a block
        assert penalty_value(Tree(0.9, t, w), f) == pytest.approx(penalty_value(unit, f),
                                                                  rel=1e-12, abs=1e-12)

    @given(f=vectors, seed=st.integers(0, 2**31))
    def test_permutation_invariance(self, f, seed):
        perm = np.random.default_rng(seed).permutation(6)
        inv = np.argsort(perm)  # variable i moves to position inv[i]
        for spec in SPECS:
            moved = _permute(spec, inv)
            assert penalty_value(moved, f[perm]) == pytest.approx(penalty_value(spec, f),
                                                                  rel=1e-12, abs=1e-12)


def _permute(spec, inv):
    def part(p):
        return BlockPartition(tuple(tuple(int(inv[i]) for i in b) for b in p.blocks), p.m)

    if isinstance(spec, Lasso):
        return spec
    if isinstance(spec, PartialSupport):
        return PartialSupport(spec.lam, SupportSpec([int(inv[i]) for i in spec.support.known_zero], 6))
    if isinstance(spec, SparseGroupLasso):
        return SparseGroupLasso(spec.lam, spec.alpha, part(spec.partition))
    if isinstance(spec, GroupLasso):
        return GroupLasso(spec.lam, part(spec.partition))
    if isinstance(spec, Clustered):
        return Clustered(spec.lam1, spec.lam2, part(spec.partition))
    nodes = tuple(TreeNode(tuple(int(inv[i]) for i in n.group), n.children, n.height)
                  for n in spec.tree.nodes)
    return Tree(spec.lam, SparsityTree(nodes, spec.tree.root))


class TestValidate:
    def test_overlap(self):
        spec = GroupLasso(1.0, BlockPartition(((0, 1), (1, 2)), 3))
        assert any("overlap" in p for p in validate(spec, 3))

    def test_full_support(self):
        spec = PartialSupport(1.0, SupportSpec((0, 1, 2), 3))
        assert any("|T| < m" in p for p in validate(spec, 3))

    def test_table1_ok(self):
        assert validate(GroupLasso(1.0, simgen.table1_partition()), 15) == []

    @pytest.mark.parametrize("spec, m", [
        (Lasso(-1.0), 3),
        (GroupLasso(1.0, BlockPartition(((0, 1),), 3)), 3),
        (SparseGroupLasso(1.0, 1.5, BlockPartition(((0, 1, 2),), 3)), 3),
        (GroupLasso(1.0, BlockPartition(((0, 5),), 3)), 3),
        (Clustered(1.0, float("nan"), BlockPartition(((0, 1),), 3)), 3),
        (Tree(1.0, figure_tree()), 5),
    ])
    def test_problems_found(self, spec, m):
        assert validate(spec, m)

    @pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family)
    def test_valid_specs(self, spec):
        assert validate(spec, 6) == []


class TestCorrelationTree:
    def test_correlated_pair_first(self, rng):
        a = rng.standard_normal(200)
        x = np.column_stack([rng.standard_normal(200), a, 2 * a])
        t = build_tree_from_correlation(DataMatrix(x))
        first = min(t.internal, key=lambda i: t.nodes[i].height)
        assert t.nodes[first].group == (1, 2)

    def test_two_variables(self, rng):
        t = build_tree_from_correlation(DataMatrix(rng.standard_normal((20, 2))))
        assert len(t) == 3 and t.nodes[t.root].height == 1.0

    def test_constant_column(self, rng):
        x = np.column_stack([rng.standard_normal(10), np.ones(10)])
        with pytest.raises(ConstantColumn):
            build_tree_from_correlation(DataMatrix(x))

    def test_simulation_with_partition(self):
        sim = simgen.generate(simgen.SimConfig(seed=1))
        part = simgen.table1_partition()
        t = build_tree_from_correlation(sim.train, part)
        assert len(t.leaves) == 15
        kids = sorted(t.nodes[c].group for c in t.nodes[t.root].children)
        assert kids == sorted(part.blocks)
        assert t.problems(15) == []

    @given(st.integers(0, 2**31), st.integers(2, 7))
    def test_always_valid(self, seed, m):
        x = np.random.default_rng(seed).standard_normal((12, m))
        assert build_tree_from_correlation(DataMatrix(x)).problems(m) == []


class TestDescriptors:
    @pytest.mark.parametrize("structure", [
        Structure("support", support=SupportSpec((1,), 6)),
        Structure("blocks", partition=PART),
        Structure("clusters", partition=CLUSTERS),
        Structure("tree", tree=deep_tree()),
    ], ids=lambda s: s.kind)
    def test_round_trip(self, tmp_path, structure):
        structure.save(tmp_path / "s.json")
        assert load_structure(tmp_path / "s.json", 6) == structure

    @pytest.mark.parametrize("doc, error", [
        ({}, ParseError),
        ({"blocks": [[0, 1]], "support": [0]}, ParseError),
        ({"colour": 1}, ParseError),
        ({"blocks": [[0, "a"]]}, ParseError),
        ({"blocks": [[0, 1], [1, 2, 3, 4, 5]]}, InvalidStructure),
        ({"support": [0, 1, 2, 3, 4, 5]}, InvalidStructure),
        ({"tree": {"children": [{"variable": 0}]}}, InvalidStructure),
        ({"tree": {"variable": 0, "children": [{"variable": 1}]}}, ParseError),
    ])
    def test_rejects(self, doc, error):
        with pytest.raises(error):
            parse_structure(doc, 6)

    def test_bad_json(self, tmp_path):
        (tmp_path / "s.json").write_text("{\n  nope")
        with pytest.raises(ParseError) as exc:
            load_structure(tmp_path / "s.json", 6)
        assert exc.value.row == 2

    def test_explicit_heights(self):
        doc = {"tree": {"height": 1.0, "children": [
            {"height": 0.2, "children": [{"variable": 0}, {"variable": 1}]}, {"variable": 2}]}}
        t = parse_structure(doc, 3).tree
        assert sorted(t.heights) == [0.0, 0.0, 0.0, 0.2, 1.0]

    @pytest.mark.parametrize("family, kind", [("support", "support"), ("group", "blocks"),
                                              ("sparse-group", "blocks"), ("cluster", "clusters"),
                                              ("tree", "tree"), ("tree", "blocks")])
    def test_make_spec(self, family, kind):
        structures = {"support": Structure("support", support=SupportSpec((1,), 6)),
                      "blocks": Structure("blocks", partition=PART),
                      "clusters": Structure("clusters", partition=CLUSTERS),
                      "tree": Structure("tree", tree=deep_tree())}
        spec = make_spec(family, 0.4, structures[kind], 6)
        assert spec.family == family and spec.lam == 0.4

    def test_make_spec_needs_structure(self):
        with pytest.raises(InvalidStructure):
            make_spec("group", 1.0, None, 6)

    def test_clustered_keeps_ratio(self):
        c = Clustered(1.0, 0.25, CLUSTERS).with_lambda(2.0)
        assert (c.lam1, c.lam2) == (2.0, 0.5)
