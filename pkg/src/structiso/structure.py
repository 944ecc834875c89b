"""Penalty families and the variable structures they are built on.

Every family is a sum of weighted l2 norms over index groups plus weighted
absolute values of single coordinates; :func:`split_penalty` exposes that
decomposition so one ADMM engine (and one reference solver) handles them all.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .datamodel import DataMatrix
from .errors import ConstantColumn, DimensionMismatch, InvalidStructure, InvalidTree, ParseError

# ---------------------------------------------------------------------------
# structures


def _index_tuple(idx: Iterable[int]) -> tuple:
    return tuple(int(i) for i in idx)


@dataclass(frozen=True)
class BlockPartition:
    """Disjoint, non-empty index blocks over ``m`` variables.

    Also used for clusters, where the blocks need not cover every variable; the
    uncovered variables form the complement set.
    """

    blocks: tuple
    m: int

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(_index_tuple(b) for b in self.blocks))
        object.__setattr__(self, "m", int(self.m))

    @property
    def covers(self) -> bool:
        covered = set()
        for b in self.blocks:
            covered.update(b)
        return covered == set(range(self.m))

    @property
    def sizes(self) -> tuple:
        return tuple(len(b) for b in self.blocks)

    @property
    def complement(self) -> tuple:
        covered = {i for b in self.blocks for i in b}
        return tuple(i for i in range(self.m) if i not in covered)

    def block_of(self, index: int):
        for l, b in enumerate(self.blocks):
            if index in b:
                return l
        return None

    def problems(self) -> list:
        out = []
        seen = {}
        for l, b in enumerate(self.blocks):
            if not b:
                out.append(f"block {l} is empty")
            if len(set(b)) != len(b):
                out.append(f"block {l} repeats an index")
            for i in b:
                if not 0 <= i < self.m:
                    out.append(f"block {l}: index {i} out of range [0, {self.m})")
                elif i in seen and seen[i] != l:
                    out.append(f"blocks {seen[i]} and {l} overlap at index {i}")
                else:
                    seen[i] = l
        return out


@dataclass(frozen=True)
class SupportSpec:
    """Variables known a priori to carry no fault."""

    known_zero: tuple
    m: int

    def __post_init__(self):
        object.__setattr__(self, "known_zero", _index_tuple(self.known_zero))
        object.__setattr__(self, "m", int(self.m))

    @property
    def free(self) -> tuple:
        zero = set(self.known_zero)
        return tuple(i for i in range(self.m) if i not in zero)

    def problems(self) -> list:
        out = []
        for i in self.known_zero:
            if not 0 <= i < self.m:
                out.append(f"support index {i} out of range [0, {self.m})")
        if len(set(self.known_zero)) != len(self.known_zero):
            out.append("support repeats an index")
        if len(set(self.known_zero)) >= self.m:
            out.append(f"known-zero support must leave at least one free variable (|T| < m = {self.m})")
        return out


@dataclass(frozen=True)
class TreeNode:
    group: tuple
    children: tuple = ()
    height: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class SparsityTree:
    """Rooted tree of nested variable groups.

    Leaves hold single variables; an internal node's group is the union of its
    children's groups. Heights run from 0 at the leaves to 1 at the root.
    """

    nodes: tuple
    root: int

    def __post_init__(self):
        nodes = tuple(
            TreeNode(tuple(sorted(_index_tuple(n.group))), _index_tuple(n.children), float(n.height))
            for n in self.nodes
        )
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "root", int(self.root))

    def __len__(self):
        return len(self.nodes)

    @property
    def leaves(self) -> list:
        return [i for i, n in enumerate(self.nodes) if n.is_leaf]

    @property
    def internal(self) -> list:
        return [i for i, n in enumerate(self.nodes) if not n.is_leaf]

    @property
    def heights(self) -> np.ndarray:
        return np.array([n.height for n in self.nodes])

    def parents(self) -> list:
        par = [None] * len(self.nodes)
        for i, n in enumerate(self.nodes):
            for c in n.children:
                if 0 <= c < len(par):
                    par[c] = i
        return par

    def ancestors(self, v: int) -> list:
        par = self.parents()
        out = []
        while par[v] is not None:
            v = par[v]
            out.append(v)
        return out

    def postorder(self) -> list:
        """Node ids ordered children-before-parent."""
        out = []
        stack = [(self.root, False)]
        while stack:
            v, done = stack.pop()
            if done:
                out.append(v)
                continue
            stack.append((v, True))
            for c in reversed(self.nodes[v].children):
                stack.append((c, False))
        return out

    def with_heights(self, heights) -> "SparsityTree":
        return SparsityTree(
            tuple(replace(n, height=float(h)) for n, h in zip(self.nodes, heights)), self.root
        )

    def problems(self, m: int) -> list:
        out = []
        nodes = self.nodes
        count = len(nodes)
        if count == 0:
            return ["tree has no nodes"]
        if not 0 <= self.root < count:
            return [f"root id {self.root} out of range"]
        parent_count = [0] * count
        for i, n in enumerate(nodes):
            for c in n.children:
                if not 0 <= c < count:
                    out.append(f"node {i}: child id {c} out of range")
                else:
                    parent_count[c] += 1
        if out:
            return out
        if parent_count[self.root]:
            out.append("root has a parent")
        for i in range(count):
            if i != self.root and parent_count[i] != 1:
                out.append(f"node {i} has {parent_count[i]} parents (expected exactly 1)")
        # reachability doubles as the acyclicity check once parent counts are 1
        seen, stack = set(), [self.root]
        while stack:
            v = stack.pop()
            if v in seen:
                out.append("tree contains a cycle")
                break
            seen.add(v)
            stack.extend(nodes[v].children)
        if len(seen) != count:
            out.append(f"{count - len(seen)} node(s) unreachable from the root")
        if out:
            return out

        leaf_vars = []
        for i, n in enumerate(nodes):
            if n.is_leaf:
                if len(n.group) != 1:
                    out.append(f"leaf {i} must hold exactly one variable, has {len(n.group)}")
                leaf_vars.extend(n.group)
            else:
                union = sorted({g for c in n.children for g in nodes[c].group})
                if list(n.group) != union:
                    out.append(f"node {i}: group is not the union of its children's groups")
        for v in leaf_vars:
            if not 0 <= v < m:
                out.append(f"leaf variable {v} out of range [0, {m})")
        if sorted(leaf_vars) != list(range(m)):
            out.append(f"leaves must hold every variable 0..{m - 1} exactly once")

        single = count == 1
        for i, n in enumerate(nodes):
            if not 0.0 <= n.height <= 1.0 or not math.isfinite(n.height):
                out.append(f"node {i}: height {n.height} outside [0, 1]")
            if i == self.root:
                if n.height != 1.0:
                    out.append(f"root height must be 1, got {n.height}")
            elif n.is_leaf and n.height != 0.0:
                out.append(f"leaf {i}: height must be 0, got {n.height}")
            for c in n.children:
                if not n.height > nodes[c].height:
                    out.append(f"node {i}: height {n.height} does not exceed child {c} "
                               f"height {nodes[c].height}")
        if single and nodes[0].group and len(nodes[0].group) != 1:
            out.append("a single-node tree must hold one variable")
        return out

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_partition(cls, partition: BlockPartition, block_height: float = 0.5) -> "SparsityTree":
        """Leaves under one node per block, block nodes under the root.

        Variables outside every block hang directly off the root.
        """
        nodes = [TreeNode((i,), (), 0.0) for i in range(partition.m)]
        root_children = []
        for b in partition.blocks:
            nodes.append(TreeNode(tuple(sorted(b)), tuple(sorted(b)), block_height))
            root_children.append(len(nodes) - 1)
        root_children.extend(partition.complement)
        nodes.append(TreeNode(tuple(range(partition.m)), tuple(root_children), 1.0))
        return cls(tuple(nodes), len(nodes) - 1)

    @classmethod
    def from_nested(cls, obj) -> "SparsityTree":
        """Build from nested dicts: leaves ``{"variable": i}``, internal nodes
        ``{"children": [...], "height": h}`` with ``height`` optional.

        Missing heights follow the longest-path-to-a-leaf edge count,
        normalized so the root sits at 1.
        """
        nodes, explicit = [], []

        def visit(o, path):
            if not isinstance(o, dict):
                raise ParseError(f"tree node at {path} is not an object")
            if "variable" in o:
                if "children" in o and o["children"]:
                    raise ParseError(f"tree node at {path} has both a variable and children")
                try:
                    var = int(o["variable"])
                except (TypeError, ValueError):
                    raise ParseError(f"tree leaf at {path}: variable must be an integer") from None
                nodes.append(TreeNode((var,), (), 0.0))
                explicit.append(o.get("height"))
                return len(nodes) - 1
            kids = o.get("children")
            if not isinstance(kids, list) or not kids:
                raise ParseError(f"tree node at {path} needs a 'variable' or non-empty 'children'")
            ids = [visit(k, f"{path}.children[{j}]") for j, k in enumerate(kids)]
            group = sorted({g for c in ids for g in nodes[c].group})
            nodes.append(TreeNode(tuple(group), tuple(ids), 0.0))
            explicit.append(o.get("height"))
            return len(nodes) - 1

        root = visit(obj, "tree")
        depth = _longest_path_heights(nodes, root)
        top = depth[root] or 1
        heights = []
        for i, h in enumerate(explicit):
            if h is None:
                heights.append(1.0 if i == root else depth[i] / top)
            else:
                try:
                    heights.append(float(h))
                except (TypeError, ValueError):
                    raise ParseError(f"tree node {i}: height must be a number") from None
        return cls(tuple(replace(n, height=h) for n, h in zip(nodes, heights)), root)

    def to_nested(self, include_heights: bool = True) -> dict:
        def emit(v):
            n = self.nodes[v]
            if n.is_leaf:
                return {"variable": n.group[0]}
            d = {"children": [emit(c) for c in n.children]}
            if include_heights:
                d["height"] = n.height
            return d

        return emit(self.root)


def _longest_path_heights(nodes, root) -> list:
    depth = [0] * len(nodes)

    def rec(v):
        kids = nodes[v].children
        depth[v] = 1 + max(rec(c) for c in kids) if kids else 0
        return depth[v]

    rec(root)
    return depth


def longest_path_heights(tree: SparsityTree) -> np.ndarray:
    """Edge count of the longest downward path, normalized so the root is 1."""
    depth = np.array(_longest_path_heights(tree.nodes, tree.root), dtype=float)
    top = depth[tree.root]
    return depth / top if top > 0 else np.ones_like(depth)


@dataclass(frozen=True)
class NodeWeights:
    s: np.ndarray
    g: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        for name in ("s", "g", "omega"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def weights_from_s(tree: SparsityTree, s) -> NodeWeights:
    """Node weights for arbitrary split factors ``s`` (``g = 1 - s``).

    A leaf's weight is the product of ``s`` over its strict ancestors; any other
    node (the root included, even when it is also a leaf) multiplies that
    product by its own ``g``.
    """
    s = np.asarray(s, dtype=float)
    g = 1.0 - s
    par = tree.parents()
    omega = np.empty(len(tree.nodes))
    for v in tree.postorder()[::-1]:
        prod = 1.0
        a = par[v]
        while a is not None:
            prod *= s[a]
            a = par[a]
        if tree.nodes[v].is_leaf and v != tree.root:
            omega[v] = prod
        else:
            omega[v] = g[v] * prod
    return NodeWeights(s, g, omega)


def tree_weights(tree: SparsityTree) -> NodeWeights:
    """Split factors from node heights: ``s = h``, ``g = 1 - h``."""
    problems = tree.problems(len(tree.leaves))
    if problems:
        raise InvalidTree(problems)
    return weights_from_s(tree, tree.heights)


# ---------------------------------------------------------------------------
# penalty families


@dataclass(frozen=True)
class Lasso:
    lam: float
    family = "lasso"

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class PartialSupport:
    lam: float
    support: SupportSpec
    family = "support"

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class GroupLasso:
    lam: float
    partition: BlockPartition
    family = "group"

    @property
    def block_weights(self) -> np.ndarray:
        return np.sqrt(np.array(self.partition.sizes, dtype=float))

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class SparseGroupLasso:
    lam: float
    alpha: float
    partition: BlockPartition
    family = "sparse-group"

    @property
    def block_weights(self) -> np.ndarray:
        return np.sqrt(np.array(self.partition.sizes, dtype=float))

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class Clustered:
    """Unit-weight l2 over clusters plus l1 over the unclustered variables.

    ``lam`` refers to ``lam1``; rescaling keeps the ratio ``lam2 / lam1``.
    """

    lam1: float
    lam2: float
    partition: BlockPartition
    family = "cluster"

    @property
    def lam(self) -> float:
        return self.lam1

    def with_lambda(self, lam):
        ratio = self.lam2 / self.lam1 if self.lam1 > 0 else 1.0
        return replace(self, lam1=float(lam), lam2=float(lam) * ratio)


@dataclass(frozen=True)
class Tree:
    lam: float
    tree: SparsityTree
    weights: NodeWeights = None

    family = "tree"

    def __post_init__(self):
        if self.weights is None:
            object.__setattr__(self, "weights", tree_weights(self.tree))

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


PenaltySpec = Union[Lasso, PartialSupport, GroupLasso, SparseGroupLasso, Clustered, Tree]
FAMILIES = ("lasso", "support", "group", "sparse-group", "cluster", "tree")


def _norm(v):
    return float(np.sqrt(np.dot(v, v)))


def penalty_value(spec: PenaltySpec, f) -> float:
    """Exact value of the family's penalty at ``f``.

    For :class:`PartialSupport` this is the l1 norm over the free variables
    only; the known-zero constraint itself is enforced by the solver.
    """
    f = np.asarray(f, dtype=float)
    m = _spec_m(spec)
    if m is not None and f.shape != (m,):
        raise DimensionMismatch(f"vector of shape {f.shape} for a {m}-variable structure")
    if isinstance(spec, Lasso):
        return spec.lam * float(np.abs(f).sum())
    if isinstance(spec, PartialSupport):
        return spec.lam * float(np.abs(f[list(spec.support.free)]).sum())
    if isinstance(spec, GroupLasso):
        return spec.lam * sum(w * _norm(f[list(b)])
                              for w, b in zip(spec.block_weights, spec.partition.blocks))
    if isinstance(spec, SparseGroupLasso):
        grp = sum(w * _norm(f[list(b)]) for w, b in zip(spec.block_weights, spec.partition.blocks))
        return (1 - spec.alpha) * spec.lam * grp + spec.alpha * spec.lam * float(np.abs(f).sum())
    if isinstance(spec, Clustered):
        grp = sum(_norm(f[list(b)]) for b in spec.partition.blocks)
        rest = float(np.abs(f[list(spec.partition.complement)]).sum())
        return spec.lam1 * grp + spec.lam2 * rest
    if isinstance(spec, Tree):
        return spec.lam * sum(w * _norm(f[list(n.group)])
                              for w, n in zip(spec.weights.omega, spec.tree.nodes))
    raise TypeError(f"unknown penalty spec {type(spec).__name__}")


def _spec_m(spec):
    if isinstance(spec, PartialSupport):
        return spec.support.m
    if isinstance(spec, (GroupLasso, SparseGroupLasso, Clustered)):
        return spec.partition.m
    if isinstance(spec, Tree):
        return len(spec.tree.leaves)
    return None


def validate(spec: PenaltySpec, m: int) -> list:
    """Every violated invariant of ``spec`` against ``m`` variables; empty if ok."""
    out = []
    lams = [("lambda2", spec.lam2)] if isinstance(spec, Clustered) else []
    lams.insert(0, ("lambda", spec.lam))
    for name, v in lams:
        if not (math.isfinite(v) and v >= 0):
            out.append(f"{name} must be finite and non-negative, got {v}")
    if isinstance(spec, PartialSupport):
        if spec.support.m != m:
            out.append(f"support declared for {spec.support.m} variables, model has {m}")
        out.extend(spec.support.problems())
    elif isinstance(spec, (GroupLasso, SparseGroupLasso, Clustered)):
        part = spec.partition
        if part.m != m:
            out.append(f"partition declared for {part.m} variables, model has {m}")
        out.extend(part.problems())
        if not part.blocks:
            out.append("partition has no blocks")
        if isinstance(spec, (GroupLasso, SparseGroupLasso)) and not part.problems() and not part.covers:
            out.append("block partition must cover every variable")
        if isinstance(spec, SparseGroupLasso) and not 0 <= spec.alpha <= 1:
            out.append(f"alpha must lie in [0, 1], got {spec.alpha}")
    elif isinstance(spec, Tree):
        tree_problems = spec.tree.problems(m)
        out.extend(tree_problems)
        w = spec.weights
        if len(w.omega) != len(spec.tree.nodes):
            out.append("node weights do not match the tree's node count")
        elif np.any(w.omega < 0) or not np.all(np.isfinite(w.omega)):
            out.append("node weights must be finite and non-negative")
    elif not isinstance(spec, Lasso):
        out.append(f"unknown penalty spec {type(spec).__name__}")
    return out


def check(spec: PenaltySpec, m: int) -> PenaltySpec:
    problems = validate(spec, m)
    if problems:
        raise InvalidStructure(problems)
    return spec


# ---------------------------------------------------------------------------
# decomposition into weighted groups + elementwise l1


@dataclass(frozen=True)
class SplitPenalty:
    """``sum_v group_weights[v] * ||f[groups[v]]||_2 + sum_g l1_weights[g] * |f_g|``
    over the free coordinates, with ``fixed_zero`` coordinates pinned to 0.

    Only groups with two or more members and positive weight are listed;
    singleton groups are folded into ``l1_weights``.
    """

    m: int
    groups: tuple
    group_weights: np.ndarray
    l1_weights: np.ndarray
    fixed_zero: tuple = ()

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.m, dtype=bool)
        mask[list(self.fixed_zero)] = False
        return np.flatnonzero(mask)

    def value(self, f) -> float:
        f = np.asarray(f, dtype=float)
        total = float(np.dot(self.l1_weights, np.abs(f)))
        for w, gidx in zip(self.group_weights, self.groups):
            total += w * _norm(f[list(gidx)])
        return total


def split_penalty(spec: PenaltySpec, m: int) -> SplitPenalty:
    check(spec, m)
    groups, gw = [], []
    l1 = np.zeros(m)
    fixed = ()

    def add_group(idx, w):
        idx = tuple(sorted(idx))
        if w <= 0:
            return
        if len(idx) == 1:
            l1[idx[0]] += w
        else:
            groups.append(idx)
            gw.append(w)

    if isinstance(spec, Lasso):
        l1[:] = spec.lam
    elif isinstance(spec, PartialSupport):
        fixed = tuple(sorted(set(spec.support.known_zero)))
        l1[list(spec.support.free)] = spec.lam
    elif isinstance(spec, GroupLasso):
        for w, b in zip(spec.block_weights, spec.partition.blocks):
            add_group(b, spec.lam * w)
    elif isinstance(spec, SparseGroupLasso):
        for w, b in zip(spec.block_weights, spec.partition.blocks):
            add_group(b, (1 - spec.alpha) * spec.lam * w)
        l1 += spec.alpha * spec.lam
    elif isinstance(spec, Clustered):
        for b in spec.partition.blocks:
            add_group(b, spec.lam1)
        l1[list(spec.partition.complement)] += spec.lam2
    elif isinstance(spec, Tree):
        for w, node in zip(spec.weights.omega, spec.tree.nodes):
            add_group(node.group, spec.lam * w)
    return SplitPenalty(m, tuple(groups), np.array(gw, dtype=float), l1, fixed)


# ---------------------------------------------------------------------------
# correlation-based tree learning


def _average_linkage(dist: np.ndarray, labels: Sequence[int]):
    """Agglomerative average linkage over ``labels`` (variable ids).

    Returns ``(merges, final_cluster)`` where each merge is
    ``(left_members, right_members, distance)``. Ties are broken towards the
    pair whose smallest variable ids come first.
    """
    clusters = [(int(v),) for v in labels]
    merges = []
    while len(clusters) > 1:
        best = None
        for i in range(len(clusters)):
            for j in range(i + 1, len(clusters)):
                d = float(dist[np.ix_(clusters[i], clusters[j])].mean())
                key = (min(clusters[i]), min(clusters[j]))
                key = key if key[0] < key[1] else key[::-1]
                if best is None or d < best[0] - 1e-12 or (abs(d - best[0]) <= 1e-12 and key < best[1]):
                    best = (d, key, i, j)
        d, _, i, j = best
        a, b = clusters[i], clusters[j]
        if min(b) < min(a):
            a, b = b, a
        merges.append((a, b, d))
        clusters = [c for k, c in enumerate(clusters) if k not in (i, j)] + [tuple(sorted(a + b))]
    return merges, clusters[0]


def correlation_distance(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    sd = x.std(axis=0)
    for j, v in enumerate(sd):
        if not v > 1e-12:
            raise ConstantColumn(j)
    c = np.corrcoef(x, rowvar=False)
    d = 1.0 - np.abs(c)
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 1.0)


def build_tree_from_correlation(train: DataMatrix, partition: BlockPartition = None) -> SparsityTree:
    """Average-linkage tree over ``1 - |corr|``.

    With a partition, each block is clustered on its own and the block
    subtrees (plus any unassigned variables) hang off a shared root. Node
    heights are the normalized merge rank, so they are strictly increasing
    towards the root even when linkage distances tie.
    """
    x = train.values
    if x.shape[0] < 2:
        raise ValueError("need at least two samples to estimate correlations")
    m = x.shape[1]
    dist = correlation_distance(x)
    if m == 1:
        return SparsityTree((TreeNode((0,), (), 1.0),), 0)

    if partition is None:
        groups = [tuple(range(m))]
    else:
        bad = partition.problems()
        if partition.m != m:
            bad.append(f"partition declared for {partition.m} variables, data has {m}")
        if bad:
            raise InvalidStructure(bad)
        groups = [tuple(sorted(b)) for b in partition.blocks] + [(i,) for i in partition.complement]

    nodes = [TreeNode((i,), (), 0.0) for i in range(m)]
    node_of = {(i,): i for i in range(m)}
    ranked = []  # (sort key, node id)
    tops = []
    for bi, labels in enumerate(groups):
        merges, final = _average_linkage(dist, labels)
        level = 0.0
        for step, (a, b, d) in enumerate(merges):
            level = max(level, d)
            members = tuple(sorted(a + b))
            nodes.append(TreeNode(members, (node_of[a], node_of[b]), 0.0))
            node_of[members] = len(nodes) - 1
            ranked.append(((level, bi, step), len(nodes) - 1))
        tops.append(node_of[final])

    if partition is None:
        root = tops[0]
    else:
        nodes.append(TreeNode(tuple(range(m)), tuple(tops), 0.0))
        root = len(nodes) - 1
        ranked.append(((math.inf, len(groups), 0), root))
    ranked.sort()
    heights = np.zeros(len(nodes))
    for r, (_, nid) in enumerate(ranked, start=1):
        heights[nid] = r / len(ranked)
    tree = SparsityTree(tuple(nodes), root).with_heights(heights)
    problems = tree.problems(m)
    if problems:  # pragma: no cover - construction guarantees validity
        raise InvalidTree(problems)
    return tree


# ---------------------------------------------------------------------------
# structure descriptor files

STRUCTURE_KEYS = ("support", "blocks", "clusters", "tree")


@dataclass(frozen=True)
class Structure:
    """A parsed structure descriptor: ``kind`` is one of :data:`STRUCTURE_KEYS`."""

    kind: str
    support: SupportSpec = None
    partition: BlockPartition = None
    tree: SparsityTree = None

    def to_dict(self) -> dict:
        if self.kind == "support":
            return {"support": list(self.support.known_zero)}
        if self.kind in ("blocks", "clusters"):
            return {self.kind: [list(b) for b in self.partition.blocks]}
        return {"tree": self.tree.to_nested()}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def problems(self) -> list:
        if self.kind == "support":
            return self.support.problems()
        if self.kind == "tree":
            return self.tree.problems(len(self.tree.leaves))
        out = self.partition.problems()
        if self.kind == "blocks" and not out and not self.partition.covers:
            out.append("blocks must cover every variable")
        return out


def _index_list(obj, what):
    if not isinstance(obj, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in obj):
        raise ParseError(f"{what} must be a list of integer indices")
    return obj


def parse_structure(d, m: int, source=None) -> Structure:
    if not isinstance(d, dict):
        raise ParseError("structure descriptor must be a JSON object", path=source)
    keys = [k for k in STRUCTURE_KEYS if k in d]
    unknown = sorted(set(d) - set(STRUCTURE_KEYS))
    if unknown:
        raise ParseError(f"unknown descriptor key(s): {', '.join(unknown)}", path=source)
    if len(keys) != 1:
        raise ParseError(f"descriptor must declare exactly one of {', '.join(STRUCTURE_KEYS)}",
                         path=source)
    kind = keys[0]
    try:
        if kind == "support":
            s = Structure(kind, support=SupportSpec(_index_list(d[kind], "support"), m))
        elif kind in ("blocks", "clusters"):
            if not isinstance(d[kind], list):
                raise ParseError(f"{kind} must be a list of index lists")
            blocks = [_index_list(b, f"each entry of {kind}") for b in d[kind]]
            s = Structure(kind, partition=BlockPartition(blocks, m))
        else:
            s = Structure(kind, tree=SparsityTree.from_nested(d[kind]))
    except ParseError as exc:
        raise ParseError(str(exc), path=source) from None
    problems = s.problems()
    if kind == "tree":
        problems = s.tree.problems(m)
    if problems:
        raise InvalidStructure([f"{source}: {p}" if source else p for p in problems])
    return s


def load_structure(path, m: int) -> Structure:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path=path, row=exc.lineno, column=exc.colno) from None
    return parse_structure(d, m, source=path)


def make_spec(family: str, lam: float, structure: Structure = None, m: int = None,
              alpha: float = 0.5, lam2: float = None) -> PenaltySpec:
    """Assemble a penalty spec for a CLI family name from a parsed descriptor.

    The tree family also accepts a ``blocks`` descriptor, which it turns into
    the two-level tree (leaves, one node per block, root).
    """
    need = {
        "support": ("support",),
        "group": ("blocks",),
        "sparse-group": ("blocks",),
        "cluster": ("clusters", "blocks"),
        "tree": ("tree", "blocks"),
    }
    if family == "lasso":
        return Lasso(float(lam))
    if family not in need:
        raise ValueError(f"unknown penalty family {family!r}")
    if structure is None or structure.kind not in need[family]:
        raise InvalidStructure([f"family {family!r} needs a structure descriptor declaring "
                                f"{' or '.join(need[family])}"])
    if family == "support":
        spec = PartialSupport(float(lam), structure.support)
    elif family == "group":
        spec = GroupLasso(float(lam), structure.partition)
    elif family == "sparse-group":
        spec = SparseGroupLasso(float(lam), float(alpha), structure.partition)
    elif family == "cluster":
        spec = Clustered(float(lam), float(lam if lam2 is None else lam2), structure.partition)
    else:
        tree = structure.tree if structure.kind == "tree" else SparsityTree.from_partition(structure.partition)
        spec = Tree(float(lam), tree)
    if m is not None:
        check(spec, m)
    return spec
