"""Rooted plane trees and labelled skeletons.

A k-skeleton is a rooted plane tree together with a labelling
l : {0, ..., k} -> vertices such that l(0) is the root and every vertex
that carries no label has at least two children (in particular every
leaf is labelled).  These index the diagrammatic expansion of local-time
moments: the k-th moment is a sum over all k-skeletons.

Trees are stored as preorder child-count sequences, which makes plane
trees rigid: two skeletons are equal exactly when their sequences and
label tuples are equal.  Enumeration order is deterministic (vertex
count, then lexicographic sequence, then lexicographic labels).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, ResourceLimitError
from .offspring import OffspringDistribution, descending_binomial_moments

# enumeration cost guards: order k uses trees on up to 2k vertices, and
# label maps multiply the tree count by another |V|^k
MAX_ORDER = 6
MAX_TREE_SIZE = 14


@dataclass(frozen=True)
class PlaneTree:
    """Rooted plane tree as a preorder child-count sequence."""

    child_counts: tuple

    def __post_init__(self) -> None:
        counts = self.child_counts
        n = len(counts)
        if n == 0 or sum(counts) != n - 1:
            raise ConfigurationError(f"not a preorder child-count sequence: {counts!r}")
        if any(c < 0 for c in counts):
            raise ConfigurationError(f"negative child count in {counts!r}")
        # Every proper prefix must leave at least one open slot.
        open_slots = 1
        for c in counts:
            open_slots -= 1
            if open_slots < 0:
                raise ConfigurationError(f"disconnected child-count sequence: {counts!r}")
            open_slots += c

    @property
    def size(self) -> int:
        return len(self.child_counts)

    @property
    def parents(self) -> tuple:
        return _parents(self.child_counts)

    @property
    def children(self) -> tuple:
        return _children(self.child_counts)

    def leaves(self) -> tuple:
        return tuple(v for v, c in enumerate(self.child_counts) if c == 0)


@lru_cache(maxsize=None)
def _parents(counts: tuple) -> tuple:
    par = [-1] * len(counts)
    stack = [[0, counts[0]]]
    for v in range(1, len(counts)):
        while stack[-1][1] == 0:
            stack.pop()
        par[v] = stack[-1][0]
        stack[-1][1] -= 1
        stack.append([v, counts[v]])
    return tuple(par)


@lru_cache(maxsize=None)
def _children(counts: tuple) -> tuple:
    kids = [[] for _ in counts]
    for v, p in enumerate(_parents(counts)):
        if p >= 0:
            kids[p].append(v)
    return tuple(tuple(k) for k in kids)


def catalan_tree_count(n: int) -> int:
    """Number of plane trees with n vertices: (1/n) C(2n-2, n-1)."""
    if n < 1:
        raise ConfigurationError(f"tree size must be positive, got {n}")
    return math.comb(2 * n - 2, n - 1) // n


@lru_cache(maxsize=None)
def enumerate_plane_trees(n: int) -> tuple:
    """All plane trees with exactly n vertices, lexicographic order."""
    if n < 1:
        raise ConfigurationError(f"tree size must be positive, got {n}")
    if n > MAX_TREE_SIZE:
        raise ResourceLimitError(
            f"enumerating {catalan_tree_count(n)} plane trees on {n} vertices "
            f"exceeds the cap ({MAX_TREE_SIZE})"
        )
    return tuple(PlaneTree(seq) for seq in sorted(_tree_sequences(n)))


@lru_cache(maxsize=None)
def _tree_sequences(n: int) -> tuple:
    if n == 1:
        return ((0,),)
    out = []
    for root_degree in range(1, n):
        for parts in _compositions(n - 1, root_degree):
            for combo in _sequence_products(parts):
                out.append((root_degree,) + combo)
    return tuple(out)


def _compositions(total: int, parts: int):
    """Ordered tuples of `parts` positive integers summing to `total`."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _sequence_products(parts):
    if not parts:
        yield ()
        return
    for head in _tree_sequences(parts[0]):
        for rest in _sequence_products(parts[1:]):
            yield head + rest


@dataclass(frozen=True)
class Skeleton:
    """A plane tree with a label map; labels[i] is the preorder index
    of the vertex carrying label i."""

    tree: PlaneTree
    labels: tuple

    def __post_init__(self) -> None:
        if not self.labels or self.labels[0] != 0:
            raise ConfigurationError("label 0 must sit on the root")
        n = self.tree.size
        if any(not 0 <= v < n for v in self.labels):
            raise ConfigurationError(f"label position out of range in {self.labels!r}")
        labelled = set(self.labels)
        for v, c in enumerate(self.tree.child_counts):
            if v not in labelled and c < 2:
                raise ConfigurationError(
                    f"unlabelled vertex {v} has {c} children; skeleton condition violated"
                )

    @property
    def order(self) -> int:
        """k: the skeleton carries labels 0..k."""
        return len(self.labels) - 1

    @property
    def is_injective(self) -> bool:
        return len(set(self.labels)) == len(self.labels)

    def encode(self) -> str:
        counts = ",".join(str(c) for c in self.tree.child_counts)
        labels = ",".join(str(v) for v in self.labels)
        return f"{self.order}|{counts}|{labels}"

    @classmethod
    def parse(cls, text: str) -> "Skeleton":
        try:
            k_part, counts_part, labels_part = text.strip().split("|")
            counts = tuple(int(c) for c in counts_part.split(","))
            labels = tuple(int(v) for v in labels_part.split(","))
            k = int(k_part)
        except ValueError as exc:
            raise ConfigurationError(f"bad skeleton encoding {text!r}") from exc
        if len(labels) != k + 1:
            raise ConfigurationError(f"skeleton encoding {text!r} has {len(labels)} labels, "
                                     f"expected {k + 1}")
        return cls(tree=PlaneTree(counts), labels=labels)


def max_skeleton_vertices(k: int) -> int:
    """Sharp vertex bound: a k-skeleton has at most max(1, 2k) vertices."""
    return max(1, 2 * k)


@lru_cache(maxsize=None)
def enumerate_skeletons(k: int) -> tuple:
    """All k-skeletons in deterministic order.

    Candidate trees are pruned before label enumeration: any vertex with
    fewer than two children, other than the root, must receive a label,
    so trees with more than k such vertices cannot be completed.
    """
    if k < 0:
        raise ConfigurationError(f"skeleton order must be nonnegative, got {k}")
    if k > MAX_ORDER:
        raise ResourceLimitError(
            f"skeleton order {k} exceeds the enumeration cap ({MAX_ORDER})"
        )
    out = []
    for n in range(1, max_skeleton_vertices(k) + 1):
        for tree in enumerate_plane_trees(n):
            required = tuple(
                v for v, c in enumerate(tree.child_counts) if c < 2 and v != 0
            )
            if len(required) > k:
                continue
            for assignment in _label_assignments(n, k, required):
                out.append(Skeleton(tree=tree, labels=(0,) + assignment))
    return tuple(out)


def _label_assignments(n: int, k: int, required: tuple):
    """All maps {1..k} -> {0..n-1} whose image covers `required`."""
    required_set = frozenset(required)

    def extend(pos: int, chosen: tuple, missing: frozenset):
        if k - pos < len(missing):
            return  # not enough labels left to cover the mandatory vertices
        if pos == k:
            yield chosen
            return
        for v in range(n):
            yield from extend(pos + 1, chosen + (v,), missing - {v})

    yield from extend(0, (), required_set)


def enumerate_injective_skeletons(k: int) -> tuple:
    """k-skeletons whose labels occupy k+1 distinct vertices."""
    return tuple(s for s in enumerate_skeletons(k) if s.is_injective)


def partition_function(k: int, dist: OffspringDistribution) -> float:
    """sum over k-skeletons of prod_v b_{c(v)}.

    This is the combinatorial weight the moment expansion attaches to
    order k; it is finite for every sub-exponential law and grows at
    most like kappa^k k!.
    """
    skels = enumerate_skeletons(k)
    max_children = max((max(s.tree.child_counts) for s in skels), default=0)
    b = descending_binomial_moments(dist, max_children)
    total = 0.0
    for s in skels:
        w = 1.0
        for c in s.tree.child_counts:
            w *= b[c]
        total += w
    return total


def skeleton_weight(skel: Skeleton, moments: np.ndarray) -> float:
    """prod_v b_{c(v)} for one skeleton, given precomputed b array."""
    w = 1.0
    for c in skel.tree.child_counts:
        w *= moments[c]
    return w


def reduce_labels(skel: Skeleton) -> tuple:
    """Collapse repeated labels to the injective skeleton they induce.

    Returns (injective_skeleton, groups) where groups[i] lists the
    original label indices that share the i-th distinct vertex, in first
    occurrence order.  Evaluating a diagram at pins x_0..x_k over the
    original skeleton equals the indicator that pins agree within each
    group times the diagram of the reduced skeleton at the group pins.
    """
    seen = {}
    groups = []
    reduced = []
    for i, v in enumerate(skel.labels):
        if v in seen:
            groups[seen[v]].append(i)
        else:
            seen[v] = len(reduced)
            reduced.append(v)
            groups.append([i])
    out = Skeleton(tree=skel.tree, labels=tuple(reduced))
    return out, tuple(tuple(g) for g in groups)
