"""Exact diagram evaluation by tree dynamic programming.

A pinned diagram attaches a lattice point to each label of a skeleton
and sums, over all placements of the unlabelled vertices, the product
over tree edges of the truncated Green kernel.  Because that kernel
vanishes beyond graph distance n, every sum here is finite and is
evaluated exactly: each vertex of the skeleton carries a field on a
finite box, children's fields are multiplied pointwise and pushed
through n accumulated walk steps along the edge to the parent.

Pinned vertices collapse to point masses, so a message leaving a pinned
vertex is a translated copy of the kernel times a scalar, and a message
consumed at a pinned vertex is an inner product.  Full-field
convolutions happen only along chains of unlabelled vertices, which
keeps box sizes at a small multiple of n.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal

from .errors import (
    ConfigurationError,
    DivergenceError,
    DomainError,
    ResourceLimitError,
)
from .lattice import MAX_FIELD_CELLS, LatticeField, truncated_green
from .skeletons import Skeleton, enumerate_injective_skeletons, enumerate_skeletons, reduce_labels

_REL_SLACK = 1e-10  # relative tolerance for inequality checks


@dataclass
class DiagramValue:
    """Result of a diagram evaluation.

    truncation_error_bound is exactly 0 for truncated evaluation (the
    sum is finite and computed in full); limits report an extrapolated
    bound on the mass beyond the last truncation level.  empty marks a
    pin assignment that is inconsistent with merged labels.
    """

    value: float
    truncation_error_bound: float
    n_used: int
    empty: bool = False


@dataclass
class _Patch:
    """Field on an axis-aligned box: values[i] sits at lattice point lo + i."""

    lo: np.ndarray  # int64, shape (dim,)
    values: np.ndarray

    @property
    def hi(self) -> np.ndarray:
        return self.lo + np.array(self.values.shape, dtype=np.int64) - 1

    def value_at(self, point: np.ndarray) -> float:
        idx = point - self.lo
        if np.any(idx < 0) or np.any(idx >= self.values.shape):
            return 0.0
        return float(self.values[tuple(idx)])


def _delta_patch(point: np.ndarray, dim: int) -> _Patch:
    return _Patch(lo=point.copy(), values=np.ones((1,) * dim))


def _multiply(a: _Patch, b: _Patch) -> _Patch | None:
    """Pointwise product, supported on the intersection of the boxes."""
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    if np.any(hi < lo):
        return None
    sl_a = tuple(slice(int(l - al), int(h - al) + 1) for l, h, al in zip(lo, hi, a.lo))
    sl_b = tuple(slice(int(l - bl), int(h - bl) + 1) for l, h, bl in zip(lo, hi, b.lo))
    return _Patch(lo=lo, values=a.values[sl_a] * b.values[sl_b])


def _window(patch: _Patch | None, dim: int, radius: int) -> np.ndarray:
    """Patch values on the centred cube [-radius, radius]^d, cropping or
    zero-padding as needed."""
    out = np.zeros((2 * radius + 1,) * dim)
    if patch is None:
        return out
    lo = np.maximum(patch.lo, -radius)
    hi = np.minimum(patch.hi, radius)
    if np.any(hi < lo):
        return out
    src = tuple(slice(int(l - pl), int(h - pl) + 1) for l, h, pl in zip(lo, hi, patch.lo))
    dst = tuple(slice(int(l) + radius, int(h) + radius + 1) for l, h in zip(lo, hi))
    out[dst] = patch.values[src]
    return out


def _field_to_patch(f: LatticeField) -> _Patch:
    return _Patch(lo=np.full(f.dim, -f.radius, dtype=np.int64), values=f.values)


def _guard_cells(shape) -> None:
    cells = int(np.prod([int(s) for s in shape]))
    if cells > MAX_FIELD_CELLS:
        raise ResourceLimitError(
            f"diagram field of {cells} cells exceeds the {MAX_FIELD_CELLS} cell guard"
        )


@lru_cache(maxsize=4)
def _green_patch(dim: int, n: int) -> _Patch:
    return _field_to_patch(truncated_green(dim, n))


def _edge_convolve(patch: _Patch, n: int, dim: int) -> _Patch:
    """Accumulated n-step convolution: sum_{j=1..n} P^j applied to patch.

    Equivalent to one full convolution with the truncated-kernel patch;
    the mode="full" output grows the box by n, so the zero boundary is
    exact.  Convolving once against the cached kernel instead of
    stepping n times keeps large-horizon diagram sums affordable.
    """
    shape = tuple(s + 2 * n for s in patch.values.shape)
    _guard_cells(shape)
    green = _green_patch(dim, n)
    values = signal.convolve(patch.values, green.values, mode="full", method="auto")
    return _Patch(lo=patch.lo - n, values=values)


def _inner_with_green(patch: _Patch, point: np.ndarray, n: int, dim: int) -> float:
    """sum_x G_n(x - point) patch(x) without materializing the convolution."""
    green = _green_patch(dim, n)
    shifted = _Patch(lo=green.lo + point, values=green.values)
    prod = _multiply(shifted, patch)
    return 0.0 if prod is None else float(np.sum(prod.values))


class _TreeDP:
    """Dynamic program over one rooted tree.

    children: tuple of child tuples per vertex; pins: per-vertex lattice
    point, or None for vertices that stay free (unlabelled vertices, and
    the root in field mode).  The memo may be shared across evaluations
    with the same dim and n, so identical pinned subtrees, common across
    skeletons and across siblings, are computed once.
    """

    def __init__(self, dim: int, n: int, children, pins, memo=None):
        self.dim = dim
        self.n = n
        self.children = children
        self.pins = pins
        self.memo = {} if memo is None else memo

    def _key(self, vertex: int):
        # free vertices get the (0,) token so sibling keys stay sortable
        pin = self.pins[vertex]
        pin_key = (0,) if pin is None else (1,) + tuple(int(c) for c in pin)
        child_keys = tuple(sorted(self._key(w) for w in self.children[vertex]))
        return (pin_key, child_keys)

    def message(self, vertex: int) -> _Patch | None:
        """Field z -> contribution of vertex's subtree seen across the
        edge into its parent; None encodes the zero field."""
        key = ("field", self.n, self._key(vertex))
        if key in self.memo:
            return self.memo[key]
        pin = self.pins[vertex]
        if pin is not None:
            scalar = 1.0
            for w in self.children[vertex]:
                scalar *= self.value_at(w, pin)
                if scalar == 0.0:
                    break
            if scalar == 0.0:
                out = None
            else:
                green = _green_patch(self.dim, self.n)
                # patches are never written in place, so the unscaled
                # case can share the cached kernel array
                values = green.values if scalar == 1.0 else scalar * green.values
                out = _Patch(lo=green.lo + pin, values=values)
        else:
            prod = self.subtree_product(vertex)
            out = None if prod is None else _edge_convolve(prod, self.n, self.dim)
        self.memo[key] = out
        return out

    def value_at(self, vertex: int, point: np.ndarray) -> float:
        """Message of vertex evaluated at a single parent position."""
        key = ("value", self.n, self._key(vertex), tuple(int(c) for c in point))
        if key in self.memo:
            return self.memo[key]
        pin = self.pins[vertex]
        if pin is not None:
            out = _green_patch(self.dim, self.n).value_at(point - pin)
            for w in self.children[vertex]:
                if out == 0.0:
                    break
                out *= self.value_at(w, pin)
        else:
            prod = self.subtree_product(vertex)
            out = 0.0 if prod is None else _inner_with_green(prod, point, self.n, self.dim)
        self.memo[key] = out
        return out

    def subtree_product(self, vertex: int) -> _Patch | None:
        """Pointwise product of all child messages of a free vertex; its
        support is where the vertex itself may sit."""
        prod = None
        for w in self.children[vertex]:
            msg = self.message(w)
            if msg is None:
                return None
            prod = msg if prod is None else _multiply(prod, msg)
            if prod is None:
                return None
        return prod

    def evaluate_at_root(self, root: int) -> float:
        pin = self.pins[root]
        value = 1.0
        for w in self.children[root]:
            value *= self.value_at(w, pin)
            if value == 0.0:
                break
        return value

    def root_field(self, root: int) -> _Patch | None:
        """Diagram value as a field over the (free) root position."""
        if not self.children[root]:
            return _delta_patch(np.zeros(self.dim, dtype=np.int64), self.dim)
        return self.subtree_product(root)


def _vertex_pins(skel: Skeleton, pins, dim: int):
    """Fold label pins onto vertices; None signals a merged-pin conflict."""
    arr = [None] * skel.tree.size
    for label_pos, vertex in enumerate(skel.labels):
        p = np.asarray(pins[label_pos], dtype=np.int64).reshape(-1)
        if p.shape != (dim,):
            raise ConfigurationError(f"pin {pins[label_pos]!r} is not a point of Z^{dim}")
        if arr[vertex] is None:
            arr[vertex] = p
        elif not np.array_equal(arr[vertex], p):
            return None
    return arr


def _check_truncation(n: int) -> None:
    # the kernel prefactor 1 v G_n(0,0)^{-1} degenerates below n=2
    if n < 2:
        raise DomainError(f"truncation level must be at least 2, got {n}")


def evaluate_truncated(skel: Skeleton, pins, n: int, dim: int, _memo=None) -> DiagramValue:
    """Exact truncated diagram value at the given pins.

    pins is a sequence of k+1 lattice points, one per label.  Labels
    sharing a vertex must agree; otherwise the placement set is empty
    and the value is 0 with the empty flag set.
    """
    _check_truncation(n)
    if len(pins) != skel.order + 1:
        raise ConfigurationError(
            f"skeleton of order {skel.order} needs {skel.order + 1} pins, got {len(pins)}"
        )
    vpins = _vertex_pins(skel, pins, dim)
    if vpins is None:
        return DiagramValue(value=0.0, truncation_error_bound=0.0, n_used=n, empty=True)
    dp = _TreeDP(dim, n, skel.tree.children, vpins, memo=_memo)
    return DiagramValue(value=dp.evaluate_at_root(0), truncation_error_bound=0.0, n_used=n)


def doubling_limit(step, tol: float, max_doublings: int = 12) -> tuple[float, float, int]:
    """Drive a monotone truncated evaluation n -> value to its limit.

    Doubles n from 2 and stops once a doubling increment drops below
    tol, returning (value, error bound, n used); the bound extrapolates
    the remaining mass geometrically from the observed increment decay.
    Increments that fail to halve across four doublings flag divergence.
    Running out of doublings, or out of the box guard, reports the best
    value so far in the resource error.
    """
    values = []
    increments = []
    n = 2
    for _ in range(max_doublings + 1):
        try:
            values.append(float(step(n)))
        except ResourceLimitError as exc:
            if not increments:
                raise
            raise ResourceLimitError(
                f"limit stopped by the box guard at n={n} before reaching tol={tol}: "
                f"value {values[-1]:.8g}, last increment {increments[-1]:.3e} ({exc})"
            ) from exc
        if len(values) >= 2:
            increments.append(max(values[-1] - values[-2], 0.0))
            j = len(increments) - 1
            if increments[j] < tol:
                window = min(4, j + 1)
                older = increments[j - window + 1]
                if older <= 0.0 or increments[j] <= 0.0:
                    bound = 0.0
                else:
                    rho = min((increments[j] / older) ** (1.0 / window), 0.95)
                    bound = 2.0 * increments[j] * rho / (1.0 - rho)
                return values[-1], bound, n
            if j >= 4 and increments[j] > 0.5 * increments[j - 4]:
                raise DivergenceError(
                    f"increments not halving over four doublings at n={n}: "
                    f"{increments[j - 4]:.3e} -> {increments[j]:.3e}"
                )
        n *= 2
    raise ResourceLimitError(
        f"limit not converged to tol={tol} within {max_doublings} doublings "
        f"(last increment {increments[-1]:.3e} at n={n // 2})"
    )


def evaluate_limit(
    skel: Skeleton,
    pins,
    dim: int,
    tol: float = 1e-6,
    assert_convergent: bool = False,
    max_doublings: int = 12,
) -> DiagramValue:
    """Monotone limit of truncated diagram values along n = 2, 4, 8, ...

    For d in {3, 4} composite diagrams may diverge, so the caller must
    assert convergence to attempt them; d >= 5 is always summable.
    """
    if dim < 3:
        raise DomainError(f"diagram limits require d >= 3, got d={dim}")
    if dim in (3, 4) and skel.order >= 2 and not assert_convergent:
        raise DomainError(
            f"d={dim} diagrams of order {skel.order} may diverge; "
            "pass assert_convergent=True to attempt the limit"
        )
    value, bound, n_used = doubling_limit(
        lambda n: evaluate_truncated(skel, pins, n, dim).value, tol, max_doublings
    )
    return DiagramValue(value=value, truncation_error_bound=bound, n_used=n_used)


def _patch_to_field(patch: _Patch | None, dim: int, radius: int) -> LatticeField:
    return LatticeField(dim=dim, radius=radius, values=_window(patch, dim, radius))


def _patch_radius(patch: _Patch) -> int:
    return int(max(np.max(np.abs(patch.lo)), np.max(np.abs(patch.hi))))


def _skeleton_root_field(skel: Skeleton, n: int, dim: int, memo) -> _Patch | None:
    """D_n(x, 0, ..., 0; S) as a field over the root pin x; requires the
    non-root labels to avoid the root (injective skeletons qualify)."""
    pins = [None] * skel.tree.size
    zero = np.zeros(dim, dtype=np.int64)
    for label_pos, vertex in enumerate(skel.labels):
        if label_pos > 0:
            pins[vertex] = zero
    dp = _TreeDP(dim, n, skel.tree.children, pins, memo=memo)
    return dp.root_field(0)


def maximal_diagram_field(k: int, n: int, dim: int, _memo=None) -> LatticeField:
    """x -> max over injective k-skeletons of D_n(x, 0, ..., 0; S).

    The root pin is the free variable, so each skeleton's whole field
    falls out of one DP pass; the maximum over skeletons is invariant
    under moving x to any other label slot.
    """
    _check_truncation(n)
    if k == 0:
        return _patch_to_field(_delta_patch(np.zeros(dim, dtype=np.int64), dim), dim, 0)
    memo = {} if _memo is None else _memo
    patches = [
        p
        for skel in enumerate_injective_skeletons(k)
        if (p := _skeleton_root_field(skel, n, dim, memo)) is not None
    ]
    radius = max(_patch_radius(p) for p in patches)
    out = _window(patches[0], dim, radius)
    for p in patches[1:]:
        np.maximum(out, _window(p, dim, radius), out=out)
    return LatticeField(dim=dim, radius=radius, values=out)


@dataclass
class InequalityReport:
    """Pointwise comparison left <= right, with slack relative to the
    larger side at the worst point."""

    passed: bool
    min_slack: float
    worst_relative: float
    worst_point: tuple
    points_checked: int
    detail: dict = dataclasses.field(default_factory=dict)


def _compare(left: np.ndarray, right: np.ndarray, radius: int) -> InequalityReport:
    # FFT convolutions leave O(1e-16 * fieldmax) ringing where the true
    # values vanish; forgive that much slack absolutely, on top of the
    # relative tolerance
    floor = 1e-13 * max(float(np.max(np.abs(left))), float(np.max(np.abs(right))), 1e-300)
    slack = right - left
    scale = np.maximum(np.maximum(np.abs(left), np.abs(right)), floor)
    rel = -(slack + floor) / scale
    worst_idx = np.unravel_index(int(np.argmax(rel)), rel.shape)
    return InequalityReport(
        passed=bool(rel[worst_idx] <= _REL_SLACK),
        min_slack=float(np.min(slack)),
        worst_relative=float(rel[worst_idx]),
        worst_point=tuple(int(i) - radius for i in worst_idx),
        points_checked=int(left.size),
    )


def check_recursion(k: int, n: int, dim: int) -> InequalityReport:
    """Verify M_{k,n}(x) <= [1 v G_n(0,0)^{-1}] max_{0<r<k} (M_r M_{k-r} * G_n)(x).

    Both sides are exact: the left on its full support box, the right
    with the inner sum over the exact joint support of the products.
    """
    if k < 2:
        raise ConfigurationError(f"recursion check needs k >= 2, got {k}")
    _check_truncation(n)
    memo = {}
    fields = {r: maximal_diagram_field(r, n, dim, _memo=memo) for r in range(1, k + 1)}
    left = fields[k]
    green0 = _green_patch(dim, n).value_at(np.zeros(dim, dtype=np.int64))
    prefactor = max(1.0, 1.0 / green0)

    radius = left.radius
    right = np.zeros((2 * radius + 1,) * dim)
    for r in range(1, k):
        prod = _multiply(_field_to_patch(fields[r]), _field_to_patch(fields[k - r]))
        if prod is None:
            continue
        conv = _edge_convolve(prod, n, dim)
        np.maximum(right, _window(conv, dim, radius), out=right)
    report = _compare(left.values, prefactor * right, radius)
    report.detail = {"prefactor": prefactor, "k": k, "n": n, "dim": dim}
    return report


def noninjective_reduction_check(k: int, n: int, dim: int) -> InequalityReport:
    """Verify max over all k-skeletons of D_n(0,...,0,x;S) <= max_{0<=r<=k} M_{r,n}(x).

    Repeated labels are collapsed with reduce_labels; a skeleton whose
    last label shares a vertex with an earlier one contributes a point
    mass at x = 0.
    """
    _check_truncation(n)
    memo = {}
    fields = {r: maximal_diagram_field(r, n, dim, _memo=memo) for r in range(0, k + 1)}
    radius = max(f.radius for f in fields.values())
    right = np.zeros((2 * radius + 1,) * dim)
    for f in fields.values():
        np.maximum(right, _window(_field_to_patch(f), dim, radius), out=right)

    left = np.zeros((2 * radius + 1,) * dim)
    origin = (radius,) * dim
    zero = np.zeros(dim, dtype=np.int64)
    for skel in enumerate_skeletons(k):
        reduced, groups = reduce_labels(skel)
        slot = next(i for i, g in enumerate(groups) if k in g)
        if len(groups[slot]) > 1:
            # x is tied to an earlier pin, so the skeleton contributes
            # its all-zero value at x = 0 only
            pins = [zero] * (reduced.order + 1)
            val = evaluate_truncated(reduced, pins, n, dim, _memo=memo).value
            left[origin] = max(left[origin], val)
            continue
        # x rides its own vertex; reroot the DP there so the whole field
        # falls out of one pass
        free_vertex = reduced.labels[slot]
        children = _rerooted_children(reduced.tree, free_vertex)
        pins = [None] * reduced.tree.size
        for vertex in reduced.labels:
            if vertex != free_vertex:
                pins[vertex] = zero
        dp = _TreeDP(dim, n, children, pins, memo=memo)
        patch = dp.root_field(free_vertex)
        if patch is not None:
            np.maximum(left, _window(patch, dim, radius), out=left)
    report = _compare(left, right, radius)
    report.detail = {"k": k, "n": n, "dim": dim}
    return report


def _rerooted_children(tree, new_root: int):
    """Children lists of the same tree re-rooted at new_root."""
    adj = [list(tree.children[v]) for v in range(tree.size)]
    for v, p in enumerate(tree.parents):
        if p >= 0:
            adj[v].append(p)
    children = [[] for _ in range(tree.size)]
    seen = [False] * tree.size
    stack = [new_root]
    seen[new_root] = True
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                children[v].append(w)
                stack.append(w)
    return tuple(tuple(c) for c in children)
