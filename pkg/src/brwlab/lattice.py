"""Simple random walk kernels on the integer lattice.

Everything here is about the nearest-neighbour walk on Z^d that jumps to
each of its 2d neighbours with probability 1/(2d).  The module computes

* n-step transition probability fields p_n(0, .) by exact iterated
  convolution (no FFT, no floating-point shortcuts beyond float64),
* truncated Green functions gtilde_n(0, .) = sum_{k=1}^{n} p_k(0, .),
* the limiting Green function G(0, x) for transient dimensions through
  the Bessel-product integral
      G(0, x) = int_0^inf  prod_j  e^{-s/d} I_{|x_j|}(s / d)  ds,
* weighted lattice convolution sums ("bubble sums") against powers of
  the graph distance, used by the off-diagonal moment checks.

Fields are stored on centred cubes [-r, r]^d in row-major order with the
origin at the middle index.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad_vec
from scipy.special import ive

from .errors import DomainError, PrecisionLossError, ResourceLimitError

# Hard ceiling on the number of cells a single field may occupy.  A
# radius-n cube in dimension d has (2n+1)^d cells; past ~1.3e8 cells the
# double-buffered convolution would not fit in desk-scale memory.
MAX_FIELD_CELLS = 2**27

_MAGIC = b"BRWF"
_FORMAT_VERSION = 1


def _cells(dim: int, radius: int) -> int:
    return (2 * radius + 1) ** dim


def _check_box(dim: int, radius: int) -> None:
    if dim < 1 or dim > 6:
        raise DomainError(f"dimension must be in 1..6, got {dim}")
    if radius < 0:
        raise DomainError(f"radius must be nonnegative, got {radius}")
    if _cells(dim, radius) > MAX_FIELD_CELLS:
        raise ResourceLimitError(
            f"radius-{radius} cube in dimension {dim} has {_cells(dim, radius)} cells "
            f"(guard is {MAX_FIELD_CELLS})"
        )


@dataclass
class LatticeField:
    """A real-valued field on the centred cube [-radius, radius]^d.

    values is a float64 array of shape (2*radius+1,)*dim; index i maps to
    the lattice coordinate i - radius on each axis.
    """

    dim: int
    radius: int
    values: np.ndarray

    def __post_init__(self) -> None:
        expected = (2 * self.radius + 1,) * self.dim
        if self.values.shape != expected:
            raise DomainError(
                f"field shape {self.values.shape} does not match radius {self.radius} "
                f"in dimension {self.dim}"
            )

    @property
    def origin_offset(self) -> int:
        """Index of lattice coordinate 0 along each axis."""
        return self.radius

    def value_at(self, x) -> float:
        """Field value at lattice point x; zero outside the stored cube."""
        x = np.atleast_1d(np.asarray(x, dtype=np.int64))
        if x.shape != (self.dim,):
            raise DomainError(f"point {x!r} is not a {self.dim}-vector")
        if np.any(np.abs(x) > self.radius):
            return 0.0
        return float(self.values[tuple(int(c) + self.radius for c in x)])

    def origin_value(self) -> float:
        return float(self.values[(self.radius,) * self.dim])

    def total_mass(self) -> float:
        return float(np.sum(self.values))

    def is_probability(self, tol: float = 1e-12) -> bool:
        return bool(np.all(self.values >= -tol) and abs(self.total_mass() - 1.0) <= 1e-9)

    def coordinate_grid(self):
        """1-D array of lattice coordinates along one axis."""
        return np.arange(-self.radius, self.radius + 1, dtype=np.int64)

    # -- serialization ------------------------------------------------

    def to_bytes(self) -> bytes:
        header = _MAGIC + struct.pack("<III", _FORMAT_VERSION, self.dim, self.radius)
        return header + np.ascontiguousarray(self.values, dtype=np.float64).tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "LatticeField":
        if raw[:4] != _MAGIC:
            raise DomainError("not a lattice field blob (bad magic)")
        version, dim, radius = struct.unpack("<III", raw[4:16])
        if version != _FORMAT_VERSION:
            raise DomainError(f"unsupported field format version {version}")
        count = _cells(dim, radius)
        values = np.frombuffer(raw[16:], dtype=np.float64, count=count).copy()
        return cls(dim=dim, radius=radius, values=values.reshape((2 * radius + 1,) * dim))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "LatticeField":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_csv(self, path) -> None:
        """Dump as rows x_1,...,x_d,value for inspection and plotting."""
        coords = self.coordinate_grid()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j + 1}" for j in range(self.dim)] + ["value"])
            for idx in np.ndindex(self.values.shape):
                writer.writerow([int(coords[i]) for i in idx] + [repr(float(self.values[idx]))])


def delta_field(dim: int, radius: int = 0) -> LatticeField:
    """Point mass at the origin."""
    _check_box(dim, radius)
    values = np.zeros((2 * radius + 1,) * dim)
    values[(radius,) * dim] = 1.0
    return LatticeField(dim=dim, radius=radius, values=values)


def _conv_step_inplace(src: np.ndarray, dst: np.ndarray, dim: int) -> None:
    """dst <- one walk step applied to src, zero boundary.

    Valid as long as the support of src never touches the array boundary
    before the final step; callers size the box so that this holds.
    """
    dst[...] = 0.0
    for ax in range(dim):
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        dst[tuple(lo)] += src[tuple(hi)]
        dst[tuple(hi)] += src[tuple(lo)]
    dst *= 1.0 / (2 * dim)


def single_step_convolve(field: LatticeField) -> LatticeField:
    """One transition of the walk applied to a field; radius grows by 1."""
    _check_box(field.dim, field.radius + 1)
    side = 2 * (field.radius + 1) + 1
    src = np.zeros((side,) * field.dim)
    src[(slice(1, -1),) * field.dim] = field.values
    dst = np.empty_like(src)
    _conv_step_inplace(src, dst, field.dim)
    return LatticeField(dim=field.dim, radius=field.radius + 1, values=dst)


def heat_kernel(dim: int, n: int) -> LatticeField:
    """n-step transition probabilities p_n(0, .) on the radius-n cube."""
    if n < 0:
        raise DomainError(f"step count must be nonnegative, got {n}")
    _check_box(dim, n)
    side = 2 * n + 1
    cur = np.zeros((side,) * dim)
    cur[(n,) * dim] = 1.0
    nxt = np.empty_like(cur)
    for _ in range(n):
        _conv_step_inplace(cur, nxt, dim)
        cur, nxt = nxt, cur
    return LatticeField(dim=dim, radius=n, values=cur)


def truncated_green(dim: int, n: int) -> LatticeField:
    """Truncated Green function gtilde_n(0, .) = sum_{k=1}^{n} p_k(0, .).

    The k = 0 term is deliberately excluded; gtilde_n(0, 0) is zero for
    n < 2 and the field vanishes outside the radius-n cube.
    """
    if n < 1:
        raise DomainError(f"horizon must be at least 1, got {n}")
    _check_box(dim, n)
    side = 2 * n + 1
    cur = np.zeros((side,) * dim)
    cur[(n,) * dim] = 1.0
    acc = np.zeros_like(cur)
    nxt = np.empty_like(cur)
    for _ in range(n):
        _conv_step_inplace(cur, nxt, dim)
        cur, nxt = nxt, cur
        acc += cur
    return LatticeField(dim=dim, radius=max(n, 0), values=acc)


# -- limiting Green function (transient dimensions) --------------------


def _bessel_green_values(dim: int, points: np.ndarray, tol: float) -> tuple[np.ndarray, float]:
    """G(0, x) for the given integer points via the Bessel-product integral.

    points has shape (m, dim); returns (values, error_bound).  The
    integrand prod_j ive(|x_j|, s/dim) is smooth, positive, and decays
    like s^{-dim/2}, which is integrable exactly when the walk is
    transient.
    """
    orders = np.abs(points).astype(np.float64)
    # Past the split the integrand sits in its power-decay regime even
    # for the largest Bessel order requested; the substitution s = u^-2
    # then turns the tail into a smooth integral on a finite interval
    # (integrand ~ u^{dim-3} near u = 0), avoiding the infinite limit.
    split = 100.0 * max(1.0, float(np.max(orders, initial=0.0)) ** 2 / dim)

    def product(z: float) -> np.ndarray:
        if z <= 1e8:
            return np.prod(ive(orders, z), axis=1)
        # scipy's ive gives up past z ~ 1e9; the uniform asymptotic
        # ive(n, z) = (2 pi z)^{-1/2} (1 - (4n^2-1)/(8z) + O(z^{-2}))
        # is accurate to machine precision in this regime.  Factor the
        # power prefactor out of the product so it cannot underflow.
        correction = np.prod(1.0 - (4.0 * orders**2 - 1.0) / (8.0 * z), axis=1)
        return (2.0 * np.pi * z) ** (-0.5 * dim) * correction

    def head(s: float) -> np.ndarray:
        return product(s / dim)

    def tail(u: float) -> np.ndarray:
        s = 1.0 / (u * u)
        z = s / dim
        if z <= 1e8:
            return np.prod(ive(orders, z), axis=1) * 2.0 / u**3
        # Combine the u^-3 jacobian with the prefactor analytically:
        # (2 pi z)^{-d/2} * 2 u^{-3} = 2 (2 pi / dim)^{-d/2} u^{dim - 3}.
        correction = np.prod(1.0 - (4.0 * orders**2 - 1.0) / (8.0 * z), axis=1)
        return 2.0 * (2.0 * np.pi / dim) ** (-0.5 * dim) * u ** (dim - 3) * correction

    head_val, head_err = quad_vec(head, 0.0, split, epsabs=tol * 0.25, epsrel=1e-12)
    tail_val, tail_err = quad_vec(tail, 0.0, split**-0.5, epsabs=tol * 0.25, epsrel=1e-12)
    err = float(head_err + tail_err)
    if err > tol:
        raise PrecisionLossError(
            f"Green quadrature error {err:.3e} exceeds requested tolerance {tol:.3e}"
        )
    return head_val + tail_val, err


@lru_cache(maxsize=None)
def green_value(dim: int, x: tuple, tol: float = 1e-10) -> float:
    """Limiting Green function G(0, x) = expected visits to x from 0."""
    if dim < 3:
        raise DomainError(f"the walk is recurrent in dimension {dim}; no limiting Green function")
    pt = np.asarray(x, dtype=np.int64).reshape(1, -1)
    if pt.shape[1] != dim:
        raise DomainError(f"point {x!r} is not a {dim}-vector")
    value, _ = _bessel_green_values(dim, pt, tol)
    return float(value[0])


def green_limit(dim: int, radius: int, tol: float = 1e-8) -> tuple[LatticeField, float]:
    """Limiting modified Green function gtilde(0, .) = G(0, .) - delta_0.

    Returns the field on the radius cube together with a bound on the
    absolute quadrature error per entry.  Only defined for dim >= 3.
    """
    if dim < 3:
        raise DomainError(f"the walk is recurrent in dimension {dim}; no limiting Green function")
    _check_box(dim, radius)

    # The integrand only depends on the multiset of |coordinates|; solve
    # one quadrature per equivalence class and fill the cube by lookup.
    side = 2 * radius + 1
    coords = np.arange(-radius, radius + 1, dtype=np.int64)
    grids = np.meshgrid(*([coords] * dim), indexing="ij")
    abs_sorted = np.sort(np.stack([np.abs(g).ravel() for g in grids], axis=1), axis=1)
    # Encode each sorted coordinate multiset as one integer so the class
    # reduction is a 1-D unique instead of a row-wise lexsort.
    base = radius + 1
    keys = abs_sorted[:, 0].astype(np.int64)
    for j in range(1, dim):
        keys = keys * base + abs_sorted[:, j]
    unique_keys, first_index, inverse = np.unique(keys, return_index=True, return_inverse=True)
    classes = abs_sorted[first_index]
    values, err = _bessel_green_values(dim, classes, tol)
    field = values[inverse].reshape((side,) * dim)
    field[(radius,) * dim] -= 1.0  # remove the k = 0 visit
    return LatticeField(dim=dim, radius=radius, values=field), err


# -- graph-distance weighted bubble sums --------------------------------


def graph_weight(points: np.ndarray) -> np.ndarray:
    """<x> = max(2, |x|_1), the graph distance floored at 2."""
    l1 = np.sum(np.abs(points), axis=-1)
    return np.maximum(2, l1).astype(np.float64)


def bubble_sum(dim: int, x, box_radius: int) -> float:
    """sum_y <y>^(-2d+4) <x-y>^(-d+2) over the radius box (dim >= 5).

    The summand decays like |y|^(-(3d-6)), so for d >= 5 the box sum is
    within O(box_radius^(d-1-(3d-6))) of the full lattice sum.
    """
    if dim < 5:
        raise DomainError(f"two-power bubble sum needs dimension >= 5, got {dim}")
    return _weighted_bubble(dim, x, box_radius, -2 * dim + 4, -dim + 2, log_power=0)


def log_bubble_sum(x, k: int, box_radius: int) -> float:
    """sum_y <x-y>^(-2) <y>^(-4) (k + log <y>)^k over the radius box (d = 4)."""
    if k < 0:
        raise DomainError(f"log power must be nonnegative, got {k}")
    return _weighted_bubble(4, x, box_radius, -4, -2, log_power=k)


def _weighted_bubble(dim: int, x, box_radius: int, inner_pow: int, outer_pow: int,
                     log_power: int) -> float:
    x = np.asarray(x, dtype=np.int64)
    if x.shape != (dim,):
        raise DomainError(f"point {x!r} is not a {dim}-vector")
    coords = np.arange(-box_radius, box_radius + 1, dtype=np.int64)
    tail_abs = [np.abs(coords).reshape((-1,) + (1,) * (dim - 2 - j)) for j in range(dim - 1)]
    tail_shift = [np.abs(coords - x[j + 1]).reshape((-1,) + (1,) * (dim - 2 - j))
                  for j in range(dim - 1)]
    # One slab per leading coordinate keeps peak memory at a (2r+1)^(d-1)
    # array instead of the full cube.
    l1_tail = tail_abs[0].astype(np.float64)
    for t in tail_abs[1:]:
        l1_tail = l1_tail + t
    l1_tail_shift = tail_shift[0].astype(np.float64)
    for t in tail_shift[1:]:
        l1_tail_shift = l1_tail_shift + t
    total = 0.0
    for c0 in coords:
        inner = np.maximum(2.0, abs(c0) + l1_tail)
        outer = np.maximum(2.0, abs(c0 - x[0]) + l1_tail_shift)
        slab = inner ** float(inner_pow)
        if log_power:
            slab *= (log_power + np.log(inner)) ** log_power
        slab *= outer ** float(outer_pow)
        total += float(np.sum(slab))
    return total
