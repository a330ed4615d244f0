"""B-spline sieve for the baseline function alpha(t) on [0, tau].

The basis uses clamped knots (boundary multiplicity = order) and no separate
intercept column: the raw B-splines already sum to one, so adding a constant
would make the design rank deficient. ``natural=True`` restricts to the
subspace with zero second derivative at both boundary knots.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space


@dataclass(frozen=True)
class SplineBasis:
    order: int
    interior_knots: tuple
    boundary: tuple = (0.0, 1.0)
    natural: bool = False
    knots: np.ndarray = field(repr=False, compare=False, default=None)
    constraint_map: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def raw_dim(self) -> int:
        return len(self.interior_knots) + self.order

    @property
    def dim(self) -> int:
        return self.constraint_map.shape[1]

    @property
    def tau(self) -> float:
        return self.boundary[1]

    def __call__(self, t):
        return eval_basis(self, t)

    def constant_coefficients(self, value: float = 1.0) -> np.ndarray:
        """Coefficients ``g`` with ``g @ B(t) == value`` for every t."""
        if not self.natural:
            return np.full(self.dim, float(value))
        # constants have zero second derivative, so they lie in the natural span
        g, *_ = np.linalg.lstsq(self.constraint_map, np.ones(self.raw_dim), rcond=None)
        return value * g


def build_basis(order: int, interior_knots, boundary=(0.0, 1.0), natural: bool = False) -> SplineBasis:
    """Construct a clamped B-spline basis of the given order (degree + 1)."""
    order = int(order)
    if order < 2:
        raise ValueError(f"spline order must be >= 2, got {order}")
    lo, hi = (float(b) for b in boundary)
    if not lo < hi:
        raise ValueError(f"invalid boundary {boundary!r}")
    interior = tuple(float(k) for k in interior_knots)
    if any(b <= a for a, b in zip(interior, interior[1:])):
        raise ValueError(f"interior knots must be strictly increasing: {interior}")
    if any(not lo < k < hi for k in interior):
        raise ValueError(f"interior knots must lie strictly inside {boundary}: {interior}")
    if natural and order < 4:
        raise ValueError("natural splines need order >= 4 (cubic)")

    knots = np.concatenate([np.full(order, lo), np.asarray(interior, dtype=float), np.full(order, hi)])
    raw_dim = len(interior) + order
    if natural:
        d2 = _raw_basis(np.array([lo, hi]), knots, order, lo, hi, deriv=2)
        cmap = null_space(d2)
    else:
        cmap = np.eye(raw_dim)
    basis = SplineBasis(order, interior, (lo, hi), bool(natural))
    object.__setattr__(basis, "knots", knots)
    object.__setattr__(basis, "constraint_map", cmap)
    return basis


def default_num_knots(n: int, kappa: float = 2.0, c: float = 1.0, minimum: int = 2) -> int:
    """Interior knot count from the rate-optimal sieve exponent 3 / (3 + 10 kappa)."""
    nu = 3.0 / (3.0 + 10.0 * kappa)
    return max(minimum, math.ceil(c * n ** nu))


def quantile_knots(x, k: int, boundary=(0.0, 1.0)) -> tuple:
    """``k`` interior knots at equally spaced quantiles of ``x``.

    Duplicates (heavily tied data) are dropped, and so are knots that land on
    the boundary.
    """
    if k < 1:
        return ()
    probs = np.arange(1, k + 1) / (k + 1)
    qs = np.quantile(np.asarray(x, dtype=float), probs)
    lo, hi = boundary
    qs = np.unique(qs[(qs > lo) & (qs < hi)])
    return tuple(float(v) for v in qs)


def _raw_basis(t, knots, order, lo, hi, deriv=0):
    """Cox-de Boor recursion for all raw B-splines (or their derivatives).

    Returns an array of shape (len(t), len(knots) - order). The last
    non-degenerate interval is treated as closed so t == hi gives the
    left limit instead of an all-zero row.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nk = len(knots)
    # degree-0 indicator functions on [knots[i], knots[i+1])
    span = np.searchsorted(knots, t, side="right") - 1
    last = np.searchsorted(knots, hi, side="left") - 1  # index of the last nonempty interval
    span = np.clip(span, order - 1, last)
    b = np.zeros((t.size, nk - 1))
    b[np.arange(t.size), span] = 1.0

    for k in range(2, order + 1):
        ncols = nk - k
        new = np.zeros((t.size, ncols))
        use_deriv = k > order - deriv
        for i in range(ncols):
            d1 = knots[i + k - 1] - knots[i]
            d2 = knots[i + k] - knots[i + 1]
            if use_deriv:
                if d1 > 0:
                    new[:, i] += (k - 1) * b[:, i] / d1
                if d2 > 0:
                    new[:, i] -= (k - 1) * b[:, i + 1] / d2
            else:
                if d1 > 0:
                    new[:, i] += (t - knots[i]) / d1 * b[:, i]
                if d2 > 0:
                    new[:, i] += (knots[i + k] - t) / d2 * b[:, i + 1]
        b = new
    return b


def raw_design(basis: SplineBasis, t, deriv: int = 0) -> np.ndarray:
    """Raw (unconstrained) B-spline values at ``t``, shape (len(t), raw_dim)."""
    return _raw_basis(t, basis.knots, basis.order, *basis.boundary, deriv=deriv)


def design(basis: SplineBasis, t, deriv: int = 0) -> np.ndarray:
    """Basis matrix at many points, shape (len(t), dim). No range check."""
    raw = raw_design(basis, t, deriv)
    if not basis.natural:
        return raw
    return raw @ basis.constraint_map


def eval_basis(basis: SplineBasis, t):
    """Basis vector ``B(t)``; vectorized over ``t``."""
    arr = np.asarray(t, dtype=float)
    lo, hi = basis.boundary
    if np.any(~np.isfinite(arr)) or np.any(arr < lo) or np.any(arr > hi):
        raise ValueError(f"t must lie in [{lo}, {hi}]")
    out = design(basis, arr)
    return out[0] if arr.ndim == 0 else out


def breakpoints_in(basis: SplineBasis, a: float, b: float) -> tuple:
    """Distinct knot locations strictly inside (a, b)."""
    if a > b:
        raise ValueError(f"empty interval: a={a} > b={b}")
    inner = np.unique(basis.knots)
    return tuple(float(k) for k in inner[(inner > a) & (inner < b)])
