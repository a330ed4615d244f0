"""Box-Cox transformation family for the hazard link.

``G(x) = (x**s - 1) / s`` (``log x`` at ``s = 0``) maps the hazard to the
linear predictor; ``H = G^{-1}`` maps it back. For ``s > 0`` the inverse
``(1 + s*y)**(1/s)`` only exists for ``1 + s*y > 0``. Below the point where
``H`` drops to ``floor_eps`` we continue with an exponential that matches
value and slope, so ``H`` is positive, increasing and C^1 on the whole real
line and optimizers never need domain constraints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TINY = np.finfo(float).tiny


@dataclass(frozen=True)
class BoxCoxTransform:
    s: float
    floor_eps: float = 1e-8

    def __post_init__(self):
        if not (self.s >= 0 and np.isfinite(self.s)):
            raise ValueError(f"Box-Cox index must be finite and >= 0, got {self.s!r}")
        if not self.floor_eps > 0:
            raise ValueError("floor_eps must be positive")

    @property
    def switch_base(self) -> float:
        """Value of ``1 + s*y`` at which the exponential extension starts."""
        return self.floor_eps ** self.s

    @property
    def switch_point(self) -> float:
        """Linear-predictor value below which the extension is used (-inf at s=0)."""
        if self.s == 0:
            return -np.inf
        return (self.switch_base - 1.0) / self.s

    @property
    def extension_rate(self) -> float:
        # H'/H at the switch point, i.e. 1 / (1 + s*y_sw)
        return 1.0 / self.switch_base

    def g_eval(self, x):
        """The forward transform ``G``; ``x`` must be positive."""
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise ValueError("G is only defined for positive hazards")
        out = np.log(x) if self.s == 0 else np.expm1(self.s * np.log(x)) / self.s
        return out if out.ndim else float(out)


def _split(tr: BoxCoxTransform, y):
    y = np.asarray(y, dtype=float)
    main = y >= tr.switch_point
    return y, main


def log_h(tr: BoxCoxTransform, y):
    """``log H(y)``, exact in both branches (no underflow in the extension)."""
    y, main = _split(tr, y)
    if tr.s == 0:
        out = y.copy()
    else:
        with np.errstate(invalid="ignore", divide="ignore"):
            nat = np.log1p(tr.s * np.where(main, y, 0.0)) / tr.s
        ext = np.log(tr.floor_eps) + tr.extension_rate * (y - tr.switch_point)
        out = np.where(main, nat, ext)
    return out if out.ndim else float(out)


def h_eval(tr: BoxCoxTransform, y):
    """``H(y)``; floored at the smallest normal double so it stays positive."""
    with np.errstate(over="ignore"):
        out = np.maximum(np.exp(np.asarray(log_h(tr, y))), _TINY)
    return out if out.ndim else float(out)


def _log_h_prime(tr, y, main):
    if tr.s == 0:
        return y.copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        nat = (1.0 / tr.s - 1.0) * np.log1p(tr.s * np.where(main, y, 0.0))
    ext = np.log(tr.floor_eps * tr.extension_rate) + tr.extension_rate * (y - tr.switch_point)
    return np.where(main, nat, ext)


def h_prime(tr: BoxCoxTransform, y):
    """Derivative of :func:`h_eval`, including the extension branch."""
    y, main = _split(tr, y)
    with np.errstate(over="ignore"):
        out = np.maximum(np.exp(_log_h_prime(tr, y, main)), _TINY)
    return out if out.ndim else float(out)


def h_all(tr: BoxCoxTransform, y):
    """Return ``(log H, H, H', H'/H, H'^2/H)`` in one pass over ``y``.

    This is the workhorse for the likelihood and variance code; the ratios
    are formed in log space so they stay finite where ``H`` underflows.
    """
    y, main = _split(tr, y)
    lh = np.asarray(log_h(tr, y))
    lhp = _log_h_prime(tr, y, main)
    with np.errstate(over="ignore", under="ignore"):
        h = np.maximum(np.exp(lh), _TINY)
        hp = np.maximum(np.exp(lhp), _TINY)
        h1 = np.exp(lhp - lh)
        h2 = np.exp(2.0 * lhp - lh)
    return lh, h, hp, h1, h2


def h_ratios(tr: BoxCoxTransform, y):
    """``(H'/H, H'^2/H)`` evaluated at ``y``."""
    _, _, _, h1, h2 = h_all(tr, y)
    if h1.ndim == 0:
        return float(h1), float(h2)
    return h1, h2
