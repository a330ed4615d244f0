"""Smoothing kernels for the measurement-time weights.

Only compactly supported, nonnegative, unimodal kernels on (-1, 1) are
allowed. The scaled weight is ``K_h(d) = 2 K(d / h) / h``; the factor 2
makes it integrate to one over the half window ``[0, h)``, which is how it
is used (a measurement only informs times at or after it).
"""
from __future__ import annotations

import enum

import numpy as np


class KernelSpec(enum.Enum):
    EPANECHNIKOV = "epanechnikov"

    @classmethod
    def from_name(cls, name: str) -> "KernelSpec":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown kernel {name!r}") from None


EPANECHNIKOV = KernelSpec.EPANECHNIKOV

# closed form of int_0^1 K(u)^2 du
_K_SQ_HALFLINE = {KernelSpec.EPANECHNIKOV: 0.5625 * 8.0 / 15.0}
_K_SUP = {KernelSpec.EPANECHNIKOV: 0.75}


def k_eval(spec: KernelSpec, u):
    """Evaluate the kernel ``K(u)``; zero outside (-1, 1)."""
    u = np.asarray(u, dtype=float)
    if spec is KernelSpec.EPANECHNIKOV:
        out = np.where(np.abs(u) < 1.0, 0.75 * (1.0 - u * u), 0.0)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unsupported kernel {spec}")
    return out if out.ndim else float(out)


def kh_eval(spec: KernelSpec, d, h: float):
    """Scaled one-sided weight ``2 K(d/h) / h``.

    Returns exactly 0 when ``|d| >= h``.
    """
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h!r}")
    out = (2.0 / h) * np.asarray(k_eval(spec, np.asarray(d, dtype=float) / h))
    return out if out.ndim else float(out)


def k_sq_halfline(spec: KernelSpec) -> float:
    """Return ``int_0^1 K(u)^2 du``."""
    return _K_SQ_HALFLINE[spec]


def k_sup(spec: KernelSpec) -> float:
    return _K_SUP[spec]
