"""Limited-memory BFGS ascent with a backtracking (Armijo) line search."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AscentResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    converged: bool
    iterations: int
    evaluations: int
    history: list = field(default_factory=list)
    message: str = ""

    @property
    def grad_norm(self) -> float:
        return float(np.max(np.abs(self.grad))) if self.grad.size else 0.0


def _direction(g, memory):
    # two-loop recursion; g is the gradient of the function being *minimized*
    qv = g.copy()
    alphas = []
    for s, y, rho in reversed(memory):
        a = rho * (s @ qv)
        alphas.append(a)
        qv -= a * y
    if memory:
        s, y, _ = memory[-1]
        qv *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(memory, reversed(alphas)):
        b = rho * (y @ qv)
        qv += (a - b) * s
    return -qv


def lbfgs_ascent(fun, x0, max_iter=500, grad_tol=1e-7, memory=10, c1=1e-4, max_halvings=40):
    """Maximize ``fun`` where ``fun(x) -> (value, gradient)``.

    Stops when the max-norm of the gradient drops below ``grad_tol``. Only
    steps satisfying the sufficient-increase condition are accepted, so the
    recorded values are nondecreasing.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    nfev = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")
    # internally minimize F = -f
    F, G = -f, -g
    mem = deque(maxlen=memory)
    history = [f]
    message = "max_iter reached"
    converged = False
    it = 0
    stalls = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(G), initial=0.0) < grad_tol:
            converged, message = True, "gradient tolerance met"
            it -= 1
            break
        d = _direction(G, mem)
        slope = G @ d
        if not slope < 0:
            mem.clear()
            d, slope = -G, -(G @ G)
        step = 1.0 if mem else min(1.0, 1.0 / np.max(np.abs(G)))
        accepted = False
        for _ in range(max_halvings + 1):
            xn = x + step * d
            fn, gn = fun(xn)
            nfev += 1
            Fn = -fn
            if np.isfinite(Fn) and np.all(np.isfinite(gn)) and Fn <= F + c1 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if mem:
                # stale curvature pairs: retry from steepest ascent
                mem.clear()
                continue
            message = "line search failed"
            break
        # accepted steps with no decrease mean we are at rounding level
        stalls = stalls + 1 if Fn >= F else 0
        if stalls >= 5:
            message = "no further progress at rounding level"
            break
        Gn = -gn
        s, y = xn - x, Gn - G
        sy = s @ y
        if sy > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            mem.append((s, y, 1.0 / sy))
        x, F, G = xn, Fn, Gn
        history.append(-F)
    else:
        if np.max(np.abs(G), initial=0.0) < grad_tol:
            converged, message = True, "gradient tolerance met"
    return AscentResult(x, -F, -G, converged, it, nfev, history, message)
