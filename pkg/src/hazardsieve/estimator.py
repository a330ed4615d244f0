"""Fitting, bandwidth selection and inference for the kernel-weighted sieve model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import solve

from .data import Dataset
from .kernel import EPANECHNIKOV, KernelSpec, kh_eval
from .likelihood import Design, QuadratureRule, SieveParams, evaluate, kernel_design
from .optimize import lbfgs_ascent
from .spline import SplineBasis, build_basis, default_num_knots, design, quantile_knots
from .transform import BoxCoxTransform, h_all


class NoWeightedEventsError(ValueError):
    """Every event term has zero kernel weight at the working bandwidth."""


class SingularInformationError(np.linalg.LinAlgError):
    """The information matrix for beta is numerically singular."""


@dataclass(frozen=True)
class BasisConfig:
    order: int = 3
    interior_knots: tuple | None = None
    num_knots: int | None = None
    natural: bool = False

    def build(self, data: Dataset) -> SplineBasis:
        bounds = (0.0, float(data.tau))
        if self.interior_knots is not None:
            knots = tuple(self.interior_knots)
        else:
            k = self.num_knots if self.num_knots is not None else default_num_knots(data.n)
            knots = quantile_knots(data.x, k, bounds)
        return build_basis(self.order, knots, bounds, self.natural)


@dataclass(frozen=True)
class CVSpec:
    grid: tuple | None = None
    folds: int = 5
    seed: int = 0


@dataclass(frozen=True)
class FitConfig:
    s: float = 0.0
    bandwidth: float | CVSpec = None
    basis: BasisConfig = BasisConfig()
    quad: QuadratureRule = QuadratureRule()
    max_iter: int = 500
    grad_tol: float = 1e-7
    init: SieveParams | str = "default"
    kernel: KernelSpec = EPANECHNIKOV
    # softer than the transform's own default: a 1e8 slope ratio stalls quasi-Newton
    floor_eps: float = 1e-4

    def __post_init__(self):
        bw = self.bandwidth
        if isinstance(bw, CVSpec):
            if bw.grid is not None and (len(bw.grid) == 0 or min(bw.grid) <= 0):
                raise ValueError("CV grid must be nonempty and positive")
            if bw.folds < 2:
                raise ValueError("need at least 2 CV folds")
        elif bw is not None and not bw > 0:
            raise ValueError(f"bandwidth must be positive, got {bw!r}")

    @property
    def transform(self) -> BoxCoxTransform:
        return BoxCoxTransform(self.s, self.floor_eps)

    def working_bandwidth(self, n: int) -> float:
        """Fixed bandwidth, defaulting to n^-0.4 when none was given."""
        if self.bandwidth is None:
            return n ** -0.4
        if isinstance(self.bandwidth, CVSpec):
            raise ValueError("bandwidth is chosen by cross-validation")
        return float(self.bandwidth)


@dataclass
class FitResult:
    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    grad_norm: float
    h_used: float
    basis: SplineBasis
    s: float
    n: int
    covariance: np.ndarray | None = None
    se: np.ndarray | None = None
    barrier_touched: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def params(self) -> SieveParams:
        return SieveParams(self.beta_hat, self.gamma_hat)

    @property
    def p(self) -> int:
        return self.beta_hat.size

    @property
    def q(self) -> int:
        return self.gamma_hat.size

    def alpha(self, t):
        """Fitted baseline ``gamma' B(t)``."""
        t = np.asarray(t, dtype=float)
        out = design(self.basis, np.atleast_1d(t)) @ self.gamma_hat
        return out if t.ndim else float(out[0])


def default_init(data: Dataset, config: FitConfig, basis: SplineBasis | None = None) -> SieveParams:
    """Start at beta = 0 and a flat baseline equal to G(crude event rate)."""
    basis = basis if basis is not None else config.basis.build(data)
    follow = float(data.x.sum())
    if not follow > 0:
        raise ValueError("total follow-up time is zero")
    events = int(data.delta.sum())
    if events == 0:
        raise NoWeightedEventsError("no events: cannot form the crude hazard rate")
    level = config.transform.g_eval(events / follow)
    return SieveParams(np.zeros(data.p), basis.constant_coefficients(level))


def _resolve_init(data, config, basis) -> SieveParams:
    if isinstance(config.init, SieveParams):
        init = config.init
        if init.beta.size != data.p or init.gamma.size != basis.dim:
            raise ValueError("initial parameters do not match data/basis dimensions")
        return init
    return default_init(data, config, basis)


def fit_design(dsn: Design, init: SieveParams, config: FitConfig, basis: SplineBasis, h: float) -> FitResult:
    """Maximize a precomputed objective; shared by the kernel and LVCF fits."""
    tr = config.transform
    p = dsn.p
    if dsn.empty:
        # objective identically zero: nothing to move
        return FitResult(init.beta.copy(), init.gamma.copy(), 0.0, True, 0, 0.0, h, basis, config.s, dsn.n)
    if dsn.ev_w.size == 0:
        raise NoWeightedEventsError("no event has positive kernel weight at this bandwidth")

    def objective(v):
        with np.errstate(over="ignore", invalid="ignore"):
            return evaluate(dsn, v[:p], v[p:], tr)

    res = lbfgs_ascent(objective, init.vector, max_iter=config.max_iter, grad_tol=config.grad_tol)
    beta, gamma = res.x[:p], res.x[p:]
    eta_ev, eta_nd = dsn.eta(beta, gamma)
    touched = bool(np.any(eta_ev < tr.switch_point) or np.any(eta_nd < tr.switch_point))
    out = FitResult(
        beta_hat=beta,
        gamma_hat=gamma,
        loglik=res.value,
        converged=res.converged,
        iterations=res.iterations,
        grad_norm=res.grad_norm,
        h_used=h,
        basis=basis,
        s=config.s,
        n=dsn.n,
        barrier_touched=touched,
        diagnostics={"message": res.message, "evaluations": res.evaluations, "history": res.history},
    )
    if touched:
        out.diagnostics["warnings"] = ["fitted linear predictor reaches the positivity extension of H"]
    return out


def fit(data: Dataset, config: FitConfig, basis: SplineBasis | None = None, variance: bool = True) -> FitResult:
    """Maximum kernel-weighted sieve likelihood fit.

    With a :class:`CVSpec` bandwidth the bandwidth is chosen first by
    :func:`cv_bandwidth` and the report is kept in ``diagnostics["cv"]``.
    """
    basis = basis if basis is not None else config.basis.build(data)
    cv = None
    if isinstance(config.bandwidth, CVSpec):
        spec = config.bandwidth
        cv = cv_bandwidth(data, config, spec.grid, spec.folds, spec.seed, basis=basis)
        h = cv.chosen_h
    else:
        h = config.working_bandwidth(data.n)
    dsn = kernel_design(data, h, basis, config.quad, config.kernel)
    if dsn.empty:
        init = config.init if isinstance(config.init, SieveParams) else SieveParams(np.zeros(data.p), np.zeros(basis.dim))
    else:
        init = _resolve_init(data, config, basis)
    res = fit_design(dsn, init, config, basis, h)
    if cv is not None:
        res.diagnostics["cv"] = cv
    if variance and res.converged and not dsn.empty:
        try:
            cov, se = sandwich_variance(data, res, basis, config.transform, config.quad, kernel=config.kernel, dsn=dsn)
            res.covariance, res.se = cov, se
        except SingularInformationError as exc:
            res.diagnostics["variance_error"] = str(exc)
    return res


@dataclass
class CVReport:
    grid: np.ndarray
    mean_loss: np.ndarray
    chosen_h: float
    fold_count: int
    fold_loss: np.ndarray = None
    convention: str = "mean over folds of per-subject mean held-out negative log-likelihood"


def default_grid(n: int, size: int = 8) -> np.ndarray:
    """Geometric grid on [0.5 n^-0.5, 4 n^-0.4]."""
    return np.geomspace(0.5 * n ** -0.5, 4.0 * n ** -0.4, size)


def fold_labels(n: int, folds: int, seed) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = np.arange(n) % folds
    return labels


def cv_bandwidth(data: Dataset, config: FitConfig, grid=None, folds: int = 5, seed=0,
                 basis: SplineBasis | None = None) -> CVReport:
    """K-fold cross-validated negative kernel-weighted log-likelihood.

    The candidate ``h`` is used both to fit the training folds and to score
    the held-out fold. Ties go to the larger bandwidth.
    """
    if folds < 2:
        raise ValueError("need at least 2 folds")
    grid = np.sort(np.asarray(default_grid(data.n) if grid is None else grid, dtype=float))
    if grid.size == 0 or grid[0] <= 0:
        raise ValueError("CV grid must be nonempty and positive")
    basis = basis if basis is not None else config.basis.build(data)
    labels = fold_labels(data.n, folds, seed)
    tr = config.transform
    losses = np.full((grid.size, folds), np.inf)
    for k in range(folds):
        train = data.subset(np.flatnonzero(labels != k))
        test = data.subset(np.flatnonzero(labels == k))
        for g, h in enumerate(grid):
            try:
                res = fit(train, FitConfig(**{**config.__dict__, "bandwidth": float(h)}), basis=basis, variance=False)
            except NoWeightedEventsError:
                continue
            dsn = kernel_design(test, h, basis, config.quad, config.kernel)
            with np.errstate(over="ignore", invalid="ignore"):
                val = evaluate(dsn, res.beta_hat, res.gamma_hat, tr, grad=False)
            losses[g, k] = -val if np.isfinite(val) else np.inf
    mean = losses.mean(axis=1)
    # reversed argmin so ties land on the larger bandwidth
    best = grid.size - 1 - int(np.argmin(mean[::-1]))
    return CVReport(grid, mean, float(grid[best]), folds, losses)


def _pair_arrays(data: Dataset):
    subj, r, z = data.long_arrays()
    x = data.x[subj]
    keep = r <= x
    order = np.argsort(r[keep], kind="stable")
    return r[keep][order], x[keep][order], z[keep][order]


def risk_moments(times, alpha_t, data: Dataset, beta, tr: BoxCoxTransform, h: float,
                 kernel: KernelSpec = EPANECHNIKOV, chunk: int = 512):
    """Kernel-weighted risk-set moments S0, S1, S2 at each of ``times``.

    ``S_k(t) = (1/n) sum_{ij} 1{R_ij <= t <= X_i} K_h(t - R_ij) Z_ij^k H2(alpha(t) + beta'Z_ij)``
    with H2 = H'^2 / H.
    """
    times = np.asarray(times, dtype=float)
    p = data.p
    r, x, z = _pair_arrays(data)
    zb = z @ beta
    s0 = np.zeros(times.size)
    s1 = np.zeros((times.size, p))
    s2 = np.zeros((times.size, p, p))
    order = np.argsort(times, kind="stable")
    for start in range(0, times.size, chunk):
        idx = order[start:start + chunk]
        tt = times[idx]
        lo = np.searchsorted(r, tt[0] - h, side="right")
        hi = np.searchsorted(r, tt[-1], side="right")
        if hi <= lo:
            continue
        rr, xx, zz = r[lo:hi], x[lo:hi], z[lo:hi]
        lag = tt[:, None] - rr[None, :]
        w = np.where((lag >= 0) & (xx[None, :] >= tt[:, None]), kh_eval(kernel, lag, h), 0.0)
        _, _, _, _, h2 = h_all(tr, alpha_t[idx][:, None] + zb[lo:hi][None, :])
        w = w * h2
        s0[idx] = w.sum(axis=1)
        s1[idx] = w @ zz
        s2[idx] = np.einsum("tk,ka,kb->tab", w, zz, zz)
    n = data.n
    return s0 / n, s1 / n, s2 / n


def sandwich_variance(data: Dataset, result: FitResult, basis: SplineBasis, tr: BoxCoxTransform,
                      quad: QuadratureRule = QuadratureRule(), kernel: KernelSpec = EPANECHNIKOV,
                      dsn: Design | None = None, rcond: float = 1e-12):
    """Plug-in sandwich covariance of beta-hat, ``Xi^-1 Omega Xi^-1 / (n h)``.

    Returns ``(covariance, se)``. Raises :class:`SingularInformationError`
    when Xi is numerically singular relative to the uncentered second moment
    of the covariates.
    """
    if not result.converged:
        raise ValueError("variance requested for a fit that did not converge")
    h = result.h_used
    if dsn is None:
        dsn = kernel_design(data, h, basis, quad, kernel)
    beta, gamma = result.beta_hat, result.gamma_hat
    n, p = data.n, data.p

    eta_ev, eta_nd = dsn.eta(beta, gamma)
    _, _, _, h1_ev, _ = h_all(tr, eta_ev)
    _, _, hp_nd, _, _ = h_all(tr, eta_nd)
    alpha_ev = dsn.ev_B @ gamma
    alpha_nd = dsn.nd_B @ gamma

    s0, s1, s2 = risk_moments(np.concatenate([dsn.ev_t, dsn.nd_t]), np.concatenate([alpha_ev, alpha_nd]),
                              data, beta, tr, h, kernel)
    ok = s0 > 0
    dropped = int((~ok).sum())
    safe = np.where(ok, s0, 1.0)
    zbar = s1 / safe[:, None]
    m2 = s2 / safe[:, None, None]
    ne = dsn.ev_t.size
    zbar_ev, zbar_nd = zbar[:ne], zbar[ne:]
    ok_ev, ok_nd = ok[:ne], ok[ne:]

    wx = np.where(ok_ev, dsn.ev_w * h1_ev ** 2, 0.0)
    centered = m2[:ne] - np.einsum("ta,tb->tab", zbar_ev, zbar_ev)
    xi = np.einsum("t,tab->ab", wx, centered) / n
    raw = np.einsum("t,tab->ab", wx, m2[:ne]) / n

    ev_part = np.where(ok_ev, dsn.ev_w * h1_ev, 0.0)[:, None] * (zbar_ev - dsn.ev_Z)
    nd_part = np.where(ok_nd, dsn.nd_w * hp_nd, 0.0)[:, None] * (zbar_nd - dsn.nd_Z)
    score = np.zeros((n, p))
    np.add.at(score, dsn.ev_subj, ev_part)
    np.add.at(score, dsn.nd_subj, -nd_part)
    omega = (h / n) * score.T @ score

    xi = 0.5 * (xi + xi.T)
    eig = np.linalg.eigvalsh(xi)
    scale = max(np.linalg.eigvalsh(0.5 * (raw + raw.T)).max(initial=0.0), eig.max(initial=0.0))
    if not scale > 0 or eig.min() < rcond * scale:
        raise SingularInformationError(
            f"singular-information: min eigenvalue {eig.min():.3g} vs scale {scale:.3g}")
    left = solve(xi, omega, assume_a="sym")
    cov = solve(xi, left.T, assume_a="sym") / (n * h)
    cov = 0.5 * (cov + cov.T)
    result.diagnostics["dropped_zero_risk"] = dropped
    result.diagnostics["xi"] = xi
    result.diagnostics["omega"] = omega
    return cov, np.sqrt(np.clip(np.diag(cov), 0.0, None))


@dataclass(frozen=True)
class WaldTable:
    estimate: np.ndarray
    se: np.ndarray
    z: np.ndarray
    p: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray


def wald(result: FitResult, level: float = 0.95) -> WaldTable:
    """Per-coefficient Wald z statistics, two-sided p-values and CIs."""
    if result.se is None:
        raise ValueError("fit has no standard errors")
    se = np.asarray(result.se, dtype=float)
    if np.any(se <= 0) or not np.all(np.isfinite(se)):
        raise ValueError("standard errors must be positive and finite")
    est = np.asarray(result.beta_hat, dtype=float)
    z = est / se
    pval = 2.0 * stats.norm.sf(np.abs(z))
    crit = stats.norm.ppf(0.5 + level / 2.0)
    return WaldTable(est, se, z, pval, est - crit * se, est + crit * se)


def bic(result: FitResult, data: Dataset | None = None) -> float:
    """``-2 n loglik + (p + q) log n`` with loglik the mean objective."""
    n = data.n if data is not None else result.n
    return -2.0 * n * result.loglik + (result.p + result.q) * math.log(n)


def cauchy_combine(pvals) -> float:
    """Combine p-values with the Cauchy combination statistic (equal weights)."""
    p = np.asarray(pvals, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("need at least one p-value")
    if np.any(~(p > 0) | ~(p < 1)):
        raise ValueError("p-values must lie strictly inside (0, 1)")
    t = np.mean(np.tan((0.5 - p) * np.pi))
    return float(0.5 - np.arctan(t) / np.pi)
