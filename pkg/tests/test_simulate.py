import numpy as np
import pytest
from scipy import integrate, stats

from hazardsieve.data import from_arrays
from hazardsieve.estimator import BasisConfig, FitConfig, fit
from hazardsieve.simulate import (
    DESIGN_KNOTS,
    SimConfig,
    alpha_true,
    calibrate_censoring,
    censoring_rate,
    covariates_from_normals,
    cumulative_hazard,
    draw_covariates,
    draw_obs_times,
    failure_times,
    fit_lvcf,
    gen_dataset,
    method_config,
    obs_rate,
    run_study,
    summarize,
    true_hazard,
)

C_LOWER = 0.88


def additive_cumhaz(beta, z1_steps, z2, t, segments=20):
    """Closed-form Lambda(t) for s=1, where H is the identity shifted by one."""
    w = 2 * np.pi

    def prim(u, level):
        # antiderivative of 1 + alpha_1(u) + b1*level + b2*z2
        trig = -u * np.cos(w * (u - 0.25)) / w + np.sin(w * (u - 0.25)) / w**2
        return (1.75 + beta[0] * level + beta[1] * z2) * u + 0.375 * u**2 - 0.75 * trig

    total = np.zeros(t.size)
    for k in range(segments):
        a = k / segments
        # the last level stays frozen beyond t = 1
        b = np.clip(t, a, a + 1 / segments if k < segments - 1 else np.inf)
        lev = z1_steps[:, k]
        total += np.where(t > a, prim(b, lev) - prim(a, lev), 0.0)
    return total


def test_covariates_zero_latent():
    z1, z2 = covariates_from_normals(np.zeros((3, 20)), np.array([-1.0, 0.5, 2.0]))
    assert np.all(z1 == 0.0)
    assert z2.tolist() == [0.0, 1.0, 1.0]


def test_covariate_range_and_correlation():
    rng = np.random.default_rng(0)
    cfg = SimConfig()
    z1, z2 = draw_covariates(cfg, rng, 100_000)
    assert np.all(np.abs(z1) < 1)
    assert set(np.unique(z2)) <= {0.0, 1.0}
    latent = stats.norm.ppf(z1 / 2 + 0.5)
    cov = np.cov(latent, rowvar=False)
    idx = np.arange(20)
    assert np.max(np.abs(cov - np.exp(-np.abs(idx[:, None] - idx[None, :]) / 20))) < 0.02
    for j, k in [(0, 1), (0, 10), (5, 19)]:
        assert cov[j, k] == pytest.approx(np.exp(-abs(j - k) / 20), abs=0.01)


def test_true_hazard_points():
    assert alpha_true(1, 0.0) == pytest.approx(0.75)
    assert true_hazard(SimConfig(s=1), 0.0, 0.0, 0.0) == pytest.approx(1.75)
    # alpha(0) = 0.75 (s + 1) / 2, i.e. 0.375 when s = 0
    assert true_hazard(SimConfig(s=0), 0.0, 0.0, 0.0) == pytest.approx(np.exp(0.375))
    assert true_hazard(SimConfig(s=1), 0.0, -1.0, 1.0) == pytest.approx(0.25)
    t = np.linspace(0, 1, 201)
    for z1 in (-1, 1):
        for z2 in (0, 1):
            assert np.all(true_hazard(SimConfig(s=1), t, z1, z2) > 0)


def test_pit_against_closed_form():
    cfg = SimConfig(s=1.0)
    rng = np.random.default_rng(11)
    z1, z2 = draw_covariates(cfg, rng, 100_000)
    e = rng.exponential(size=100_000)
    t = failure_times(cfg, z1, z2, e)
    lam = additive_cumhaz(cfg.beta, z1, z2, t)
    assert np.max(np.abs(lam - e)) < 1e-8
    assert stats.kstest(lam, "expon").statistic < 0.01


def test_pit_proportional_hazards():
    cfg = SimConfig(s=0.0)
    rng = np.random.default_rng(12)
    z1, z2 = draw_covariates(cfg, rng, 100_000)
    t = failure_times(cfg, z1, z2, rng.exponential(size=100_000))
    assert stats.kstest(cumulative_hazard(cfg, z1, z2, t), "expon").statistic < 0.01
    # spot-check the production cumulative hazard with adaptive quadrature
    for i in range(5):
        pts = np.arange(1, 20) / 20
        ref, _ = integrate.quad(lambda u: float(np.exp(alpha_true(0, u) + z1[i, min(int(u * 20), 19)] - 0.5 * z2[i])),
                                0, t[i], points=pts[pts < t[i]], epsabs=1e-12, limit=200)
        assert cumulative_hazard(cfg, z1[i], z2[i], t[i])[0] == pytest.approx(ref, rel=1e-9)


def test_failure_edge_cases():
    cfg = SimConfig(s=0.0)
    z1 = np.zeros((2, 20))
    assert failure_times(cfg, z1, [0.0, 0.0], [0.0, 0.0]).tolist() == [0.0, 0.0]


def test_hazard_doubling_halves_time():
    # s=0: shifting Z1 by log 2 doubles the hazard, so Lambda doubles everywhere
    cfg = SimConfig(s=0.0)
    rng = np.random.default_rng(2)
    z1, z2 = draw_covariates(cfg, rng, 5000)
    e = rng.exponential(size=5000)
    doubled = failure_times(cfg, z1 + np.log(2), z2, e)
    assert np.allclose(doubled, failure_times(cfg, z1, z2, e / 2), atol=1e-9)
    # near t = 0 the baseline is flat, so the median time halves
    z1c, z2c = np.zeros((5000, 20)), np.zeros(5000)
    small = e * 1e-4
    ratio = np.median(failure_times(cfg, z1c + np.log(2), z2c, small)) / np.median(failure_times(cfg, z1c, z2c, small))
    assert ratio == pytest.approx(0.5, rel=1e-3)


def test_observation_process():
    cfg = SimConfig()
    rng = np.random.default_rng(3)
    counts = np.empty(100_000)
    for k in range(counts.size):
        r = draw_obs_times(cfg, rng)
        counts[k] = r.size
        if k < 1000:
            assert np.all((r >= 0) & (r <= 1))
            assert np.all(np.diff(r) >= 0)
    assert counts.mean() == pytest.approx(8.0, abs=0.05)
    t = np.linspace(0, 1, 10_001)
    assert np.all(obs_rate(cfg, t) <= cfg.envelope + 1e-12)
    assert cfg.envelope == 12.0


def test_calibration_deterministic_and_monotone():
    cfg = SimConfig(s=0.0)
    a = calibrate_censoring(cfg, 0.2, trials=10_000, seed=4)
    b = calibrate_censoring(cfg, 0.2, trials=10_000, seed=4)
    assert a == b
    more = calibrate_censoring(cfg, 0.5, trials=10_000, seed=4)
    assert more < a
    with pytest.raises(ValueError):
        calibrate_censoring(cfg, 0.999, trials=10_000, seed=4)
    assert censoring_rate(cfg, -1.0, trials=10_000) > censoring_rate(cfg, 1.0, trials=10_000)


def test_dataset_censoring_and_support():
    cfg = SimConfig(s=0.0, n=100_000)
    cfg = SimConfig(s=0.0, n=100_000, c_lower=calibrate_censoring(cfg, 0.2, seed=0))
    d, truth = gen_dataset(cfg, np.random.default_rng(9), return_truth=True)
    assert np.mean(~d.delta) == pytest.approx(0.2, abs=0.02)
    assert np.all(d.x <= 1.0)
    assert np.all(truth["t"][d.delta] <= truth["c"][d.delta])
    assert np.array_equal(d.x, np.minimum(truth["t"], truth["c"]))


def test_gen_dataset_deterministic():
    cfg = SimConfig(s=1.0, n=30, c_lower=C_LOWER)
    a = gen_dataset(cfg, np.random.default_rng([1, 2]))
    b = gen_dataset(cfg, np.random.default_rng([1, 2]))
    assert a == b
    with pytest.raises(ValueError):
        gen_dataset(SimConfig(), np.random.default_rng(0))


def test_measured_values_follow_path():
    cfg = SimConfig(s=0.0, n=20, c_lower=C_LOWER)
    d, truth = gen_dataset(cfg, np.random.default_rng(4), return_truth=True)
    subj, times, z = d.long_arrays()
    k = np.minimum((times * 20).astype(int), 19)
    assert np.array_equal(z[:, 0], truth["z1"][subj, k])
    assert np.array_equal(z[:, 1], truth["z2"][subj])


def test_lvcf_single_measurement_constant_path():
    d = from_arrays([0.7, 0.5, 0.9], [1, 1, 0], [0, 1, 2], [0.0, 0.0, 0.0], [[0.5], [-1.0], [0.2]], tau=1.0)
    from hazardsieve.simulate import lvcf_design
    from hazardsieve.spline import build_basis

    dsn = lvcf_design(d, build_basis(3, DESIGN_KNOTS))
    for i, zi in enumerate([0.5, -1.0, 0.2]):
        assert np.all(dsn.nd_Z[dsn.nd_subj == i] == zi)
    assert np.allclose(np.bincount(dsn.nd_subj, dsn.nd_w), [0.7, 0.5, 0.9])


def test_lvcf_agrees_with_kernel_fit_when_covariates_constant():
    cfg = SimConfig(s=0.0, n=400, segments=1, c_lower=C_LOWER)
    d = gen_dataset(cfg, np.random.default_rng(8))
    d = d.subset(np.flatnonzero(d.counts > 0))
    basis = BasisConfig(3, DESIGN_KNOTS)
    a = fit_lvcf(d, FitConfig(s=0.0, basis=basis))
    b = fit(d, FitConfig(s=0.0, bandwidth=400 ** -0.4, basis=basis))
    assert a.converged and b.converged
    assert np.all(np.abs(a.beta_hat - b.beta_hat) < 2 * b.se)


def test_method_config():
    cfg = SimConfig(n=200)
    assert method_config("smkle04", cfg).bandwidth == pytest.approx(200 ** -0.4)
    assert method_config("smkle05", cfg).bandwidth == pytest.approx(200 ** -0.5)
    with pytest.raises(ValueError):
        method_config("kaplan", cfg)


def test_summarize_single_rep():
    rep = summarize("smkle04", [1.0, -0.5], [[1.1, -0.4]], [[0.2, 0.3]], reps=1)
    assert rep.se is None
    assert rep.rb == pytest.approx([0.1, 0.2])
    assert rep.cp.tolist() == [100.0, 100.0]
    rows = list(rep.rows())
    assert rows[0]["SE"] is None


def test_summarize_failures():
    rep = summarize("lvcf", [1.0], [[1.0], [np.nan], [1.2]], [[0.1], [np.nan], [0.1]], reps=3)
    assert rep.failures == 1
    assert rep.cp.tolist() == [50.0]


def test_run_study_deterministic():
    cfg = SimConfig(s=1.0, n=50, c_lower=C_LOWER)
    a = run_study(cfg, 3, ("smkle04", "lvcf"), master_seed=5)
    b = run_study(cfg, 3, ("smkle04", "lvcf"), master_seed=5)
    for m in a:
        assert np.array_equal(a[m].estimates, b[m].estimates, equal_nan=True)
        assert np.array_equal(a[m].std_errors, b[m].std_errors, equal_nan=True)
    with pytest.raises(ValueError):
        run_study(cfg, 1, ("bogus",))


def test_z1_marginal_uniform():
    z1, _ = draw_covariates(SimConfig(), np.random.default_rng(21), 100_000)
    assert stats.kstest(z1[:, 7], "uniform", args=(-1, 2)).statistic < 0.01


def test_censoring_nonincreasing_in_c_lower():
    cfg = SimConfig(s=0.5)
    rates = [censoring_rate(cfg, c, trials=20_000, seed=6) for c in np.linspace(-1, 1, 9)]
    assert np.all(np.diff(rates) <= 0)


@pytest.mark.slow
@pytest.mark.parametrize("s", [0.0, 0.5, 1.0])
def test_lvcf_attenuation_n400(s):
    reps = run_study(SimConfig(s=s, n=400), 200, ("smkle04", "lvcf"), master_seed=40)
    assert abs(reps["lvcf"].rb[0]) > abs(reps["smkle04"].rb[0])
