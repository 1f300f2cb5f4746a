"""Randomized identity suite with a machine-readable report.

Each check owns one id, runs over randomized instances drawn from its own
seed stream, and produces one :class:`CheckReport`. Checks with several
parts report the worst ratio ``metric_i / threshold_i`` against 1.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import quad_vec

from .forward import gaussian_factor, simulate_em_path
from .malliavin import (
    LinearFunctional,
    QuadraticFunctional,
    chain_rule_check,
    covariance_recursion_check,
    covering_field,
    covering_property_check,
    ibp_duality_check,
    malliavin_covariance,
    malliavin_covariance_group,
    minimal_norm_check,
    skorokhod_statistics,
    trace_identity_check,
)
from .reverse import ReverseConfig, discrete_moments, run_reverse
from .score import bismut_consistency_demo, gaussian_logdensity_oracle, make_score_context, score_full
from .spectral import hs_condition_value, make_dense_q, make_dirichlet_laplacian, make_power_law_q

PROFILES = {
    "quick": dict(
        max_modes=8, sweep=20, quad_instances=20, mc_paths=10_000, mc_steps=256, mc_modes=4,
        bismut_samples=100_000, reverse_modes=4, reverse_samples=10_000, reverse_steps=256,
    ),
    "full": dict(
        max_modes=64, sweep=100, quad_instances=100, mc_paths=100_000, mc_steps=512, mc_modes=4,
        bismut_samples=1_000_000, reverse_modes=8, reverse_samples=100_000, reverse_steps=512,
    ),
}

# quadrature-based checks are kept to moderate N: the covering residual grows
# with cond(gamma), which for lambda_k ~ -k^2 grows like N^(p+2)
QUAD_MAX_MODES = 16

ANALYTIC_TOL = 1e-12
PROJECTION_TOL = 1e-10
FD_TOL = 1e-6
SINGLE_SIGMA = 3.0
SWEEP_SIGMA = 4.0


@dataclass(frozen=True)
class CheckReport:
    check_id: str
    instance: dict
    metric: float
    threshold: float
    components: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.metric <= self.threshold else "fail"

    def to_dict(self) -> dict:
        return {
            "check": self.check_id,
            "instance": self.instance,
            "metric": self.metric,
            "threshold": self.threshold,
            "verdict": self.verdict,
            "components": self.components,
        }


def _report(check_id, instance, parts):
    """``parts``: name -> (metric, threshold)."""
    comps = {k: {"metric": float(m), "threshold": float(t)} for k, (m, t) in parts.items()}
    if len(parts) == 1:
        (m, t), = parts.values()
        return CheckReport(check_id, instance, float(m), float(t), comps)
    worst = max(m / t for m, t in parts.values())
    return CheckReport(check_id, instance, float(worst), 1.0, comps)


def random_instance(rng, n_modes, q_family="dense", kernel_modes=0):
    """``lambda_k = -nu k^2`` with ``nu`` in [0.1, 2] and a power-law or dense ``Q``.

    ``kernel_modes`` modes are decoupled from the noise, giving gamma an exact kernel.
    """
    nu = float(rng.uniform(0.1, 2.0))
    spec = make_dirichlet_laplacian(n_modes, np.pi, nu)
    if q_family == "power":
        Q = make_power_law_q(n_modes, float(rng.uniform(0.5, 2.0)), float(rng.uniform(1.5, 3.0)))
    else:
        B = rng.standard_normal((n_modes, n_modes)) / np.arange(1, n_modes + 1)[:, None]
        if kernel_modes:
            dead = rng.choice(n_modes, size=kernel_modes, replace=False)
            B[dead] = 0.0
        Q = make_dense_q(B @ B.T)
    desc = {"n_modes": n_modes, "nu": nu, "q_family": q_family, "kernel_modes": kernel_modes}
    return spec, Q, desc


def quadrature_covariance(spec, Q, t):
    """Adaptive quadrature of ``int_0^t S(s) Q S(s)^* ds`` on the matrix integrand."""
    lam = spec.lambdas

    def integrand(s):
        y = np.exp(lam * s)
        return y[:, None] * Q.q * y[None, :]

    val, _ = quad_vec(integrand, 0.0, t, epsabs=0.0, epsrel=1e-14, norm="max", limit=2000)
    return val


def _rel_max(a, b):
    scale = np.abs(b).max()
    return float(np.abs(a - b).max() / scale) if scale > 0 else float(np.abs(a).max())


def check_covariance_closed_form(rng, prof):
    worst, worst_group, desc = 0.0, 0.0, None
    for i in range(prof["quad_instances"]):
        n = int(rng.integers(1, QUAD_MAX_MODES + 1))
        spec, Q, d = random_instance(rng, n, "power" if i % 2 else "dense")
        t = float(rng.uniform(0.05, 2.0))
        cov = malliavin_covariance(spec, Q, t)
        err = _rel_max(cov.gamma, quadrature_covariance(spec, Q, t))
        tg = min(t, 30.0 / max(1e-12, -2 * spec.lambdas.min()))
        gerr = _rel_max(malliavin_covariance_group(spec, Q, tg), malliavin_covariance(spec, Q, tg).gamma)
        if err > worst:
            worst, desc = err, dict(d, t=t)
        worst_group = max(worst_group, gerr)
    return {"closed_vs_quadrature": (worst, ANALYTIC_TOL), "group_factorization": (worst_group, ANALYTIC_TOL)}, desc


def check_covariance_recursion(rng, prof):
    n = min(prof["max_modes"], 16)
    spec, Q, d = random_instance(rng, n, "dense")
    worst = max(
        covariance_recursion_check(spec, Q, *map(float, rng.uniform(0.0, 2.0, size=2)))
        for _ in range(50)
    )
    return {"recursion": (worst, ANALYTIC_TOL)}, d


def check_moore_penrose(rng, prof):
    worst, desc = 0.0, None
    for i in range(prof["sweep"]):
        n = int(rng.integers(2, min(prof["max_modes"], QUAD_MAX_MODES) + 1))
        spec, Q, d = random_instance(rng, n, "dense", kernel_modes=int(rng.integers(0, n)))
        cov = malliavin_covariance(spec, Q, float(rng.uniform(0.1, 2.0)))
        g, p = cov.gamma, cov.pinv
        gs = max(np.abs(g).max(), 1e-300)
        ps = max(np.abs(p).max(), 1e-300)
        e = max(
            np.abs(g @ p @ g - g).max() / gs,
            np.abs(p @ g @ p - p).max() / ps,
            np.abs(g @ p - (g @ p).T).max(),
        )
        if e > worst:
            worst, desc = float(e), d
    return {"moore_penrose": (worst, PROJECTION_TOL)}, desc


def _random_direction(rng, cov):
    h = rng.standard_normal(cov.n_modes)
    kind = rng.integers(0, 3)
    if kind == 1:  # range only
        h = cov.projection @ h
    elif kind == 2:  # kernel only
        h = h - cov.projection @ h
    return h


def check_covering(rng, prof):
    worst, desc = 0.0, None
    for i in range(prof["sweep"]):
        n = int(rng.integers(1, min(prof["max_modes"], QUAD_MAX_MODES) + 1))
        k = int(rng.integers(0, n))
        spec, Q, d = random_instance(rng, n, "dense", kernel_modes=k)
        cov = malliavin_covariance(spec, Q, float(rng.uniform(0.2, 2.0)))
        res = covering_property_check(spec, Q, cov, _random_direction(rng, cov))
        e = max(res.residual_closed, res.residual_quad)
        if e > worst:
            worst, desc = e, dict(d, t=cov.t)
    return {"covering": (worst, PROJECTION_TOL)}, desc


def check_minimal_norm(rng, prof):
    n = min(4, prof["max_modes"])
    spec, Q, d = random_instance(rng, n, "dense", kernel_modes=1)
    cov = malliavin_covariance(spec, Q, 1.0)
    pyth = orth = gg = 0.0
    for _ in range(20):
        h = cov.projection @ rng.standard_normal(n)
        r = minimal_norm_check(spec, Q, cov, h, rng)
        pyth = max(pyth, r.pythagoras_residual)
        orth = max(orth, r.orthogonality_residual)
        gg = max(gg, r.gamma_g_residual)
    parts = {
        "pythagoras": (pyth, PROJECTION_TOL),
        "orthogonality": (orth, PROJECTION_TOL),
        "candidate_covers_gamma_g": (gg, PROJECTION_TOL),
    }
    return parts, d


def _mc_instance(rng, prof):
    n = prof["mc_modes"]
    spec = make_dirichlet_laplacian(n, np.pi, 0.1)
    B = rng.standard_normal((n, n)) / np.arange(1, n + 1)[:, None]
    Q = make_dense_q(B @ B.T)
    return spec, Q, {"n_modes": n, "nu": 0.1, "q_family": "dense", "T": 1.0}


def check_skorokhod(rng, prof):
    spec, Q, d = _mc_instance(rng, prof)
    cov = malliavin_covariance(spec, Q, 1.0)
    h = rng.standard_normal(spec.n_modes)
    h /= np.linalg.norm(h)
    field = covering_field(spec, Q, cov, h)
    st = skorokhod_statistics(spec, Q, field, prof["mc_paths"], prof["mc_steps"], int(rng.integers(2**32)))
    parts = {"mean_z": (abs(st.z_mean), SINGLE_SIGMA), "isometry_z": (abs(st.z_variance), SINGLE_SIGMA)}
    return parts, dict(d, paths=prof["mc_paths"], steps=prof["mc_steps"])


def check_ibp(rng, prof):
    spec, Q, d = _mc_instance(rng, prof)
    h = rng.standard_normal(spec.n_modes)
    h /= np.linalg.norm(h)
    u0 = 0.5 * rng.standard_normal(spec.n_modes)
    r = ibp_duality_check(
        spec, Q, u0, h, 1.0, prof["mc_paths"], int(rng.integers(2**32)), n_steps=prof["mc_steps"]
    )
    excess = max(abs(r.estimate - r.target) - abs(r.bias), 0.0) / r.stderr
    return {"z_beyond_dt_band": (excess, SINGLE_SIGMA)}, dict(d, paths=prof["mc_paths"])


def check_trace_identity(rng, prof):
    spec, Q, d = _mc_instance(rng, prof)
    r = trace_identity_check(spec, Q, 1.0, prof["mc_paths"], prof["mc_steps"], int(rng.integers(2**32)))
    worst_an = r.analytic_residual
    for _ in range(prof["sweep"]):
        n = int(rng.integers(1, prof["max_modes"] + 1))
        s2, Q2, _ = random_instance(rng, n, "dense")
        cov = malliavin_covariance(s2, Q2, float(rng.uniform(0.05, 2.0)))
        hs = hs_condition_value(s2, Q2, cov.t)
        worst_an = max(worst_an, abs(cov.trace - hs) / max(abs(hs), 1e-300))
    return {"trace_vs_hs": (worst_an, ANALYTIC_TOL), "mc_z": (abs(r.z_score), SINGLE_SIGMA)}, d


def check_chain_rule(rng, prof):
    worst, desc = 0.0, None
    for i in range(20):
        n = int(rng.integers(1, 7))
        spec, Q, d = random_instance(rng, n, "dense" if i % 2 else "power")
        path = simulate_em_path(spec, Q, rng.standard_normal(n), 1.0 / 64, 1.0, rng)
        r = float(rng.uniform(0.0, 1.0))
        B = rng.standard_normal((n, n))
        for phi in (LinearFunctional(rng.standard_normal(n)), QuadraticFunctional(B + B.T)):
            e = chain_rule_check(spec, Q, path, phi, r).error
            if e > worst:
                worst, desc = e, dict(d, r=r, functional=type(phi).__name__)
    return {"chain_rule": (worst, FD_TOL)}, desc


def _fd_gradient(ctx, u):
    sig = np.sqrt(np.diag(ctx.cov.gamma))
    g = np.empty(u.size)
    for k in range(u.size):
        e = np.zeros(u.size)
        e[k] = 1e-5 * sig[k]
        g[k] = (gaussian_logdensity_oracle(ctx, u + e) - gaussian_logdensity_oracle(ctx, u - e)) / (2 * e[k])
    return g


def check_score(rng, prof, score_fn=score_full):
    worst, desc = 0.0, None
    for i in range(prof["sweep"]):
        n = int(rng.integers(1, min(prof["max_modes"], 8) + 1))
        spec, Q, d = random_instance(rng, n, "dense" if i % 2 else "power")
        T = float(rng.uniform(0.2, 2.0))
        ctx = make_score_context(spec, Q, rng.standard_normal(n), T)
        u = ctx.mean + gaussian_factor(ctx.cov.gamma) @ (rng.uniform(0.5, 2.0) * rng.standard_normal(n))
        s = score_fn(ctx, u)
        fd = _fd_gradient(ctx, u)
        e = float(np.linalg.norm(s - fd) / max(np.linalg.norm(fd), 1e-300))
        if e > worst:
            worst, desc = e, dict(d, T=T)
    spec1 = make_dirichlet_laplacian(1, np.pi, 1.0)
    Q1 = make_power_law_q(1, 1.0, 2.0)
    ctx1 = make_score_context(spec1, Q1, [0.3], 1.0)
    var = (1.0 - np.exp(-2.0)) / 2.0
    m = 0.3 * np.exp(-1.0)
    scal = 0.0
    for u in (-1.0, 0.25, 1.0, 2.5):
        exact = -(u - m) / var
        scal = max(scal, abs(float(score_fn(ctx1, np.array([u]))[0]) - exact) / abs(exact))
    return {"fd_oracle": (worst, FD_TOL), "single_mode_exact": (scal, ANALYTIC_TOL)}, desc


def check_bismut(rng, prof):
    spec = make_dirichlet_laplacian(1, np.pi, 1.0)
    Q = make_power_law_q(1, 1.0, 2.0)
    ctx = make_score_context(spec, Q, [0.0], 1.0)
    demo = bismut_consistency_demo(ctx, [1.0], prof["bismut_samples"], 21, int(rng.integers(2**32)))
    zs = [abs(r.z) for r in demo.rows if r.count >= demo.min_count]
    return {"max_bin_z": (max(zs), SWEEP_SIGMA)}, {"n_modes": 1, "samples": prof["bismut_samples"], "bins": 21}


def _chi2_z(stat, dof):
    """Chi-square statistic as an equivalent one-sided standard normal z-score."""
    return float(stats.norm.isf(stats.chi2.sf(stat, dof)))


def reverse_tracking(spec, Q, u0, T, n_steps, n_samples, seed, mode="sde", workers=1):
    """Moments at ``t_min`` split into a Monte Carlo part and a step-size part.

    ``emp - target = (emp - scheme) + (scheme - target)``. The first term is pure
    sampling noise around the exact moments of the discrete recursion and is
    summarised by one omnibus z-score per moment: Hotelling for the mean, whitened
    Frobenius (Wishart limit) for the covariance. The second is the deterministic
    dt band, which must be first order: it halves when the step count doubles.
    ``entry_z_max`` is the largest per-entry deviation beyond the band, kept as a
    diagnostic only, since a max over many entries is not a single 3-sigma test.
    """
    cfg = ReverseConfig(T=T, n_steps=n_steps, mode=mode, seed=seed)
    res = run_reverse(spec, Q, u0, cfg, n_samples, workers=workers)
    m_h, P_h = discrete_moments(spec, Q, u0, cfg)
    m_2h, P_2h = discrete_moments(spec, Q, u0, ReverseConfig(T=T, n_steps=2 * n_steps, mode=mode, seed=seed))
    x = res.end
    n, N = x.shape
    emp_m = x.mean(axis=0)
    emp_P = np.cov(x, rowvar=False).reshape(N, N)

    Li = np.linalg.inv(np.linalg.cholesky(P_h))
    d = Li @ (emp_m - m_h)
    E = Li @ emp_P @ Li.T - np.eye(N)
    z_mean = _chi2_z(n * (d @ d), N)
    z_cov = _chi2_z(0.5 * n * np.sum(E * E), N * (N + 1) // 2)

    dg = np.diag(emp_P)
    se_m = np.sqrt(dg / n)
    se_P = np.sqrt((np.outer(dg, dg) + emp_P**2) / n)
    band_m = np.abs(m_h - res.mean_tmin)
    band_P = np.abs(P_h - res.cov_tmin)
    entry_z = max(
        np.max((np.abs(emp_m - res.mean_tmin) - band_m).clip(0) / se_m),
        np.max((np.abs(emp_P - res.cov_tmin) - band_P).clip(0) / se_P),
    )
    err_h = band_P.max()
    err_2h = np.abs(P_2h - res.cov_tmin).max()
    return {
        "mean_z": z_mean,
        "cov_z": z_cov,
        "ratio": float(err_h / err_2h),
        "entry_z_max": float(entry_z),
        "band": float(max(band_m.max(), err_h)),
        "result": res,
    }


def check_reverse(rng, prof):
    n = prof["reverse_modes"]
    spec = make_dirichlet_laplacian(n, np.pi, 0.5)
    Q = make_power_law_q(n, 1.0, 2.0)
    u0 = 1.0 / np.arange(1, n + 1)
    r = reverse_tracking(spec, Q, u0, 1.0, prof["reverse_steps"], prof["reverse_samples"], int(rng.integers(2**32)))
    parts = {
        "mean_z": (r["mean_z"], SINGLE_SIGMA),
        "cov_z": (r["cov_z"], SINGLE_SIGMA),
        "ratio_minus_2": (abs(r["ratio"] - 2.0), 0.3),
    }
    desc = {
        "n_modes": n, "nu": 0.5, "q_family": "power", "samples": prof["reverse_samples"],
        "entry_z_max": r["entry_z_max"], "dt_band": r["band"],
    }
    return parts, desc


CHECKS = {
    "bismut.binned_demo": check_bismut,
    "chain_rule.finite_difference": check_chain_rule,
    "covariance.closed_form": check_covariance_closed_form,
    "covariance.recursion": check_covariance_recursion,
    "covering.projection": check_covering,
    "covering.minimal_norm": check_minimal_norm,
    "duality.integration_by_parts": check_ibp,
    "pinv.moore_penrose": check_moore_penrose,
    "reverse.marginal_tracking": check_reverse,
    "score.fd_oracle": check_score,
    "skorokhod.ito_isometry": check_skorokhod,
    "trace.hs_identity": check_trace_identity,
}


def run_suite(profile: str = "quick", seed: int = 0, workers: int = 1, checks=None, score_fn=None):
    """Run every check (or the named subset); reports come back sorted by check id.

    ``score_fn`` replaces the score used by the score-exactness check, which is
    how mutation tests inject a broken score.
    """
    prof = PROFILES[profile]
    ids = sorted(CHECKS if checks is None else checks)
    children = np.random.SeedSequence(int(seed)).spawn(len(CHECKS))
    streams = dict(zip(sorted(CHECKS), children))

    def run(cid):
        rng = np.random.Generator(np.random.Philox(streams[cid]))
        fn = CHECKS[cid]
        if cid == "score.fd_oracle" and score_fn is not None:
            parts, desc = fn(rng, prof, score_fn=score_fn)
        else:
            parts, desc = fn(rng, prof)
        return _report(cid, dict(desc or {}, profile=profile, seed=int(seed)), parts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(run, ids))
    return [run(cid) for cid in ids]


def report_json(reports) -> str:
    doc = {
        "passed": all(r.verdict == "pass" for r in reports),
        "checks": [r.to_dict() for r in reports],
    }
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))
