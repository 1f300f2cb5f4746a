"""Exact score of the terminal law and an independent Gaussian log-density oracle."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import InvalidParameterError, OutOfRangeWarning, OutOfSupportWarning
from .forward import path_functionals
from .malliavin import (
    PINV_THRESHOLD,
    RANGE_TOL,
    MalliavinCov,
    covering_field,
    ito_weights,
    malliavin_covariance,
)
from .rng import STREAM_FIELDS
from .spectral import HilbertState, ModeSpectrum, TraceClassQ, as_coeffs


@dataclass(frozen=True)
class ScoreContext:
    spec: ModeSpectrum
    Q: TraceClassQ
    u0: np.ndarray
    T: float
    cov: MalliavinCov
    mean: np.ndarray


def make_score_context(
    spec: ModeSpectrum, Q: TraceClassQ, u0, T: float, pinv_threshold: float = PINV_THRESHOLD
) -> ScoreContext:
    x0 = np.array(as_coeffs(u0, spec))
    x0.setflags(write=False)
    mean = np.exp(spec.lambdas * T) * x0
    mean.setflags(write=False)
    return ScoreContext(spec, Q, x0, float(T), malliavin_covariance(spec, Q, T, pinv_threshold), mean)


def score_full(ctx: ScoreContext, u):
    """``-gamma^+ (u - S(T) u0)``; accepts a single state or a ``(B, N)`` batch."""
    x = as_coeffs(u, ctx.spec)
    s = -(x - ctx.mean) @ ctx.cov.pinv
    if isinstance(u, HilbertState):
        return HilbertState(s, u.basis_id)
    return s


def score_directional(ctx: ScoreContext, u, h) -> float:
    """Directional score ``<score_full(u), h>``; warns when ``h`` leaves the range of gamma."""
    hv = as_coeffs(h, ctx.spec)
    if np.any(hv) and ctx.cov.out_of_range(hv):
        warnings.warn("direction has a component outside Ran(gamma)", OutOfRangeWarning, stacklevel=2)
    return float(as_coeffs(score_full(ctx, as_coeffs(u, ctx.spec))) @ hv)


def gaussian_logdensity_oracle(ctx: ScoreContext, u) -> float:
    """Log-density of ``N(S(T) u0, gamma)`` on its affine support.

    Built from its own eigendecomposition of gamma, independent of the
    pseudoinverse used by :func:`score_full`.
    """
    d = as_coeffs(u, ctx.spec) - ctx.mean
    mu, V = np.linalg.eigh(ctx.cov.gamma)
    top = mu.max()
    keep = mu > ctx.cov.pinv_threshold * top if top > 0 else np.zeros(mu.shape, bool)
    c = V.T @ d
    off = np.linalg.norm(c[~keep])
    if off > RANGE_TOL * max(np.linalg.norm(d), 1e-300):
        warnings.warn("state lies outside the support of the terminal law", OutOfSupportWarning, stacklevel=2)
    ck, mk = c[keep], mu[keep]
    return float(-0.5 * np.sum(ck**2 / mk) - 0.5 * np.sum(np.log(2.0 * np.pi * mk)))


@dataclass(frozen=True)
class BismutRow:
    center: float
    count: int
    mc_mean: float
    stderr: float
    bin_target: float
    center_value: float

    @property
    def z(self) -> float:
        return (self.mc_mean - self.bin_target) / self.stderr if self.stderr > 0 else 0.0


@dataclass(frozen=True)
class BismutDemo:
    rows: list
    min_count: int = 200
    z_limit: float = 4.0

    @property
    def passed(self) -> bool:
        return all(abs(r.z) <= self.z_limit for r in self.rows if r.count >= self.min_count)


def bismut_consistency_demo(
    ctx: ScoreContext, h, n_samples: int, n_bins: int, seed: int, n_steps: int = 128, workers: int = 1
) -> BismutDemo:
    """Binned Monte Carlo ``E[delta(v_h) | u(T) in bin]`` against the analytic score.

    Single-mode only. ``u(T)`` and ``delta(v_h)`` come from the same increments
    (grid mild solution and left-point Ito sum). Each bin is compared with
    ``gamma^+ h (E[u | u in bin] - m)``, the exact bin average of
    ``-score(u) h``, using the truncated-normal mean of the analytic law.
    ``center_value`` is ``-score`` at the bin centre, for display.
    """
    if ctx.spec.n_modes != 1:
        raise InvalidParameterError("the binned demonstration is single-mode")
    if n_bins < 5:
        raise InvalidParameterError("need at least 5 bins")
    hv = as_coeffs(h, ctx.spec)
    m = float(ctx.mean[0])
    var = float(ctx.cov.gamma[0, 0])
    sigma = np.sqrt(var)
    pinv = float(ctx.cov.pinv[0, 0])
    edges = np.linspace(m - 3 * sigma, m + 3 * sigma, n_bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    if not np.any(hv):
        rows = [BismutRow(float(c), 0, 0.0, 0.0, 0.0, 0.0) for c in centers]
        return BismutDemo(rows)

    field = covering_field(ctx.spec, ctx.Q, ctx.cov, hv)
    times = np.linspace(0.0, ctx.T, n_steps + 1)
    out = path_functionals(
        ctx.spec, ctx.Q, ctx.u0, ctx.T, n_steps, n_samples, seed,
        em=False, conv=True, weights=[ito_weights(field, times)],
        workers=workers, stream=STREAM_FIELDS,
    )
    u = m + out["conv"][:, 0]
    delta = out["ito"][:, 0]
    idx = np.digitize(u, edges) - 1

    a, b = (edges[:-1] - m) / sigma, (edges[1:] - m) / sigma
    mass = norm.cdf(b) - norm.cdf(a)
    trunc_mean = sigma * (norm.pdf(a) - norm.pdf(b)) / mass

    rows = []
    for k in range(n_bins):
        sel = delta[idx == k]
        n = sel.size
        mc = float(sel.mean()) if n else float("nan")
        se = float(sel.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        rows.append(
            BismutRow(
                float(centers[k]), int(n), mc, se,
                float(pinv * hv[0] * trunc_mean[k]),
                float(pinv * hv[0] * (centers[k] - m)),
            )
        )
    return BismutDemo(rows)


def kernel_regression_demo(ctx: ScoreContext, h, points, n_samples: int, seed: int, n_steps: int = 128, workers: int = 1):
    """Nadaraya-Watson estimate of ``E[delta(v_h) | u(T) = u]`` at ``points``. Diagnostic only.

    Gaussian kernel with bandwidth ``0.5 * std(u) * n^(-1/5)``. Returns
    ``(estimate, analytic)`` where ``analytic = gamma^+ h (u - m)``.
    """
    if ctx.spec.n_modes != 1:
        raise InvalidParameterError("the kernel-regression demonstration is single-mode")
    hv = as_coeffs(h, ctx.spec)
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    analytic = float(ctx.cov.pinv[0, 0] * hv[0]) * (pts - ctx.mean[0])
    if not np.any(hv):
        return np.zeros_like(pts), analytic
    field = covering_field(ctx.spec, ctx.Q, ctx.cov, hv)
    times = np.linspace(0.0, ctx.T, n_steps + 1)
    out = path_functionals(
        ctx.spec, ctx.Q, ctx.u0, ctx.T, n_steps, n_samples, seed,
        em=False, conv=True, weights=[ito_weights(field, times)],
        workers=workers, stream=STREAM_FIELDS,
    )
    u = ctx.mean[0] + out["conv"][:, 0]
    delta = out["ito"][:, 0]
    bw = 0.5 * u.std(ddof=1) * u.size ** (-0.2)
    est = np.empty_like(pts)
    for i, p in enumerate(pts):
        w = np.exp(-0.5 * ((u - p) / bw) ** 2)
        est[i] = w @ delta / w.sum()
    return est, analytic
