"""Reverse-time sampling driven by the exact score.

Forward ``du = A u dt + Q^{1/2} dW`` is reversed by

    dx = [A x - Q score_t(x)] dt + Q^{1/2} dW_bar      (sde)
    dx = [A x - Q score_t(x) / 2] dt                   (probability flow ode)

integrated backwards from ``T`` to ``t_min > 0`` with Euler steps. The score
context depends only on time, so it is precomputed once per grid time.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import HorizonError, InvalidParameterError
from .forward import gaussian_factor, path_block_size
from .malliavin import PINV_THRESHOLD
from .rng import STREAM_REVERSE, STREAM_REVERSE_START, as_generator, block_rng, map_blocks
from .score import ScoreContext, make_score_context, score_full
from .spectral import ModeSpectrum, TraceClassQ, as_coeffs

_SCORE_WEIGHT = {"sde": 1.0, "ode": 0.5}


@dataclass(frozen=True)
class ReverseConfig:
    T: float
    n_steps: int
    t_min: float | None = None  # defaults to 1e-3 T
    mode: str = "sde"
    seed: int = 0
    grid: str = "geometric"

    def __post_init__(self):
        if self.t_min is None:
            object.__setattr__(self, "t_min", 1e-3 * self.T)
        if not 0 < self.t_min < self.T:
            raise InvalidParameterError("need 0 < t_min < T")
        if self.n_steps < 1:
            raise InvalidParameterError("n_steps must be at least 1")
        if self.mode not in _SCORE_WEIGHT:
            raise InvalidParameterError(f"mode must be 'sde' or 'ode', got {self.mode!r}")
        if self.grid not in ("geometric", "uniform"):
            raise InvalidParameterError(f"grid must be 'geometric' or 'uniform', got {self.grid!r}")

    def times(self) -> np.ndarray:
        """Decreasing grid ``T = t_0 > ... > t_K = t_min``."""
        if self.grid == "uniform":
            t = np.linspace(self.T, self.t_min, self.n_steps + 1)
        else:
            t = np.geomspace(self.T, self.t_min, self.n_steps + 1)
        t[0], t[-1] = self.T, self.t_min
        return t


class ScoreSchedule:
    """Time-indexed score contexts, cached on a fixed grid and immutable afterwards."""

    def __init__(self, spec, Q, u0, times, pinv_threshold=PINV_THRESHOLD):
        self.spec, self.Q = spec, Q
        self.u0 = np.asarray(as_coeffs(u0, spec), dtype=float)
        self.pinv_threshold = pinv_threshold
        self._cache = {float(t): make_score_context(spec, Q, self.u0, t, pinv_threshold) for t in times}

    def __call__(self, t: float) -> ScoreContext:
        ctx = self._cache.get(float(t))
        if ctx is None:
            ctx = make_score_context(self.spec, self.Q, self.u0, t, self.pinv_threshold)
        return ctx


def _check_horizon(t, dt, t_min):
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    if t - dt < t_min * (1.0 - 1e-12):
        raise HorizonError(f"step from {t} by {dt} passes t_min={t_min}")


def _linear_part(spec, x, dt, exact_linear):
    if exact_linear:
        return np.exp(-spec.lambdas * dt) * x
    return x - dt * spec.lambdas * x


def reverse_sde_step(
    spec: ModeSpectrum, Q: TraceClassQ, provider, state, t: float, dt: float, rng,
    t_min: float = 0.0, exact_linear: bool = False,
):
    """One reverse Euler-Maruyama step from ``t`` to ``t - dt``.

    ``state <- state - dt (lambda * state - Q s_t(state)) + Q^{1/2} xi sqrt(dt)``.
    With ``exact_linear`` the ``lambda`` part uses ``exp(-lambda dt)`` instead.
    """
    _check_horizon(t, dt, t_min)
    x = np.asarray(as_coeffs(state, spec), dtype=float)
    s = score_full(provider(t), x)
    xi = as_generator(rng).standard_normal(x.shape)
    return _linear_part(spec, x, dt, exact_linear) + dt * (s @ Q.q) + np.sqrt(dt) * (xi @ Q.sqrt_q.T)


def probability_flow_step(
    spec: ModeSpectrum, Q: TraceClassQ, provider, state, t: float, dt: float,
    t_min: float = 0.0, exact_linear: bool = False,
):
    """Deterministic step ``state <- state - dt (lambda * state - Q s_t(state) / 2)``."""
    _check_horizon(t, dt, t_min)
    x = np.asarray(as_coeffs(state, spec), dtype=float)
    s = score_full(provider(t), x)
    return _linear_part(spec, x, dt, exact_linear) + 0.5 * dt * (s @ Q.q)


def flow_drift(spec, Q, ctx: ScoreContext, x, mode: str = "ode"):
    """Reverse drift ``lambda * x - w Q s_t(x)`` as a forward-time velocity."""
    return spec.lambdas * x - _SCORE_WEIGHT[mode] * (score_full(ctx, x) @ Q.q)


def _step_tables(spec, Q, u0, cfg: ReverseConfig, pinv_threshold):
    times = cfg.times()
    sched = ScoreSchedule(spec, Q, u0, times[:-1], pinv_threshold)
    w = _SCORE_WEIGHT[cfg.mode]
    ctxs = [sched(t) for t in times[:-1]]
    means = np.array([c.mean for c in ctxs])
    drift_mats = np.array([w * Q.q @ c.cov.pinv for c in ctxs])
    dts = times[:-1] - times[1:]
    return times, means, drift_mats, dts


@dataclass(frozen=True)
class ReverseResult:
    times: np.ndarray
    start: np.ndarray
    end: np.ndarray
    mean_T: np.ndarray
    cov_T: np.ndarray
    mean_tmin: np.ndarray
    cov_tmin: np.ndarray


def run_reverse(
    spec: ModeSpectrum, Q: TraceClassQ, u0, cfg: ReverseConfig, n_samples: int,
    workers: int = 1, pinv_threshold: float = PINV_THRESHOLD,
) -> ReverseResult:
    """Draw ``n_samples`` from the exact law at ``T`` and integrate them back to ``t_min``."""
    x0 = np.asarray(as_coeffs(u0, spec), dtype=float)
    N = spec.n_modes
    times, means, drift_mats, dts = _step_tables(spec, Q, x0, cfg, pinv_threshold)
    K = dts.size
    ctx_T = make_score_context(spec, Q, x0, cfg.T, pinv_threshold)
    ctx_min = make_score_context(spec, Q, x0, cfg.t_min, pinv_threshold)
    L = gaussian_factor(ctx_T.cov.gamma)
    noisy = cfg.mode == "sde"
    bs = path_block_size(K, N)

    def block(b, size):
        start = ctx_T.mean + block_rng(cfg.seed, STREAM_REVERSE_START, b).standard_normal((size, N)) @ L.T
        z = block_rng(cfg.seed, STREAM_REVERSE, b).standard_normal((size, K, N)) if noisy else None
        end = kernels.reverse_integrate(start, spec.lambdas, drift_mats, means, dts, Q.sqrt_q, z)
        return start, end

    parts = map_blocks(block, n_samples, workers, bs)
    start = np.concatenate([p[0] for p in parts])
    end = np.concatenate([p[1] for p in parts])
    return ReverseResult(
        times, start, end, ctx_T.mean, ctx_T.cov.gamma, ctx_min.mean, ctx_min.cov.gamma
    )


def discrete_moments(
    spec: ModeSpectrum, Q: TraceClassQ, u0, cfg: ReverseConfig, pinv_threshold: float = PINV_THRESHOLD
):
    """Exact mean and covariance at ``t_min`` of the discretized reverse scheme.

    The scheme is affine-Gaussian, so its law follows the recursion
    ``m <- A m + c``, ``P <- A P A^T + dt Q`` (noise term only for ``sde``).
    """
    x0 = np.asarray(as_coeffs(u0, spec), dtype=float)
    times, means, drift_mats, dts = _step_tables(spec, Q, x0, cfg, pinv_threshold)
    ctx_T = make_score_context(spec, Q, x0, cfg.T, pinv_threshold)
    m = ctx_T.mean.copy()
    P = ctx_T.cov.gamma.copy()
    eye = np.eye(spec.n_modes)
    for k in range(dts.size):
        A = eye - dts[k] * (np.diag(spec.lambdas) + drift_mats[k])
        m = A @ m + dts[k] * drift_mats[k] @ means[k]
        P = A @ P @ A.T
        if cfg.mode == "sde":
            P = P + dts[k] * Q.q
    return m, 0.5 * (P + P.T)
