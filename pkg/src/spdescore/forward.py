"""Forward diffusion: exact Gaussian transitions and Euler-Maruyama paths."""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidParameterError, NotPSDError, StabilityWarning
from .rng import (
    STREAM_ENSEMBLE,
    STREAM_PATHS,
    as_generator,
    block_rng,
    map_blocks,
)
from .spectral import (
    PSD_CLAMP,
    HilbertState,
    ModeSpectrum,
    TraceClassQ,
    as_coeffs,
    transition_covariance,
)

# cap on doubles per increment block (~32 MB)
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class PathRecord:
    times: np.ndarray
    dW: np.ndarray
    states: np.ndarray
    seed: int | None = None
    unstable: bool = False

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.dW.shape[0]


@dataclass(frozen=True)
class Ensemble:
    states: np.ndarray
    t_final: float
    mode: str
    seed: int
    config_hash: str

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]


def _freeze(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


def _wrap_like(v, coeffs):
    return HilbertState(coeffs, v.basis_id) if isinstance(v, HilbertState) else coeffs


def gaussian_factor(cov: np.ndarray) -> np.ndarray:
    """``L`` with ``L L^T = cov`` from a symmetric eigendecomposition.

    Tolerates rank deficiency, where Cholesky would fail.
    """
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    top = max(w.max(), 0.0)
    if w.min() < -PSD_CLAMP * top:
        raise NotPSDError(f"transition covariance not PSD (eigenvalue {w.min():.3g}); check Q")
    return v * np.sqrt(np.clip(w, 0.0, None))


def sample_exact_transition(spec: ModeSpectrum, Q: TraceClassQ, u, dt: float, rng):
    """Draw ``S(dt) u + xi`` with ``xi ~ N(0, Gamma(dt))``; ``u`` may be a ``(B, N)`` batch."""
    if not dt > 0:
        raise InvalidParameterError("dt must be positive")
    c = as_coeffs(u, spec)
    L = gaussian_factor(transition_covariance(spec.lambdas, Q.q, dt))
    z = as_generator(rng).standard_normal(c.shape)
    return _wrap_like(u, np.exp(spec.lambdas * dt) * c + z @ L.T)


def n_steps_for(dt: float, T: float) -> int:
    if not dt > 0 or not T > 0:
        raise InvalidParameterError("dt and T must be positive")
    M = int(round(T / dt))
    if M < 1 or abs(M * dt - T) > 1e-9 * T:
        raise InvalidParameterError(f"T={T} is not an integer multiple of dt={dt}")
    return M


def simulate_em_path(spec: ModeSpectrum, Q: TraceClassQ, u0, dt: float, T: float, rng) -> PathRecord:
    """One Euler-Maruyama path, keeping every Brownian increment.

    ``rng`` is a Generator or an integer seed (recorded on the path).
    """
    M = n_steps_for(dt, T)
    seed = None if isinstance(rng, np.random.Generator) else int(rng)
    gen = as_generator(rng)
    x0 = as_coeffs(u0, spec)
    N = spec.n_modes
    dW = gen.standard_normal((M, N)) * np.sqrt(dt)
    states = np.empty((M + 1, N))
    states[0] = x0
    growth = 1.0 + dt * spec.lambdas
    noise = dW @ Q.sqrt_q.T
    for m in range(M):
        states[m + 1] = growth * states[m] + noise[m]
    times = dt * np.arange(M + 1)
    times[-1] = T
    unstable = bool(dt * np.abs(spec.lambdas).max() > 2.0)
    if unstable:
        warnings.warn(f"dt*max|lambda| = {dt * np.abs(spec.lambdas).max():.3g} > 2: explicit Euler is unstable",
                      StabilityWarning, stacklevel=2)
    return PathRecord(_freeze(times), _freeze(dW), _freeze(states), seed, unstable)


def stochastic_convolution(spec: ModeSpectrum, Q: TraceClassQ, path: PathRecord) -> np.ndarray:
    """Left-point sum ``sum_m S(T - t_m) Q^{1/2} dW[m]``."""
    T = path.horizon
    decay = np.exp(np.outer(T - path.times[:-1], spec.lambdas))
    return np.sum(decay * (path.dW @ Q.sqrt_q.T), axis=0)


def mild_solution(spec: ModeSpectrum, Q: TraceClassQ, u0, path: PathRecord, dW=None) -> np.ndarray:
    """``S(T) u0`` plus the stochastic convolution of ``dW`` (defaults to the path's)."""
    T = path.horizon
    inc = path.dW if dW is None else dW
    decay = np.exp(np.outer(T - path.times[:-1], spec.lambdas))
    return np.exp(spec.lambdas * T) * as_coeffs(u0, spec) + np.sum(decay * (inc @ Q.sqrt_q.T), axis=0)


def path_block_size(n_steps: int, n_modes: int) -> int:
    return int(max(16, min(4096, _BLOCK_ELEMENTS // (n_steps * n_modes))))


def path_functionals(
    spec: ModeSpectrum,
    Q: TraceClassQ,
    u0,
    T: float,
    n_steps: int,
    n_samples: int,
    seed: int,
    *,
    em: bool = True,
    conv: bool = False,
    weights=(),
    workers: int = 1,
    stream: int = STREAM_PATHS,
) -> dict:
    """Monte Carlo over uniform-grid paths without storing all increments.

    For every path returns any of: the Euler-Maruyama terminal state (``"em"``),
    the left-point stochastic convolution (``"conv"``) and left-point Ito sums
    against each ``(n_steps, N)`` weight array (``"ito"``, one column each).
    """
    x0 = as_coeffs(u0, spec)
    N = spec.n_modes
    dt = T / n_steps
    times = dt * np.arange(n_steps)
    growth = 1.0 + dt * spec.lambdas
    decay = np.exp(np.outer(T - times, spec.lambdas))
    weights = [np.asarray(w, dtype=float) for w in weights]
    sqdt = np.sqrt(dt)
    bs = path_block_size(n_steps, N)

    def block(b, size):
        dW = block_rng(seed, stream, b).standard_normal((size, n_steps, N))
        dW *= sqdt
        res = {}
        if em:
            res["em"] = kernels.em_terminal(x0, growth, Q.sqrt_q, dW)
        if conv:
            res["conv"] = kernels.conv_sum(decay, Q.sqrt_q, dW)
        if weights:
            res["ito"] = np.column_stack([kernels.ito_sum(w, dW) for w in weights])
        return res

    parts = map_blocks(block, n_samples, workers, bs)
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def config_hash(**items) -> str:
    def enc(v):
        if isinstance(v, np.ndarray):
            return v.tolist()
        return v

    blob = json.dumps({k: enc(v) for k, v in sorted(items.items())}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sample_ensemble(
    spec: ModeSpectrum,
    Q: TraceClassQ,
    u0,
    T: float,
    n_samples: int,
    mode: str = "exact",
    seed: int = 0,
    n_steps: int = 512,
    workers: int = 1,
) -> Ensemble:
    """Independent terminal states at ``T``, reproducible from ``seed``."""
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be at least 1")
    if not T > 0:
        raise InvalidParameterError("T must be positive")
    x0 = as_coeffs(u0, spec)
    N = spec.n_modes
    if mode == "exact":
        mean = np.exp(spec.lambdas * T) * x0
        L = gaussian_factor(transition_covariance(spec.lambdas, Q.q, T))

        def block(b, size):
            z = block_rng(seed, STREAM_ENSEMBLE, b).standard_normal((size, N))
            return mean + z @ L.T

        states = np.concatenate(map_blocks(block, n_samples, workers))
    elif mode == "em":
        states = path_functionals(
            spec, Q, x0, T, n_steps, n_samples, seed, workers=workers, stream=STREAM_ENSEMBLE
        )["em"]
    else:
        raise InvalidParameterError(f"unknown ensemble mode {mode!r}")
    h = config_hash(
        lambdas=spec.lambdas, q=Q.q, u0=x0, T=float(T), mode=mode, seed=int(seed),
        n_steps=int(n_steps) if mode == "em" else None,
    )
    return Ensemble(_freeze(states), float(T), mode, int(seed), h)
