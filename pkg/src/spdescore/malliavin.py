"""Malliavin covariance, covering fields and Skorokhod integrals.

For additive noise the Malliavin derivative of the solution is deterministic,
``D_r u(t) = S(t - r) Q^{1/2}`` on ``[0, t]``, so every object here is a
closed-form matrix or a deterministic function of ``r``. The check functions
compare each closed form against an independent route (quadrature in ``r``,
Monte Carlo over paths, finite differences on stored increments).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InvalidParameterError
from .forward import PathRecord, mild_solution, path_functionals
from .quadrature import integrate
from .rng import STREAM_PATHS, as_generator
from .spectral import (
    ModeSpectrum,
    TraceClassQ,
    as_coeffs,
    hs_condition_value,
    integrated_exp,
    transition_covariance,
)

PINV_THRESHOLD = 1e-12
RANGE_TOL = 1e-8


def _ro(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MalliavinCov:
    """Symmetric PSD ``gamma_{u(t)}`` with eigenpairs, pseudoinverse and range projector."""

    gamma: np.ndarray
    t: float
    eigvals: np.ndarray
    eigvecs: np.ndarray
    pinv_threshold: float
    pinv: np.ndarray
    projection: np.ndarray

    @classmethod
    def from_matrix(cls, gamma, t: float, pinv_threshold: float = PINV_THRESHOLD):
        g = np.asarray(gamma, dtype=float)
        g = 0.5 * (g + g.T)
        w, v = np.linalg.eigh(g)
        w = np.clip(w, 0.0, None)
        pinv, proj = _pinv_parts(w, v, pinv_threshold)
        return cls(_ro(g), float(t), _ro(w), _ro(v), float(pinv_threshold), _ro(pinv), _ro(proj))

    @property
    def n_modes(self) -> int:
        return self.gamma.shape[0]

    @property
    def retained(self) -> np.ndarray:
        return _retained(self.eigvals, self.pinv_threshold)

    @property
    def rank(self) -> int:
        return int(self.retained.sum())

    @property
    def sqrt(self) -> np.ndarray:
        return (self.eigvecs * np.sqrt(self.eigvals)) @ self.eigvecs.T

    @property
    def trace(self) -> float:
        return float(np.trace(self.gamma))

    def out_of_range(self, h, tol: float = RANGE_TOL) -> bool:
        h = np.asarray(h, dtype=float)
        return bool(np.linalg.norm(h - self.projection @ h) > tol * np.linalg.norm(h))


def _retained(eigvals, threshold):
    top = eigvals.max() if eigvals.size else 0.0
    if top <= 0.0:
        return np.zeros(eigvals.shape, dtype=bool)
    return eigvals > threshold * top


def _pinv_parts(w, v, threshold):
    keep = _retained(w, threshold)
    vk = v[:, keep]
    return (vk / w[keep]) @ vk.T, vk @ vk.T


def pseudoinverse(cov: MalliavinCov) -> np.ndarray:
    """Moore-Penrose inverse: ``sum over retained mu_i of e_i e_i^T / mu_i``.

    Eigenvalues at or below ``pinv_threshold * mu_max`` are treated as kernel.
    ``gamma = 0`` gives ``0``.
    """
    return _pinv_parts(cov.eigvals, cov.eigvecs, cov.pinv_threshold)[0]


def malliavin_covariance(
    spec: ModeSpectrum, Q: TraceClassQ, t: float, pinv_threshold: float = PINV_THRESHOLD
) -> MalliavinCov:
    """``gamma_ij = Q_ij * int_0^t exp((lambda_i + lambda_j) s) ds``."""
    if t < 0:
        raise InvalidParameterError("t must be non-negative")
    if Q.n_modes != spec.n_modes:
        raise DimensionError("spectrum and covariance sizes differ")
    return MalliavinCov.from_matrix(transition_covariance(spec.lambdas, Q.q, t), t, pinv_threshold)


def malliavin_covariance_group(spec: ModeSpectrum, Q: TraceClassQ, t: float) -> np.ndarray:
    """Group form ``Y_t C_t Y_t^*`` with ``C_t = int_0^t S(-r) Q S(-r)^* dr``.

    Only sensible while ``exp(-lambda t)`` stays representable.
    """
    lam = spec.lambdas
    C = Q.q * integrated_exp(-(lam[:, None] + lam[None, :]), t)
    y = np.exp(lam * t)
    return y[:, None] * C * y[None, :]


def covariance_recursion_check(spec: ModeSpectrum, Q: TraceClassQ, t: float, s: float) -> float:
    """Max entrywise relative residual of ``gamma(t+s) = gamma(t) + S(t) gamma(s) S(t)^*``."""
    if t < 0 or s < 0:
        raise InvalidParameterError("t and s must be non-negative")
    lam = spec.lambdas
    whole = transition_covariance(lam, Q.q, t + s)
    first = transition_covariance(lam, Q.q, t)
    y = np.exp(lam * t)
    moved = y[:, None] * transition_covariance(lam, Q.q, s) * y[None, :]
    res = np.abs(whole - first - moved)
    scale = np.abs(whole) + np.abs(first) + np.abs(moved)
    nz = scale > 0
    return float((res[nz] / scale[nz]).max()) if nz.any() else 0.0


def malliavin_derivative(spec: ModeSpectrum, Q: TraceClassQ, t: float, r: float) -> np.ndarray:
    """``D_r u(t) = S(t - r) Q^{1/2}`` for ``r`` in ``[0, t]``, zero otherwise."""
    if r < 0 or r > t:
        return np.zeros((spec.n_modes, spec.n_modes))
    return np.exp(spec.lambdas * (t - r))[:, None] * Q.sqrt_q


def _derivative_apply(lam, sqrt_q, t, r, x):
    """``D_r u(t) x(r)`` on a node array ``r`` (n,) with ``x`` (n, N) -> (n, N)."""
    return np.exp(np.outer(t - r, lam)) * (x @ sqrt_q.T)


def _adjoint_apply(lam, sqrt_q, t, r, g):
    """``(D_r u(t))^* g`` on nodes ``r`` for a fixed ``g`` in H -> (n, N)."""
    return (np.exp(np.outer(t - r, lam)) * g) @ sqrt_q


@dataclass(frozen=True)
class CoveringField:
    """``v_h(r) = (Q^{1/2})^* S(t - r)^* gamma^+ h`` on ``[0, t]``, zero outside."""

    h: np.ndarray
    t: float
    weight: np.ndarray  # gamma^+ h
    lambdas: np.ndarray
    sqrt_q: np.ndarray
    out_of_range: bool = False

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        v = _adjoint_apply(self.lambdas, self.sqrt_q, self.t, r, self.weight)
        v[(r < 0) | (r > self.t)] = 0.0
        return v[0] if scalar else v

    def norm_sq(self) -> float:
        """``int_0^t ||v_h(r)||^2 dr`` by quadrature."""
        if self.t == 0:
            return 0.0
        return float(integrate(lambda r: np.sum(self(r) ** 2, axis=1), 0.0, self.t))


def covering_field(spec: ModeSpectrum, Q: TraceClassQ, cov: MalliavinCov, h) -> CoveringField:
    hv = as_coeffs(h, spec)
    flag = cov.out_of_range(hv) if np.any(hv) else False
    return CoveringField(
        _ro(hv), cov.t, _ro(cov.pinv @ hv), spec.lambdas, Q.sqrt_q, out_of_range=flag
    )


@dataclass(frozen=True)
class CoveringCheck:
    closed_form: np.ndarray
    quadrature: np.ndarray
    target: np.ndarray
    residual_closed: float
    residual_quad: float


def _relative(diff, ref_norm):
    n = np.linalg.norm(diff)
    return float(n / ref_norm) if ref_norm > 0 else float(n)


def covering_property_check(spec: ModeSpectrum, Q: TraceClassQ, cov: MalliavinCov, h) -> CoveringCheck:
    """``<Du(t), v_h>`` as ``gamma gamma^+ h`` and by quadrature, both against ``Pi h``."""
    field = covering_field(spec, Q, cov, h)
    target = cov.projection @ field.h
    closed = cov.gamma @ field.weight
    t = cov.t
    if t > 0:
        quad = integrate(
            lambda r: _derivative_apply(spec.lambdas, Q.sqrt_q, t, r, field(r)), 0.0, t
        )
    else:
        quad = np.zeros(spec.n_modes)
    ref = np.linalg.norm(field.h)
    return CoveringCheck(
        closed, quad, target, _relative(closed - target, ref), _relative(quad - target, ref)
    )


def ito_weights(field: CoveringField, times) -> np.ndarray:
    """Field values at left endpoints ``t_0 .. t_{M-1}``."""
    return field(np.asarray(times)[:-1])


def skorokhod_integral(field: CoveringField, path: PathRecord) -> float:
    """``delta(v_h)`` as the left-point Ito sum ``sum_m <v_h(t_m), dW[m]>``.

    The field is deterministic, hence adapted, so the Skorokhod integral is an
    Ito integral.
    """
    if abs(path.horizon - field.t) > 1e-12 * max(1.0, field.t):
        raise DimensionError(f"field horizon {field.t} != path horizon {path.horizon}")
    if path.dW.shape[1] != field.weight.size:
        raise DimensionError("noise dimension of path and field differ")
    return float(np.sum(ito_weights(field, path.times) * path.dW))


@dataclass(frozen=True)
class SkorokhodStats:
    mean: float
    mean_stderr: float
    variance: float
    variance_stderr: float
    isometry_target: float
    discrete_target: float

    @property
    def z_mean(self) -> float:
        return self.mean / self.mean_stderr if self.mean_stderr > 0 else 0.0

    @property
    def z_variance(self) -> float:
        d = self.variance - self.isometry_target
        return d / self.variance_stderr if self.variance_stderr > 0 else 0.0


def skorokhod_statistics(
    spec, Q, field: CoveringField, n_samples: int, n_steps: int, seed: int, workers: int = 1
) -> SkorokhodStats:
    """Ensemble mean and variance of ``delta(v_h)`` against 0 and ``||v_h||^2``."""
    T = field.t
    times = np.linspace(0.0, T, n_steps + 1)
    w = ito_weights(field, times)
    d = path_functionals(
        spec, Q, np.zeros(spec.n_modes), T, n_steps, n_samples, seed,
        em=False, weights=[w], workers=workers, stream=STREAM_PATHS,
    )["ito"][:, 0]
    n = d.size
    mean = d.mean()
    sq = d**2
    var = sq.mean()  # mean is known to be zero
    return SkorokhodStats(
        float(mean),
        float(d.std(ddof=1) / np.sqrt(n)),
        float(var),
        float(sq.std(ddof=1) / np.sqrt(n)),
        field.norm_sq(),
        float(np.sum(w**2) * T / n_steps),
    )


@dataclass(frozen=True)
class IBPResult:
    estimate: float
    target: float
    stderr: float
    discrete_expectation: float

    @property
    def z_score(self) -> float:
        return (self.estimate - self.target) / self.stderr if self.stderr > 0 else 0.0

    @property
    def bias(self) -> float:
        """Exact O(dt) offset of the Euler-Maruyama expectation from the target."""
        return self.discrete_expectation - self.target

    def within(self, n_sigma: float = 3.0) -> bool:
        return abs(self.estimate - self.target) <= n_sigma * self.stderr + abs(self.bias)


def ibp_duality_check(
    spec: ModeSpectrum,
    Q: TraceClassQ,
    u0,
    h,
    T: float,
    n_samples: int,
    seed: int,
    n_steps: int = 512,
    pinv_threshold: float = PINV_THRESHOLD,
    workers: int = 1,
) -> IBPResult:
    """Monte Carlo ``E[<u(T), h> delta(v_h)]`` over Euler-Maruyama paths vs ``<h, Pi h>``."""
    cov = malliavin_covariance(spec, Q, T, pinv_threshold)
    field = covering_field(spec, Q, cov, h)
    hv = field.h
    target = float(hv @ cov.projection @ hv)
    if not np.any(hv):
        return IBPResult(0.0, 0.0, 0.0, 0.0)
    dt = T / n_steps
    times = np.linspace(0.0, T, n_steps + 1)
    w = ito_weights(field, times)
    out = path_functionals(
        spec, Q, u0, T, n_steps, n_samples, seed, em=True, weights=[w], workers=workers
    )
    prod = (out["em"] @ hv) * out["ito"][:, 0]
    # E_disc = sum_m dt <h, diag(growth^(M-1-m)) Q^{1/2} v(t_m)>
    growth = 1.0 + dt * spec.lambdas
    powers = growth[None, :] ** (n_steps - 1 - np.arange(n_steps))[:, None]
    disc = float(dt * np.sum((powers * (w @ Q.sqrt_q.T)) @ hv))
    return IBPResult(
        float(prod.mean()), target, float(prod.std(ddof=1) / np.sqrt(prod.size)), disc
    )


@dataclass(frozen=True)
class TraceIdentity:
    trace: float
    hs_value: float
    mc_estimate: float
    mc_stderr: float
    discrete_target: float

    @property
    def analytic_residual(self) -> float:
        scale = max(abs(self.trace), abs(self.hs_value))
        return abs(self.trace - self.hs_value) / scale if scale > 0 else 0.0

    @property
    def z_score(self) -> float:
        d = self.mc_estimate - self.trace
        return d / self.mc_stderr if self.mc_stderr > 0 else 0.0


def trace_identity_check(spec, Q, T: float, n_samples: int, n_steps: int, seed: int, workers: int = 1):
    """``tr(gamma) = int ||S Q^{1/2}||_HS^2`` and the Monte Carlo ``E||W_A(T)||^2``."""
    cov = malliavin_covariance(spec, Q, T)
    conv = path_functionals(
        spec, Q, np.zeros(spec.n_modes), T, n_steps, n_samples, seed,
        em=False, conv=True, workers=workers,
    )["conv"]
    sq = np.sum(conv**2, axis=1)
    dt = T / n_steps
    s = T - dt * np.arange(n_steps)
    disc = float(dt * np.sum(np.exp(2.0 * np.outer(s, spec.lambdas)) @ np.diag(Q.q)))
    return TraceIdentity(
        cov.trace, hs_condition_value(spec, Q, T), float(sq.mean()),
        float(sq.std(ddof=1) / np.sqrt(sq.size)), disc,
    )


class LinearFunctional:
    """``phi(u) = <a, u>``."""

    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)

    def __call__(self, u):
        return float(self.a @ u)

    def grad(self, u):
        return self.a


class QuadraticFunctional:
    """``phi(u) = <u, B u>`` with symmetric ``B``."""

    def __init__(self, B):
        B = np.asarray(B, dtype=float)
        self.B = 0.5 * (B + B.T)

    def __call__(self, u):
        return float(u @ self.B @ u)

    def grad(self, u):
        return 2.0 * self.B @ u


@dataclass(frozen=True)
class ChainRuleResult:
    analytic: np.ndarray
    finite_difference: np.ndarray
    error: float
    r_used: float
    cell: int
    snapped: bool


def chain_rule_check(
    spec: ModeSpectrum, Q: TraceClassQ, path: PathRecord, phi, r: float, eps_rel: float = 1e-6
) -> ChainRuleResult:
    """Analytic ``D_r phi(u(t))`` against a central difference on the stored increments.

    ``u(t)`` is rebuilt from the increments through the grid mild solution, so
    bumping ``dW[m]`` by ``eps f_j`` is an exact directional Malliavin
    derivative for the cell ``[t_m, t_{m+1})``. ``r`` is mapped to its cell and
    the analytic side is evaluated at the cell's left node; values of ``r``
    outside ``[0, t)`` snap to the nearest cell.
    """
    times = path.times
    M = path.n_steps
    t = path.horizon
    m = int(np.searchsorted(times, r, side="right") - 1)
    snapped = m < 0 or m >= M
    m = min(max(m, 0), M - 1)
    r_used = float(times[m])
    u0 = path.states[0]
    u = mild_solution(spec, Q, u0, path)
    analytic = Q.sqrt_q.T @ (np.exp(spec.lambdas * (t - r_used)) * phi.grad(u))
    eps = eps_rel * np.sqrt(times[m + 1] - times[m])
    fd = np.empty(spec.n_modes)
    for j in range(spec.n_modes):
        bumped = np.array(path.dW, copy=True)
        bumped[m, j] += eps
        up = phi(mild_solution(spec, Q, u0, path, bumped))
        bumped[m, j] -= 2.0 * eps
        down = phi(mild_solution(spec, Q, u0, path, bumped))
        fd[j] = (up - down) / (2.0 * eps)
    ref = np.linalg.norm(analytic)
    return ChainRuleResult(analytic, fd, _relative(analytic - fd, ref), r_used, m, snapped)


@dataclass(frozen=True)
class MinimalNormResult:
    vh_norm_sq: float
    w_norm_sq: float
    sum_norm_sq: float
    pythagoras_residual: float
    orthogonality_residual: float
    gamma_g_residual: float


def _random_field(rng, t, n_modes, degree=5):
    coef = rng.standard_normal((degree + 1, n_modes))

    def z(r):
        x = 2.0 * np.asarray(r) / t - 1.0
        return np.polynomial.legendre.legval(x, coef).T.reshape(-1, n_modes)

    return z


def minimal_norm_check(spec: ModeSpectrum, Q: TraceClassQ, cov: MalliavinCov, h, rng) -> MinimalNormResult:
    """Pythagoras for ``v_h + w`` with ``w`` a random field orthogonal to ``{(Du)^* g}``.

    Also checks that a candidate ``(Du)^* g`` for random ``g`` covers ``gamma g``.
    """
    rng = as_generator(rng)
    lam, sq, t, N = spec.lambdas, Q.sqrt_q, cov.t, spec.n_modes
    field = covering_field(spec, Q, cov, h)
    z = _random_field(rng, t, N)

    def gram_integrand(r):
        D = np.exp(np.outer(t - r, lam))[:, :, None] * sq[None]
        return D @ D.transpose(0, 2, 1)

    gram = MalliavinCov.from_matrix(integrate(gram_integrand, 0.0, t), t, cov.pinv_threshold)
    b = integrate(lambda r: _derivative_apply(lam, sq, t, r, z(r)), 0.0, t)
    g = gram.pinv @ b

    def w(r):
        return z(r) - _adjoint_apply(lam, sq, t, r, g)

    # (Du)^* e_i / sqrt(mu_i) over retained eigenpairs is an orthonormal basis of V,
    # so this is the cosine of the angle between w and V
    keep = gram.retained
    whiten = (gram.eigvecs[:, keep] / np.sqrt(gram.eigvals[keep])).T
    covered_w = integrate(lambda r: _derivative_apply(lam, sq, t, r, w(r)), 0.0, t)
    zz = float(integrate(lambda r: np.sum(z(r) ** 2, axis=1), 0.0, t))
    orth = _relative(whiten @ covered_w, np.sqrt(zz))

    vv = float(integrate(lambda r: np.sum(field(r) ** 2, axis=1), 0.0, t))
    ww = float(integrate(lambda r: np.sum(w(r) ** 2, axis=1), 0.0, t))
    ss = float(integrate(lambda r: np.sum((field(r) + w(r)) ** 2, axis=1), 0.0, t))
    denom = vv + ww
    pyth = abs(ss - vv - ww) / denom if denom > 0 else abs(ss)

    g_rand = rng.standard_normal(N)
    covered = integrate(
        lambda r: _derivative_apply(lam, sq, t, r, _adjoint_apply(lam, sq, t, r, g_rand)), 0.0, t
    )
    expect = cov.gamma @ g_rand
    gg = _relative(covered - expect, np.linalg.norm(expect))
    return MinimalNormResult(vv, ww, ss, pyth, orth, gg)
