"""Truncated sine-basis Hilbert space, diagonal drift and trace-class noise.

Everything is expressed in the Dirichlet sine basis ``sqrt(2/L) sin(k pi x / L)``,
in which the Laplacian is diagonal, so the semigroup acts coefficient-wise as
``exp(lambda_k t)``. The noise space U shares the same truncated basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AsymmetryError,
    DimensionError,
    InvalidParameterError,
    NotPSDError,
    TraceClassError,
)

PSD_CLAMP = 1e-12
SYMMETRY_TOL = 1e-12
_SERIES_CUTOFF = 1e-8


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModeSpectrum:
    """Eigenvalues of the drift operator in the diagonalizing basis."""

    lambdas: np.ndarray
    basis_id: str = "custom"

    def __post_init__(self):
        lam = _readonly(np.atleast_1d(self.lambdas))
        if lam.ndim != 1 or lam.size < 1:
            raise InvalidParameterError("lambdas must be a non-empty 1-d array")
        if not np.all(np.isfinite(lam)):
            raise InvalidParameterError("lambdas must be finite")
        object.__setattr__(self, "lambdas", lam)

    @property
    def n_modes(self) -> int:
        return self.lambdas.size

    @property
    def growth_bound(self) -> float:
        return float(self.lambdas.max())

    @property
    def stability_const(self) -> float:
        # diagonal semigroup: ||S(t)|| = exp(omega t) exactly
        return 1.0


@dataclass(frozen=True)
class TraceClassQ:
    """Symmetric PSD noise covariance with its symmetric square root."""

    q: np.ndarray
    sqrt_q: np.ndarray
    eigvals: np.ndarray = field(repr=False)

    @property
    def n_modes(self) -> int:
        return self.q.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.q))

    @property
    def is_diagonal(self) -> bool:
        return not np.any(self.q - np.diag(np.diag(self.q)))


@dataclass(frozen=True)
class HilbertState:
    coeffs: np.ndarray
    basis_id: str = "custom"

    def __post_init__(self):
        c = _readonly(np.atleast_1d(self.coeffs))
        if c.ndim != 1:
            raise DimensionError("coefficients must be a 1-d array")
        if not np.all(np.isfinite(c)):
            raise InvalidParameterError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __len__(self):
        return self.coeffs.size


def as_coeffs(v, spec: ModeSpectrum | None = None) -> np.ndarray:
    """Coefficient array of ``v`` (HilbertState or array), checked against ``spec``."""
    if isinstance(v, HilbertState):
        if spec is not None and v.basis_id != spec.basis_id:
            raise DimensionError(
                f"basis mismatch: state in {v.basis_id!r}, spectrum is {spec.basis_id!r}"
            )
        c = v.coeffs
    else:
        c = np.asarray(v, dtype=float)
    if spec is not None and c.shape[-1] != spec.n_modes:
        raise DimensionError(f"expected {spec.n_modes} coefficients, got {c.shape[-1]}")
    return c


def integrated_exp(mu, t):
    """``int_0^t exp(mu s) ds`` elementwise, stable for small ``mu t``."""
    mu = np.asarray(mu, dtype=float)
    t = float(t)
    x = mu * t
    small = np.abs(x) < _SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(small, t * (1.0 + 0.5 * x), np.expm1(x) / np.where(small, 1.0, mu))
    return out if out.ndim else float(out)


def make_dirichlet_laplacian(n_modes: int, length: float = 1.0, diffusivity: float = 1.0) -> ModeSpectrum:
    """``nu * Laplacian`` on (0, L) with Dirichlet conditions: ``lambda_k = -nu (k pi / L)^2``."""
    if int(n_modes) != n_modes or n_modes < 1:
        raise InvalidParameterError("n_modes must be a positive integer")
    if not length > 0:
        raise InvalidParameterError(f"length must be positive, got {length}")
    if not diffusivity > 0:
        raise InvalidParameterError(f"diffusivity must be positive, got {diffusivity}")
    k = np.arange(1, int(n_modes) + 1, dtype=float)
    lam = -diffusivity * (k * np.pi / length) ** 2
    return ModeSpectrum(lam, basis_id=f"dirichlet-sine(L={float(length)!r},N={int(n_modes)})")


def semigroup_apply(spec: ModeSpectrum, t: float, v, group: bool = False):
    """Apply ``S(t) = exp(tA)``. Negative times require ``group=True``."""
    if t < 0 and not group:
        raise InvalidParameterError("negative time needs the group flag")
    c = as_coeffs(v, spec)
    out = np.exp(spec.lambdas * t) * c
    if isinstance(v, HilbertState):
        return HilbertState(out, v.basis_id)
    return out


def make_power_law_q(n_modes: int, amplitude: float, decay: float) -> TraceClassQ:
    """Diagonal ``q_kk = a k^-p``; ``p > 1`` keeps the trace bounded in ``N``."""
    if not amplitude > 0:
        raise InvalidParameterError(f"amplitude must be positive, got {amplitude}")
    if not decay > 1:
        raise TraceClassError(f"decay must exceed 1 for a trace-class family, got {decay}")
    if int(n_modes) != n_modes or n_modes < 1:
        raise InvalidParameterError("n_modes must be a positive integer")
    d = amplitude * np.arange(1, int(n_modes) + 1, dtype=float) ** (-decay)
    return TraceClassQ(_readonly(np.diag(d)), _readonly(np.diag(np.sqrt(d))), _readonly(d))


def make_dense_q(matrix) -> TraceClassQ:
    m = np.array(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError("covariance must be a square matrix")
    if not np.all(np.isfinite(m)):
        raise InvalidParameterError("covariance entries must be finite")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.T).max() > SYMMETRY_TOL * scale:
        raise AsymmetryError("covariance is not symmetric")
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    top = max(w.max(), 0.0)
    if w.min() < -PSD_CLAMP * top or (top == 0.0 and w.min() < 0.0):
        raise NotPSDError(f"covariance has negative eigenvalue {w.min():.3g}")
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    root = 0.5 * (root + root.T)
    return TraceClassQ(_readonly(m), _readonly(root), _readonly(w))


def transition_covariance(lambdas, q, t: float) -> np.ndarray:
    """``int_0^t S(s) Q S(s)* ds`` entrywise: ``Q_ij g(lambda_i + lambda_j, t)``."""
    lam = np.asarray(lambdas, dtype=float)
    if t == 0:
        return np.zeros((lam.size, lam.size))
    g = integrated_exp(lam[:, None] + lam[None, :], t)
    return np.asarray(q) * g


def hs_condition_value(spec: ModeSpectrum, Q: TraceClassQ, t: float) -> float:
    """``int_0^t ||S(s) Q^{1/2}||_HS^2 ds``."""
    if t < 0:
        raise InvalidParameterError("t must be non-negative")
    if Q.n_modes != spec.n_modes:
        raise DimensionError("spectrum and covariance sizes differ")
    if t == 0:
        return 0.0
    row_weight = integrated_exp(2.0 * spec.lambdas, t)
    return float(np.sum(Q.sqrt_q**2 * np.asarray(row_weight)[:, None]))


def synthesize_on_grid(state, n_points: int, length: float = 1.0) -> np.ndarray:
    """Evaluate the sine expansion at ``n_points`` uniform interior points.

    Returns an ``(n_points, 2)`` array of ``(x, value)`` rows.
    """
    if n_points < 2:
        raise InvalidParameterError("n_points must be at least 2")
    c = as_coeffs(state)
    x = length * np.arange(1, n_points + 1) / (n_points + 1)
    k = np.arange(1, c.size + 1)
    basis = np.sqrt(2.0 / length) * np.sin(np.pi * np.outer(x, k) / length)
    return np.column_stack([x, basis @ c])
