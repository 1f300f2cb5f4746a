"""Hot inner loops over Brownian increments.

Every kernel exists twice with the same signature: a numba ``@njit`` version
and a pure-numpy version. ``SPDESCORE_NUMBA=0`` (or a missing numba) selects
numpy. Both loop over time in the same order, so results agree to rounding
but are not guaranteed bit-identical across backends; within one backend the
output is deterministic.

Array conventions: ``dW`` is ``(B, M, N)`` (samples, time steps, noise modes).
"""
import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _flag_enabled(value: str) -> bool:
    return value.strip().lower() not in ("0", "false", "no", "off")


USE_NUMBA = HAVE_NUMBA and _flag_enabled(os.environ.get("SPDESCORE_NUMBA", "1"))


# numpy versions ------------------------------------------------------------

def _em_terminal_np(u0, growth, sqrt_q, dW):
    B, M, N = dW.shape
    x = np.broadcast_to(u0, (B, N)).copy()
    for m in range(M):
        x = growth * x + dW[:, m, :] @ sqrt_q.T
    return x


def _ito_sum_np(weights, dW):
    B, M, N = dW.shape
    out = np.zeros(B)
    for m in range(M):
        out += dW[:, m, :] @ weights[m]
    return out


def _conv_sum_np(decay, sqrt_q, dW):
    B, M, N = dW.shape
    out = np.zeros((B, N))
    for m in range(M):
        out += decay[m] * (dW[:, m, :] @ sqrt_q.T)
    return out


def _reverse_integrate_np(x0, lam, drift_mats, means, dts, sqrt_q, z):
    # x <- x - dt * (lam * x + K_k (x - m_k)) + sqrt(dt) sqrt_q z_k
    x = np.array(x0, dtype=float, copy=True)
    for k in range(dts.size):
        dt = dts[k]
        drift = lam * x + (x - means[k]) @ drift_mats[k].T
        x = x - dt * drift
        if z.shape[1]:
            x = x + np.sqrt(dt) * (z[:, k, :] @ sqrt_q.T)
    return x


numpy_kernels = SimpleNamespace(
    em_terminal=_em_terminal_np,
    ito_sum=_ito_sum_np,
    conv_sum=_conv_sum_np,
    reverse_integrate=_reverse_integrate_np,
)


# numba versions ------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _em_terminal_nb(u0, growth, sqrt_q, dW):
        B, M, N = dW.shape
        out = np.empty((B, N))
        x = np.empty(N)
        for b in range(B):
            for i in range(N):
                x[i] = u0[i]
            for m in range(M):
                for i in range(N):
                    acc = 0.0
                    for j in range(N):
                        acc += dW[b, m, j] * sqrt_q[i, j]
                    x[i] = growth[i] * x[i] + acc
            for i in range(N):
                out[b, i] = x[i]
        return out

    @njit(cache=True, nogil=True)
    def _ito_sum_nb(weights, dW):
        B, M, N = dW.shape
        out = np.zeros(B)
        for b in range(B):
            acc = 0.0
            for m in range(M):
                inner = 0.0
                for j in range(N):
                    inner += dW[b, m, j] * weights[m, j]
                acc += inner
            out[b] = acc
        return out

    @njit(cache=True, nogil=True)
    def _conv_sum_nb(decay, sqrt_q, dW):
        B, M, N = dW.shape
        out = np.zeros((B, N))
        for b in range(B):
            for m in range(M):
                for i in range(N):
                    acc = 0.0
                    for j in range(N):
                        acc += dW[b, m, j] * sqrt_q[i, j]
                    out[b, i] += decay[m, i] * acc
        return out

    @njit(cache=True, nogil=True)
    def _reverse_integrate_nb(x0, lam, drift_mats, means, dts, sqrt_q, z):
        B, N = x0.shape
        K = dts.size
        noisy = z.shape[1] > 0
        out = np.empty((B, N))
        x = np.empty(N)
        d = np.empty(N)
        for b in range(B):
            for i in range(N):
                x[i] = x0[b, i]
            for k in range(K):
                dt = dts[k]
                sdt = np.sqrt(dt)
                for i in range(N):
                    acc = 0.0
                    for j in range(N):
                        acc += (x[j] - means[k, j]) * drift_mats[k, i, j]
                    d[i] = lam[i] * x[i] + acc
                for i in range(N):
                    x[i] = x[i] - dt * d[i]
                if noisy:
                    for i in range(N):
                        acc = 0.0
                        for j in range(N):
                            acc += z[b, k, j] * sqrt_q[i, j]
                        x[i] = x[i] + sdt * acc
            for i in range(N):
                out[b, i] = x[i]
        return out

    numba_kernels = SimpleNamespace(
        em_terminal=_em_terminal_nb,
        ito_sum=_ito_sum_nb,
        conv_sum=_conv_sum_nb,
        reverse_integrate=_reverse_integrate_nb,
    )
else:  # pragma: no cover
    numba_kernels = None


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def _active():
    return numba_kernels if USE_NUMBA else numpy_kernels


def _f64(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def em_terminal(u0, growth, sqrt_q, dW):
    """Terminal Euler-Maruyama state ``x <- growth * x + sqrt_q @ dW[m]``."""
    return _active().em_terminal(*_f64(u0, growth, sqrt_q, dW))


def ito_sum(weights, dW):
    """Left-point Ito sums ``sum_m <weights[m], dW[b, m]>`` per sample."""
    return _active().ito_sum(*_f64(weights, dW))


def conv_sum(decay, sqrt_q, dW):
    """``sum_m decay[m] * (sqrt_q @ dW[b, m])`` per sample."""
    return _active().conv_sum(*_f64(decay, sqrt_q, dW))


def reverse_integrate(x0, lam, drift_mats, means, dts, sqrt_q, z=None):
    """Run a block of reverse-time Euler steps; ``z=None`` means no noise."""
    x0, lam, drift_mats, means, dts, sqrt_q = _f64(x0, lam, drift_mats, means, dts, sqrt_q)
    if z is None:
        z = np.empty((x0.shape[0], 0, x0.shape[1]))
    else:
        (z,) = _f64(z)
    return _active().reverse_integrate(x0, lam, drift_mats, means, dts, sqrt_q, z)
