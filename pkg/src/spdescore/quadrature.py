"""Composite Gauss-Legendre quadrature over [a, b] with panel doubling."""
from functools import lru_cache

import numpy as np

GL_POINTS = 64


@lru_cache(maxsize=8)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gl_nodes(a: float, b: float, panels: int = 1, n: int = GL_POINTS):
    """Nodes and weights of ``panels`` equal panels of ``n``-point Gauss-Legendre."""
    x, w = _leggauss(n)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def integrate(f, a: float, b: float, tol: float = 1e-13, max_panels: int = 1024):
    """Integrate ``f`` (vectorized over nodes, leading axis) to relative ``tol``.

    Starts with one 64-point panel and doubles the panel count until two
    successive estimates differ by less than ``tol`` times their magnitude.
    """
    prev = None
    panels = 1
    while True:
        r, w = gl_nodes(a, b, panels)
        vals = np.asarray(f(r))
        est = np.tensordot(w, vals, axes=(0, 0))
        if prev is not None:
            scale = max(np.max(np.abs(est)), np.finfo(float).tiny)
            if np.max(np.abs(est - prev)) <= tol * scale:
                return est
        if panels >= max_panels:
            return est
        prev = est
        panels *= 2

