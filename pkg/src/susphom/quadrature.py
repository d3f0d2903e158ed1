"""Spherical and radial quadrature rules."""

from functools import lru_cache

import numpy as np
from scipy.integrate import lebedev_rule

SPHERE_ORDERS = (17, 29)


@lru_cache(maxsize=None)
def _sphere_rule(order):
    x, w = lebedev_rule(order)
    nodes = np.ascontiguousarray(x.T)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    nodes.setflags(write=False)
    w = np.asarray(w, dtype=float)
    w.setflags(write=False)
    return nodes, w


def sphere_rule(order=17):
    """Lebedev nodes on the unit sphere and weights summing to ``4 pi``.

    Exact for polynomials up to degree ``order``.
    """
    return _sphere_rule(int(order))


def sphere_mean(f, order=17):
    """Angular mean of ``f`` (a function of unit vectors, vectorized) over the sphere."""
    nodes, w = sphere_rule(order)
    vals = np.asarray(f(nodes))
    return np.tensordot(w, vals, axes=(0, 0)) / (4.0 * np.pi)


@lru_cache(maxsize=None)
def _gauss(n):
    return np.polynomial.legendre.leggauss(int(n))


def gauss_legendre(a, b, n):
    """Gauss-Legendre nodes and weights on ``[a, b]``."""
    x, w = _gauss(n)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def composite_gauss(edges, n):
    """Composite Gauss-Legendre rule with ``n`` nodes on each interval of ``edges``."""
    edges = np.asarray(edges, dtype=float)
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(a, b, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)
