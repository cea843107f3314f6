"""Small builders shared by the test modules."""

import numpy as np

from invlab.sde_core import ControlSystem, TestFunction


def make_system(n, d, b, sigma, dsigma=None, controls=((0.0,),), name="adhoc"):
    """Control-free test system from plain callables of ``x``."""

    def drift(x, u):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(b(x), dtype=float), x.shape[:-1] + (n,)).copy()

    def diff(x, u):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(sigma(x), dtype=float), x.shape[:-1] + (n, d)).copy()

    def jac(x, u, i):
        x = np.asarray(x, dtype=float)
        if dsigma is None:
            return np.zeros(x.shape[:-1] + (n, n))
        return np.broadcast_to(np.asarray(dsigma(x, i), dtype=float), x.shape[:-1] + (n, n)).copy()

    return ControlSystem(n, d, drift, diff, jac, np.asarray(controls, dtype=float), name=name)


def quadratic(Q, c=None, const=0.0, name="quad"):
    """``phi(x) = x.Q.x / 2 + c.x + const``."""
    Q = np.asarray(Q, dtype=float)
    c = np.zeros(Q.shape[0]) if c is None else np.asarray(c, dtype=float)
    return TestFunction(
        value=lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, Q, x) + np.asarray(x) @ c + const,
        grad=lambda x: np.asarray(x) @ Q.T + c,
        hess=lambda x: np.broadcast_to(Q, np.asarray(x).shape[:-1] + Q.shape),
        name=name,
    )
