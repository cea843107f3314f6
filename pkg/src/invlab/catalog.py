"""Built-in systems and sets with analytic derivatives, plus builders for
systems and sets defined by expression strings.

Catalog pairs (system -> default set):

=====================  ===========  =====================================
system                 set          ground truth
=====================  ===========  =====================================
``circle``             ``disk``     invariant (rotation, b~ = 0)
``sphere-n``           ``ball``     invariant (SO(n) rotation noise)
``halfspace-tangent``  ``halfspace``  invariant (noise tangent to boundary)
``halfspace-crossing`` ``halfspace``  not invariant (noise crosses)
``inward-drift``       ``halfspace``  invariant (sigma = 0)
=====================  ===========  =====================================
"""

from __future__ import annotations

import re

import numpy as np

from . import exprlang
from .sde_core import ClosedSet, ControlSystem, TestFunction

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _u0(u, like):
    """First control coordinate, shaped to broadcast against ``like[..., :]``."""
    return np.asarray(u, dtype=float)[..., 0][..., None] * np.ones_like(like[..., :1])


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def circle(controls=((1.0,), (0.5,))) -> ControlSystem:
    """``b = -u^2 x / 2``, ``sigma = u J x``: |X| is conserved."""

    def b(x, u):
        x = np.asarray(x, dtype=float)
        return -0.5 * _u0(u, x) ** 2 * x

    def sigma(x, u):
        x = np.asarray(x, dtype=float)
        return (_u0(u, x) * (x @ J2.T))[..., None]

    def dsigma(x, u, i):
        x = np.asarray(x, dtype=float)
        return _u0(u, x)[..., None] * J2

    def exact(x0, u, W):
        # X_t = R(u W_t) x0
        return np.einsum("...rc,...c->...r", rotation(float(np.asarray(u)[0]) * np.asarray(W)),
                         np.asarray(x0, dtype=float))

    return ControlSystem(2, 1, b, sigma, dsigma, controls, name="circle",
                         meta={"exact": exact, "default_set": "disk", "invariant": True})


def _so_generators(n):
    gens = []
    for i in range(n):
        for j in range(i + 1, n):
            G = np.zeros((n, n))
            G[i, j], G[j, i] = -1.0, 1.0
            gens.append(G)
    return np.array(gens)


def sphere(n: int = 3, controls=((1.0,), (0.5,))) -> ControlSystem:
    """Rotation noise along every plane of R^n; |X| is conserved."""
    if n < 2:
        raise ValueError("sphere-n needs n >= 2")
    G = _so_generators(n)
    d = len(G)

    def b(x, u):
        x = np.asarray(x, dtype=float)
        return -0.5 * (n - 1) * _u0(u, x) ** 2 * x

    def sigma(x, u):
        x = np.asarray(x, dtype=float)
        return _u0(u, x)[..., None] * np.einsum("kij,...j->...ik", G, x)

    def dsigma(x, u, i):
        x = np.asarray(x, dtype=float)
        return _u0(u, x)[..., None] * G[i]

    return ControlSystem(n, d, b, sigma, dsigma, controls, name=f"sphere-{n}",
                         meta={"default_set": "ball", "invariant": True})


def halfspace_tangent(controls=((1.0,), (0.5,))) -> ControlSystem:
    """``b = (-u, 0)``, ``sigma = (0, u (1 + sin(x1)/2))``."""

    def b(x, u):
        x = np.asarray(x, dtype=float)
        uu = _u0(u, x)[..., 0]
        return np.stack([-uu, np.zeros_like(uu)], -1)

    def sigma(x, u):
        x = np.asarray(x, dtype=float)
        uu = _u0(u, x)[..., 0]
        return np.stack([np.zeros_like(uu), uu * (1.0 + 0.5 * np.sin(x[..., 0]))], -1)[..., None]

    def dsigma(x, u, i):
        x = np.asarray(x, dtype=float)
        uu = _u0(u, x)[..., 0]
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 1, 0] = 0.5 * uu * np.cos(x[..., 0])
        return out

    return ControlSystem(2, 1, b, sigma, dsigma, controls, name="halfspace-tangent",
                         meta={"default_set": "halfspace", "invariant": True})


def halfspace_crossing(controls=((1.0,), (0.5,))) -> ControlSystem:
    """``b = 0``, ``sigma = (u, 0)``: noise normal to the boundary."""

    def b(x, u):
        return np.zeros(np.broadcast_shapes(np.shape(x), (2,)))

    def sigma(x, u):
        x = np.asarray(x, dtype=float)
        uu = _u0(u, x)[..., 0]
        return np.stack([uu, np.zeros_like(uu)], -1)[..., None]

    def dsigma(x, u, i):
        return np.zeros(np.shape(x)[:-1] + (2, 2))

    return ControlSystem(2, 1, b, sigma, dsigma, controls, name="halfspace-crossing",
                         meta={"default_set": "halfspace", "invariant": False})


def inward_drift(controls=((1.0,), (0.5,))) -> ControlSystem:
    """``b = (-u, 0)``, ``sigma = 0``."""

    def b(x, u):
        x = np.asarray(x, dtype=float)
        uu = _u0(u, x)[..., 0]
        return np.stack([-uu, np.zeros_like(uu)], -1)

    def sigma(x, u):
        return np.zeros(np.shape(x)[:-1] + (2, 1))

    def dsigma(x, u, i):
        return np.zeros(np.shape(x)[:-1] + (2, 2))

    return ControlSystem(2, 1, b, sigma, dsigma, controls, name="inward-drift",
                         meta={"default_set": "halfspace", "invariant": True})


def ball(n: int = 2, name: str | None = None) -> ClosedSet:
    """Closed unit ball, ``g = |x|^2 - 1``."""
    return ClosedSet(
        g=lambda x: np.sum(np.asarray(x, float) ** 2, axis=-1) - 1.0,
        dg=lambda x: 2.0 * np.asarray(x, float),
        d2g=lambda x: 2.0 * np.broadcast_to(np.eye(np.shape(x)[-1]), np.shape(x) + (np.shape(x)[-1],)),
        distance=lambda x: np.maximum(np.linalg.norm(np.asarray(x, float), axis=-1) - 1.0, 0.0),
        name=name or ("disk" if n == 2 else "ball"),
    )


def halfspace() -> ClosedSet:
    """``K = {x1 <= 0}``."""

    def dg(x):
        x = np.asarray(x, float)
        out = np.zeros_like(x)
        out[..., 0] = 1.0
        return out

    return ClosedSet(
        g=lambda x: np.asarray(x, float)[..., 0] * 1.0,
        dg=dg,
        d2g=lambda x: np.zeros(np.shape(x) + (np.shape(x)[-1],)),
        distance=lambda x: np.maximum(np.asarray(x, float)[..., 0], 0.0),
        name="halfspace",
    )


SYSTEMS = ("circle", "sphere-n", "halfspace-tangent", "halfspace-crossing", "inward-drift")
SETS = ("disk", "ball", "halfspace")
PAIRS = (
    ("circle", "disk"),
    ("sphere-n", "ball"),
    ("halfspace-tangent", "halfspace"),
    ("halfspace-crossing", "halfspace"),
    ("inward-drift", "halfspace"),
)


def get_system(name: str) -> ControlSystem:
    if name == "circle":
        return circle()
    m = re.fullmatch(r"sphere-(n|\d+)", name)
    if m:
        return sphere(3 if m.group(1) == "n" else int(m.group(1)))
    builders = {"halfspace-tangent": halfspace_tangent, "halfspace-crossing": halfspace_crossing,
                "inward-drift": inward_drift}
    if name not in builders:
        raise KeyError(f"unknown catalog system {name!r}; known: {', '.join(SYSTEMS)}")
    return builders[name]()


def get_set(name: str, n: int) -> ClosedSet:
    if name in ("disk", "ball"):
        return ball(n, name=name)
    if name == "halfspace":
        return halfspace()
    raise KeyError(f"unknown catalog set {name!r}; known: {', '.join(SETS)}")


# ------------------------------------------------------ expression-defined


def expression_system(n: int, d: int, b: list, sigma: list, controls, name: str = "expr") -> ControlSystem:
    """System from expression strings; ``sigma`` is a list of ``n`` rows of
    ``d`` entries. Dsigma comes from dual numbers."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    k = controls.shape[1]
    if len(b) != n:
        raise ValueError(f"b has {len(b)} components, expected n={n}")
    if len(sigma) != n or any(len(row) != d for row in sigma):
        raise ValueError(f"sigma must be {n} rows of {d} expressions")
    bc = [exprlang.Compiled(s, n, k) for s in b]
    sc = [[exprlang.Compiled(s, n, k) for s in row] for row in sigma]
    for row in sc:
        for c in row:
            if exprlang.contains_call(c.expr, "abs"):
                raise exprlang.ExprDomainError("abs is not allowed in sigma (Dsigma required)",
                                               c.source, 0)

    def bf(x, u):
        return np.stack([c.eval(x, u) for c in bc], -1)

    def sf(x, u):
        return np.stack([np.stack([c.eval(x, u) for c in row], -1) for row in sc], -2)

    def dsf(x, u, i):
        return np.stack([sc[r][i].gradient(x, u) for r in range(n)], -2)

    return ControlSystem(n, d, bf, sf, dsf, controls, name=name, derivatives="dual",
                         meta={"b": list(b), "sigma": [list(r) for r in sigma]})


def expression_test_function(src: str, n: int, name: str | None = None) -> TestFunction:
    c = exprlang.Compiled(src, n)
    return TestFunction(c.eval, c.gradient, c.hessian, name=name or src)


def expression_set(g: str, n: int, name: str | None = None) -> ClosedSet:
    c = exprlang.Compiled(g, n)
    if exprlang.contains_call(c.expr, "abs"):
        raise exprlang.ExprDomainError("abs is not allowed in g (Dg, D^2g required)", g, 0)
    return ClosedSet(g=c.eval, dg=c.gradient, d2g=c.hessian, distance=None, name=name or g)
