"""Immutable expression trees for scalar fields on the plane.

Every field in the construction (the unknowns ``v``, ``w``, amplitudes,
potentials, the target tensor) is a closed-form tree. Trees are evaluated
exactly at arbitrary points, so oscillations of any frequency are never
aliased, and they are differentiated symbolically.

Node kinds
----------
``Const``, ``Affine`` (``c0 + c1 x1 + c2 x2``; covers coordinates and
phases), ``Sum``, ``Prod``, ``Scale``, ``Func`` (sin, cos, exp, power,
radial bump), ``Mollified`` (quadrature convolution with the mollifier) and
``SineSeries`` (double sine series on a rectangle).

Evaluation is batched over point arrays. Within one batch a node that is
reachable along several paths is evaluated once; all mollification nodes
sharing a quadrature rule share one expanded point set.
"""

from __future__ import annotations

import math
import os
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.polynomial import Polynomial

from ..errors import DomainError, UnsupportedOrderError
from .domain import Rect, intersect_regions

# points per evaluation chunk; mollified inners expand a chunk by the rule size
CHUNK_POINTS = 1 << 15
INNER_BUDGET = 1 << 17


class Expr:
    __slots__ = ("region", "_d")

    children: tuple = ()

    def _init(self, region):
        self.region = region
        self._d = [None, None]

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(-1.0, as_expr(other)))

    def __rsub__(self, other):
        return add(as_expr(other), scale(-1.0, self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return scale(1.0 / float(other), self)
        return mul(self, power(as_expr(other), -1.0))

    def __neg__(self):
        return scale(-1.0, self)

    def __pow__(self, p):
        return power(self, float(p))

    # -- calculus ---------------------------------------------------------
    def diff(self, axis: int) -> "Expr":
        d = self._d[axis]
        if d is None:
            d = self._diff(axis)
            self._d[axis] = d
        return d

    def _diff(self, axis):
        raise NotImplementedError

    def _eval(self, vals, x, y):
        raise NotImplementedError

    def with_region(self, region: Rect | None) -> "Expr":
        """Shallow copy with a different admissible region (same subtree)."""
        clone = object.__new__(type(self))
        for cls in type(self).__mro__:
            for slot in getattr(cls, "__slots__", ()):
                if hasattr(self, slot):
                    object.__setattr__(clone, slot, getattr(self, slot))
        clone._d = [None, None]
        clone.region = region
        return clone

    @property
    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0.0

    def __repr__(self):
        return f"<{type(self).__name__}>"


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = float(value)
        self._init(None)

    def _diff(self, axis):
        return ZERO

    def _eval(self, vals, x, y):
        return self.value

    def __repr__(self):
        return f"Const({self.value!r})"


ZERO = Const(0.0)
ONE = Const(1.0)


class Affine(Expr):
    """``c0 + c1 * x1 + c2 * x2``."""

    __slots__ = ("c0", "c1", "c2")

    def __init__(self, c0, c1, c2):
        self.c0, self.c1, self.c2 = float(c0), float(c1), float(c2)
        self._init(None)

    def _diff(self, axis):
        return const(self.c1 if axis == 0 else self.c2)

    def _eval(self, vals, x, y):
        out = self.c0
        if self.c1:
            out = out + self.c1 * x
        if self.c2:
            out = out + self.c2 * y
        return out

    def __repr__(self):
        return f"Affine({self.c0!r}, {self.c1!r}, {self.c2!r})"


class Sum(Expr):
    __slots__ = ("children",)

    def __init__(self, children):
        self.children = tuple(children)
        self._init(intersect_regions(c.region for c in self.children))

    def _diff(self, axis):
        return add(*(c.diff(axis) for c in self.children))

    def _eval(self, vals, x, y):
        it = iter(self.children)
        out = vals[id(next(it))]
        for c in it:
            out = out + vals[id(c)]
        return out


class Prod(Expr):
    __slots__ = ("children",)

    def __init__(self, children):
        self.children = tuple(children)
        self._init(intersect_regions(c.region for c in self.children))

    def _diff(self, axis):
        terms = []
        for i, c in enumerate(self.children):
            dc = c.diff(axis)
            if dc.is_zero:
                continue
            others = self.children[:i] + self.children[i + 1:]
            terms.append(mul(*others, dc))
        return add(*terms)

    def _eval(self, vals, x, y):
        it = iter(self.children)
        out = vals[id(next(it))]
        for c in it:
            out = out * vals[id(c)]
        return out


class Scale(Expr):
    __slots__ = ("coef", "child", "children")

    def __init__(self, coef, child):
        self.coef = float(coef)
        self.child = child
        self.children = (child,)
        self._init(child.region)

    def _diff(self, axis):
        return scale(self.coef, self.child.diff(axis))

    def _eval(self, vals, x, y):
        return self.coef * vals[id(self.child)]


# -- radial bump g_kappa(u) = exp(-kappa / (1 - u)) for u < 1, else 0 --------

_BUMP_POLYS: dict[tuple[int, float], Polynomial] = {}


def _bump_poly(n: int, kappa: float) -> Polynomial:
    """``P_n`` with ``g^(n)(u) = g(u) P_n(u) / (1 - u)^(2n)``."""
    key = (n, kappa)
    if key not in _BUMP_POLYS:
        if n == 0:
            _BUMP_POLYS[key] = Polynomial([1.0])
        else:
            p = _bump_poly(n - 1, kappa)
            one_minus = Polynomial([1.0, -1.0])
            _BUMP_POLYS[key] = -kappa * p + p.deriv() * one_minus ** 2 + 2 * (n - 1) * p * one_minus
    return _BUMP_POLYS[key]


def bump_derivative(u, n: int = 0, kappa: float = 1.0):
    """n-th derivative of ``exp(-kappa/(1-u))`` (zero for ``u >= 1``)."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = u < 1.0
    if np.any(inside):
        ui = u[inside]
        s = 1.0 - ui
        logmag = -kappa / s - 2 * n * np.log(s)
        out[inside] = np.exp(logmag) * _bump_poly(n, kappa)(ui)
    return out


class Func(Expr):
    """Unary function node.

    ``name`` is one of ``sin``, ``cos``, ``exp``, ``pow`` (params: exponent,
    floor; evaluates ``max(u, floor) ** p``) and ``bump`` (params: derivative
    order, kappa).
    """

    __slots__ = ("name", "child", "params", "children")

    def __init__(self, name, child, params=()):
        self.name = name
        self.child = child
        self.params = tuple(params)
        self.children = (child,)
        self._init(child.region)

    def _diff(self, axis):
        du = self.child.diff(axis)
        if du.is_zero:
            return ZERO
        u = self.child
        if self.name == "sin":
            outer = cos(u)
        elif self.name == "cos":
            outer = scale(-1.0, sin(u))
        elif self.name == "exp":
            outer = self
        elif self.name == "pow":
            p, floor = self.params
            outer = scale(p, power(u, p - 1.0, floor))
        elif self.name == "bump":
            n, kappa = self.params
            outer = Func("bump", u, (n + 1, kappa))
        else:  # pragma: no cover
            raise ValueError(self.name)
        return mul(outer, du)

    def _eval(self, vals, x, y):
        u = vals[id(self.child)]
        if self.name == "sin":
            return np.sin(u)
        if self.name == "cos":
            return np.cos(u)
        if self.name == "exp":
            return np.exp(u)
        if self.name == "pow":
            p, floor = self.params
            if floor is not None:
                u = np.maximum(u, floor)
            if p == 2.0:
                return u * u
            if p == -1.0:
                return 1.0 / u
            if p == 0.5:
                return np.sqrt(u)
            return np.power(u, p)
        if self.name == "bump":
            n, kappa = self.params
            return bump_derivative(u, n, kappa)
        raise ValueError(self.name)  # pragma: no cover

    def __repr__(self):
        return f"Func({self.name}, {self.params})"


class Mollified(Expr):
    """``inner * phi_l`` evaluated by the rule's quadrature.

    Derivatives move onto the inner tree, ``d(f * phi_l) = (df) * phi_l``:
    the masked tensor rule integrates the mollifier itself far more
    accurately than its derivatives.
    """

    __slots__ = ("inner", "rule")

    def __init__(self, inner, rule):
        self.inner = inner
        self.rule = rule
        region = None
        if inner.region is not None:
            region = inner.region.shrink(rule.scale)
        self._init(region)

    def _diff(self, axis):
        d = self.inner.diff(axis)
        if isinstance(d, Const):
            return d
        return Mollified(d, self.rule)

    def __repr__(self):
        return f"Mollified(l={self.rule.scale}, order={self.rule.order})"


class SineSeries(Expr):
    """``sum c[m,n] sin(m pi x'/Lx) sin(n pi y'/Ly)`` on ``rect``, differentiated ``deriv`` times.

    Mode indices start at 1; ``coef[m-1, n-1]`` multiplies mode ``(m, n)``.
    """

    __slots__ = ("coef", "rect", "deriv", "_fx", "_fy")

    def __init__(self, coef, rect: Rect, deriv=(0, 0)):
        self.coef = np.asarray(coef, dtype=float)
        self.coef.setflags(write=False)
        self.rect = rect
        self.deriv = tuple(deriv)
        # low-rank factors coef = fx @ fy.T, dropping singular values below 1e-15 of the top one
        u, sv, vt = np.linalg.svd(self.coef, full_matrices=False)
        r = max(1, int(np.sum(sv > 1e-15 * sv[0]))) if sv.size and sv[0] > 0 else 1
        self._fx, self._fy = u[:, :r] * sv[:r], vt[:r].T
        self._init(rect)

    def _diff(self, axis):
        d = list(self.deriv)
        d[axis] += 1
        return SineSeries(self.coef, self.rect, tuple(d))

    def _basis(self, t, origin, length, k, order):
        key = (origin, length, k, order, t.tobytes()) if t.size <= 1 << 14 else None
        hit = _BASIS_CACHE.get(key) if key else None
        if hit is not None:
            return hit
        m = np.arange(1, k + 1)
        w = m * math.pi / length
        out = (w ** order)[None, :] * np.sin(np.outer(t - origin, w) + order * math.pi / 2)
        if key:
            with _BASIS_LOCK:
                if len(_BASIS_CACHE) >= 16:
                    _BASIS_CACHE.pop(next(iter(_BASIS_CACHE)))
                _BASIS_CACHE[key] = out
        return out

    def _axis(self, t, origin, length, factors, order):
        # lattices repeat coordinates, so the basis is built on unique values only
        tu, inv = np.unique(t, return_inverse=True)
        return self._basis(tu, origin, length, factors.shape[0], order) @ factors, inv

    def _eval(self, vals, x, y):
        x = np.broadcast_to(np.asarray(x, dtype=float), np.broadcast(x, y).shape).ravel()
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape).ravel()
        p = _row_period(x, y)
        if p:
            # row-major tensor lattice: a rank-r matrix product
            bx = self._basis(x[:p], self.rect.x0, self.rect.width, self._fx.shape[0], self.deriv[0])
            by = self._basis(y[::p], self.rect.y0, self.rect.height, self._fy.shape[0], self.deriv[1])
            return ((by @ self._fy) @ (bx @ self._fx).T).ravel()
        px, ix = self._axis(x, self.rect.x0, self.rect.width, self._fx, self.deriv[0])
        py, iy = self._axis(y, self.rect.y0, self.rect.height, self._fy, self.deriv[1])
        out = np.empty(x.shape)
        step = max(1, (1 << 22) // px.shape[1])
        for k in range(0, x.size, step):
            out[k:k + step] = np.einsum("pr,pr->p", px[ix[k:k + step]], py[iy[k:k + step]])
        return out


# sine bases of recent lattice rows, shared across evaluation chunks
_BASIS_CACHE: dict = {}
_BASIS_LOCK = threading.Lock()


def _row_period(x, y) -> int:
    """Row length ``p`` if ``(x, y)`` is a flattened row-major lattice, else 0."""
    n = x.size
    if n < 4:
        return 0
    hits = np.flatnonzero(x == x[0])
    if len(hits) < 2:
        return 0
    p = int(hits[1])
    if n % p or p < 2:
        return 0
    X, Y = x.reshape(-1, p), y.reshape(-1, p)
    if np.array_equal(X, np.broadcast_to(X[0], X.shape)) and np.array_equal(Y, np.broadcast_to(Y[:, :1], Y.shape)):
        return p
    return 0


# -- smart constructors ---------------------------------------------------


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return const(v)


def const(c) -> Expr:
    c = float(c)
    if c == 0.0:
        return ZERO
    if c == 1.0:
        return ONE
    return Const(c)


def coord(i: int) -> Expr:
    return Affine(0.0, 1.0, 0.0) if i == 0 else Affine(0.0, 0.0, 1.0)


def affine(c0, c1, c2) -> Expr:
    if c1 == 0.0 and c2 == 0.0:
        return const(c0)
    return Affine(c0, c1, c2)


X1 = Affine(0.0, 1.0, 0.0)
X2 = Affine(0.0, 0.0, 1.0)


def add(*terms) -> Expr:
    c0 = c1 = c2 = 0.0
    rest = []
    have_lin = False
    stack = list(terms)
    flat = []
    while stack:
        t = as_expr(stack.pop(0))
        if isinstance(t, Sum) and t.region is None:
            stack[0:0] = list(t.children)
        else:
            flat.append(t)
    for t in flat:
        if isinstance(t, Const):
            c0 += t.value
        elif isinstance(t, Affine):
            c0 += t.c0
            c1 += t.c1
            c2 += t.c2
            have_lin = True
        else:
            rest.append(t)
    lin = affine(c0, c1, c2) if have_lin else const(c0)
    if not lin.is_zero:
        rest.append(lin)
    if not rest:
        return ZERO
    if len(rest) == 1:
        return rest[0]
    return Sum(rest)


def scale(c, e) -> Expr:
    c = float(c)
    e = as_expr(e)
    if c == 0.0 or e.is_zero:
        return ZERO
    if c == 1.0:
        return e
    if isinstance(e, Const):
        return const(c * e.value)
    if isinstance(e, Affine):
        return affine(c * e.c0, c * e.c1, c * e.c2)
    if isinstance(e, Scale):
        return scale(c * e.coef, e.child)
    return Scale(c, e)


def mul(*factors) -> Expr:
    coef = 1.0
    rest = []
    stack = [as_expr(f) for f in factors]
    while stack:
        f = stack.pop(0)
        if isinstance(f, Const):
            coef *= f.value
        elif isinstance(f, Scale):
            coef *= f.coef
            stack.insert(0, f.child)
        elif isinstance(f, Prod) and f.region is None:
            stack[0:0] = list(f.children)
        else:
            rest.append(f)
    if coef == 0.0:
        return ZERO
    if not rest:
        return const(coef)
    core = rest[0] if len(rest) == 1 else Prod(rest)
    return scale(coef, core)


def sin(u) -> Expr:
    u = as_expr(u)
    if isinstance(u, Const):
        return const(math.sin(u.value))
    return Func("sin", u)


def cos(u) -> Expr:
    u = as_expr(u)
    if isinstance(u, Const):
        return const(math.cos(u.value))
    return Func("cos", u)


def exp(u) -> Expr:
    u = as_expr(u)
    if isinstance(u, Const):
        return const(math.exp(u.value))
    return Func("exp", u)


def power(u, p: float, floor: float | None = None) -> Expr:
    u = as_expr(u)
    p = float(p)
    if p == 0.0:
        return ONE
    if p == 1.0 and floor is None:
        return u
    if isinstance(u, Const):
        base = u.value if floor is None else max(u.value, floor)
        return const(base ** p)
    if p == 1.0:
        floor = None
    if p.is_integer() and p > 0:
        floor = None
    return Func("pow", u, (p, floor))


def sqrt(u, floor: float | None = None) -> Expr:
    return power(u, 0.5, floor)


def bump(u, kappa: float = 1.0) -> Expr:
    """``exp(-kappa / (1 - u))`` for ``u < 1`` and zero beyond."""
    u = as_expr(u)
    if isinstance(u, Const):
        return const(float(bump_derivative(np.array([u.value]), 0, kappa)[0]))
    return Func("bump", u, (0, float(kappa)))


# -- calculus helpers -------------------------------------------------------


def diff(e: Expr, multi_index) -> Expr:
    """Partial derivative ``d1^i d2^j`` of any order."""
    i, j = multi_index
    for _ in range(i):
        e = e.diff(0)
    for _ in range(j):
        e = e.diff(1)
    return e


def differentiate(field: Expr, multi_index) -> Expr:
    """Exact partial derivative of total order at most three."""
    i, j = multi_index
    if i < 0 or j < 0:
        raise UnsupportedOrderError("negative derivative order")
    if i + j > 3:
        raise UnsupportedOrderError(f"derivative order {i + j} exceeds 3")
    return diff(field, (i, j))


def grad(e: Expr) -> tuple[Expr, Expr]:
    return e.diff(0), e.diff(1)


def hessian(e: Expr) -> tuple[Expr, Expr, Expr]:
    """``(e_11, e_12, e_22)``."""
    d1 = e.diff(0)
    return d1.diff(0), d1.diff(1), e.diff(1).diff(1)


# -- evaluation -------------------------------------------------------------


def _topo(roots):
    """Post-order of the DAG below ``roots``; does not enter mollified inners."""
    order = []
    seen = set()
    stack = [(r, False) for r in reversed(roots)]
    while stack:
        node, done = stack.pop()
        nid = id(node)
        if done:
            order.append(node)
            continue
        if nid in seen:
            continue
        seen.add(nid)
        stack.append((node, True))
        for c in reversed(node.children):
            if id(c) not in seen:
                stack.append((c, False))
    return order


def _eval_many(roots, x, y):
    order = _topo(roots)
    vals = {}
    groups = defaultdict(list)
    for node in order:
        if isinstance(node, Mollified):
            groups[node.rule].append(node)
    for rule, nodes in groups.items():
        vals.update(_eval_mollified(rule, nodes, x, y))
    for node in order:
        if id(node) not in vals:
            vals[id(node)] = node._eval(vals, x, y)
    n = x.shape[0]
    out = []
    for r in roots:
        v = vals[id(r)]
        if np.ndim(v) == 0:
            v = np.full(n, float(v))
        out.append(v)
    return out


def _eval_mollified(rule, nodes, x, y):
    inners = list({id(m.inner): m.inner for m in nodes}.values())
    index = {id(e): k for k, e in enumerate(inners)}
    n = x.shape[0]
    q = rule.size
    out = {id(m): np.empty(n) for m in nodes}
    step = max(1, INNER_BUDGET // q)
    for start in range(0, n, step):
        sl = slice(start, min(n, start + step))
        xe = (x[sl, None] - rule.offsets[None, :, 0]).ravel()
        ye = (y[sl, None] - rule.offsets[None, :, 1]).ravel()
        inner_vals = _eval_many(inners, xe, ye)
        for m in nodes:
            block = inner_vals[index[id(m.inner)]].reshape(-1, q)
            out[id(m)][sl] = block @ rule.weights
    return out


def evaluate_many(exprs, x, y) -> list[np.ndarray]:
    """Evaluate several trees at the points ``(x[i], y[i])`` with shared work."""
    x = np.ascontiguousarray(np.asarray(x, dtype=float).ravel())
    y = np.ascontiguousarray(np.asarray(y, dtype=float).ravel())
    exprs = [as_expr(e) for e in exprs]
    n = x.shape[0]
    if n <= CHUNK_POINTS:
        return _eval_many(exprs, x, y)
    outs = [np.empty(n) for _ in exprs]
    # keep lattice chunks made of whole rows
    p = _row_period(x, y)
    chunk = max(1, CHUNK_POINTS // p) * p if p else CHUNK_POINTS
    slices = [slice(s, min(n, s + chunk)) for s in range(0, n, chunk)]

    def run(sl):
        for o, p in zip(outs, _eval_many(exprs, x[sl], y[sl])):
            o[sl] = p

    workers = min(scan_workers(), len(slices))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, slices))
    else:
        for sl in slices:
            run(sl)
    return outs


def scan_workers() -> int:
    """Parallel scan width: ``WFORGE_THREADS`` if set, else the CPU count."""
    env = os.environ.get("WFORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def evaluate_array(e: Expr, x, y) -> np.ndarray:
    return evaluate_many([e], x, y)[0]


def evaluate(field: Expr, point) -> float:
    """Value of ``field`` at one point, checked against its admissible region."""
    px, py = float(point[0]), float(point[1])
    region = field.region
    if region is not None and not bool(region.contains(px, py)):
        raise DomainError(f"point {(px, py)} outside admissible region {region}")
    return float(evaluate_many([field], np.array([px]), np.array([py]))[0][0])


def extend(field: Expr, domain) -> Expr:
    """Re-tag ``field`` as admissible on the extended rectangle of ``domain``.

    Closed-form trees are defined on the whole plane, so the tree itself is
    reused. Nodes whose own region is bounded (sine series, mollified
    inners) keep it; the tag can only widen up to what the tree supports.
    """
    target = domain.extended
    inherent = _inherent_region(field)
    region = target if inherent is None else target.intersect(inherent)
    return field.with_region(region)


def restrict(field: Expr, rect: Rect) -> Expr:
    return field.with_region(rect if field.region is None else rect.intersect(field.region))


def _inherent_region(field):
    regions = []
    for node in _topo([field]):
        if isinstance(node, SineSeries):
            regions.append(node.rect)
        elif isinstance(node, Mollified) and node.region is not None:
            regions.append(node.region)
    return intersect_regions(regions)


def node_count(e: Expr) -> int:
    """Number of distinct nodes, counting through mollified inners."""
    seen = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        stack.extend(n.children)
        if isinstance(n, Mollified):
            stack.append(n.inner)
    return len(seen)
