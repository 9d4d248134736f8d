"""Linear and extremal nonlocal operators by directional radial quadrature.

Every operator of the class has the form

    L u(x) = c_norm * sum_j w_j mu_j I_j(x),
    I_j(x) = int_0^inf (u(x + r t_j) + u(x - r t_j) - 2 u(x)) r^(-1-2s) dr,

where the unit vectors ``t_j`` cover one representative of each antipodal
pair of directions and the weights ``w_j`` integrate over that half sphere.
Because ``mu`` may take any value in ``[lam, big_lam]`` independently in
each direction, the supremum and infimum over the class are attained
direction by direction once the ``I_j`` are known.

Discretisation of ``I_j`` at an interior node (lengths in lattice units):

* ``[0, 1]``: the second difference is replaced by ``r^2`` times the
  lattice second difference ``delta(x, h t_j) / h^2``, integrated exactly;
* ``[1, exit]``: the multilinear interpolant along the ray, integrated
  by Gauss-Legendre on panels between lattice-line crossings, refined so
  that each panel satisfies ``length <= panel_ratio * start``;
* ``[exit, inf)``: piecewise-constant exterior data, integrated in
  closed form.

The result is linear in the nodal values, ``I_j = h^(-2s) (A_j u + b_j)``,
with ``A_j`` depending only on the grid and ``b_j`` on the exterior data.
"""
from __future__ import annotations

import dataclasses
import math

import numpy as np
import scipy.sparse as sparse
from scipy.special import gamma

from .domain import DomainGrid, ExteriorSpec, Field

PLUS, MINUS = "plus", "minus"

# node counts up to this size keep dense direction matrices
_DENSE_LIMIT = 2500


def _check_sign(sign):
    if sign not in (PLUS, MINUS):
        raise ValueError(f"sign must be 'plus' or 'minus', got {sign!r}")


@dataclasses.dataclass(frozen=True)
class KernelSpec:
    """Parameters of the operator class.

    ``directions`` hold one unit vector per antipodal pair and ``weights``
    their half-sphere quadrature weights (summing to 1 in 1D and pi in 2D).
    """

    s: float
    lam: float = 1.0
    big_lam: float = 1.0
    c_norm: float = 1.0
    directions: tuple = ((1.0,),)
    weights: tuple = (1.0,)
    gauss_order: int = 3
    panel_ratio: float = 0.25

    def __post_init__(self):
        dirs = tuple(tuple(float(c) for c in d) for d in self.directions)
        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not (0 < self.s < 1):
            raise ValueError("s must lie in (0, 1)")
        if not (0 < self.lam <= self.big_lam):
            raise ValueError("need 0 < lam <= big_lam")
        if not (self.c_norm > 0):
            raise ValueError("c_norm must be positive")
        if not dirs or len(dirs) != len(self.weights):
            raise ValueError("need one positive weight per direction")
        if min(self.weights) <= 0:
            raise ValueError("direction weights must be positive")
        dims = {len(d) for d in dirs}
        if len(dims) != 1:
            raise ValueError("directions of mixed dimension")
        for d in dirs:
            if abs(math.hypot(*d) - 1) > 1e-12:
                raise ValueError("directions must be unit vectors")
        half_sphere = 1.0 if self.dim == 1 else math.pi
        if abs(sum(self.weights) - half_sphere) > 1e-12 * half_sphere:
            raise ValueError("direction weights must sum to the half-sphere measure")

    @property
    def dim(self) -> int:
        return len(self.directions[0])

    @property
    def n_dirs(self) -> int:
        return len(self.directions)

    def replace(self, **changes) -> "KernelSpec":
        return dataclasses.replace(self, **changes)


def half_circle_directions(n_dirs: int):
    """Uniform angles ``k pi / n`` with equal (trapezoid) weights ``pi / n``."""
    dirs = []
    for k in range(n_dirs):
        t = k * math.pi / n_dirs
        c, s = math.cos(t), math.sin(t)
        # exact zeros keep axis-aligned rays on lattice lines
        c = 0.0 if abs(c) < 1e-14 else c
        s = 0.0 if abs(s) < 1e-14 else s
        dirs.append((c, s))
    return tuple(dirs), (math.pi / n_dirs,) * n_dirs


def make_kernel(dim: int, s: float, lam: float = 1.0, big_lam: float = 1.0,
                c_norm: float = 1.0, n_dirs: int = 16, **quadrature) -> KernelSpec:
    if dim == 1:
        dirs, weights = ((1.0,),), (1.0,)
    elif dim == 2:
        dirs, weights = half_circle_directions(n_dirs)
    else:
        raise ValueError("dim must be 1 or 2")
    return KernelSpec(s, lam, big_lam, c_norm, dirs, weights, **quadrature)


def fractional_laplacian_constant(dim: int, s: float) -> float:
    """Normalisation making ``lam = big_lam = 1`` equal to ``-(-Delta)^s``."""
    return s * 4 ** s * gamma(dim / 2 + s) / (math.pi ** (dim / 2) * gamma(1 - s))


def fractional_laplacian_kernel(dim: int, s: float, n_dirs: int = 16) -> KernelSpec:
    return make_kernel(dim, s, 1.0, 1.0, fractional_laplacian_constant(dim, s), n_dirs)


@dataclasses.dataclass
class PolicyField:
    """Per-node, per-direction kernel weights ``mu_j(x)``."""

    values: np.ndarray
    kernel: KernelSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        k = self.kernel
        if self.values.ndim != 2 or self.values.shape[1] != k.n_dirs:
            raise ValueError("policy must have shape (n_nodes, n_dirs)")
        tol = 1e-12 * k.big_lam
        if np.any(self.values < k.lam - tol) or np.any(self.values > k.big_lam + tol):
            raise ValueError("policy values outside [lam, big_lam]")

    def __eq__(self, other):
        return isinstance(other, PolicyField) and np.array_equal(self.values, other.values)


def _gauss(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1) / 2, w / 2


class _RayStencil:
    """Lattice-unit quadrature of one direction (both orientations)."""

    def __init__(self, grid: DomainGrid, theta, s: float, gauss_order: int,
                 panel_ratio: float):
        self.grid = grid
        self.s = s
        theta = np.asarray(theta, float)
        N, dim, m = grid.n_nodes, grid.dim, grid.half_width
        K = grid.lattice_index[grid.lattice_of_node]
        gx, gw = _gauss(gauss_order)
        nf = 1.0 / (2 - 2 * s)
        rows, cols, vals = [], [], []
        self.near_ext = []
        self.tails = []

        # far-field weight mass per node; the self coefficient subtracts it so
        # that every ray integrates u(x + r v) - u(x) with one quadrature
        mass = np.zeros(N)

        def add_points(node_rows, pos, weight, far=True):
            # pos: lattice-unit offsets from the node, weight: per point
            if far:
                np.add.at(mass, node_rows, weight)
            base = np.floor(pos).astype(np.int64)
            frac = pos - base
            for corner in np.ndindex(*(2,) * dim):
                c = np.asarray(corner)
                wc = weight * np.prod(np.where(c == 1, frac, 1 - frac), axis=1)
                idx = np.clip(K[node_rows] + base + c + m, 0, 2 * m)
                flat = np.ravel_multi_index(tuple(idx.T), grid.lattice_shape)
                keep = wc != 0
                rows.append(node_rows[keep])
                cols.append(flat[keep])
                vals.append(wc[keep])

        all_rows = np.arange(N)

        for sigma in (1.0, -1.0):
            v = sigma * theta
            exits = grid.exit_distance(grid.nodes, v) / grid.h
            tol = 1e-9

            # near field: second difference over one lattice step
            near = grid.nodes + grid.h * v
            inside = grid.contains(near)
            add_points(all_rows[inside], np.broadcast_to(v, (int(inside.sum()), dim)),
                       np.full(int(inside.sum()), nf), far=False)
            if (~inside).any():
                self.near_ext.append((all_rows[~inside], near[~inside], nf))

            # common breakpoints: lattice-line crossings along the ray
            rmax = float(exits.max())
            bps = [np.array([1.0])]
            for i in range(dim):
                a = abs(v[i])
                if a > 0:
                    mm = np.arange(1, int(rmax * a) + 2)
                    bps.append(mm / a)
            B = np.unique(np.concatenate(bps))
            B = B[(B >= 1.0) & (B <= rmax + tol)]
            keep = np.concatenate([[True], np.diff(B) > 1e-12 * B[1:]])
            B = B[keep]
            lo, hi = B[:-1], B[1:]
            nsub = np.maximum(1, np.ceil((hi - lo) / (panel_ratio * lo) - 1e-12)).astype(int)
            sub_lo = np.concatenate([l + (u - l) * np.arange(n) / n
                                     for l, u, n in zip(lo, hi, nsub)]) if len(lo) else np.zeros(0)
            sub_len = np.repeat((hi - lo) / nsub, nsub)
            seg_hi = np.repeat(hi, nsub)
            r_q = (sub_lo[:, None] + sub_len[:, None] * gx).ravel()
            w_q = (sub_len[:, None] * gw).ravel() * r_q ** (-1 - 2 * s)
            hi_q = np.repeat(seg_hi, gauss_order)

            # full panels: every point whose segment ends before the exit
            n_full = np.searchsorted(hi_q, exits + tol, side="right")
            total = int(n_full.sum())
            if total:
                node_rows = np.repeat(all_rows, n_full)
                starts = np.repeat(np.cumsum(n_full) - n_full, n_full)
                q = np.arange(total) - starts
                add_points(node_rows, r_q[q, None] * v, w_q[q])

            # partial panel from the last breakpoint to the exit
            j = np.searchsorted(B, exits + tol, side="right") - 1
            has = (exits > 1 + tol) & (j >= 0)
            lower = np.where(has, B[np.maximum(j, 0)], 1.0)
            has &= exits - lower > tol
            if has.any():
                pr = all_rows[has]
                a, b = lower[has], exits[has]
                n = np.maximum(1, np.ceil((b - a) / (panel_ratio * a) - 1e-12)).astype(int)
                nmax = int(n.max())
                k = np.arange(nmax)
                valid = k[None, :] < n[:, None]
                plen = (b - a) / n
                plo = a[:, None] + plen[:, None] * k[None, :]
                r = (plo[:, :, None] + plen[:, None, None] * gx).reshape(len(pr), -1)
                w = np.broadcast_to((plen[:, None] * gw[None, :])[:, None, :],
                                    (len(pr), nmax, gauss_order)).reshape(len(pr), -1)
                w = w * np.repeat(valid, gauss_order, axis=1) * r ** (-1 - 2 * s)
                add_points(np.repeat(pr, r.shape[1]), (r.reshape(-1, 1) * v),
                           w.ravel())

            # exterior tail starts at max(1, exit)
            start = np.maximum(1.0, exits)
            mass += start ** (-2 * s) / (2 * s)
            self.tails.append(((grid.nodes - grid.center) / grid.h, v, start))

        rows.append(all_rows)
        cols.append(grid.lattice_of_node)
        vals.append(-2 * nf - mass)

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        node = grid.node_of_lattice[cols]
        ghost = grid.ghost_of_lattice[cols]
        isnode = node >= 0
        A = sparse.coo_matrix((vals[isnode], (rows[isnode], node[isnode])),
                              shape=(N, N)).tocsr()
        G = sparse.coo_matrix((vals[~isnode], (rows[~isnode], ghost[~isnode])),
                              shape=(N, len(grid.lattice_of_ghost))).tocsr()
        A.sum_duplicates()
        self.A = A.toarray() if N <= _DENSE_LIMIT else A
        self.G = G
        self.diagonal = np.asarray(A.diagonal())

    def offsets(self, exterior: ExteriorSpec) -> np.ndarray:
        """Exterior contribution ``b`` (lattice units) for ``exterior``."""
        grid, s = self.grid, self.s
        if exterior.tail_growth is not None and exterior.tail_growth[1] >= 2 * s:
            return np.full(grid.n_nodes, np.nan)
        pts = grid.lattice_points[grid.lattice_of_ghost]
        ghost_vals = exterior.value_at_radius(np.linalg.norm(pts - grid.center, axis=1))
        b = self.G @ ghost_vals
        for rows, points, coef in self.near_ext:
            rho = np.linalg.norm(points - grid.center, axis=1)
            np.add.at(b, rows, coef * exterior.value_at_radius(rho))
        edges = exterior.edges / grid.h
        levels = exterior.levels
        for p, v, start in self.tails:
            b += _tail_integral(p, v, start, edges, levels, s)
        return b


def _tail_integral(p, v, start, edges, levels, s):
    """Exact ``int_start^inf g(p + r v) r^(-1-2s) dr`` for radial step data ``g``."""
    n = len(p)
    pv = p @ v
    pp = np.einsum("ij,ij->i", p, p)
    roots = [start[:, None]]
    for e in edges:
        disc = pv ** 2 - pp + e * e
        sq = np.sqrt(np.maximum(disc, 0.0))
        for r in (-pv - sq, -pv + sq):
            roots.append(np.where((disc > 0) & (r > start), r, start)[:, None])
    t = np.sort(np.concatenate(roots, axis=1), axis=1)
    a, b = t[:, :-1], t[:, 1:]
    mid = (a + b) / 2
    pos = p[:, None, :] + mid[:, :, None] * v
    rho = np.linalg.norm(pos, axis=2)
    vals = levels[np.searchsorted(edges, rho, side="right")]
    ker = (a ** (-2 * s) - b ** (-2 * s)) / (2 * s)
    out = np.sum(vals * ker, axis=1)
    # unbounded last piece carries the far value
    out += levels[-1] * t[:, -1] ** (-2 * s) / (2 * s)
    return out if n else np.zeros(0)


class DiscreteOperator:
    """All direction stencils of a kernel on a grid.

    Obtain instances through :func:`get_operator`, which caches them on the
    grid.
    """

    def __init__(self, grid: DomainGrid, kernel: KernelSpec):
        if kernel.dim != grid.dim:
            raise ValueError("kernel and grid dimensions differ")
        self.grid = grid
        self.kernel = kernel
        self.scale = grid.h ** (-2 * kernel.s)
        self.stencils = [_RayStencil(grid, t, kernel.s, kernel.gauss_order, kernel.panel_ratio)
                         for t in kernel.directions]
        self.weights = np.asarray(kernel.weights)
        self._offsets = {}

    def offsets(self, exterior: ExteriorSpec) -> np.ndarray:
        """``(N, J)`` exterior parts of the directional integrals."""
        if exterior not in self._offsets:
            if len(self._offsets) > 64:
                self._offsets.clear()
            self._offsets[exterior] = self.scale * np.stack(
                [st.offsets(exterior) for st in self.stencils], axis=1)
        return self._offsets[exterior]

    def integrals(self, f: Field) -> np.ndarray:
        """``(N, J)`` array of directional integrals ``I_j`` at every node."""
        u = f.values
        I = np.stack([st.A @ u for st in self.stencils], axis=1) * self.scale
        I = I + self.offsets(f.exterior)
        # values at roundoff level are exact ties (e.g. constants)
        mag = max(np.max(np.abs(u), initial=0.0), np.max(np.abs(f.exterior.levels)))
        I[np.abs(I) <= 1e-13 * mag * np.abs(self.diagonal())] = 0.0
        return I

    def diagonal(self) -> np.ndarray:
        """``(N, J)`` diagonal of ``h^(-2s) A_j`` (nonpositive)."""
        if getattr(self, "_diag", None) is None:
            self._diag = self.scale * np.stack([st.diagonal for st in self.stencils], axis=1)
        return self._diag

    def linear_system(self, mu: np.ndarray, exterior: ExteriorSpec):
        """Matrix ``M`` and vector ``c`` with ``L_mu u = M u + c`` at the nodes."""
        k = self.kernel
        coef = k.c_norm * self.scale * self.weights[None, :] * mu
        if isinstance(self.stencils[0].A, np.ndarray):
            M = sum(coef[:, j, None] * st.A for j, st in enumerate(self.stencils))
        else:
            M = sum(sparse.diags(coef[:, j]) @ st.A for j, st in enumerate(self.stencils))
            M = M.tocsc()
        c = k.c_norm * np.sum(self.weights * mu * self.offsets(exterior), axis=1)
        return M, c

    def max_stable_rate(self) -> float:
        """Largest ``|diag|`` of any operator in the class (``mu = big_lam``)."""
        k = self.kernel
        return float(np.max(-k.c_norm * k.big_lam * (self.diagonal() @ self.weights)))


def get_operator(grid: DomainGrid, kernel: KernelSpec) -> DiscreteOperator:
    key = ("op", kernel)
    if key not in grid._operators:
        grid._operators[key] = DiscreteOperator(grid, kernel)
    return grid._operators[key]


def extremal_from_integrals(I: np.ndarray, sign: str, kernel: KernelSpec) -> np.ndarray:
    _check_sign(sign)
    pos, neg = np.maximum(I, 0.0), np.maximum(-I, 0.0)
    if sign == PLUS:
        terms = kernel.big_lam * pos - kernel.lam * neg
    else:
        terms = kernel.lam * pos - kernel.big_lam * neg
    return kernel.c_norm * (terms @ np.asarray(kernel.weights))


def linear_from_integrals(I: np.ndarray, mu: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    return kernel.c_norm * ((mu * I) @ np.asarray(kernel.weights))


def policy_from_integrals(I: np.ndarray, sign: str, kernel: KernelSpec) -> np.ndarray:
    _check_sign(sign)
    active = I > 0 if sign == PLUS else I < 0
    return np.where(active, kernel.big_lam, kernel.lam)


# pointwise interface -----------------------------------------------------

def second_difference(f: Field, x, y) -> float:
    """``f(x + y) + f(x - y) - 2 f(x)`` using the extension of ``f``."""
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    vals = f(np.stack([x + y, x - y, x]))
    return float(vals[0] + vals[1] - 2 * vals[2])


def _direction_operator(grid, theta, kernel):
    theta = np.asarray(theta, float)
    theta = theta / np.linalg.norm(theta)
    for j, d in enumerate(kernel.directions):
        if np.allclose(d, theta, atol=1e-14) or np.allclose(d, -theta, atol=1e-14):
            return get_operator(grid, kernel).stencils[j]
    key = ("ray", tuple(theta), kernel.s, kernel.gauss_order, kernel.panel_ratio)
    if key not in grid._operators:
        grid._operators[key] = _RayStencil(grid, theta, kernel.s, kernel.gauss_order,
                                           kernel.panel_ratio)
    return grid._operators[key]


def directional_integral(f: Field, x, theta, k: KernelSpec) -> float:
    """``I_theta(x) = int_0^inf delta(x, r theta) r^(-1-2s) dr`` at node ``x``.

    Returns ``nan`` when the exterior declares a growth exponent that is
    not admissible for ``k.s``.
    """
    i = f.grid.node_index(x)
    st = _direction_operator(f.grid, theta, k)
    row = st.A[i] if isinstance(st.A, np.ndarray) else st.A.getrow(i).toarray()[0]
    return float(f.grid.h ** (-2 * k.s) * (row @ f.values + st.offsets(f.exterior)[i]))


def _node_integrals(f: Field, x, k: KernelSpec) -> np.ndarray:
    i = f.grid.node_index(x)
    op = get_operator(f.grid, k)
    vals = []
    for st in op.stencils:
        row = st.A[i] if isinstance(st.A, np.ndarray) else st.A.getrow(i).toarray()[0]
        vals.append(row @ f.values)
    return op.scale * np.asarray(vals) + op.offsets(f.exterior)[i]


def eval_extremal(f: Field, x, sign: str, k: KernelSpec) -> float:
    """Value of the maximal (``'plus'``) or minimal (``'minus'``) operator at node ``x``."""
    return float(extremal_from_integrals(_node_integrals(f, x, k)[None, :], sign, k)[0])


def eval_linear(f: Field, x, mu: PolicyField, k: KernelSpec) -> float:
    """Value at node ``x`` of the linear operator with kernel weights ``mu``."""
    if not isinstance(mu, PolicyField):
        mu = PolicyField(mu, k)
    i = f.grid.node_index(x)
    return float(linear_from_integrals(_node_integrals(f, x, k)[None, :],
                                       mu.values[i][None, :], k)[0])


def optimal_policy(f: Field, sign: str, k: KernelSpec) -> PolicyField:
    """Kernel weights attaining the extremum at every node (ties take ``lam``)."""
    I = get_operator(f.grid, k).integrals(f)
    return PolicyField(policy_from_integrals(I, sign, k), k)


class OperatorError(ArithmeticError):
    """Non-finite operator value; ``node`` is the first offending index."""

    def __init__(self, message, node):
        super().__init__(message)
        self.node = node


def operator_apply(f: Field, sign: str, k: KernelSpec) -> np.ndarray:
    """Extremal operator at every interior node."""
    out = extremal_from_integrals(get_operator(f.grid, k).integrals(f), sign, k)
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise OperatorError(f"non-finite operator value at node {bad[0]}", int(bad[0]))
    return out


def linear_apply(f: Field, mu: PolicyField, k: KernelSpec) -> np.ndarray:
    if not isinstance(mu, PolicyField):
        mu = PolicyField(mu, k)
    return linear_from_integrals(get_operator(f.grid, k).integrals(f), mu.values, k)
