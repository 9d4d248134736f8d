"""Uniform grids on bounded domains, exterior data and grid functions.

A :class:`DomainGrid` is a square lattice of spacing ``h`` centred on the
domain centre. Lattice points strictly inside the domain are the unknowns
(interior nodes); every other lattice point is a *ghost* that carries the
exterior value at its location. Grid functions are extended to all of
R^n by multilinear interpolation inside the domain and by the exterior
specification outside of it.
"""
from __future__ import annotations

import dataclasses
import math
from typing import Iterable, Sequence

import numpy as np

KINDS = ("interval", "disk", "box")

# lattice points closer than this (relative to h) to the boundary are ghosts
_BOUNDARY_TOL = 1e-10


@dataclasses.dataclass(frozen=True)
class Shell:
    """Annulus ``r_inner <= |x - center| < r_outer`` carrying a constant."""

    r_inner: float
    r_outer: float
    value: float


@dataclasses.dataclass(frozen=True)
class ExteriorSpec:
    """Piecewise-constant data on the complement of the domain.

    ``shells`` are contiguous annuli measured from the domain centre. Points
    of the complement that are closer to the centre than the first shell take
    the first shell's value (this is the boundary trace); points beyond the
    last shell take ``far_value``.

    ``tail_growth`` is an optional declared bound ``(C_g, alpha)`` with
    ``|g(x)| <= C_g (1 + |x|)^(1 + alpha)``. The stored data are bounded, so
    the declaration is only checked against the kernel order.
    """

    shells: tuple[Shell, ...] = ()
    far_value: float = 0.0
    tail_growth: tuple[float, float] | None = None

    def __post_init__(self):
        shells = tuple(sh if isinstance(sh, Shell) else Shell(*map(float, sh))
                       for sh in self.shells)
        object.__setattr__(self, "shells", shells)
        object.__setattr__(self, "far_value", float(self.far_value))
        for sh in shells:
            if not (0 <= sh.r_inner < sh.r_outer):
                raise ValueError(f"invalid shell radii {sh.r_inner}, {sh.r_outer}")
            if not math.isfinite(sh.value):
                raise ValueError("shell values must be finite")
        for a, b in zip(shells, shells[1:]):
            if abs(a.r_outer - b.r_inner) > 1e-12 * max(1.0, a.r_outer):
                raise ValueError("shells must be ordered and contiguous")
        if not math.isfinite(self.far_value):
            raise ValueError("far_value must be finite")
        if self.tail_growth is not None:
            object.__setattr__(self, "tail_growth", tuple(map(float, self.tail_growth)))

    @classmethod
    def constant(cls, value: float = 0.0) -> "ExteriorSpec":
        return cls((), value)

    @property
    def edges(self) -> np.ndarray:
        """Radii at which the exterior value may jump."""
        return np.array([sh.r_outer for sh in self.shells], dtype=float)

    @property
    def levels(self) -> np.ndarray:
        """Values between consecutive edges; ``levels[-1]`` is the far value."""
        return np.array([sh.value for sh in self.shells] + [self.far_value])

    @property
    def trace_value(self) -> float:
        return float(self.levels[0])

    @property
    def outer_radius(self) -> float:
        return self.shells[-1].r_outer if self.shells else 0.0

    def value_at_radius(self, rho) -> np.ndarray:
        return self.levels[np.searchsorted(self.edges, rho, side="right")]

    def map_values(self, fn) -> "ExteriorSpec":
        shells = tuple(Shell(sh.r_inner, sh.r_outer, float(fn(sh.value)))
                       for sh in self.shells)
        return ExteriorSpec(shells, float(fn(self.far_value)), self.tail_growth)

    def scaled(self, factor: float) -> "ExteriorSpec":
        """Exterior of the domain dilated about its centre by ``factor``."""
        shells = tuple(Shell(sh.r_inner * factor, sh.r_outer * factor, sh.value)
                       for sh in self.shells)
        return ExteriorSpec(shells, self.far_value, self.tail_growth)

    def is_nonpositive(self) -> bool:
        return bool(np.all(self.levels <= 0))


class DomainGrid:
    """Uniform lattice discretisation of an interval, disk or box.

    Parameters
    ----------
    dim : int
        Space dimension, 1 or 2.
    kind : {'interval', 'disk', 'box'}
        Domain geometry. ``interval`` is 1D, ``disk`` and ``box`` are 2D.
    extent : float
        Half-length (interval, box) or radius (disk).
    h : float
        Lattice spacing.
    r_trunc : float
        Radius beyond which exterior data must be the far constant. Must
        exceed the domain diameter.
    center : sequence of float, optional
        Domain centre; the lattice passes through it.
    """

    def __init__(self, dim: int, kind: str, extent: float, h: float,
                 r_trunc: float, center: Sequence[float] | None = None):
        if dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        if kind not in KINDS:
            raise ValueError(f"unknown domain kind {kind!r}")
        if (kind == "interval") != (dim == 1):
            raise ValueError(f"kind {kind!r} is not available in dimension {dim}")
        if not (h > 0):
            raise ValueError("h must be positive")
        if h >= extent:
            raise ValueError("h must be smaller than the domain extent")
        self.dim = dim
        self.kind = kind
        self.extent = float(extent)
        self.h = float(h)
        self.center = np.zeros(dim) if center is None else np.asarray(center, float)
        if self.center.shape != (dim,):
            raise ValueError("center has the wrong dimension")
        if not (r_trunc > self.diameter):
            raise ValueError("r_trunc must exceed the domain diameter")
        self.r_trunc = float(r_trunc)

        m = int(math.ceil(self.extent / self.h)) + 1
        self.half_width = m
        self.lattice_shape = (2 * m + 1,) * dim
        idx = np.indices(self.lattice_shape).reshape(dim, -1).T - m
        self.lattice_index = idx
        self.lattice_points = self.center + self.h * idx
        d = self.signed_distance(self.lattice_points)
        inside = d > _BOUNDARY_TOL * self.h
        self.node_of_lattice = np.full(len(idx), -1, dtype=np.int64)
        self.node_of_lattice[inside] = np.arange(int(inside.sum()))
        self.lattice_of_node = np.flatnonzero(inside)
        self.ghost_of_lattice = np.full(len(idx), -1, dtype=np.int64)
        self.ghost_of_lattice[~inside] = np.arange(int((~inside).sum()))
        self.lattice_of_ghost = np.flatnonzero(~inside)
        self.nodes = self.lattice_points[inside]
        self.distance = d[inside]
        if len(self.nodes) < 3:
            raise ValueError("grid has fewer than 3 interior nodes")
        self._operators = {}

    def __repr__(self):
        return (f"DomainGrid(dim={self.dim}, kind={self.kind!r}, extent={self.extent}, "
                f"h={self.h}, nodes={self.n_nodes})")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def diameter(self) -> float:
        if self.kind == "box":
            return 2 * self.extent * math.sqrt(2)
        return 2 * self.extent

    def signed_distance(self, points) -> np.ndarray:
        """Distance to the boundary, positive inside and negative outside."""
        p = np.asarray(points, float).reshape(-1, self.dim) - self.center
        if self.kind == "interval":
            d = self.extent - np.abs(p[:, 0])
        elif self.kind == "disk":
            d = self.extent - np.hypot(p[:, 0], p[:, 1])
        else:
            excess = np.abs(p) - self.extent
            inside = np.all(excess < 0, axis=1)
            d = np.where(inside, -excess.max(axis=1),
                         -np.linalg.norm(np.maximum(excess, 0), axis=1))
        return d.reshape(np.shape(points)[:-1]) if np.ndim(points) > 1 else d

    def contains(self, points) -> np.ndarray:
        return self.signed_distance(points) > _BOUNDARY_TOL * self.h

    def exit_distance(self, points, direction) -> np.ndarray:
        """Length of the segment from interior ``points`` along ``direction``
        until the boundary is reached."""
        p = np.asarray(points, float).reshape(-1, self.dim) - self.center
        v = np.asarray(direction, float)
        if self.kind == "disk":
            pv = p @ v
            disc = pv ** 2 - np.einsum("ij,ij->i", p, p) + self.extent ** 2
            return -pv + np.sqrt(np.maximum(disc, 0.0))
        out = np.full(len(p), np.inf)
        for i in range(self.dim):
            if v[i] > 0:
                out = np.minimum(out, (self.extent - p[:, i]) / v[i])
            elif v[i] < 0:
                out = np.minimum(out, (-self.extent - p[:, i]) / v[i])
        return out

    def node_index(self, x) -> int:
        """Index of the interior node at ``x``; raises if ``x`` is not a node."""
        x = np.atleast_1d(np.asarray(x, float))
        k = np.rint((x - self.center) / self.h).astype(int)
        if not np.allclose(self.center + self.h * k, x, rtol=0, atol=1e-9 * self.h):
            raise ValueError(f"{x} is not a lattice point")
        if np.any(np.abs(k) > self.half_width):
            raise ValueError(f"{x} is outside the lattice")
        flat = np.ravel_multi_index(tuple(k + self.half_width), self.lattice_shape)
        node = self.node_of_lattice[flat]
        if node < 0:
            raise ValueError(f"{x} is not an interior node")
        return int(node)

    def check_exterior(self, exterior: ExteriorSpec) -> None:
        if exterior.outer_radius > self.r_trunc:
            raise ValueError("exterior shells extend beyond r_trunc")

    def scaled(self, factor: float) -> "DomainGrid":
        """The grid dilated by ``factor`` about the origin (spacing included)."""
        return DomainGrid(self.dim, self.kind, self.extent * factor, self.h * factor,
                          self.r_trunc * factor, self.center * factor)


def build_grid(dim: int, kind: str, extent: float, h: float, r_trunc: float,
               center: Sequence[float] | None = None) -> DomainGrid:
    """Build a :class:`DomainGrid`; see the class for parameter meanings."""
    return DomainGrid(dim, kind, extent, h, r_trunc, center)


@dataclasses.dataclass
class Field:
    """Grid function: nodal values in the domain plus exterior data."""

    grid: DomainGrid
    values: np.ndarray
    exterior: ExteriorSpec = dataclasses.field(default_factory=ExteriorSpec)

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float).reshape(-1)
        if self.values.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        self.grid.check_exterior(self.exterior)

    @classmethod
    def from_function(cls, grid: DomainGrid, fn, exterior: ExteriorSpec | None = None):
        """Sample ``fn`` (taking an ``(N, dim)`` array) at the interior nodes."""
        return cls(grid, fn(grid.nodes), exterior or ExteriorSpec())

    def ghost_values(self) -> np.ndarray:
        g = self.grid
        pts = g.lattice_points[g.lattice_of_ghost]
        return self.exterior.value_at_radius(np.linalg.norm(pts - g.center, axis=1))

    def lattice_values(self) -> np.ndarray:
        g = self.grid
        out = np.empty(len(g.lattice_points))
        out[g.lattice_of_node] = self.values
        out[g.lattice_of_ghost] = self.ghost_values()
        return out.reshape(g.lattice_shape)

    def __call__(self, points) -> np.ndarray:
        return eval_anywhere(self, points)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values, self.exterior)

    def scaled(self, c: float) -> "Field":
        return Field(self.grid, c * self.values, self.exterior.map_values(lambda v: c * v))

    def shifted(self, c: float) -> "Field":
        return Field(self.grid, self.values + c, self.exterior.map_values(lambda v: v + c))

    def __neg__(self) -> "Field":
        return self.scaled(-1.0)

    def negative_part(self) -> "Field":
        return Field(self.grid, np.maximum(-self.values, 0.0),
                     self.exterior.map_values(lambda v: max(-v, 0.0)))

    def positive_part(self) -> "Field":
        return Field(self.grid, np.maximum(self.values, 0.0),
                     self.exterior.map_values(lambda v: max(v, 0.0)))


def _interpolate(grid: DomainGrid, lattice: np.ndarray, pts: np.ndarray) -> np.ndarray:
    t = (pts - grid.center) / grid.h + grid.half_width
    n = grid.lattice_shape[0]
    base = np.clip(np.floor(t).astype(int), 0, n - 2)
    frac = t - base
    if grid.dim == 1:
        b, f = base[:, 0], frac[:, 0]
        return (1 - f) * lattice[b] + f * lattice[b + 1]
    bx, by = base[:, 0], base[:, 1]
    fx, fy = frac[:, 0], frac[:, 1]
    return ((1 - fx) * (1 - fy) * lattice[bx, by] + fx * (1 - fy) * lattice[bx + 1, by]
            + (1 - fx) * fy * lattice[bx, by + 1] + fx * fy * lattice[bx + 1, by + 1])


def eval_anywhere(f: Field, x) -> np.ndarray | float:
    """Evaluate the extension of ``f`` to R^n at one or many points.

    Points inside the domain use multilinear interpolation of the lattice
    values (ghost lattice points hold the adjacent exterior value, so the
    interpolant reaches the boundary trace). Points outside return the
    exterior shell or far value.
    """
    g = f.grid
    x = np.asarray(x, float)
    if g.dim == 1:
        scalar = x.ndim == 0
        shape = x.shape[:-1] if x.ndim >= 2 and x.shape[-1] == 1 else x.shape
    else:
        scalar = x.ndim == 1
        shape = x.shape[:-1]
    pts = x.reshape(-1, g.dim)
    out = np.empty(len(pts))
    inside = g.contains(pts)
    if inside.any():
        out[inside] = _interpolate(g, f.lattice_values(), pts[inside])
    if (~inside).any():
        rho = np.linalg.norm(pts[~inside] - g.center, axis=1)
        out[~inside] = f.exterior.value_at_radius(rho)
    if scalar:
        return float(out[0])
    return out.reshape(shape)


def iter_boundary_segments(grid: DomainGrid) -> Iterable[tuple[str, np.ndarray]]:
    """Label near-boundary nodes by the boundary piece they are closest to."""
    p = grid.nodes - grid.center
    if grid.kind == "interval":
        yield "left", p[:, 0] < 0
        yield "right", p[:, 0] >= 0
    elif grid.kind == "box":
        ax = np.argmax(np.abs(p), axis=1)
        side = 2 * ax + (p[np.arange(len(p)), ax] >= 0)
        for k, name in enumerate(("x-", "x+", "y-", "y+")):
            yield name, side == k
    else:
        ang = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi)
        sector = np.minimum((ang / (np.pi / 4)).astype(int), 7)
        for k in range(8):
            yield f"sector{k}", sector == k
