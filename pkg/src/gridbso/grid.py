"""Densities on rectilinear grids.

A :class:`GriddedPdf` stores one coefficient per grid node (row-major over
the node multi-index) and is evaluated everywhere else by multilinear
interpolation of the corner coefficients. Outside the grid hull the density
is zero.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DegenerateDensity


@dataclass(frozen=True, eq=False)
class GridAxis:
    """Strictly increasing node coordinates along one state dimension."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float).ravel()
        if nodes.size < 2:
            raise ValueError("a grid axis needs at least 2 nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("grid nodes must be finite")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    def __len__(self):
        return self.nodes.size

    @property
    def lower(self):
        return float(self.nodes[0])

    @property
    def upper(self):
        return float(self.nodes[-1])

    @property
    def widths(self):
        return np.diff(self.nodes)


@dataclass(frozen=True, eq=False)
class Grid:
    axes: tuple

    def __post_init__(self):
        axes = tuple(a if isinstance(a, GridAxis) else GridAxis(a) for a in self.axes)
        if not axes:
            raise ValueError("a grid needs at least one axis")
        object.__setattr__(self, "axes", axes)

    @property
    def ndim(self):
        return len(self.axes)

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def n_nodes(self):
        return math.prod(self.shape)

    @property
    def n_cells(self):
        return math.prod(n - 1 for n in self.shape)

    @property
    def lower(self):
        return np.array([a.lower for a in self.axes])

    @property
    def upper(self):
        return np.array([a.upper for a in self.axes])

    @property
    def max_cell_width(self):
        """Largest cell width per dimension."""
        return np.array([a.widths.max() for a in self.axes])

    @cached_property
    def points(self):
        """All node coordinates, shape ``(n_nodes, ndim)``, row-major order."""
        mesh = np.meshgrid(*(a.nodes for a in self.axes), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        pts.setflags(write=False)
        return pts

    @cached_property
    def cell_volumes(self):
        vols = self.axes[0].widths
        for a in self.axes[1:]:
            vols = np.multiply.outer(vols, a.widths)
        return vols

    @cached_property
    def packed(self):
        """(nodes, lengths, inv_dx, strides) in the layout the compiled kernels expect."""
        width = max(self.shape)
        nodes = np.full((self.ndim, width), np.nan)
        inv_dx = np.zeros(self.ndim)
        for d, a in enumerate(self.axes):
            nodes[d, : len(a)] = a.nodes
            w = a.widths
            if np.allclose(w, w[0], rtol=1e-12, atol=0):
                inv_dx[d] = (len(a) - 1) / (a.upper - a.lower)
        lengths = np.array(self.shape, dtype=np.int64)
        strides = np.ones(self.ndim, dtype=np.int64)
        for d in range(self.ndim - 2, -1, -1):
            strides[d] = strides[d + 1] * self.shape[d + 1]
        return nodes, lengths, inv_dx, strides

    def node(self, flat_index):
        return self.points[flat_index].copy()


def build_uniform_grid(lower, upper, counts):
    """Grid with ``counts[i]`` equally spaced nodes from ``lower[i]`` to ``upper[i]``."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    counts = np.atleast_1d(np.asarray(counts))
    lower, upper, counts = np.broadcast_arrays(lower, upper, counts)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("grid bounds must be finite")
    if np.any(lower >= upper):
        raise ValueError("grid lower bound must be below the upper bound")
    if np.any(counts < 2) or np.any(counts != np.round(counts)):
        raise ValueError("each axis needs an integer node count of at least 2")
    return Grid(tuple(GridAxis(np.linspace(lo, hi, int(c)))
                      for lo, hi, c in zip(lower, upper, counts)))


@dataclass(frozen=True, eq=False)
class GriddedPdf:
    """Piecewise multilinear density given by its node coefficients."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.array(self.coeffs, dtype=float).reshape(self.grid.shape)
        if np.any(coeffs < 0) or np.any(np.isnan(coeffs)):
            raise ValueError("density coefficients must be nonnegative")
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_function(cls, grid, density):
        """Sample a vectorized ``density(points)`` at every node."""
        values = np.asarray(density(grid.points), dtype=float).reshape(grid.shape)
        return cls(grid, values)

    @classmethod
    def uniform(cls, grid):
        volume = float(np.prod(grid.upper - grid.lower))
        return cls(grid, np.full(grid.shape, 1.0 / volume))

    def __call__(self, x):
        return interpolate(self, x)


@dataclass(frozen=True)
class PointEstimate:
    map: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    ci95: np.ndarray  # shape (n, 2): lower, upper per dimension


def interpolate(pdf, x):
    """Multilinear interpolant at one point or a batch of points.

    ``x`` of shape ``(n,)`` returns a float; shape ``(m, n)`` returns ``(m,)``.
    Points outside the grid hull evaluate to 0.
    """
    x = np.asarray(x, dtype=float)
    grid = pdf.grid
    single = x.ndim <= 1
    pts = np.ascontiguousarray(x.reshape(-1, grid.ndim))
    nodes, lengths, inv_dx, strides = grid.packed
    out = np.empty(pts.shape[0])
    _kernels.interp_many(nodes, lengths, inv_dx, strides, pdf.coeffs.ravel(), pts, out)
    return float(out[0]) if single else out


def _cell_center_values(coeffs):
    # the multilinear interpolant at a cell center is the mean of its corners
    c = coeffs
    for axis in range(c.ndim):
        lo = [slice(None)] * c.ndim
        hi = [slice(None)] * c.ndim
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        c = 0.5 * (c[tuple(lo)] + c[tuple(hi)])
    return c


def integrate(pdf):
    """Cell-center rule: sum of interpolated center density times cell volume."""
    return float(np.sum(_cell_center_values(pdf.coeffs) * pdf.grid.cell_volumes))


def normalize(pdf):
    mass = integrate(pdf)
    if not (np.isfinite(mass) and mass > np.finfo(float).tiny):
        raise DegenerateDensity(f"density has no mass on the grid (integral {mass!r})")
    return GriddedPdf(pdf.grid, pdf.coeffs / mass)


def argmax_node(pdf):
    """Coordinates of the largest coefficient; ties go to the lowest multi-index."""
    return pdf.grid.node(int(np.argmax(pdf.coeffs.ravel())))


def _cell_centers(grid):
    return [0.5 * (a.nodes[:-1] + a.nodes[1:]) for a in grid.axes]


def moments(pdf):
    """Mean and per-dimension variance by cell-center quadrature."""
    grid = pdf.grid
    w = _cell_center_values(pdf.coeffs) * grid.cell_volumes
    mass = w.sum()
    mean = np.empty(grid.ndim)
    var = np.empty(grid.ndim)
    for d, centers in enumerate(_cell_centers(grid)):
        others = tuple(i for i in range(grid.ndim) if i != d)
        marginal = w.sum(axis=others) if others else w
        mean[d] = np.dot(marginal, centers) / mass
        var[d] = np.dot(marginal, (centers - mean[d]) ** 2) / mass
    return mean, var


def marginal_coeffs(pdf, axis):
    """Node values of the marginal density along ``axis``.

    The other axes are integrated out with the trapezoidal rule, which is exact
    for a multilinear interpolant.
    """
    c = pdf.coeffs
    for d in reversed(range(pdf.grid.ndim)):
        if d == axis:
            continue
        widths = pdf.grid.axes[d].widths
        weights = np.zeros(len(widths) + 1)
        weights[:-1] += 0.5 * widths
        weights[1:] += 0.5 * widths
        c = np.tensordot(c, weights, axes=([d], [0]))
    return c


def quantile(pdf, q, axis=0):
    """Quantile of the marginal along ``axis``.

    The CDF is integrated exactly at the nodes; inside the cell that holds
    ``q`` the density is linear, so the CDF is quadratic and is inverted in
    closed form.
    """
    nodes = pdf.grid.axes[axis].nodes
    m = marginal_coeffs(pdf, axis)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (m[:-1] + m[1:]) * np.diff(nodes))])
    total = cdf[-1]
    if not total > 0:
        raise DegenerateDensity("cannot take quantiles of a density without mass")
    j = int(np.searchsorted(cdf, q * total, side="left"))
    if j == 0:
        return float(nodes[0])
    if j >= len(nodes):
        return float(nodes[-1])
    # solve c0 s + (c1 - c0) s^2 / (2 h) = r for s in [0, h]
    h = nodes[j] - nodes[j - 1]
    c0, c1 = m[j - 1], m[j]
    r = q * total - cdf[j - 1]
    a = 0.5 * (c1 - c0) / h
    if abs(a) * h <= 1e-12 * max(c0, c1):
        s = r / c0 if c0 > 0 else 0.0
    else:
        # numerically stable root of a s^2 + c0 s - r = 0
        s = 2.0 * r / (c0 + math.sqrt(max(c0 * c0 + 4.0 * a * r, 0.0)))
    return float(nodes[j - 1] + min(max(s, 0.0), h))


def ci95(pdf):
    """Equal-tail 95% interval per dimension, shape ``(n, 2)``."""
    return np.array([[quantile(pdf, 0.025, d), quantile(pdf, 0.975, d)]
                     for d in range(pdf.grid.ndim)])


def point_estimate(pdf):
    mean, var = moments(pdf)
    return PointEstimate(map=argmax_node(pdf), mean=mean, variance=var, ci95=ci95(pdf))


def write_csv(pdf, path):
    """One row per node (row-major): node coordinates, then the coefficient."""
    path = Path(path)
    n = pdf.grid.ndim
    header = [f"x{d}" for d in range(n)] + ["density"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for pt, c in zip(pdf.grid.points, pdf.coeffs.ravel()):
            writer.writerow([f"{v:.17g}" for v in pt] + [f"{c:.17g}"])


def read_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    n = len(header) - 1
    axes = [np.unique(rows[:, d]) for d in range(n)]
    grid = Grid(tuple(GridAxis(a) for a in axes))
    return GriddedPdf(grid, rows[:, n].reshape(grid.shape))
