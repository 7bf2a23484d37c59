"""Kernel density estimation onto grid nodes."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DegenerateDensity, DegenerateSamples
from .grid import GriddedPdf

KERNELS = {"gaussian": _kernels.GAUSSIAN, "epanechnikov": _kernels.EPANECHNIKOV}
RULES = ("fixed", "scott", "silverman")


@dataclass(frozen=True)
class KdeConfig:
    """Kernel and bandwidth choice.

    With ``bandwidth_rule="fixed"`` the matrix ``bandwidth`` is used as is;
    otherwise it is derived from the samples. ``min_std`` optionally floors the
    per-dimension kernel scale (``H_ii >= min_std_i**2``).
    """

    kernel: str = "gaussian"
    bandwidth_rule: str = "silverman"
    bandwidth: Optional[np.ndarray] = None
    min_std: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}; choose from {sorted(KERNELS)}")
        if self.bandwidth_rule not in RULES:
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}; choose from {RULES}")
        if self.bandwidth_rule == "fixed":
            if self.bandwidth is None:
                raise ValueError("a fixed bandwidth rule needs a bandwidth matrix")
            H = np.atleast_2d(np.asarray(self.bandwidth, dtype=float))
            check_bandwidth(H)
            object.__setattr__(self, "bandwidth", H)
        if self.min_std is not None:
            object.__setattr__(self, "min_std", np.atleast_1d(np.asarray(self.min_std, dtype=float)))


def check_bandwidth(H):
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("bandwidth must be a square matrix")
    if not np.allclose(H, H.T, rtol=0, atol=1e-12 * np.abs(H).max()):
        raise ValueError("bandwidth must be symmetric")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise ValueError("bandwidth must be positive definite") from None


def kernel_value(kernel, z):
    """Kernel at whitened offsets ``z`` (last axis is the dimension).

    ``gaussian`` is the standard normal density; ``epanechnikov`` is the product
    of 1-D Epanechnikov kernels ``0.75 (1 - z_i^2)`` on ``|z_i| < 1``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        z = z.reshape(1)
    n = z.shape[-1]
    if kernel == "gaussian":
        return (2 * math.pi) ** (-n / 2) * np.exp(-0.5 * np.sum(z * z, axis=-1))
    if kernel == "epanechnikov":
        return np.prod(np.maximum(0.0, 0.75 * (1.0 - z * z)), axis=-1)
    raise ValueError(f"unknown kernel {kernel!r}")


def bandwidth_from_rule(rule, samples, fallback_std=None):
    """Diagonal rule-of-thumb bandwidth matrix.

    scott:     H_ii = s_i^2 N^(-2/(n+4))
    silverman: H_ii = s_i^2 (4/(n+2))^(2/(n+4)) N^(-2/(n+4))

    with ``s_i`` the sample standard deviation. A dimension with zero spread
    uses ``fallback_std`` if given and raises :class:`DegenerateSamples`
    otherwise.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    N, n = samples.shape
    if N < 2:
        raise DegenerateSamples("a bandwidth rule needs at least 2 samples")
    var = samples.var(axis=0, ddof=1)
    if np.any(var == 0):
        if fallback_std is None:
            raise DegenerateSamples("samples have zero spread")
        fb = np.broadcast_to(np.asarray(fallback_std, dtype=float), var.shape)
        var = np.where(var == 0, fb ** 2, var)
    factor = N ** (-2.0 / (n + 4))
    if rule == "silverman":
        factor *= (4.0 / (n + 2)) ** (2.0 / (n + 4))
    elif rule != "scott":
        raise ValueError(f"unknown bandwidth rule {rule!r}")
    return np.diag(var * factor)


def resolve_bandwidth(config, samples):
    if config.bandwidth_rule == "fixed":
        H = config.bandwidth
    else:
        H = bandwidth_from_rule(config.bandwidth_rule, samples, fallback_std=config.min_std)
    if config.min_std is not None:
        floor = np.broadcast_to(config.min_std, (H.shape[0],)) ** 2
        if np.any(np.diag(H) < floor):
            H = H.copy()
            idx = np.diag_indices_from(H)
            H[idx] = np.maximum(H[idx], floor)
    return H


def _sqrt_and_inverse(H):
    vals, vecs = np.linalg.eigh(H)
    sqrt = (vecs * np.sqrt(vals)) @ vecs.T
    inv_sqrt = (vecs / np.sqrt(vals)) @ vecs.T
    return sqrt, inv_sqrt


def _reach(kernel, H, sqrt_H):
    # state-space half-width of the box outside which the kernel is exactly 0
    if kernel == "gaussian":
        r = _kernels.GAUSS_ZERO_RADIUS * np.sqrt(np.diag(H))
    else:
        r = np.abs(sqrt_H).sum(axis=1)
    return r * (1 + 1e-12)


def split_range(n, parts):
    """Contiguous split of ``range(n)`` into at most ``parts`` pieces."""
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def kde_sums(samples, kernel, H, grid, threads=1, executor=None):
    """Raw kernel sums ``sum_i K(H^-1/2 (x_a - x_i))`` at every node.

    Node ranges are evaluated independently; each node's sum runs over the
    samples in index order, so the result does not depend on ``threads``.
    """
    samples = np.ascontiguousarray(np.asarray(samples, dtype=float).reshape(-1, grid.ndim))
    sqrt_H, inv_sqrt_H = _sqrt_and_inverse(H)
    reach = _reach(kernel, H, sqrt_H)
    nodes, lengths, _, strides = grid.packed
    out = np.zeros(grid.n_nodes)
    kind = KERNELS[kernel]

    def work(bounds):
        lo, hi = bounds
        _kernels.kde_scatter(nodes, lengths, strides, samples, inv_sqrt_H, reach, kind,
                             lo, hi, out[lo:hi])

    chunks = split_range(grid.n_nodes, threads)
    if len(chunks) == 1:
        work(chunks[0])
    elif executor is not None:
        list(executor.map(work, chunks))
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            list(pool.map(work, chunks))
    return out.reshape(grid.shape)


def kde_to_grid(samples, config, grid, threads=1, executor=None):
    """Kernel density estimate evaluated at the grid nodes (not normalized).

    coeff_a = sum_i K(H^-1/2 (x_a - x_i)) / (N sqrt(det H))

    Raises :class:`DegenerateDensity` when no sample deposits any mass on the
    grid.
    """
    samples = np.asarray(samples, dtype=float).reshape(-1, grid.ndim)
    if samples.shape[0] < 1:
        raise ValueError("kde_to_grid needs at least one sample")
    H = resolve_bandwidth(config, samples)
    sums = kde_sums(samples, config.kernel, H, grid, threads=threads, executor=executor)
    coeffs = sums / (samples.shape[0] * math.sqrt(np.linalg.det(H)))
    if not np.any(coeffs > 0):
        raise DegenerateDensity("no kernel mass reached the grid")
    return GriddedPdf(grid, coeffs)
