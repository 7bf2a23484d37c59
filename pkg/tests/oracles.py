"""Reference implementations used as test oracles.

Written from the textbook definitions, with plain loops where practical, and
sharing no code with the package.
"""

import math
from statistics import NormalDist

import numpy as np


def normal_pdf(x, mean=0.0, var=1.0):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2 * math.pi * var)


def normal_quantile(q, mean=0.0, std=1.0):
    return NormalDist(mean, std).inv_cdf(q)


def midpoint_integral(fn, lo, hi, n=1_000_000):
    """Composite midpoint rule with ``n`` intervals (fn vectorized)."""
    h = (hi - lo) / n
    x = lo + h * (np.arange(n) + 0.5)
    return float(np.sum(fn(x)) * h)


def linear_interp_1d(nodes, coeffs, x):
    """Piecewise-linear interpolant, zero outside [nodes[0], nodes[-1]]."""
    out = np.zeros_like(np.asarray(x, dtype=float))
    inside = (x >= nodes[0]) & (x <= nodes[-1])
    out[inside] = np.interp(x[inside], nodes, coeffs)
    return out


def trapezoid_normalize(nodes, values):
    """Divide by the trapezoidal integral, summing cell by cell in a loop."""
    total = 0.0
    for i in range(len(nodes) - 1):
        total += 0.5 * (values[i] + values[i + 1]) * (nodes[i + 1] - nodes[i])
    return [v / total for v in values]


def bayes_update(nodes, prior, likelihood):
    """Posterior node values: pointwise product then trapezoid normalization."""
    prod = [float(p) * float(lk) for p, lk in zip(prior, likelihood)]
    return np.array(trapezoid_normalize(list(nodes), prod))


def gather_kde(points, samples, H, kernel):
    """Direct KDE: for each evaluation point, sum the kernel over every sample."""
    points = np.atleast_2d(points)
    samples = np.atleast_2d(samples)
    n = samples.shape[1]
    vals, vecs = np.linalg.eigh(H)
    inv_sqrt = vecs @ np.diag(vals ** -0.5) @ vecs.T
    norm = 1.0 / (samples.shape[0] * math.sqrt(np.linalg.det(H)))
    out = np.empty(points.shape[0])
    for a, p in enumerate(points):
        z = (p - samples) @ inv_sqrt.T
        if kernel == "gaussian":
            k = np.exp(-0.5 * np.sum(z * z, axis=1)) / (2 * math.pi) ** (n / 2)
        else:
            k = np.prod(np.where(np.abs(z) < 1, 0.75 * (1 - z * z), 0.0), axis=1)
        out[a] = norm * k.sum()
    return out


class KalmanFilter:
    """Textbook linear Kalman filter, x' = A x + w, y = C x + v."""

    def __init__(self, A, C, Q, R, m0, P0):
        self.A, self.C = np.atleast_2d(A), np.atleast_2d(C)
        self.Q, self.R = np.atleast_2d(Q), np.atleast_2d(R)
        self.m = np.atleast_1d(np.asarray(m0, dtype=float))
        self.P = np.atleast_2d(np.asarray(P0, dtype=float))

    def predict(self):
        self.m = self.A @ self.m
        self.P = self.A @ self.P @ self.A.T + self.Q

    def update(self, y):
        S = self.C @ self.P @ self.C.T + self.R
        K = self.P @ self.C.T @ np.linalg.inv(S)
        self.m = self.m + K @ (np.atleast_1d(y) - self.C @ self.m)
        self.P = (np.eye(self.m.size) - K @ self.C) @ self.P
