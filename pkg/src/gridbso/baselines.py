"""Comparison filters: extended Kalman filter and bootstrap particle filter.

Both expose the same ``init`` / ``update`` / ``step`` surface as the grid
observer and return a :class:`~gridbso.grid.PointEstimate`, so the benchmark
can drive all three the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateWeights, SingularInnovation
from .grid import PointEstimate
from .model import log_measurement_likelihood

Z95 = 1.959963984540054


@dataclass
class EkfState:
    mean: np.ndarray
    cov: np.ndarray
    k: int = 0


class ExtendedKalmanFilter:
    """First-order EKF; noise enters through ``jac_f_w``/``jac_h_v`` at the noise mean."""

    name = "ekf"

    def __init__(self, model, noise_w, noise_v):
        for jac in ("jac_f_x", "jac_f_w", "jac_h_x", "jac_h_v"):
            if getattr(model, jac) is None:
                raise ValueError(f"EKF needs model.{jac}")
        self.model = model
        self.noise_w = noise_w
        self.noise_v = noise_v

    def init(self, x0):
        return EkfState(np.array(x0.mean, dtype=float), np.array(x0.cov, dtype=float), 0)

    def predict(self, state, u_prev=None):
        m, wbar = self.model, self.noise_w.mean
        x = state.mean
        F = np.atleast_2d(m.jac_f_x(state.k, x, u_prev, wbar))
        L = np.atleast_2d(m.jac_f_w(state.k, x, u_prev, wbar))
        mean = np.asarray(m.f(state.k, x, u_prev, wbar), dtype=float).reshape(x.shape)
        cov = F @ state.cov @ F.T + L @ self.noise_w.cov @ L.T
        return EkfState(mean, 0.5 * (cov + cov.T), state.k + 1)

    def update(self, state, y, u=None):
        m, vbar = self.model, self.noise_v.mean
        x, P = state.mean, state.cov
        H = np.atleast_2d(m.jac_h_x(state.k, x, u, vbar))
        M = np.atleast_2d(m.jac_h_v(state.k, x, u, vbar))
        S = H @ P @ H.T + M @ self.noise_v.cov @ M.T
        try:
            if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e15:
                raise np.linalg.LinAlgError
            K = np.linalg.solve(S, H @ P).T
        except np.linalg.LinAlgError:
            raise SingularInnovation(f"innovation covariance is singular at step {state.k}") from None
        innov = np.atleast_1d(np.asarray(y, dtype=float)) - np.asarray(
            m.h(state.k, x, u, vbar), dtype=float).reshape(-1)
        mean = x + K @ innov
        I_KH = np.eye(x.size) - K @ H
        cov = I_KH @ P
        return EkfState(mean, 0.5 * (cov + cov.T), state.k)

    def estimate(self, state):
        var = np.diag(state.cov).copy()
        half = Z95 * np.sqrt(np.maximum(var, 0.0))
        return PointEstimate(map=state.mean.copy(), mean=state.mean.copy(), variance=var,
                             ci95=np.stack([state.mean - half, state.mean + half], axis=-1))

    def step(self, state, y, rng=None, u_prev=None, u=None):
        new = self.update(self.predict(state, u_prev), y, u)
        return new, self.estimate(new)


@dataclass
class PfState:
    particles: np.ndarray  # (N, n)
    weights: np.ndarray  # (N,)
    k: int = 0


def systematic_resample(weights, rng):
    """Indices drawn with one uniform offset on an evenly spaced comb."""
    n = weights.size
    positions = (rng.random() + np.arange(n)) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def weighted_quantile(values, weights, q):
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    j = np.searchsorted(cum, q * cum[-1], side="left")
    return values[order][min(j, values.size - 1)]


class ParticleFilter:
    """Bootstrap filter with systematic resampling after every update."""

    def __init__(self, model, noise_w, noise_v, n_particles):
        if n_particles < 2:
            raise ValueError("a particle filter needs at least 2 particles")
        self.model = model
        self.noise_w = noise_w
        self.noise_v = noise_v
        self.n_particles = int(n_particles)

    @property
    def name(self):
        return f"pf:{self.n_particles}"

    def init(self, x0, rng):
        parts = np.asarray(x0.sample(rng, self.n_particles), dtype=float).reshape(self.n_particles, -1)
        return PfState(parts, np.full(self.n_particles, 1.0 / self.n_particles), 0)

    def predict(self, state, rng, u_prev=None):
        w = self.noise_w.sample(rng, self.n_particles)
        parts = np.asarray(self.model.f(state.k, state.particles, u_prev, w), dtype=float)
        return PfState(parts.reshape(state.particles.shape), state.weights, state.k + 1)

    def update(self, state, y, rng, u=None):
        """Weight by the likelihood, report, then resample.

        Weights are formed in log space; only an all-zero likelihood counts as
        divergence.
        """
        logw = log_measurement_likelihood(self.model, self.noise_v, state.k,
                                          state.particles, u, y) + np.log(state.weights)
        top = np.max(logw)
        if not np.isfinite(top):
            raise DegenerateWeights(f"all particle likelihoods vanished for y={y!r}",
                                    step=state.k)
        w = np.exp(logw - top)
        w /= w.sum()
        est = self.estimate(PfState(state.particles, w, state.k))
        idx = systematic_resample(w, rng)
        resampled = PfState(state.particles[idx], np.full(w.size, 1.0 / w.size), state.k)
        return resampled, est

    def estimate(self, state):
        x, w = state.particles, state.weights
        mean = w @ x
        var = w @ (x - mean) ** 2
        ci = np.array([[weighted_quantile(x[:, d], w, 0.025),
                        weighted_quantile(x[:, d], w, 0.975)] for d in range(x.shape[1])])
        return PointEstimate(map=mean.copy(), mean=mean, variance=var, ci95=ci)

    def step(self, state, y, rng, u_prev=None, u=None):
        return self.update(self.predict(state, rng, u_prev), y, rng, u)
