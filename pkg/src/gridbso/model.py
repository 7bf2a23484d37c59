"""Stochastic state-space models.

A :class:`SystemModel` bundles the state and output maps together with their
noise-inverting maps and Jacobians. All maps take ``(k, x, u, noise)`` and
broadcast over leading axes, with the state/output/noise dimension last, so a
whole sample cloud or grid can be pushed through in one call. ``k`` is the
time index of the map itself: ``x_{k+1} = f(k, x_k, u_k, w_k)`` and
``y_k = h(k, x_k, u_k, v_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NonInvertible


class NoiseModel:
    """Interface for noise (and initial-state) distributions."""

    dim: int

    def density(self, value):
        return np.exp(self.log_density(value))

    def log_density(self, value):
        raise NotImplementedError

    def sample(self, rng, size=None):
        raise NotImplementedError

    @property
    def mean(self):
        raise NotImplementedError

    @property
    def cov(self):
        raise NotImplementedError


class GaussianNoise(NoiseModel):
    """Multivariate normal with dense covariance."""

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * np.abs(cov).max()):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        self._mean = mean
        self._cov = cov
        self._chol = chol
        self.dim = mean.size
        self._log_norm = -0.5 * self.dim * math.log(2 * math.pi) - np.log(np.diag(chol)).sum()

    @classmethod
    def standard(cls, dim=1, variance=1.0):
        return cls(np.zeros(dim), variance * np.eye(dim))

    @property
    def mean(self):
        return self._mean.copy()

    @property
    def cov(self):
        return self._cov.copy()

    def log_density(self, value):
        d = np.asarray(value, dtype=float)
        if d.ndim == 0:
            d = d.reshape(1)
        d = d - self._mean
        lead = d.shape[:-1]
        flat = d.reshape(-1, self.dim)
        if self.dim == 1:
            z2 = (flat[:, 0] / self._chol[0, 0]) ** 2
        else:
            z = solve_triangular(self._chol, flat.T, lower=True)
            z2 = np.sum(z * z, axis=0)
        out = self._log_norm - 0.5 * z2
        return out.reshape(lead) if lead else float(out[0])

    def sample(self, rng, size=None):
        shape = () if size is None else ((size,) if np.isscalar(size) else tuple(size))
        z = rng.standard_normal(shape + (self.dim,))
        return self._mean + z @ self._chol.T


@dataclass(frozen=True)
class SystemModel:
    """State and output equations plus what the filters need from them.

    ``det_jac_f_w``/``det_jac_h_v`` return ``|det df/dw|`` and ``|det dh/dv|``
    and must be positive (the noise enters diffeomorphically). The four
    Jacobians ending in ``_x``, ``_w``, ``_v`` are only used by the EKF and
    return 2-D arrays for a single point.
    """

    n_x: int
    n_y: int
    f: Callable
    h: Callable
    f_star: Callable
    h_star: Callable
    det_jac_f_w: Callable
    det_jac_h_v: Callable
    jac_f_x: Optional[Callable] = None
    jac_f_w: Optional[Callable] = None
    jac_h_x: Optional[Callable] = None
    jac_h_v: Optional[Callable] = None
    n_u: int = 0
    name: str = ""


def _check_finite(w, what):
    if not np.all(np.isfinite(w)):
        raise NonInvertible(f"{what} has no finite inverse at the given arguments")


def transition_density(model, noise_w, k, x_prev, u_prev, x_next):
    """p(x_next | x_prev) for the map ``x_next = f(k, x_prev, u_prev, w)``.

    Change of variables through the inverse map:
    ``p_w(w) / |det df/dw|`` at ``w = f_star(k, x_prev, u_prev, x_next)``.
    """
    w = model.f_star(k, x_prev, u_prev, x_next)
    _check_finite(w, "state map")
    return noise_w.density(w) / model.det_jac_f_w(k, x_prev, u_prev, w)


def measurement_likelihood(model, noise_v, k, x, u, y):
    """p(y | x) through ``v = h_star(k, x, u, y)``; vectorized over ``x``."""
    v = model.h_star(k, x, u, y)
    _check_finite(v, "output map")
    return noise_v.density(v) / model.det_jac_h_v(k, x, u, v)


def log_measurement_likelihood(model, noise_v, k, x, u, y):
    v = model.h_star(k, x, u, y)
    _check_finite(v, "output map")
    return noise_v.log_density(v) - np.log(model.det_jac_h_v(k, x, u, v))


# -- built-in models ---------------------------------------------------------

def _ones(k, x, u, e):
    return np.ones(np.shape(e)[:-1])


def ungm_model():
    """Scalar time-varying growth benchmark with quadratic measurement.

    x_{k+1} = x/2 + 25 x / (1 + x^2) + 8 cos(1.2 k) + w,  y = x^2 / 20 + v
    """

    def drift(k, x):
        return 0.5 * x + 25.0 * x / (1.0 + x * x) + 8.0 * np.cos(1.2 * k)

    def f(k, x, u, w):
        return drift(k, np.asarray(x, dtype=float)) + w

    def f_star(k, x, u, x_next):
        return np.asarray(x_next, dtype=float) - drift(k, np.asarray(x, dtype=float))

    def h(k, x, u, v):
        x = np.asarray(x, dtype=float)
        return x * x / 20.0 + v

    def h_star(k, x, u, y):
        x = np.asarray(x, dtype=float)
        return np.asarray(y, dtype=float) - x * x / 20.0

    def jac_f_x(k, x, u, w):
        x0 = float(np.ravel(x)[0])
        return np.array([[0.5 + 25.0 * (1.0 - x0 * x0) / (1.0 + x0 * x0) ** 2]])

    def jac_h_x(k, x, u, v):
        return np.array([[float(np.ravel(x)[0]) / 10.0]])

    def eye(k, x, u, e):
        return np.eye(1)

    return SystemModel(n_x=1, n_y=1, f=f, h=h, f_star=f_star, h_star=h_star,
                       det_jac_f_w=_ones, det_jac_h_v=_ones,
                       jac_f_x=jac_f_x, jac_f_w=eye, jac_h_x=jac_h_x, jac_h_v=eye,
                       name="ungm")


def linear_model(A, C, G=None, D=None, name="linear"):
    """``x' = A x + G w``, ``y = C x + D v`` (``G``, ``D`` default to identity)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n_x, n_y = A.shape[0], C.shape[0]
    G = np.eye(n_x) if G is None else np.atleast_2d(np.asarray(G, dtype=float))
    D = np.eye(n_y) if D is None else np.atleast_2d(np.asarray(D, dtype=float))
    if G.shape != (n_x, n_x) or D.shape != (n_y, n_y):
        raise ValueError("noise gains must be square so the noise enters diffeomorphically")
    G_inv, D_inv = np.linalg.inv(G), np.linalg.inv(D)
    det_G, det_D = abs(np.linalg.det(G)), abs(np.linalg.det(D))

    def f(k, x, u, w):
        return np.asarray(x, dtype=float) @ A.T + np.asarray(w, dtype=float) @ G.T

    def f_star(k, x, u, x_next):
        return (np.asarray(x_next, dtype=float) - np.asarray(x, dtype=float) @ A.T) @ G_inv.T

    def h(k, x, u, v):
        return np.asarray(x, dtype=float) @ C.T + np.asarray(v, dtype=float) @ D.T

    def h_star(k, x, u, y):
        return (np.asarray(y, dtype=float) - np.asarray(x, dtype=float) @ C.T) @ D_inv.T

    return SystemModel(
        n_x=n_x, n_y=n_y, f=f, h=h, f_star=f_star, h_star=h_star,
        det_jac_f_w=lambda k, x, u, w: det_G * _ones(k, x, u, w),
        det_jac_h_v=lambda k, x, u, v: det_D * _ones(k, x, u, v),
        jac_f_x=lambda k, x, u, w: A, jac_f_w=lambda k, x, u, w: G,
        jac_h_x=lambda k, x, u, v: C, jac_h_v=lambda k, x, u, v: D,
        name=name)


@dataclass(frozen=True)
class ModelSpec:
    """A registered benchmark setup: the model and its default noises."""

    model: SystemModel
    noise_w: NoiseModel
    noise_v: NoiseModel
    x0: NoiseModel
    description: str = ""
    extra: dict = field(default_factory=dict)


_REGISTRY = {}


def register_model(name):
    def deco(factory):
        _REGISTRY[name] = factory
        return factory
    return deco


def get_model(name):
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown model {name!r}; known: {', '.join(sorted(_REGISTRY))}") from None


def model_names():
    return sorted(_REGISTRY)


@register_model("ungm")
def _ungm_spec():
    return ModelSpec(ungm_model(), GaussianNoise.standard(), GaussianNoise.standard(),
                     x0=GaussianNoise([0.0], [[2.0]]),
                     description="univariate nonlinear growth model, unit noises, x0 ~ N(0, 2)")


@register_model("linear")
def _linear_spec():
    return ModelSpec(linear_model([[0.9]], [[1.0]]), GaussianNoise.standard(),
                     GaussianNoise.standard(), x0=GaussianNoise([0.0], [[1.0]]),
                     description="x' = 0.9 x + w, y = x + v, unit noises, x0 ~ N(0, 1)")
