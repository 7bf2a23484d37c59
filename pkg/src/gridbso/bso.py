"""Grid-based Bayesian state observer.

Prediction pushes Metropolis samples of the posterior through the state
equation and rebuilds the prior on the grid by kernel density estimation.
The update multiplies the prior coefficients by the measurement likelihood at
each node and renormalizes.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DegenerateDensity, Divergence
from .grid import (Grid, GriddedPdf, PointEstimate, argmax_node, interpolate, moments,
                   normalize, point_estimate)
from .kde import KdeConfig, kde_to_grid, split_range
from .mcmc import ChainConfig, sample_gridded
from .model import NoiseModel, measurement_likelihood

# Fixed node blocks for the update: the likelihood is evaluated block by
# block whatever the thread count, so vectorized math sees identical inputs.
UPDATE_BLOCK = 256


@dataclass(frozen=True)
class BsoConfig:
    """Observer settings.

    ``proposal_scale`` sets the random-walk step to that multiple of the
    posterior standard deviation (floored at one cell width); an explicit
    ``proposal_std`` overrides it. ``kde.min_std`` defaults to half a cell.
    ``chains > 1`` splits the samples over independent chains.
    """

    grid: Grid
    n_samples: int = 20_000
    kde: KdeConfig = KdeConfig(kernel="epanechnikov", bandwidth_rule="silverman")
    burn_in: Optional[int] = None
    thinning: int = 1
    proposal_std: Optional[np.ndarray] = None
    proposal_scale: float = 2.4
    chains: int = 1
    threads: int = 1

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError("n_samples must be at least 100 for a usable density estimate")
        if self.threads < 1 or self.chains < 1:
            raise ValueError("threads and chains must be positive")
        if self.chains > self.n_samples:
            raise ValueError("more chains than samples")
        if self.proposal_scale <= 0:
            raise ValueError("proposal_scale must be positive")
        if self.kde.min_std is None:
            object.__setattr__(self, "kde", replace(self.kde, min_std=0.5 * self.grid.max_cell_width))


@dataclass
class BsoState:
    posterior: GriddedPdf
    k: int
    prior: Optional[GriddedPdf] = None
    estimate: Optional[PointEstimate] = None
    diagnostics: dict = field(default_factory=dict)


class BayesianStateObserver:
    """Grid-based observer for one :class:`~gridbso.model.SystemModel`."""

    def __init__(self, config, model, noise_w, noise_v):
        self.config = config
        self.model = model
        self.noise_w = noise_w
        self.noise_v = noise_v
        self._pool = None

    @property
    def name(self):
        return f"bso:{self.config.grid.n_nodes}"

    def _executor(self):
        if self.config.threads > 1 and self._pool is None:
            self._pool = ThreadPoolExecutor(self.config.threads)
        return self._pool

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def init(self, prior0):
        """Initial state from a gridded pdf or a noise model for x_0."""
        grid = self.config.grid
        if isinstance(prior0, GriddedPdf):
            pdf = prior0
        elif isinstance(prior0, NoiseModel):
            pdf = GriddedPdf.from_function(grid, prior0.density)
        else:
            pdf = GriddedPdf.from_function(grid, prior0)
        try:
            pdf = normalize(pdf)
        except DegenerateDensity as exc:
            exc.step = 0
            raise
        return BsoState(posterior=pdf, k=0, estimate=point_estimate(pdf))

    def _chain_config(self, posterior):
        cfg = self.config
        if cfg.proposal_std is not None:
            std = np.broadcast_to(np.asarray(cfg.proposal_std, dtype=float), (cfg.grid.ndim,))
        else:
            _, var = moments(posterior)
            std = np.maximum(cfg.proposal_scale * np.sqrt(var), cfg.grid.max_cell_width)
        init = argmax_node(posterior)
        if not interpolate(posterior, init) > 0:
            init = cfg.grid.node(int(np.argmax(posterior.coeffs.ravel())))
        per_chain = cfg.n_samples // cfg.chains
        burn = None if cfg.burn_in is None else cfg.burn_in // cfg.chains
        return ChainConfig(per_chain, std, init, burn, cfg.thinning)

    def _draw_posterior(self, posterior, rng):
        cfg = self.config
        chain = self._chain_config(posterior)
        if cfg.chains == 1:
            res = sample_gridded(posterior, chain, rng)
            return res.samples, res.acceptance_rate
        # extra samples go to the first chains so the total stays n_samples
        counts = [cfg.n_samples // cfg.chains + (c < cfg.n_samples % cfg.chains)
                  for c in range(cfg.chains)]
        parts, rates = [], []
        for count, child in zip(counts, rng.spawn(cfg.chains)):
            res = sample_gridded(posterior, replace(chain, n_samples=count), child)
            parts.append(res.samples)
            rates.append(res.acceptance_rate)
        return np.concatenate(parts), float(np.mean(rates))

    def predict(self, state, u_prev=None, rng=None):
        """Prior for step ``state.k + 1`` from the posterior at ``state.k``."""
        k = state.k + 1
        t0 = time.perf_counter_ns()
        samples, acc = self._draw_posterior(state.posterior, rng)
        w = self.noise_w.sample(rng, samples.shape[0])
        propagated = self.model.f(state.k, samples, u_prev, w)
        try:
            prior = normalize(kde_to_grid(propagated, self.config.kde, self.config.grid,
                                          threads=self.config.threads,
                                          executor=self._executor()))
        except Divergence as exc:
            exc.step = k
            raise
        diag = {"acceptance_rate": acc, "predict_ns": time.perf_counter_ns() - t0,
                "prior_map": argmax_node(prior)}
        return BsoState(posterior=state.posterior, k=k, prior=prior, diagnostics=diag)

    def likelihood(self, k, u, y):
        """Measurement likelihood at every node, shape ``grid.shape``."""
        grid = self.config.grid
        pts = grid.points
        out = np.empty(grid.n_nodes)
        blocks = [(a, min(a + UPDATE_BLOCK, grid.n_nodes))
                  for a in range(0, grid.n_nodes, UPDATE_BLOCK)]

        def work(bounds):
            a, b = bounds
            out[a:b] = measurement_likelihood(self.model, self.noise_v, k, pts[a:b], u, y)

        pool = self._executor()
        if pool is None or len(blocks) == 1:
            for blk in blocks:
                work(blk)
        else:
            list(pool.map(work, blocks))
        return out.reshape(grid.shape)

    def update(self, state, y, u=None):
        """Posterior at ``state.k`` from ``state.prior`` (or the current
        posterior when no prediction has been made yet) and measurement ``y``."""
        t0 = time.perf_counter_ns()
        prior = state.prior if state.prior is not None else state.posterior
        psi = self.likelihood(state.k, u, y)
        try:
            posterior = normalize(GriddedPdf(prior.grid, psi * prior.coeffs))
        except DegenerateDensity as exc:
            raise DegenerateDensity(f"measurement y={y!r} is inconsistent with the prior",
                                    step=state.k) from exc
        diag = dict(state.diagnostics)
        diag["update_ns"] = time.perf_counter_ns() - t0
        return BsoState(posterior=posterior, k=state.k, prior=prior,
                        estimate=point_estimate(posterior), diagnostics=diag)

    def step(self, state, y, rng, u_prev=None, u=None):
        """Predict to ``state.k + 1`` and update with ``y``; returns the new
        state and its posterior point estimate (MAP, mean, 95% band)."""
        new = self.update(self.predict(state, u_prev, rng), y, u)
        return new, new.estimate
