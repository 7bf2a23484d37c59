"""Random-walk Metropolis-Hastings sampling.

Both samplers draw every random number up front from the caller's generator
(all proposal increments first, then all uniforms), so a chain is a pure
function of (target, config, generator state).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .errors import InvalidInit


@dataclass(frozen=True)
class ChainConfig:
    """Chain length and proposal settings.

    ``burn_in=None`` means ``n_samples // 10``. ``proposal_std`` is the
    per-dimension standard deviation of the Gaussian random-walk proposal.
    """

    n_samples: int
    proposal_std: np.ndarray
    init: Optional[np.ndarray] = None
    burn_in: Optional[int] = None
    thinning: int = 1

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be at least 1")
        if int(self.thinning) < 1:
            raise ValueError("thinning must be at least 1")
        if self.burn_in is not None and int(self.burn_in) < 0:
            raise ValueError("burn_in must be nonnegative")
        std = np.atleast_1d(np.asarray(self.proposal_std, dtype=float))
        if not np.all(std > 0) or not np.all(np.isfinite(std)):
            raise ValueError("proposal_std must be positive and finite")
        object.__setattr__(self, "proposal_std", std)
        if self.init is not None:
            object.__setattr__(self, "init", np.atleast_1d(np.asarray(self.init, dtype=float)))

    @property
    def n_burn(self):
        return self.n_samples // 10 if self.burn_in is None else int(self.burn_in)

    @property
    def n_iterations(self):
        return self.n_burn + self.n_samples * self.thinning

    def with_init(self, init):
        return ChainConfig(self.n_samples, self.proposal_std, init, self.burn_in, self.thinning)


@dataclass(frozen=True)
class ChainResult:
    samples: np.ndarray  # (n_samples, n)
    acceptance_rate: float


def acceptance_probability(target_log, proposal_log, current, candidate):
    """Metropolis-Hastings acceptance probability, computed in log space.

    ``proposal_log(a, b)`` is ``log q(a | b)``, the log density of proposing
    ``a`` from ``b``; detailed balance then needs the factor
    ``q(current | candidate) / q(candidate | current)``. Pass ``None`` for a
    symmetric proposal, in which case the factor is 1.
    """
    lp_cand = target_log(candidate)
    if lp_cand == -math.inf:
        return 0.0
    log_ratio = lp_cand - target_log(current)
    if proposal_log is not None:
        log_ratio += proposal_log(current, candidate) - proposal_log(candidate, current)
    return 1.0 if log_ratio >= 0 else math.exp(log_ratio)


def _draws(config, n, rng):
    steps = rng.standard_normal((config.n_iterations, n)) * config.proposal_std
    log_u = np.log(rng.random(config.n_iterations))
    return steps, log_u


def find_start(target_log, init, scale, max_tries=1000):
    """First point with finite log density on a deterministic outward search.

    Tries ``init`` itself, then ``init +/- j * scale`` along each axis for
    ``j = 1, 2, ...``.
    """
    init = np.atleast_1d(np.asarray(init, dtype=float))
    if np.isfinite(target_log(init)):
        return init
    scale = np.broadcast_to(np.asarray(scale, dtype=float), init.shape)
    for j in range(1, max_tries + 1):
        for d in range(init.size):
            for sign in (1.0, -1.0):
                x = init.copy()
                x[d] += sign * j * scale[d]
                if np.isfinite(target_log(x)):
                    return x
    raise InvalidInit(f"no point with positive target density found near {init}")


def sample_chain(target_log, config, rng):
    """Run Metropolis with a Gaussian random-walk proposal.

    Each iteration proposes ``current + step``, accepts when ``u <= A`` and
    otherwise repeats the current state. After ``config.n_burn`` iterations
    every ``config.thinning``-th state is kept.
    """
    if config.init is None:
        raise InvalidInit("ChainConfig.init is required")
    x = find_start(target_log, config.init, config.proposal_std)
    n = x.size
    steps, log_u = _draws(config, n, rng)
    out = np.empty((config.n_samples, n))
    lp = target_log(x)
    accepted = 0
    o = 0
    burn, thin = config.n_burn, config.thinning
    for i in range(config.n_iterations):
        cand = x + steps[i]
        lp_cand = target_log(cand)
        if lp_cand > -math.inf and log_u[i] <= lp_cand - lp:
            x, lp = cand, lp_cand
            accepted += 1
        if i >= burn and (i - burn + 1) % thin == 0:
            out[o] = x
            o += 1
    return ChainResult(out, accepted / config.n_iterations)


def sample_gridded(pdf, config, rng):
    """:func:`sample_chain` specialised to the log of a gridded interpolant.

    Compiled; consumes the generator exactly like :func:`sample_chain` so both
    produce the same chain for the same target.
    """
    from .grid import interpolate

    if config.init is None:
        raise InvalidInit("ChainConfig.init is required")

    def target_log(x):
        p = interpolate(pdf, x)
        return math.log(p) if p > 0 else -math.inf

    x = find_start(target_log, config.init, config.proposal_std)
    steps, log_u = _draws(config, x.size, rng)
    out = np.empty((config.n_samples, x.size))
    nodes, lengths, inv_dx, strides = pdf.grid.packed
    accepted = _kernels.gridded_chain(nodes, lengths, inv_dx, strides, pdf.coeffs.ravel(), x,
                                      steps, log_u, config.n_burn, config.thinning, out)
    return ChainResult(out, accepted / config.n_iterations)
