"""Grid-based Bayesian state observer with MCMC prediction and KDE reconstruction."""

from .baselines import ExtendedKalmanFilter, ParticleFilter
from .bench import BenchConfig, FilterSpec, emit_report, run_benchmark, run_single, simulate_truth
from .bso import BayesianStateObserver, BsoConfig, BsoState
from .errors import (DegenerateDensity, DegenerateSamples, DegenerateWeights, Divergence,
                     GridBsoError, InvalidInit, NonInvertible, SingularInnovation)
from .grid import (Grid, GridAxis, GriddedPdf, PointEstimate, argmax_node, build_uniform_grid,
                   integrate, interpolate, moments, normalize, point_estimate)
from .kde import KdeConfig, kde_to_grid
from .mcmc import ChainConfig, sample_chain, sample_gridded
from .model import (GaussianNoise, SystemModel, get_model, linear_model,
                    measurement_likelihood, transition_density, ungm_model)

__version__ = "0.1.0"
