"""Influence-function estimators of entropies, divergences and mutual informations.

Densities are kernel estimates on the unit cube built from Legendre
polynomial kernels; functionals are estimated by correcting plug-in values
with averaged influence functions, either with a data split or leave-one-out.
"""

from .density import KdeModel, cv_bandwidth, fit
from .errors import (
    BadAlpha,
    BadBandwidth,
    BadExponents,
    BadSpec,
    DegenerateCase,
    DimensionMismatch,
    EmptyGrid,
    EmptySample,
    GridTooLarge,
    IfestError,
    IndexOutOfRange,
    InputError,
    OutOfDomain,
    ShapeError,
    TooFewSamples,
)
from .estimators import (
    Estimate,
    EstimatorConfig,
    confidence_interval,
    estimate,
    estimate_cond_tsallis_variance,
    estimate_ds,
    estimate_loo,
    estimate_plugin,
    estimate_power_integral,
)
from .functionals import DensityPair, FunctionalSpec, influence, plugin_value
from .kernels import Kernel1D, eval_kernel, eval_product_kernel, legendre_kernel
from .quadrature import GridSpec, default_grid, integrate
from .synthdata import AnalyticDensity, MixtureDensity, oracle_truth, parse_dist, sample

__version__ = "0.1.0"
