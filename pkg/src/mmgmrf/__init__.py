"""Multimodal travel-time distributions on road networks.

A Markov chain over per-link discrete states (number of stops) is coupled
with a sparse Gaussian Markov random field over state-conditional link
travel times.  Path queries return Gaussian mixtures.
"""
from .errors import (DegenerateVariance, LineSearchFailed, MMGMRFError, NonMonotonicTimestamps,
                     NotConverged, NotPositiveDefinite, NumericalError, PathTooLong, TooFewSamples,
                     UncoveredLink, UnknownLink, ValidationError)
from .gmrf import Pecm, PecmStats, PrecisionModel, accumulate, assemble_pecm, fit_precision
from .inference import (PathQuery, TravelTimeDistribution, TravelTimeModel, cdf, exact_mean,
                        exact_mixture, infer_distribution, quantile)
from .markov import CompressedObservation, MarkovParams, fit_markov
from .network import (EdgePattern, RoadNetwork, VariableIndex, build_edge_pattern,
                      build_variable_index, grid_network, load_network, save_network)
from .stopgo import LinkTrace, StopGoResult, decompose_trajectory, select_lambda_bic, solve_lasso

__version__ = "0.1.0"
