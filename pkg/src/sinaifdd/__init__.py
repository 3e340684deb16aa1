"""Finite-dimensional distributions of dispersing billiard processes."""

__version__ = "0.1.0"

from .exceptions import *  # noqa: F401,F403
# flake8: noqa
from .geometry import (BilliardTable, HorizonReport, PhasePoint, Scatterer, collision_map,
                       inverse_collision_map, iterate, reference_table, validate_table)
from .measure import MuSampler, invariance_test, sample_mu
from .observables import FunctionalSpec, Observable, builtin, outer
from .fidistats import (DecayFit, ExponentialDecayFit, IndexBlocks, correlation_gap,
                        gap_decay_curve, sample_joint, sample_product)
from .symbolic import empirical_holder, future_separation, past_separation
from .limits import (BirkhoffConfig, GouezelBlockSpec, SteinWindowSpec, clt_experiment,
                     gouezel_charfn_gap, green_kubo_sigma2, multiple_correlation, pair_correlation,
                     pene_B2_curve, sigma_matrix, stein_A1_check, stein_A2_curve)
from .experiments import EXPERIMENTS
