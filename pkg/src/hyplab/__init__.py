"""Hyperbolic-time machinery for non-uniformly expanding interval maps.

Detection of (sigma, delta)-hyperbolic times along orbits, first and
adapted hyperbolic time maps, adapted random perturbations
f_t(x) = f(x) + t xi omega^(-eta H(x)^2), stationary-measure estimation
and stochastic-stability diagnostics for one-dimensional maps.
"""

__version__ = "0.1.0"

from .errors import (BinMismatch, BranchResolutionFailure, CalibrationFailure,
                     ConfigError, CriticalPointError, DegenerateFit,
                     DomainExit, HyplabError, NoFeasibleEta,
                     PreimageExplosion)
from .maps import (Domain, MapModel, deriv, eval_many, eval_point,
                   list_families, make_map, map_from_config, preimages,
                   prv_critical_points, truncated_dist)
from .hyptimes import (HyperbolicParams, HypTimeReport, OrbitTrace, TailTable,
                       adapted_hyperbolic_time, detect_hyperbolic_times,
                       detect_hyperbolic_times_naive, first_hyperbolic_time,
                       lp_tail_check, tail_table, trace_orbit)
from .noise import (AdaptedPerturbation, NoiseSequence, PreservationReport,
                    RandomOrbitTrace, choose_constants,
                    detect_random_hyperbolic_times, preservation_experiment,
                    random_orbit, sample_noise)
from .measures import (EmpiricalMeasure, StabilityCurve, birkhoff_average,
                       lyapunov, markov_step, physical_measure,
                       slow_recurrence_average, stability_curve,
                       stationary_measure, wasserstein1)
from .stats import (CorrelationResult, DecayFit, correlation_estimate,
                    fit_decay, ld_estimate, log_deriv_observable)
from .calibrate import CalibrationResult, calibrate

__all__ = [name for name in dir() if not name.startswith("_")]
