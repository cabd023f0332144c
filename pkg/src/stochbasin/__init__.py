"""Stochastic basins of attraction on finite Markov chains and flow maps."""
from .analysis import combined_difference_bound, difference_curve_sweep, h_lambda_N
from .committor import (committor_between, committor_to, eps_absorption_stability,
                        eps_committor, eps_committor_series, ems_finite,
                        expected_time_in_target, fuzzy_committor, leak_rate)
from .dynamics import (FlowMapSpec, box_model_matrix, integrate_deterministic,
                       integrate_euler, integrate_stochastic)
from .errors import NumericalError, StochBasinError, ValidationError
from .markov import (SparseStochasticMatrix, cesaro_average_apply, fixed_space_projection,
                     geometric_average_apply, invariant_distributions, step_distribution,
                     validate_stochastic)
from .regions import Region, parse_region
from .sampling import TimeRule, gbs_estimate, gbs_sweep, membership_estimate
from .ulam import GridPartition, build_partition, estimate_transition_matrix

__version__ = "0.1.0"
