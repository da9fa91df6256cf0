"""Directed polymers in random environments on supercritical percolation clusters.

Bond percolation in a finite box, tube geometry, random walks on the open
cluster, the polymer partition function and the change-of-measure machinery
behind fractional-moment bounds.
"""
from .disorder import EnvironmentField, TiltRegion, delta_n, holder_cost, log_mgf, log_mgf_prime
from .errors import ConditioningError, ConfigError, GeometryError, GuardError, ParameterError
from .perc import (BondConfig, ClusterLabeling, LatticeBox, condition_on_origin, estimate_theta,
                   label_clusters, sample_config)
from .polymer import (change_of_measure_experiment, fractional_moments, martingale_test, partition_bruteforce,
                      partition_dp, strong_disorder_scan)
from .tubes import (Tube, concentration_experiment, forced_edge_sets, good_tube_count, pattern_probability,
                    scan_open_tubes, theta_prime_estimate, tube_density_stat)
from .walk import (detect_dwell, estimate_An_curve, estimate_An_prob, exit_time_tail_1d, heat_kernel_probe,
                   run_walk, tube_stay_probability)

__version__ = "0.1.0"
