"""Interacting-neuron PDMP simulation and nonparametric rate inference."""

from .model import (ModelParams, SoftCap, RateFunction, HolderClass,
                    NetworkState, EstimationRegion, linear_rate, log1p_rate,
                    expm1_rate, table_rate, delta_jump, rate_bar, holder_audit)
from .flow import FlowSegment, flow_map, flow_inverse, segment_integral
from .simulator import (EventLog, SimConfig, SeedRecord, RegenProbeConfig,
                        simulate, state_at, regen_probe, save_event_log,
                        load_event_log, rate_from_descriptor)
from .estimator import (Kernel, kernel_make, kernel_for_beta,
                        default_bandwidth, region_check, estimate_at,
                        EstimateReport)
from .bandwidth import (ScvConfig, default_config, default_grid,
                        jump_chain_density, scv_score, scv_select)
from .likelihood import PerturbationSpec, perturb, log_likelihood_ratio
from .experiments import StudyConfig, StudyResult, run_study

__version__ = "0.1.0"
