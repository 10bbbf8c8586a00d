"""Extremes of branching random walks with log-slowly varying displacement tails."""
from .engine import (BRWConfig, ExtremalSnapshot, PopulationCapExceeded, batch_simulate, normalize_atoms,
                     normalize_snapshot, simulate_tree, stopping_line_identity_check)
from .galton_watson import (ClusterLaw, OffspringLaw, compute_cluster_law, deterministic, estimate_W,
                            explicit, geometric, linear_fractional, poisson, sample_A, zl_pmf)
from .limit_laws import (ConstantW, CoxSample, EmpiricalW, LinearFractionalW, limit_count_pmf,
                         limit_laplace_functional, mixed_gumbel_cdf, sample_cluster_cox, sample_exp_ppp)
from .normalization import NormSeq, compute_norm_seq
from .step import StepFunction
from .tail_model import (DisplacementLaw, OutOfScopeError, Regime, TailFunction, load_table, lognormal_tail,
                         power_log, validate_assumptions)

__version__ = "0.1.0"
