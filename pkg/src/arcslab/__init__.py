"""Covariate-adaptive randomization laboratory.

Sequential covariate selection via cross-validated sparse regression,
imbalance-minimizing biased-coin assignment, the classical competitor
designs (complete randomization, rerandomization, pairwise Mahalanobis
minimization, full-covariate feature balancing), and a reproducible Monte
Carlo harness with CSV emission.
"""

from .balance import (ImbalanceState, PhiSpec, RunMetrics, imb_delta, mahalanobis_imb,
                      new_state, phi_cov, rebuild_state, report_metrics, update_lambda)
from .calibrate import (calibrate_pseudo_trial, load_table, make_calibrated_example,
                        make_standin_table, write_table_csv)
from .engine import (METHODS, TrialConfig, TrialState, biased_coin, run_arcs,
                     run_arcs_m, run_arm, run_cov, run_cr, run_rr, run_trial,
                     rr_threshold, validate)
from .errors import (ArcsError, CalibrationError, ConfigError, ConvergenceError,
                     DecompositionError, DrawBudgetError, ImbalanceUndefinedError,
                     ReplicationError)
from .numerics import SpectralDecomposition, chol_lower, pinv, sample_cov, spectral
from .selection import (AdditiveFit, BasisSpec, CVResult, LassoFit, SelectionResult,
                        additive_fit, arcs_select, basis_expand, cv_lambda,
                        cv_lambda_additive, group_lambda_max, intersect_supports,
                        kkt_violation, lambda_max, lasso_fit, support)
from .simulate import (CovariateSpec, ExampleDef, OutcomeModel, ReplicationResult,
                       ReplicationSummary, gen_gaussian_ar1, gen_mixed,
                       generate_covariates, make_example, outcome, replicate,
                       run_study, signal, tau_hat, write_per_rep_csv,
                       write_summary_csv, write_trajectory_csv)

__version__ = "0.1.0"
