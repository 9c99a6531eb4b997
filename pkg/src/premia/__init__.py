"""Risk-premia estimation and inference for linear beta-pricing models.

Fama-MacBeth two-pass estimates, the continuous updating estimator, the
J (misspecification) and IS (identification strength) statistics, and DRLM
confidence sets that stay valid when the model is misspecified or the
betas are close to reduced rank.
"""

from premia.panel_io import (AlignedDataset, RawPanel, ZeroBetaMode, align, load_csv,
                             reference_difference, set_zero_beta_mode, write_csv)
from premia.first_pass import FirstPassEstimates, beta_significance_table, estimate_first_pass
from premia.cross_section import (PopulationModel, PremiaResult, fm_pseudo_true, fm_tstats,
                                  fm_two_pass, repackage)
from premia.cue_rank import (DiagnosticPair, EigenSolution, cue_estimate, cue_pseudo_true,
                             diagnostics, is_statistic, j_statistic, solve_pencil)
from premia.drlm import CsGrid, confidence_set, drlm_stat, power_improvement, project

__version__ = "0.1.0"
SCHEMA_VERSION = "1"

__all__ = [
    "AlignedDataset", "RawPanel", "ZeroBetaMode", "align", "load_csv", "reference_difference",
    "set_zero_beta_mode", "write_csv",
    "FirstPassEstimates", "beta_significance_table", "estimate_first_pass",
    "PopulationModel", "PremiaResult", "fm_pseudo_true", "fm_tstats", "fm_two_pass", "repackage",
    "DiagnosticPair", "EigenSolution", "cue_estimate", "cue_pseudo_true", "diagnostics",
    "is_statistic", "j_statistic", "solve_pencil",
    "CsGrid", "confidence_set", "drlm_stat", "power_improvement", "project",
]
