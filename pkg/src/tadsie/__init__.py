"""Trend-adaptive sample-size search with synthetic-intervention testing.

The main entry points are re-exported here; see the submodules for details.
"""
from .baselines import (BaselineConfig, run_fixed_sample_design, run_standard_tad,
                        run_standard_tad_sie, run_tad_standard_test, two_sample_arm_size)
from .cohort import (ChangeScore, CohortGenConfig, GeneratorSource, PoolSource, RctDataset,
                     desk_cohort, generate_cohort, load_dataset, read_dataset, save_dataset)
from .errors import (ConfigError, DatasetParseError, DegenerateStatisticError,
                     InsufficientDataError, RecruitmentError, TadsieError, TrialError)
from .harness import (Design, EvaluationReport, EvaluationSet, SweepReport, load_report,
                      make_design, simulate_trials, sweep, write_report)
from .kernels import BACKEND
from .moments import estimate_moments
from .secrets import TestingParams, run_secrets
from .si import SiParams
from .stats import BoxSummary, box_summary, welch_t_test
from .tad import TadConfig, TrialResult, one_sample_arm_size, run_tad_sie

__version__ = "0.1.0"
