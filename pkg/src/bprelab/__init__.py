"""Simulation and statistical checks for supercritical branching processes
in varying and random environments.

The normalized population W_n = Z_n / P_n is a nonnegative martingale under
the quenched law; the modules here simulate it exactly, compute its limit
objects, and test its convergence rates and limit laws by Monte Carlo.
"""

import numba

# the TBB layer is not installed here; workqueue needs no extra library
numba.config.THREADING_LAYER = "workqueue"

from .errors import (BpreError, CampaignInvalid, DegenerateEnvironment,  # noqa: E402
                     DivergenceSuspected, DivergentSeries, HypothesisViolation,
                     InvalidLaw, InvalidModel, PopulationOverflow)
from .offspring import (OffspringLaw, finite, geometric_shifted, law_from_spec,  # noqa: E402
                        moment, pgf, poisson, power_tail, sample_one, sample_total)
from .env import (EnvironmentModel, EnvironmentSequence, constant_env,  # noqa: E402
                  model_from_spec, realize, shift, stationary_distribution)
from .engine import (Trajectory, WEstimate, estimate_W, run_replicates,  # noqa: E402
                     sample_fluctuation, simulate)
from .limits import (LimitEstimate, delta2, delta2_partial, delta2_shifted,  # noqa: E402
                     extinction_prob, limit_law_sample, log_Pn, quenched_mgf,
                     u_statistic)
from .rng import Stream, mix  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "BpreError", "CampaignInvalid", "DegenerateEnvironment", "DivergenceSuspected",
    "DivergentSeries", "HypothesisViolation", "InvalidLaw", "InvalidModel",
    "PopulationOverflow", "OffspringLaw", "finite", "geometric_shifted", "law_from_spec",
    "moment", "pgf", "poisson", "power_tail", "sample_one", "sample_total",
    "EnvironmentModel", "EnvironmentSequence", "constant_env", "model_from_spec",
    "realize", "shift", "stationary_distribution", "Trajectory", "WEstimate",
    "estimate_W", "run_replicates", "sample_fluctuation", "simulate", "LimitEstimate",
    "delta2", "delta2_partial", "delta2_shifted", "extinction_prob", "limit_law_sample",
    "log_Pn", "quenched_mgf", "u_statistic", "Stream", "mix",
]
