"""Learning network utility maximisation under queueing-delayed feedback."""
from .errors import (BenchmarkViolation, ConfigurationError, ConsistencyError, ConvergenceError,
                     DomainError, NonInteriorError, ResourceError)
from .harness import regret_scaling, run_once, simulate, sweep
from .network import BipartiteNetwork, Job, Simulator, TabularNetwork
from .oracle import StaticProblem, brute_force_opt, capacity_member, slater_slack, solve_opt
from .policies import (GSMW, PGSMW, EpisodicGSMW, PolicyParams, StaleGradientGSMW,
                       gradient_estimate, gsmw_update, make_policy, schedule_params)
from .scenarios import build_database, build_job_scheduling, build_video_streaming
from .utility import Utility, UtilitySpec

__version__ = "0.1.0"
