"""Safe exploration under Bayesian safety: goal-MDP solver, bandit simulator and checkers."""
from .model import DiscreteDistribution, Instance, Portfolio, load_instance, validate_instance
from .gmdp import evaluate_policy, ogp_policy, solve_optimal
from .segb import Variant, monte_carlo_utility, run_segb_episode

__all__ = [
    "DiscreteDistribution", "Instance", "Portfolio", "load_instance", "validate_instance",
    "evaluate_policy", "ogp_policy", "solve_optimal",
    "Variant", "monte_carlo_utility", "run_segb_episode",
]
__version__ = "0.1.0"
