"""Uncertainty-aware storage bidding, withholding bounds and single-bus market simulation."""
__version__ = "0.1.0"

from .core import (
    BidCurve,
    DistKind,
    InfeasibleError,
    ModelError,
    NumericalError,
    PriceBounds,
    PriceDistribution,
    Side,
    StorageSpec,
    ValueFunction,
    mean_of,
    sample,
    truncate_normalize,
)
from .value import (
    ValueSeries,
    backward_induction,
    bellman_step,
    default_end_value,
    marginal_value,
    q_zero_soc,
)
from .bids import baseline_bids, charge_bids, discharge_bids
from .withholding import (
    BoundBreakdown,
    WithholdingReport,
    audit_bids,
    construct_spike_distribution,
    corollary4_bound,
    extend_spike_schedule,
    sigma_floor,
    theorem2_bound,
)
from .market import (
    ClearingResult,
    CommitmentSchedule,
    GeneratorSpec,
    Scenario,
    aggregate_supply,
    clear_rtm,
    commit_dam,
    simulate_day,
)
from .experiments import SweepResult, bounded_sweep, sigma_sweep, slope_check, welfare_sweep
