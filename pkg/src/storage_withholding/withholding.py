"""Withholding bounds, spike constructions and a bid auditor.

Discharge bids at empty storage are compared against three references: the
flat deterministic baseline, the per-period bound implied by administrative
price limits, and its stationary relaxation with a cap on the price means.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    BidCurve,
    InfeasibleError,
    ModelError,
    PriceBounds,
    PriceDistribution,
    StorageSpec,
    ValueFunction,
)
from .value import backward_induction, marginal_value, q_zero_soc


@dataclass(frozen=True)
class BoundBreakdown:
    """Terms of the price-limit bound on the period-``t`` discharge bid.

    ``alpha[i]`` is the probability mass a bound-attaining law puts on the
    cap in period ``t+1+i``; ``weights[i]`` is ``alpha[i]`` times the chance
    that no earlier cap was hit; ``survival`` is the chance of never hitting
    the cap before the horizon ends.  ``covers_all_laws`` records whether
    ``floor <= c <= cap`` and ``tau * v_T0 / eta <= cap - c``; outside that
    range a bounded law can push the bid past ``bound``.
    """

    t: int
    horizon: int
    alpha: np.ndarray
    beta: np.ndarray
    weights: np.ndarray
    survival: float
    bound: float
    covers_all_laws: bool = True

    def to_rows(self):
        rows = []
        for i, (a, b, w) in enumerate(zip(self.alpha, self.beta, self.weights)):
            rows.append({"period": self.t + 1 + i, "alpha": float(a), "beta": float(b),
                         "weight": float(w)})
        return rows


def occupancy(mu, bounds: PriceBounds) -> np.ndarray:
    """Probability of the cap in a two-point law on the bounds with mean ``mu``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < bounds.floor - 1e-9) or np.any(mu > bounds.cap + 1e-9):
        bad = mu[(mu < bounds.floor - 1e-9) | (mu > bounds.cap + 1e-9)]
        raise ModelError(f"price means {bad.tolist()} outside [{bounds.floor}, {bounds.cap}]")
    return np.clip((mu - bounds.floor) / (bounds.cap - bounds.floor), 0.0, 1.0)


def theorem2_bound(t: int, T: int, mu_path: Sequence[float], bounds: PriceBounds,
                   spec: StorageSpec, v_T0: float = 0.0) -> BoundBreakdown:
    """Upper bound on the empty-storage discharge bid in period ``t``.

    ``mu_path[i]`` is the mean price of period ``i+1``; only periods
    ``t+1 .. T`` enter.  ``v_T0`` is the end-of-horizon marginal value at
    zero SoC.
    """
    if not 0 <= t <= T:
        raise ModelError(f"period {t} outside [0, {T}]")
    if len(mu_path) < T:
        raise ModelError(f"need {T} price means, got {len(mu_path)}")
    if v_T0 < 0:
        raise ModelError(f"end marginal value must be >= 0, got {v_T0}")
    alpha = occupancy(np.asarray(mu_path[t:T], dtype=float), bounds)
    beta = 1.0 - alpha
    reach = np.concatenate([[1.0], np.cumprod(beta)])
    weights = alpha * reach[:-1]
    survival = float(reach[-1])
    c = spec.discharge_cost
    end = spec.step * v_T0 / spec.efficiency
    bound = c + (bounds.cap - c) * weights.sum() + survival * end
    covers = bounds.floor <= c <= bounds.cap and end <= bounds.cap - c
    return BoundBreakdown(t, T, alpha, beta, weights, survival, float(bound), covers)


def corollary4_bound(T: float, mu_cap: float, bounds: PriceBounds, spec: StorageSpec,
                     rho: float = 1.0, v_T: float = 0.0) -> float:
    """Bound when every period mean is at most ``mu_cap``; ``T=inf`` gives the limit."""
    if not 0 < rho <= 1:
        raise ModelError(f"discount ratio must lie in (0, 1], got {rho}")
    alpha = float(occupancy(mu_cap, bounds))
    beta = 1.0 - alpha
    c = spec.discharge_cost
    end = spec.step * v_T / spec.efficiency
    if rho * beta >= 1.0:
        # no chance of ever reaching the cap: the bid is cost plus end value
        return c + end
    ratio = alpha / (1.0 - rho * beta)
    if math.isinf(T):
        return ratio * bounds.cap + (1.0 - ratio) * c
    return c + ratio * (1.0 - beta ** (T - 1)) * (bounds.cap - c) + beta ** T * end


def sigma_floor(v_next_Ec: float, c: float, mu_next: float) -> float:
    """Gaussian spread beyond which the empty-storage marginal value rises with spread."""
    if v_next_Ec < 0:
        raise ModelError(f"v_next(E_c) must be >= 0, got {v_next_Ec}")
    prod = (v_next_Ec - 2.0 * c) * (mu_next - c)
    return 0.0 if prod >= 0 else math.sqrt(-prod)


def spike_price_floor(theta: float, alpha: float, spec: StorageSpec, v_next_Ec: float,
                      v_next_0: Optional[float] = None) -> float:
    """Smallest high price of a two-point law that lifts ``v_t(0)`` to ``theta``."""
    v0 = v_next_Ec if v_next_0 is None else v_next_0
    eta, tau, c = spec.efficiency, spec.step, spec.discharge_cost
    beta = 1.0 - alpha
    need = tau * (theta - beta * v_next_Ec) / (alpha * eta) + c
    return max(need, tau * v0 / eta + c, 0.0)


def construct_spike_distribution(theta: float, mu: float, alpha: float, spec: StorageSpec,
                                 v_next_Ec: float, v_next_0: Optional[float] = None,
                                 pi: Optional[float] = None) -> PriceDistribution:
    """Two-point law with mean ``mu`` whose empty-storage marginal value is ``>= theta``.

    The high realization defaults to the smallest sufficient price; pass
    ``pi`` to place it higher.  ``v_next_0`` (default ``v_next_Ec``) is the
    next-period marginal value at zero SoC and only matters when the spike
    would otherwise be too small to trigger discharge.
    """
    if not 0 < alpha < 1:
        raise ModelError(f"spike probability must lie in (0, 1), got {alpha}")
    if theta < 0:
        raise ModelError(f"target must be >= 0, got {theta}")
    if v_next_0 is not None and v_next_0 < v_next_Ec:
        raise ModelError(f"v_next(0)={v_next_0} < v_next(E_c)={v_next_Ec}: not concave")
    pi_min = spike_price_floor(theta, alpha, spec, v_next_Ec, v_next_0)
    if pi is None:
        pi = pi_min
    elif pi < pi_min - 1e-9:
        raise InfeasibleError(f"high price {pi} below the required {pi_min:.6g}")
    beta = 1.0 - alpha
    gamma = (mu - alpha * pi) / beta
    limit = spec.step * spec.efficiency * v_next_Ec
    if gamma > limit + 1e-9:
        raise InfeasibleError(
            f"low price {gamma:.6g} > tau*eta*v_next(E_c) = {limit:.6g}: "
            f"raise alpha or the target so the low branch charges at full power")
    return PriceDistribution.two_point(pi, gamma, alpha, mu=mu)


def spike_value_at_zero(dist: PriceDistribution, spec: StorageSpec, v_next_Ec: float,
                        v_next_0: Optional[float] = None) -> float:
    """Empty-storage marginal value after a discrete price law, in closed form."""
    v0 = v_next_Ec if v_next_0 is None else v_next_0
    lams, probs = dist.atoms()
    return float(sum(w * q_zero_soc(l, v_next_Ec, v0, spec) for l, w in zip(lams, probs)))


def drain_periods(e_init: float, spec: StorageSpec) -> int:
    """Full-power periods needed to empty ``e_init`` (at least one)."""
    k = math.ceil(e_init * spec.efficiency / (spec.step * spec.power) - 1e-9)
    return max(1, k)


def extend_spike_schedule(theta: float, kappa: int, e_init: float, mu_path: Sequence[float],
                          spec: StorageSpec, alpha: float = 0.5,
                          end_value: Optional[ValueFunction] = None, points: int = 201,
                          max_doublings: int = 60) -> list:
    """Forecasts for periods ``1..T`` keeping every period-``kappa`` discharge bid ``>= theta``.

    Periods right after ``kappa`` get two-point spikes (one per period needed
    to drain ``e_init`` at full power); all other periods are point masses at
    their means.  The spike height starts from the single-period requirement
    and is doubled until backward induction confirms the target.
    """
    T = len(mu_path)
    if not 1 <= kappa <= T:
        raise ModelError(f"bidding period {kappa} outside [1, {T}]")
    if not 0 <= e_init <= spec.energy + 1e-9:
        raise ModelError(f"SoC {e_init} outside [0, {spec.energy}]")
    k = drain_periods(e_init, spec)
    if k > T - kappa:
        raise InfeasibleError(
            f"horizon too short to drain: T - kappa = {T - kappa} < ceil(e*eta/(tau*P)) = {k} "
            f"(the remaining periods must allow the stored energy to be sold at full power)")
    base = [PriceDistribution.point_mass(m) for m in mu_path]
    if theta <= 0:
        return base
    if end_value is None:
        end_value = ValueFunction.linear(0.0, spec.energy, points)
    target = (theta - spec.discharge_cost) * spec.efficiency / spec.step
    pi = spike_price_floor(theta, alpha, spec, 0.0)
    for _ in range(max_doublings):
        sched = list(base)
        for j in range(k):
            t = kappa + j  # zero-based index of period kappa+1+j
            sched[t] = PriceDistribution.two_point(pi, (mu_path[t] - alpha * pi) / (1 - alpha),
                                                   alpha, mu=mu_path[t])
        series = backward_induction(end_value, sched, spec)
        if schedule_bid_floor(series[kappa], e_init, spec) >= theta - 1e-9:
            return sched
        pi *= 2.0
    raise InfeasibleError(
        f"spike height {pi:.3g} still short of target {theta} (marginal value {target:.3g} "
        f"required); SoC {e_init} + {k} * E_c = {e_init + k * spec.charge_increment:.6g} "
        f"exceeds E = {spec.energy}, so on the all-low path the stored unit displaces paid "
        f"charging, which caps its value")


def schedule_bid_floor(vf: ValueFunction, e_init: float, spec: StorageSpec) -> float:
    """Lowest discharge bid price over all feasible quantities at SoC ``e_init``."""
    v = marginal_value(vf, max(e_init, 0.0))
    return max(spec.discharge_cost + spec.step / spec.efficiency * v, 0.0)


@dataclass
class WithholdingReport:
    """Segment-wise comparison of a submitted curve with baseline and bound."""

    period: int
    side: str
    submitted: np.ndarray
    baseline: np.ndarray
    bound: float
    above_baseline: np.ndarray = field(init=False)
    above_bound: np.ndarray = field(init=False)
    margin: float = field(init=False)
    tol: float = 1e-9

    def __post_init__(self):
        self.above_baseline = self.submitted > self.baseline + self.tol
        self.above_bound = self.submitted > self.bound + self.tol
        diff = self.submitted - self.baseline
        self.margin = float(diff.max()) if diff.size else 0.0

    @property
    def withholding(self) -> bool:
        return bool(self.above_baseline.any())

    @property
    def bound_violating(self) -> bool:
        return bool(self.above_bound.any())

    def to_dict(self) -> dict:
        return {
            "period": self.period,
            "side": self.side,
            "submitted": self.submitted.tolist(),
            "baseline": self.baseline.tolist(),
            "bound": self.bound,
            "above_baseline": self.above_baseline.tolist(),
            "above_bound": self.above_bound.tolist(),
            "withholding": self.withholding,
            "bound_violating": self.bound_violating,
            "margin": self.margin,
        }


def audit_bids(curve: BidCurve, baseline: BidCurve, bound) -> WithholdingReport:
    """Flag segments priced above the baseline and above ``bound``.

    ``bound`` is a :class:`BoundBreakdown` or a plain price.  A baseline with
    a different segment count is compared through its highest price.
    """
    if curve.side != baseline.side:
        raise ModelError(f"side mismatch: {curve.side.value} vs {baseline.side.value}")
    limit = bound.bound if isinstance(bound, BoundBreakdown) else float(bound)
    if baseline.prices.size == curve.prices.size:
        ref = baseline.prices.astype(float)
    else:
        top = float(baseline.prices.max()) if baseline.prices.size else 0.0
        ref = np.full(curve.prices.size, top)
    return WithholdingReport(curve.period, curve.side.value, curve.prices.astype(float), ref, limit)


def reports_to_csv(path, reports: Sequence[WithholdingReport]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "side", "segment", "submitted", "baseline", "bound",
                    "above_baseline", "above_bound"])
        for r in reports:
            for k in range(r.submitted.size):
                w.writerow([r.period, r.side, k + 1, f"{r.submitted[k]:.10g}",
                            f"{r.baseline[k]:.10g}", f"{r.bound:.10g}",
                            int(r.above_baseline[k]), int(r.above_bound[k])])


def reports_to_json(path, reports: Sequence[WithholdingReport]):
    with open(path, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=2)


def bounds_to_csv(path, breakdowns: Sequence[BoundBreakdown]):
    """One row per bidding period: ``alpha``/``beta`` of the following period and the bound."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "alpha", "beta", "bound"])
        for b in breakdowns:
            a = float(b.alpha[0]) if b.alpha.size else float("nan")
            w.writerow([b.t, f"{a:.10g}", f"{1 - a:.10g}", f"{b.bound:.10g}"])
