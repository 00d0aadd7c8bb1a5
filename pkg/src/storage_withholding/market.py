"""Single-bus two-stage market: priority-list commitment and real-time clearing.

Real-time clearing is exact.  Every participant contributes a monotone
quantity-versus-price response made of steps (block offers and bids) and
ramps (quadratic generators), so the excess supply is piecewise linear in
price and the clearing price is found by locating the breakpoint interval
that contains the demand.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .bids import DEFAULT_SEGMENTS, charge_bids, discharge_bids
from .core import (
    BidCurve,
    InfeasibleError,
    ModelError,
    PriceBounds,
    PriceDistribution,
    Side,
    StorageSpec,
    ValueFunction,
)
from .value import ValueSeries, backward_induction, default_end_value, optimal_action

log = logging.getLogger(__name__)

DEFAULT_RTM_BOUNDS = PriceBounds(-1000.0, 10000.0)
RESERVE_FRACTION = 0.2


@dataclass(frozen=True)
class GeneratorSpec:
    """Thermal unit with quadratic cost ``a g^2 + b g`` ($/h) plus no-load cost when on."""

    gmin: float
    gmax: float
    a: float = 0.0
    b: float = 0.0
    ramp: float = math.inf
    min_up: int = 1
    min_down: int = 1
    no_load: float = 0.0
    startup: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not 0 <= self.gmin <= self.gmax:
            raise ModelError(f"generator {self.name!r}: need 0 <= Gmin <= Gmax, got {self.gmin}, {self.gmax}")
        if self.a < 0:
            raise ModelError(f"generator {self.name!r}: quadratic coefficient must be >= 0")
        if self.ramp <= 0:
            raise ModelError(f"generator {self.name!r}: ramp rate must be positive")
        if self.min_up < 1 or self.min_down < 1:
            raise ModelError(f"generator {self.name!r}: minimum up/down times must be >= 1")

    def cost(self, g, on=True):
        g = np.asarray(g, dtype=float)
        return self.a * g ** 2 + self.b * g + (self.no_load if on else 0.0)

    def marginal_cost(self, g):
        return self.b + 2.0 * self.a * np.asarray(g, dtype=float)

    @property
    def priority_cost(self) -> float:
        """Average cost at full output, the commitment ranking key."""
        if math.isinf(self.gmax) or self.gmax == 0:
            return self.b
        return float(self.cost(self.gmax)) / self.gmax

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("name", "gmin", "gmax", "a", "b", "ramp",
                                           "min_up", "min_down", "no_load", "startup")}
        if math.isinf(d["ramp"]):
            d["ramp"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        if d.get("ramp") is None:
            d.pop("ramp", None)
        return cls(**d)


@dataclass(frozen=True)
class Scenario:
    """One operating day on a single bus."""

    load: np.ndarray
    generators: tuple
    wind_forecast: Optional[np.ndarray] = None
    wind_capacity: Optional[np.ndarray] = None
    storage_units: int = 0
    storage_in_dam: bool = False
    bounds: PriceBounds = DEFAULT_RTM_BOUNDS
    name: str = ""

    def __post_init__(self):
        load = np.asarray(self.load, dtype=float)
        if load.ndim != 1 or load.size == 0:
            raise ModelError("load path must be a non-empty 1-D sequence")
        if np.any(load < 0):
            raise ModelError("load must be non-negative")
        object.__setattr__(self, "load", load)
        object.__setattr__(self, "generators", tuple(self.generators))
        wf = np.zeros_like(load) if self.wind_forecast is None else np.asarray(self.wind_forecast, float)
        wc = wf.copy() if self.wind_capacity is None else np.asarray(self.wind_capacity, float)
        for nm, arr in (("wind forecast", wf), ("wind capacity", wc)):
            if arr.shape != load.shape:
                raise ModelError(f"{nm} has {arr.size} periods, load has {load.size}")
            if np.any(arr < 0):
                raise ModelError(f"{nm} must be non-negative")
        object.__setattr__(self, "wind_forecast", wf)
        object.__setattr__(self, "wind_capacity", wc)
        if self.storage_units < 0:
            raise ModelError("storage fleet size must be >= 0")

    @property
    def horizon(self) -> int:
        return self.load.size

    @property
    def net_load(self) -> np.ndarray:
        return np.maximum(self.load - self.wind_forecast, 0.0)

    def with_storage(self, units: int) -> "Scenario":
        return Scenario(self.load, self.generators, self.wind_forecast, self.wind_capacity,
                        units, self.storage_in_dam, self.bounds, self.name)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "load": self.load.tolist(),
            "wind_forecast": self.wind_forecast.tolist(),
            "wind_capacity": self.wind_capacity.tolist(),
            "generators": [g.to_dict() for g in self.generators],
            "storage_units": self.storage_units,
            "storage_in_dam": self.storage_in_dam,
            "bounds": {"floor": self.bounds.floor, "cap": self.bounds.cap},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        b = d.get("bounds")
        bounds = PriceBounds(b["floor"], b["cap"]) if b else DEFAULT_RTM_BOUNDS
        return cls(np.asarray(d["load"], float),
                   tuple(GeneratorSpec.from_dict(g) for g in d["generators"]),
                   d.get("wind_forecast"), d.get("wind_capacity"),
                   int(d.get("storage_units", 0)), bool(d.get("storage_in_dam", False)),
                   bounds, d.get("name", ""))


# ---------------------------------------------------------------- supply curves

@dataclass
class SupplyCurve:
    """Monotone price response of generators, wind and storage.

    Steps supply ``width`` MW once the price exceeds ``price`` (anything in
    between at equality); ramps move linearly from ``q0`` at ``p0`` to ``q1``
    at ``p1``.  ``base`` is supplied at every price.  Demand-side bids enter as
    negative base plus steps that release the bid as price rises.
    """

    base: float = 0.0
    step_price: list = field(default_factory=list)
    step_width: list = field(default_factory=list)
    step_owner: list = field(default_factory=list)
    ramp: list = field(default_factory=list)  # (p0, p1, q0, q1, owner)
    owners: list = field(default_factory=list)
    fixed: dict = field(default_factory=dict)  # owner -> quantity supplied at every price

    def _owner(self, key) -> int:
        self.owners.append(key)
        return len(self.owners) - 1

    def add_generator(self, gen: GeneratorSpec, lo: float, hi: float, key=None):
        o = self._owner(key if key is not None else ("gen", gen.name))
        if hi < lo - 1e-9:
            raise ModelError(f"generator {gen.name!r}: empty output window [{lo}, {hi}]")
        hi = max(hi, lo)
        if gen.a > 0 and hi > lo:
            self.ramp.append((gen.b + 2 * gen.a * lo, gen.b + 2 * gen.a * hi, lo, hi, o))
        else:
            self.base += lo
            self._base_owner(o, lo)
            if hi > lo:
                self._step(gen.b, hi - lo, o)
        return o

    def _base_owner(self, o, q):
        self.fixed[o] = self.fixed.get(o, 0.0) + q

    def _step(self, price, width, owner):
        self.step_price.append(float(price))
        self.step_width.append(float(width))
        self.step_owner.append(owner)

    def add_offer(self, price: float, quantity: float, key):
        """Block supply at ``price``."""
        o = self._owner(key)
        if quantity > 0:
            self._step(price, quantity, o)
        return o

    def add_bid(self, curve: BidCurve, key):
        """Demand staircase: each segment is bought while price is below its bid."""
        o = self._owner(key)
        total = float(curve.quantities.sum())
        self.base -= total
        self._base_owner(o, -total)
        for q, pr in zip(curve.quantities, curve.prices):
            if q > 0:
                self._step(pr, q, o)
        return o

    def add_offer_curve(self, curve: BidCurve, key):
        o = self._owner(key)
        for q, pr in zip(curve.quantities, curve.prices):
            if q > 0:
                self._step(pr, q, o)
        return o

    # evaluation
    def _arrays(self):
        sp = np.asarray(self.step_price, float)
        sw = np.asarray(self.step_width, float)
        r = np.asarray([x[:4] for x in self.ramp], float).reshape(-1, 4)
        return sp, sw, r

    @staticmethod
    def _ramp_q(r, lam):
        p0, p1, q0, q1 = r.T
        span = np.where(p1 > p0, p1 - p0, 1.0)
        frac = np.clip((lam - p0) / span, 0.0, 1.0)
        return q0 + (q1 - q0) * frac

    def quantity_bounds(self, lam):
        """``(S_min, S_max)``: left and right limits of supply at ``lam`` (scalar or array)."""
        sp, sw, r = self._arrays()
        lam_arr = np.atleast_1d(np.asarray(lam, dtype=float))
        ramp = np.zeros(lam_arr.size)
        if r.size:
            p0, p1, q0, q1 = r.T
            span = np.where(p1 > p0, p1 - p0, 1.0)
            frac = np.clip((lam_arr[:, None] - p0) / span, 0.0, 1.0)
            ramp = (q0 + (q1 - q0) * frac).sum(axis=1)
        below = (sp[None, :] < lam_arr[:, None]) @ sw
        at_or_below = (sp[None, :] <= lam_arr[:, None]) @ sw
        lo = self.base + below + ramp
        hi = self.base + at_or_below + ramp
        if np.ndim(lam) == 0:
            return float(lo[0]), float(hi[0])
        return lo, hi

    def quantity(self, lam: float) -> float:
        return self.quantity_bounds(lam)[1]

    def price_at(self, q: float) -> float:
        """Inverse supply (marginal cost) at aggregate quantity ``q``."""
        lam, status = _solve(self, q, PriceBounds(-1e12, 1e12))
        if status == "scarcity":
            return math.inf
        return -math.inf if status == "oversupply" else lam

    def candidates(self, bounds: PriceBounds) -> np.ndarray:
        sp, _, r = self._arrays()
        pts = np.concatenate([sp, r[:, 0], r[:, 1], [bounds.floor, bounds.cap]])
        return np.unique(np.clip(pts, bounds.floor, bounds.cap))

    def dispatch(self, lam: float, demand: float) -> np.ndarray:
        """Per-owner quantity at price ``lam``; ties at ``lam`` share the residual pro rata."""
        sp, sw, r = self._arrays()
        out = np.zeros(len(self.owners))
        for o, q in self.fixed.items():
            out[o] += q
        if r.size:
            rq = self._ramp_q(r, lam)
            for (row, q) in zip(self.ramp, rq):
                out[row[4]] += q
        lo, hi = self.quantity_bounds(lam)
        tie = sp == lam
        frac = 0.0
        if hi > lo:
            frac = float(np.clip((demand - lo) / (hi - lo), 0.0, 1.0))
        for k, o in enumerate(self.step_owner):
            if sp[k] < lam:
                out[o] += sw[k]
            elif tie[k]:
                out[o] += frac * sw[k]
        return out


def _solve(curve: SupplyCurve, demand: float, bounds: PriceBounds):
    """Clearing price ``sup{lam : S_min(lam) <= demand}`` within ``bounds``.

    Returns ``(price, status)`` with status ``"ok"``, ``"scarcity"`` or
    ``"oversupply"``.
    """
    cand = curve.candidates(bounds)
    smin, smax = curve.quantity_bounds(cand)
    tol = 1e-12 * max(1.0, abs(demand))
    ok = np.nonzero(smin <= demand + tol)[0]
    if ok.size == 0:
        return bounds.floor, "oversupply"
    i = ok[-1]
    if smax[i] >= demand - tol:
        return float(cand[i]), "ok"
    if i == cand.size - 1:
        return bounds.cap, "scarcity"
    a, b = cand[i], cand[i + 1]
    # supply is affine on the open interval between consecutive candidates
    lam = a + (demand - smax[i]) * (b - a) / (smin[i + 1] - smax[i])
    return float(min(max(lam, a), b)), "ok"


def aggregate_supply(generators: Sequence[GeneratorSpec], lo: Sequence[float],
                     hi: Sequence[float]) -> SupplyCurve:
    """Horizontal sum of committed generators over their output windows ``[lo, hi]``."""
    curve = SupplyCurve()
    for i, g in enumerate(generators):
        if hi[i] > 0 or lo[i] > 0:
            curve.add_generator(g, lo[i], hi[i], key=("gen", i))
    return curve


def output_window(gen: GeneratorSpec, on: bool, was_on: bool, g_prev: Optional[float],
                  stopping: bool = False):
    """Feasible ``[lo, hi]`` given status and ramp limits around ``g_prev``."""
    if not on:
        return 0.0, 0.0
    lo, hi = gen.gmin, gen.gmax
    if not was_on:
        hi = min(hi, max(gen.gmin, gen.ramp))
    elif g_prev is not None:
        lo = max(lo, g_prev - gen.ramp)
        hi = min(hi, g_prev + gen.ramp)
    if stopping:
        hi = min(hi, max(gen.gmin, gen.ramp))
    return lo, max(lo, hi)


# ---------------------------------------------------------------- real-time clearing

@dataclass
class ClearingResult:
    period: int
    price: float
    generation: np.ndarray
    wind: float
    discharge: float
    charge: float
    demand: float
    units: int
    system_cost: float
    soc: float = float("nan")
    shed: float = 0.0
    dumped: float = 0.0
    status: str = "ok"

    @property
    def balance_residual(self) -> float:
        supply = self.generation.sum() + self.wind + self.units * (self.discharge - self.charge) + self.shed
        return float(supply - self.dumped - self.demand)

    def to_row(self) -> dict:
        return {
            "period": self.period, "price": self.price, "generation": float(self.generation.sum()),
            "wind": self.wind, "discharge_per_unit": self.discharge, "charge_per_unit": self.charge,
            "demand": self.demand, "soc": self.soc, "system_cost": self.system_cost,
            "shed": self.shed, "dumped": self.dumped, "status": self.status,
        }


def clear_rtm(supply: SupplyCurve | Sequence[GeneratorSpec], storage_offers: Sequence[BidCurve] = (),
              storage_bids: Sequence[BidCurve] = (), net_demand: float = 0.0,
              bounds: PriceBounds = DEFAULT_RTM_BOUNDS, wind: float = 0.0, units: int = 1,
              generators: Optional[Sequence[GeneratorSpec]] = None, period: int = 0,
              spec: Optional[StorageSpec] = None, step: float = 1.0) -> ClearingResult:
    """Clear one real-time period.

    ``supply`` is a curve built by :func:`aggregate_supply` (pass the matching
    ``generators`` to get costs) or a list of generators, each available over
    ``[gmin, gmax]``.  Storage curves are per unit and scaled by ``units``;
    with several curves per side each is treated as one unit.  ``net_demand``
    is the load to serve; ``wind`` is zero-price supply that may be curtailed.
    Demand beyond all supply is shed at the cap; surplus that cannot be
    backed down is dumped at the floor.
    """
    if not math.isfinite(net_demand):
        raise ModelError(f"demand must be finite, got {net_demand}")
    if not isinstance(supply, SupplyCurve):
        generators = list(supply)
        supply = aggregate_supply(generators, [g.gmin for g in generators], [g.gmax for g in generators])
    curve = SupplyCurve(supply.base, list(supply.step_price), list(supply.step_width),
                        list(supply.step_owner), list(supply.ramp), list(supply.owners),
                        dict(supply.fixed))
    n_off = len(storage_offers)
    n_bid = len(storage_bids)
    scale_o = units if n_off <= 1 else 1
    scale_b = units if n_bid <= 1 else 1
    off_ids = [curve.add_offer_curve(c.scaled(scale_o), ("dis", k)) for k, c in enumerate(storage_offers)]
    bid_ids = [curve.add_bid(c.scaled(scale_b), ("chg", k)) for k, c in enumerate(storage_bids)]
    w_id = curve.add_offer(0.0, wind, ("wind",))
    shed_id = curve.add_offer(bounds.cap, max(net_demand, 0.0) + 1.0, ("shed",))
    # charge bids can make supply at the floor negative; the dump only needs to absorb a surplus
    surplus = max(float(curve.quantity_bounds(bounds.floor)[1]), 0.0)
    dump = BidCurve(Side.CHARGE, np.array([surplus + abs(net_demand) + 1.0]), np.array([bounds.floor]))
    dump_id = curve.add_bid(dump, ("dump",))
    lam, status = _solve(curve, net_demand, bounds)
    q = curve.dispatch(lam, net_demand)
    gen_q = np.zeros(0)
    committed = set()
    if generators is not None:
        gen_q = np.zeros(len(generators))
        for o, key in enumerate(curve.owners):
            if key and key[0] == "gen":
                gen_q[key[1]] += q[o]
                committed.add(key[1])
    dis = sum(q[o] for o in off_ids)
    chg = -sum(q[o] for o in bid_ids)
    shed = q[shed_id]
    dumped = -q[dump_id]
    if shed > 1e-9:
        status = "scarcity"
    elif dumped > 1e-9:
        status = "oversupply"
    n = units if units > 0 else 1
    p_u, b_u = dis / n, chg / n
    # a unit never charges and discharges at once: net the two sides
    net = p_u - b_u
    p_u, b_u = max(net, 0.0), max(-net, 0.0)
    cost = 0.0
    if generators is not None:
        cost = sum(float(g.cost(gen_q[i], on=i in committed)) for i, g in enumerate(generators))
    if spec is not None:
        cost += spec.discharge_cost * p_u * units
        step = spec.step
    return ClearingResult(period, lam, gen_q, float(q[w_id]), p_u, b_u, float(net_demand), units,
                          cost * step, shed=float(shed), dumped=float(dumped), status=status)


# ---------------------------------------------------------------- day-ahead commitment

@dataclass
class CommitmentSchedule:
    """Day-ahead status, dispatch, reserve and prices (arrays are ``[unit, period]``)."""

    u: np.ndarray
    y: np.ndarray
    z: np.ndarray
    dispatch: np.ndarray
    reserve: np.ndarray
    da_price: np.ndarray
    net_load: np.ndarray
    cost: float
    lower_bound: float
    storage_schedule: Optional[np.ndarray] = None

    @property
    def gap(self) -> float:
        return self.cost - self.lower_bound

    def violations(self, generators: Sequence[GeneratorSpec], wind_forecast: np.ndarray,
                   tol: float = 1e-6) -> List[str]:
        """Logic, min-time, capacity, ramp and reserve checks; empty when all hold."""
        bad = []
        n, T = self.u.shape
        prev = np.zeros(n, dtype=bool)
        for t in range(T):
            d = self.u[:, t].astype(int) - prev.astype(int)
            if np.any(self.y[:, t].astype(int) - self.z[:, t].astype(int) != d):
                bad.append(f"period {t + 1}: start/stop logic")
            if np.any(self.y[:, t] & self.z[:, t]):
                bad.append(f"period {t + 1}: simultaneous start and stop")
            prev = self.u[:, t]
        for i, g in enumerate(generators):
            runs = _runs(self.u[i])
            for k, (val, start, length) in enumerate(runs):
                interior = start > 0 and start + length < T
                if val and length < g.min_up and start + length < T:
                    bad.append(f"unit {i}: on-run of {length} < min up {g.min_up} at period {start + 1}")
                if not val and interior and length < g.min_down:
                    bad.append(f"unit {i}: off-run of {length} < min down {g.min_down} at period {start + 1}")
            gi = self.dispatch[i]
            on = self.u[i]
            if np.any(gi > g.gmax * on + tol) or np.any(gi < g.gmin * on - tol):
                bad.append(f"unit {i}: dispatch outside [Gmin, Gmax]")
            both = on[1:] & on[:-1]
            if np.any(np.abs(np.diff(gi))[both] > g.ramp + tol):
                bad.append(f"unit {i}: ramp limit exceeded")
            if np.any(self.reserve[i] > np.minimum(g.gmax * on - gi, g.ramp) + tol):
                bad.append(f"unit {i}: reserve above headroom")
        if np.any(self.reserve.sum(axis=0) < RESERVE_FRACTION * wind_forecast - tol):
            bad.append("reserve requirement not met")
        return bad

    def to_dict(self) -> dict:
        return {"u": self.u.astype(int).tolist(), "dispatch": self.dispatch.tolist(),
                "reserve": self.reserve.tolist(), "da_price": self.da_price.tolist(),
                "cost": self.cost, "lower_bound": self.lower_bound, "gap": self.gap}


def _runs(row):
    out, start = [], 0
    for t in range(1, len(row) + 1):
        if t == len(row) or row[t] != row[start]:
            out.append((bool(row[start]), start, t - start))
            start = t
    return out


def _repair_min_times(u: np.ndarray, generators: Sequence[GeneratorSpec]) -> np.ndarray:
    """Extend short on-runs and fill short interior off-runs until stable."""
    u = u.copy()
    T = u.shape[1]
    for i, g in enumerate(generators):
        for _ in range(4 * T):
            changed = False
            for val, start, length in _runs(u[i]):
                if val and length < g.min_up and start + length < T:
                    u[i, start:min(T, start + g.min_up)] = True
                    changed = True
                    break
                if not val and 0 < start and start + length < T and length < g.min_down:
                    u[i, start:start + length] = True
                    changed = True
                    break
            if not changed:
                break
    return u


def _economic_dispatch(generators, u, demand, reserve_need):
    """Sequential per-period dispatch honoring ramps; returns dispatch, prices, reserve, short periods."""
    n, T = u.shape
    g = np.zeros((n, T))
    price = np.zeros(T)
    reserve = np.zeros((n, T))
    short = []
    prev = None
    for t in range(T):
        lo, hi = np.zeros(n), np.zeros(n)
        for i, gen in enumerate(generators):
            was_on = bool(u[i, t - 1]) if t > 0 else bool(u[i, t])
            stopping = t + 1 < T and not u[i, t + 1]
            lo[i], hi[i] = output_window(gen, bool(u[i, t]), was_on,
                                         None if prev is None else prev[i], stopping)
        if hi.sum() < demand[t] - 1e-9:
            short.append(t)
        # output below the committed minimum is not possible: wind is curtailed instead
        target = min(max(demand[t], lo.sum()), hi.sum())
        curve = aggregate_supply(generators, lo, hi)
        res = clear_rtm(curve, net_demand=target, bounds=PriceBounds(-1e6, 1e6),
                        generators=generators)
        g[:, t] = res.generation
        price[t] = res.price
        for i, gen in enumerate(generators):
            if u[i, t]:
                reserve[i, t] = max(0.0, min(hi[i] - g[i, t], gen.ramp, gen.gmax - g[i, t]))
        if reserve[:, t].sum() < reserve_need[t] - 1e-9:
            short.append(t)
        prev = g[:, t]
    return g, price, reserve, sorted(set(short))


def _schedule_cost(generators, u, g, y) -> float:
    total = 0.0
    for i, gen in enumerate(generators):
        on = u[i].astype(bool)
        total += float(np.sum(gen.cost(g[i][on]))) + gen.startup * float(y[i].sum())
    return total


def _relaxed_cost(generators, demand) -> float:
    """Cost lower bound: all units available from zero, no fixed costs or time limits."""
    total = 0.0
    for d in demand:
        curve = aggregate_supply(generators, [0.0] * len(generators), [x.gmax for x in generators])
        res = clear_rtm(curve, net_demand=d, bounds=PriceBounds(-1e6, 1e6), generators=generators)
        total += sum(float(gen.a * x * x + gen.b * x) for gen, x in zip(generators, res.generation))
    return total


def commit_dam(scenario: Scenario, spec: Optional[StorageSpec] = None,
               end_value: Optional[ValueFunction] = None) -> CommitmentSchedule:
    """Priority-list unit commitment and dispatch against the day-ahead net load.

    Units are ranked by average cost at full output and committed in order
    until capacity covers net load plus a reserve of 20% of forecast wind.
    Short on-runs and off-runs are repaired, then the fleet is dispatched
    period by period within ramp windows; periods still short of energy or
    reserve get the next unit in the list and the loop repeats.  With
    ``storage_in_dam`` and a ``spec`` the storage fleet is scheduled once
    against the resulting prices and the fleet is re-dispatched.
    """
    gens = list(scenario.generators)
    if not gens:
        raise InfeasibleError("no generators in the fleet")
    T, n = scenario.horizon, len(gens)
    demand = scenario.net_load.copy()
    need = RESERVE_FRACTION * scenario.wind_forecast
    order = sorted(range(n), key=lambda i: (gens[i].priority_cost, i))
    caps = np.array([gens[i].gmax for i in order])
    if caps.sum() < (demand + need).max() - 1e-9:
        short = np.nonzero(caps.sum() < demand + need - 1e-9)[0]
        raise InfeasibleError(f"fleet capacity {caps.sum():.6g} MW below net load plus reserve in "
                              f"periods {[int(t) + 1 for t in short]}")
    depth = np.zeros(T, dtype=int)
    for t in range(T):
        depth[t] = int(np.searchsorted(np.cumsum(caps), demand[t] + need[t] - 1e-9) + 1)
    depth = np.minimum(depth, n)
    storage_sched = None
    for _ in range(2 if scenario.storage_in_dam and spec is not None and scenario.storage_units else 1):
        for _attempt in range(n * T + 1):
            u = np.zeros((n, T), dtype=bool)
            for t in range(T):
                u[order[:depth[t]], t] = True
            u = _repair_min_times(u, gens)
            g, price, reserve, short = _economic_dispatch(gens, u, demand, need)
            if not short:
                break
            grown = False
            for t in short:
                if depth[t] < n:
                    depth[t] += 1
                    grown = True
            if not grown:
                raise InfeasibleError(f"no commitment covers energy and reserve in periods "
                                      f"{[t + 1 for t in short]}")
        if scenario.storage_in_dam and spec is not None and scenario.storage_units and storage_sched is None:
            storage_sched = _da_storage_schedule(price, spec, end_value) * scenario.storage_units
            demand = np.maximum(scenario.net_load - storage_sched, 0.0)
    u_prev = np.concatenate([np.zeros((n, 1), dtype=bool), u[:, :-1]], axis=1)
    y = u & ~u_prev
    z = ~u & u_prev
    cost = _schedule_cost(gens, u, g, y)
    lb = _relaxed_cost(gens, demand)
    log.info("commitment heuristic cost %.2f, relaxed lower bound %.2f, gap %.2f", cost, lb, cost - lb)
    return CommitmentSchedule(u, y, z, g, reserve, price, demand, cost, lb, storage_sched)


def _da_storage_schedule(prices, spec: StorageSpec, end_value=None) -> np.ndarray:
    """Net injection per unit when following day-ahead prices with perfect foresight."""
    fc = [PriceDistribution.point_mass(p) for p in prices]
    ev = end_value if end_value is not None else ValueFunction.linear(0.0, spec.energy, 401)
    series = backward_induction(ev, fc, spec)
    soc, out = 0.0, np.zeros(len(prices))
    for t, lam in enumerate(prices, start=1):
        soc, p, b = optimal_action(series[t], soc, lam, spec)
        out[t - 1] = p - b
    return out


# ---------------------------------------------------------------- day simulation

def forecasts_from_prices(prices: Sequence[float], sigma, bounds: Optional[PriceBounds] = None,
                          kind: str = "gaussian") -> list:
    """Per-period forecasts centered on ``prices`` with spread ``sigma`` (scalar or per period)."""
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (len(prices),))
    out = []
    for mu, s in zip(prices, sig):
        if s == 0:
            out.append(PriceDistribution.point_mass(float(mu)))
        elif kind == "gaussian":
            out.append(PriceDistribution.gaussian(float(mu), float(s), bounds))
        elif kind == "bounded_uniform":
            out.append(PriceDistribution.bounded_uniform(float(mu), float(s), bounds))
        else:
            raise ModelError(f"unsupported forecast family {kind!r}")
    return out


@dataclass
class DayResult:
    periods: list
    schedule: CommitmentSchedule
    system_cost: float
    storage_profit: float
    soc_path: np.ndarray
    seed: int

    @property
    def prices(self) -> np.ndarray:
        return np.array([r.price for r in self.periods])

    def to_csv(self, path):
        rows = [r.to_row() for r in self.periods]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow(r)

    def totals(self) -> dict:
        return {"system_cost": self.system_cost, "storage_profit": self.storage_profit,
                "seed": self.seed, "commitment_cost": self.schedule.cost,
                "commitment_gap": self.schedule.gap,
                "scarcity_periods": [r.period for r in self.periods if r.status == "scarcity"]}

    def totals_to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.totals(), fh, indent=2)


def realize(scenario: Scenario, seed: int, demand_sigma: float = 0.0,
            wind_sigma: float = 0.0):
    """Seeded realized load and wind capacity.

    Load deviates by a Gaussian with standard deviation ``demand_sigma`` MW;
    wind capacity deviates in proportion to the forecast with relative spread
    ``wind_sigma``.  Both are truncated at zero.
    """
    rng = np.random.default_rng(seed)
    T = scenario.horizon
    load = np.maximum(scenario.load + demand_sigma * rng.standard_normal(T), 0.0)
    wind = np.maximum(scenario.wind_capacity * (1.0 + wind_sigma * rng.standard_normal(T)), 0.0)
    return load, wind


def simulate_day(scenario: Scenario, forecasts: Optional[Sequence[PriceDistribution]],
                 spec: StorageSpec, seed: int = 0, demand_sigma: float = 0.0,
                 wind_sigma: float = 0.0, forecast_sigma: float = 0.0, K: int = DEFAULT_SEGMENTS,
                 end_value: Optional[ValueFunction] = None, series: Optional[ValueSeries] = None,
                 schedule: Optional[CommitmentSchedule] = None, e0: float = 0.0,
                 realized: Optional[tuple] = None) -> DayResult:
    """Commit, then clear every real-time period with storage bidding from its value functions.

    When ``forecasts`` is None they are Gaussians centered on the day-ahead
    prices with spread ``forecast_sigma``.  ``series``, ``schedule`` and
    ``realized`` (load, wind) may be passed to reuse work across runs.
    """
    T = scenario.horizon
    sched = schedule if schedule is not None else commit_dam(scenario, spec, end_value)
    N = scenario.storage_units
    if N and series is None:
        if forecasts is None:
            forecasts = forecasts_from_prices(sched.da_price, forecast_sigma, None)
        if len(forecasts) != T:
            raise ModelError(f"{len(forecasts)} forecasts for a {T}-period day")
        ev = end_value if end_value is not None else default_end_value(spec)
        series = backward_induction(ev, forecasts, spec)
    load, wind = realized if realized is not None else realize(scenario, seed, demand_sigma, wind_sigma)
    gens = list(scenario.generators)
    soc = e0
    soc_path = [soc]
    results = []
    prev = None
    for t in range(T):
        try:
            lo, hi = np.zeros(len(gens)), np.zeros(len(gens))
            for i, gen in enumerate(gens):
                on = bool(sched.u[i, t])
                was_on = bool(sched.u[i, t - 1]) if t > 0 else on
                lo[i], hi[i] = output_window(gen, on, was_on, None if prev is None else prev[i])
            curve = aggregate_supply(gens, lo, hi)
            offers, bids = [], []
            if N:
                vf = series[t + 1]
                offers = [discharge_bids(vf, soc, spec, K, t + 1)]
                bids = [charge_bids(vf, soc, spec, K, t + 1)]
            res = clear_rtm(curve, offers, bids, float(load[t]), scenario.bounds, float(wind[t]),
                            max(N, 1), gens, t + 1, spec if N else None, spec.step)
        except (ModelError, InfeasibleError) as exc:
            raise type(exc)(f"period {t + 1}: {exc}") from exc
        if not N:
            res.discharge = res.charge = 0.0
            res.units = 0
        soc = soc + (-res.discharge / spec.efficiency + res.charge * spec.efficiency) * spec.step
        if -1e-9 < soc < 0.0 or spec.energy < soc < spec.energy + 1e-9:
            soc = min(max(soc, 0.0), spec.energy)  # round-off at the limits
        res.soc = soc
        soc_path.append(soc)
        results.append(res)
        prev = res.generation
    system_cost = sum(r.system_cost for r in results)
    profit = sum(N * (r.price * (r.discharge - r.charge) - spec.discharge_cost * r.discharge) * spec.step
                 for r in results)
    return DayResult(results, sched, system_cost, profit, np.array(soc_path), seed)
