"""Shared domain types: storage parameters, price distributions, value functions
and bid curves.

Units throughout: prices in $/MWh, energy in MWh, power in MW, time in hours.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats


class ModelError(ValueError):
    """Parameters violate a type invariant or an operation precondition."""


class InfeasibleError(RuntimeError):
    """A construction or a market problem has no feasible solution."""


class NumericalError(RuntimeError):
    """A numerical procedure failed to reach its stated tolerance."""


@dataclass(frozen=True)
class StorageSpec:
    """Physical battery parameters.

    Parameters
    ----------
    power : float
        Charge/discharge power limit P (MW).
    energy : float
        Energy capacity E (MWh).
    efficiency : float
        One-way efficiency eta in (0, 1].
    discharge_cost : float
        Marginal physical discharge cost c ($/MWh).
    step : float
        Period length tau (hours).
    """

    power: float
    energy: float
    efficiency: float = 0.9
    discharge_cost: float = 25.0
    step: float = 1.0

    def __post_init__(self):
        if not self.power > 0:
            raise ModelError(f"power must be > 0, got {self.power}")
        if not self.energy > 0:
            raise ModelError(f"energy must be > 0, got {self.energy}")
        if not 0 < self.efficiency <= 1:
            raise ModelError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if not self.step > 0:
            raise ModelError(f"step must be > 0, got {self.step}")
        if not self.discharge_cost >= 0:
            raise ModelError(f"discharge_cost must be >= 0, got {self.discharge_cost}")

    @property
    def charge_increment(self) -> float:
        """SoC gained by one full-power charging period, tau * P * eta."""
        return self.step * self.power * self.efficiency

    @property
    def discharge_decrement(self) -> float:
        """SoC removed by one full-power discharging period, tau * P / eta."""
        return self.step * self.power / self.efficiency


@dataclass(frozen=True)
class PriceBounds:
    floor: float
    cap: float

    def __post_init__(self):
        if not self.floor < self.cap:
            raise ModelError(f"price floor {self.floor} must be below cap {self.cap}")

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all((x >= self.floor - tol) & (x <= self.cap + tol)))


class DistKind(str, Enum):
    POINT_MASS = "point_mass"
    GAUSSIAN = "gaussian"
    BOUNDED_UNIFORM = "bounded_uniform"
    TWO_POINT = "two_point"
    EMPIRICAL = "empirical"


_MEAN_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class PriceDistribution:
    """One-period real-time price forecast.

    ``mu`` and ``sigma`` are the nominal location/scale of the family.  For
    truncated kinds the actual mean differs from ``mu``; use :func:`mean_of`.
    Build instances through the classmethods, which check the invariants.
    """

    kind: DistKind
    mu: float
    sigma: float = 0.0
    high: float = float("nan")
    low: float = float("nan")
    alpha: float = float("nan")
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    bounds: Optional[PriceBounds] = None

    # -- constructors -----------------------------------------------------
    @classmethod
    def point_mass(cls, mu: float) -> "PriceDistribution":
        if not np.isfinite(mu):
            raise ModelError("point mass location must be finite")
        return cls(DistKind.POINT_MASS, float(mu))

    @classmethod
    def gaussian(cls, mu: float, sigma: float, bounds: Optional[PriceBounds] = None):
        if sigma < 0 or not np.isfinite(sigma):
            raise ModelError(f"sigma must be finite and >= 0, got {sigma}")
        dist = cls(DistKind.GAUSSIAN, float(mu), float(sigma))
        return truncate_normalize(dist, bounds) if bounds is not None else dist

    @classmethod
    def bounded_uniform(cls, mu: float, sigma: float, bounds: Optional[PriceBounds] = None):
        """Uniform law with mean ``mu`` and standard deviation ``sigma``,
        i.e. support ``mu +/- sqrt(3) sigma``, optionally truncated to ``bounds``."""
        if sigma < 0 or not np.isfinite(sigma):
            raise ModelError(f"sigma must be finite and >= 0, got {sigma}")
        dist = cls(DistKind.BOUNDED_UNIFORM, float(mu), float(sigma))
        return truncate_normalize(dist, bounds) if bounds is not None else dist

    @classmethod
    def two_point(cls, high: float, low: float, alpha: float, mu: Optional[float] = None):
        """Spike law: ``high`` with probability ``alpha``, ``low`` otherwise."""
        if not 0 < alpha < 1:
            raise ModelError(f"alpha must lie in (0, 1), got {alpha}")
        implied = alpha * high + (1 - alpha) * low
        if mu is None:
            mu = implied
        elif abs(implied - mu) > _MEAN_RTOL * max(1.0, abs(high), abs(low)):
            raise ModelError(f"alpha*high + (1-alpha)*low = {implied} does not match mu = {mu}")
        if not high >= mu >= low:
            raise ModelError(f"need high >= mu >= low, got {high}, {mu}, {low}")
        sigma = (high - low) * np.sqrt(alpha * (1 - alpha))
        return cls(DistKind.TWO_POINT, float(mu), float(sigma), float(high), float(low), float(alpha))

    @classmethod
    def empirical(cls, samples: Sequence[float], bounds: Optional[PriceBounds] = None):
        arr = np.sort(np.asarray(samples, dtype=float).ravel())
        if arr.size == 0:
            raise ModelError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise ModelError("empirical samples must be finite")
        if bounds is not None and not bounds.contains(arr):
            raise ModelError("empirical samples fall outside the price bounds")
        arr.setflags(write=False)
        return cls(DistKind.EMPIRICAL, float(arr.mean()), float(arr.std()), samples=arr, bounds=bounds)

    # -- helpers ----------------------------------------------------------
    @property
    def is_bounded(self) -> bool:
        return self.bounds is not None

    @property
    def is_discrete(self) -> bool:
        return (
            self.kind in (DistKind.POINT_MASS, DistKind.TWO_POINT, DistKind.EMPIRICAL)
            or self.sigma == 0.0
        )

    def _window(self):
        """Continuous support [lo, hi] after truncation (continuous kinds only)."""
        if self.kind == DistKind.GAUSSIAN:
            lo, hi = -np.inf, np.inf
        else:
            half = np.sqrt(3.0) * self.sigma
            lo, hi = self.mu - half, self.mu + half
        if self.bounds is not None:
            lo, hi = max(lo, self.bounds.floor), min(hi, self.bounds.cap)
        return lo, hi

    def atoms(self):
        """(points, probabilities) for discrete kinds."""
        if self.kind == DistKind.POINT_MASS or (self.sigma == 0.0 and self.kind in
                                                (DistKind.GAUSSIAN, DistKind.BOUNDED_UNIFORM)):
            return np.array([self.mu]), np.array([1.0])
        if self.kind == DistKind.TWO_POINT:
            return np.array([self.low, self.high]), np.array([1 - self.alpha, self.alpha])
        if self.kind == DistKind.EMPIRICAL:
            pts, counts = np.unique(self.samples, return_counts=True)
            return pts, counts / self.samples.size
        raise ModelError(f"{self.kind.value} is not discrete")

    def _std_cdf_moment(self, z):
        """Standardized CDF and partial first moment E[Z; Z <= z] of the base law."""
        if self.kind == DistKind.GAUSSIAN:
            return special.ndtr(z), -np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
        # uniform on [-sqrt3, sqrt3] in standardized units
        r = np.sqrt(3.0)
        zc = np.clip(z, -r, r)
        return (zc + r) / (2 * r), (zc * zc - 3.0) / (4 * r)

    def partial_moments(self, x):
        """Return ``F(x) = P(X <= x)`` and ``G(x) = E[X 1{X <= x}]`` elementwise.

        These two functions are all the value engine needs to take exact
        expectations of functions that are piecewise linear in price.
        """
        x = np.asarray(x, dtype=float)
        if self.is_discrete:
            pts, prob = self.atoms()
            cp = np.concatenate([[0.0], np.cumsum(prob)])
            cm = np.concatenate([[0.0], np.cumsum(prob * pts)])
            idx = np.searchsorted(pts, x, side="right")
            return cp[idx], cm[idx]
        lo, hi = self._window()
        s, m = self.sigma, self.mu

        def raw(y):
            z = (y - m) / s
            F, Mz = self._std_cdf_moment(z)
            return F, m * F + s * Mz

        F_lo, G_lo = raw(np.float64(lo)) if np.isfinite(lo) else (0.0, 0.0)
        F_hi, G_hi = raw(np.float64(hi)) if np.isfinite(hi) else (1.0, m)
        mass = F_hi - F_lo
        if not mass > 0:
            raise NumericalError(
                f"{self.kind.value}(mu={m}, sigma={s}) has no mass inside [{lo}, {hi}]")
        F_x, G_x = raw(np.clip(x, lo, hi))
        return (F_x - F_lo) / mass, (G_x - G_lo) / mass

    def pdf(self, x):
        """Density of the (possibly truncated) continuous law."""
        x = np.asarray(x, dtype=float)
        lo, hi = self._window()
        if self.kind == DistKind.GAUSSIAN:
            base = stats.norm(self.mu, self.sigma)
        else:
            half = np.sqrt(3.0) * self.sigma
            base = stats.uniform(self.mu - half, 2 * half)
        mass = base.cdf(hi) - base.cdf(lo)
        return np.where((x >= lo) & (x <= hi), base.pdf(x) / mass, 0.0)

    def quadrature(self, nodes: int = 257, width: float = 8.0, breaks=None):
        """Gauss-Legendre nodes and weights over ``mu +/- width*sigma`` clipped to
        the support.  Discrete kinds return their atoms.

        ``breaks`` are prices where the integrand has kinks; the window is
        split there so every panel integrates a smooth function.  ``nodes``
        are spread over panels by width, with at least two per panel.
        """
        if self.is_discrete:
            return self.atoms()
        lo, hi = self._window()
        lo = max(lo, self.mu - width * self.sigma)
        hi = min(hi, self.mu + width * self.sigma)
        if not hi > lo:
            raise NumericalError(f"empty quadrature window [{lo}, {hi}]")
        inner = np.zeros(0) if breaks is None else np.unique(np.asarray(breaks, dtype=float))
        inner = inner[(inner > lo) & (inner < hi)]
        edges = np.concatenate([[lo], inner, [hi]])
        widths = np.diff(edges)
        counts = np.maximum(2, np.rint(nodes * widths / (hi - lo)).astype(int))
        pts, wts = [], []
        for m in np.unique(counts):
            sel = counts == m
            x, w = np.polynomial.legendre.leggauss(int(m))
            half = 0.5 * widths[sel][:, None]
            pts.append((edges[:-1][sel][:, None] + half * (x + 1.0)).ravel())
            wts.append((half * w).ravel())
        pts, wts = np.concatenate(pts), np.concatenate(wts)
        return pts, wts * self.pdf(pts)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value}
        if self.kind == DistKind.TWO_POINT:
            d.update(high=self.high, low=self.low, alpha=self.alpha, mu=self.mu)
        elif self.kind == DistKind.EMPIRICAL:
            d["samples"] = self.samples.tolist()
        else:
            d["mu"] = self.mu
            if self.kind != DistKind.POINT_MASS:
                d["sigma"] = self.sigma
        if self.bounds is not None:
            d["bounds"] = [self.bounds.floor, self.bounds.cap]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriceDistribution":
        kind = DistKind(d["kind"])
        b = d.get("bounds")
        if isinstance(b, dict):
            b = (b["floor"], b["cap"])
        bounds = PriceBounds(*map(float, b)) if b is not None else None
        if kind == DistKind.POINT_MASS:
            dist = cls.point_mass(d["mu"])
            return truncate_normalize(dist, bounds) if bounds else dist
        if kind == DistKind.GAUSSIAN:
            return cls.gaussian(d["mu"], d["sigma"], bounds)
        if kind == DistKind.BOUNDED_UNIFORM:
            return cls.bounded_uniform(d["mu"], d["sigma"], bounds)
        if kind == DistKind.TWO_POINT:
            dist = cls.two_point(d["high"], d["low"], d["alpha"], d.get("mu"))
            return truncate_normalize(dist, bounds) if bounds else dist
        return cls.empirical(d["samples"], bounds)


def mean_of(dist: PriceDistribution) -> float:
    """Analytic mean; for truncated kinds, the mean after renormalization."""
    if dist.kind == DistKind.EMPIRICAL and (dist.samples is None or dist.samples.size == 0):
        raise ModelError("empirical distribution has no samples")
    if dist.is_discrete:
        pts, prob = dist.atoms()
        return float(np.dot(pts, prob))
    if dist.bounds is None:
        return dist.mu
    _, G = dist.partial_moments(np.inf)
    return float(G)


def truncate_normalize(dist: PriceDistribution, bounds: PriceBounds) -> PriceDistribution:
    """Restrict ``dist`` to ``[floor, cap]`` and renormalize to unit mass."""
    if dist.is_discrete:
        pts, prob = dist.atoms()
        inside = (pts >= bounds.floor) & (pts <= bounds.cap)
        if not inside.any():
            raise ModelError(f"{dist.kind.value} has no support inside [{bounds.floor}, {bounds.cap}]")
        if inside.all():
            return PriceDistribution(dist.kind, dist.mu, dist.sigma, dist.high, dist.low,
                                     dist.alpha, dist.samples, bounds)
        if dist.kind == DistKind.EMPIRICAL:
            return PriceDistribution.empirical(pts[inside], bounds)
        # a two-point law with one atom cut off collapses to the surviving atom
        return PriceDistribution(DistKind.POINT_MASS, float(pts[inside][0]), bounds=bounds)
    if dist.bounds is not None:
        bounds = PriceBounds(max(bounds.floor, dist.bounds.floor), min(bounds.cap, dist.bounds.cap))
    out = PriceDistribution(dist.kind, dist.mu, dist.sigma, bounds=bounds)
    lo, hi = out._window()
    if not hi > lo:
        raise ModelError(f"{dist.kind.value} support does not intersect [{bounds.floor}, {bounds.cap}]")
    out.partial_moments(np.array([0.0]))  # raises if the window carries no mass
    return out


def sample(dist: PriceDistribution, seed: int, n: int) -> np.ndarray:
    """Draw ``n`` prices; deterministic in ``(dist, seed, n)``."""
    if n < 1:
        raise ModelError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if dist.is_discrete:
        pts, prob = dist.atoms()
        if pts.size == 1:
            return np.full(n, pts[0])
        return rng.choice(pts, size=n, p=prob)
    lo, hi = dist._window()
    if dist.kind == DistKind.GAUSSIAN:
        a, b = (lo - dist.mu) / dist.sigma, (hi - dist.mu) / dist.sigma
        if np.isinf(a) and np.isinf(b):
            return rng.normal(dist.mu, dist.sigma, size=n)
        return stats.truncnorm.rvs(a, b, loc=dist.mu, scale=dist.sigma, size=n, random_state=rng)
    return rng.uniform(lo, hi, size=n)


class ValueFunction:
    """Piecewise-linear concave value-to-go over SoC on fixed breakpoints.

    Between breakpoints values are linearly interpolated.
    """

    __slots__ = ("breakpoints", "values")

    def __init__(self, breakpoints, values, check: bool = True, tol: float = 1e-7):
        g = np.asarray(breakpoints, dtype=float)
        v = np.asarray(values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or g.size < 2:
            raise ModelError("breakpoints and values must be 1-D arrays of equal length >= 2")
        if g[0] != 0.0 or not np.all(np.diff(g) > 0):
            raise ModelError("breakpoints must start at 0 and be strictly ascending")
        g.setflags(write=False)
        v.setflags(write=False)
        self.breakpoints = g
        self.values = v
        if check:
            s = self.slopes
            scale = max(1.0, float(np.max(np.abs(s))))
            if np.any(np.diff(s) > tol * scale):
                raise ModelError("value function is not concave (slopes increase)")

    @classmethod
    def linear(cls, slope: float, energy: float, points: int = 1001) -> "ValueFunction":
        g = np.linspace(0.0, energy, points)
        return cls(g, slope * g)

    @classmethod
    def from_slopes(cls, slopes, energy: float) -> "ValueFunction":
        """Uniform grid on [0, energy] with the given per-segment slopes."""
        s = np.asarray(slopes, dtype=float)
        g = np.linspace(0.0, energy, s.size + 1)
        return cls(g, np.concatenate([[0.0], np.cumsum(s * np.diff(g))]))

    @classmethod
    def from_function(cls, fn, energy: float, points: int = 1001) -> "ValueFunction":
        g = np.linspace(0.0, energy, points)
        return cls(g, np.array([fn(x) for x in g]))

    @property
    def energy(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.breakpoints)

    def __call__(self, e):
        return np.interp(e, self.breakpoints, self.values)

    def __len__(self):
        return self.breakpoints.size

    def __repr__(self):
        return f"ValueFunction(points={len(self)}, energy={self.energy}, v0={self.slopes[0]:.4g})"


class Side(str, Enum):
    DISCHARGE = "discharge"
    CHARGE = "charge"


@dataclass(frozen=True, eq=False)
class BidCurve:
    """Price-quantity staircase.  ``quantities[k]`` MW at ``prices[k]`` $/MWh."""

    side: Side
    quantities: np.ndarray
    prices: np.ndarray
    soc: float = 0.0
    period: int = 0

    def __post_init__(self):
        q = np.asarray(self.quantities, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if q.shape != p.shape or q.ndim != 1:
            raise ModelError("quantities and prices must be 1-D arrays of equal length")
        if np.any(q < 0):
            raise ModelError("segment quantities must be non-negative")
        object.__setattr__(self, "quantities", q)
        object.__setattr__(self, "prices", p)

    @property
    def total(self) -> float:
        return float(self.quantities.sum())

    def is_monotone(self, tol: float = 1e-9) -> bool:
        """Offers non-decreasing, bids non-increasing, up to ``tol`` relative round-off."""
        if self.prices.size < 2:
            return True
        slack = tol * max(1.0, float(np.abs(self.prices).max()))
        d = np.diff(self.prices)
        return bool(np.all(d >= -slack) if self.side == Side.DISCHARGE else np.all(d <= slack))

    def scaled(self, factor: float) -> "BidCurve":
        """Aggregate of ``factor`` identical units."""
        return BidCurve(self.side, self.quantities * factor, self.prices, self.soc, self.period)

    @classmethod
    def empty(cls, side: Side, soc: float = 0.0, period: int = 0) -> "BidCurve":
        return cls(side, np.zeros(0), np.zeros(0), soc, period)
