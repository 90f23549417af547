"""Caching-node field, probabilistic content placement and per-request hit probabilities."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleError, InvalidParameterError, UndefinedOutsideError
from .popularity import LibraryModel

PMF_TAIL_TOL = 1e-12
BUDGET_TOL = 1e-9
MAX_BISECTIONS = 200


@dataclass(frozen=True)
class NetworkModel:
    """Distribution of J, the number of caching nodes within reach of a user.

    ``poisson-disk``: nodes form a PPP of intensity ``lam`` and a user reaches
    those within ``radius``, so J ~ Poisson(lam * pi * radius**2).
    ``explicit-pmf``: J follows ``node_count_pmf`` over 0, 1, 2, ...
    """

    kind: str
    lam: float = 0.0
    radius: float = 10.0
    node_count_pmf: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind == "poisson-disk":
            if not (math.isfinite(self.lam) and self.lam >= 0):
                raise InvalidParameterError(f"lambda must be >= 0, got {self.lam}")
            if not (math.isfinite(self.radius) and self.radius > 0):
                raise InvalidParameterError(f"radius must be > 0, got {self.radius}")
        elif self.kind == "explicit-pmf":
            if self.node_count_pmf is None:
                raise InvalidParameterError("explicit-pmf network needs node_count_pmf")
            pmf = np.asarray(self.node_count_pmf, dtype=np.float64)
            if pmf.ndim != 1 or pmf.size == 0 or np.any(pmf < 0):
                raise InvalidParameterError("node_count_pmf must be a nonnegative vector")
            if abs(pmf.sum() - 1.0) > 1e-10:
                raise InvalidParameterError("node_count_pmf must sum to 1")
            # drop the tail once the remaining mass is negligible
            tail = pmf.sum() - np.cumsum(pmf)
            cut = int(np.argmax(tail < PMF_TAIL_TOL)) + 1
            object.__setattr__(self, "node_count_pmf", tuple(float(p) for p in pmf[:cut]))
        else:
            raise InvalidParameterError(f"unknown network kind {self.kind!r}")

    @classmethod
    def poisson_disk(cls, lam: float, radius: float = 10.0) -> "NetworkModel":
        return cls("poisson-disk", lam=float(lam), radius=float(radius))

    @classmethod
    def explicit(cls, pmf: Sequence[float]) -> "NetworkModel":
        return cls("explicit-pmf", node_count_pmf=tuple(float(p) for p in pmf))

    @property
    def mean_nodes(self) -> float:
        if self.kind == "poisson-disk":
            return self.lam * math.pi * self.radius ** 2
        pmf = np.asarray(self.node_count_pmf)
        return float(np.arange(pmf.size) @ pmf)

    def miss_slope(self, b: np.ndarray) -> np.ndarray:
        """d/db of 1 - E[(1-b)^J], i.e. E[J (1-b)^(J-1)]."""
        b = np.asarray(b, dtype=np.float64)
        if self.kind == "poisson-disk":
            mu = self.mean_nodes
            return mu * np.exp(-mu * b)
        pmf = np.asarray(self.node_count_pmf)
        j = np.arange(1, pmf.size)
        if j.size == 0:
            return np.zeros_like(b)
        powers = (1.0 - b)[..., None] ** (j - 1)
        return powers @ (j * pmf[1:])


def miss_factor(network: NetworkModel, b) -> np.ndarray | float:
    """E[(1 - b)^J]: probability that none of the reachable nodes holds a content cached w.p. b."""
    arr = np.asarray(b, dtype=np.float64)
    if network.kind == "poisson-disk":
        out = np.exp(-network.mean_nodes * arr)
    else:
        pmf = np.asarray(network.node_count_pmf)
        powers = (1.0 - arr)[..., None] ** np.arange(pmf.size)
        out = powers @ pmf
    return float(out) if np.ndim(out) == 0 else out


def _response(weights: np.ndarray, nu: float, network: NetworkModel) -> np.ndarray:
    """Per-content b solving weights * slope(b) = nu, clipped to [0, 1]."""
    if network.kind == "poisson-disk":
        mu = network.mean_nodes
        with np.errstate(divide="ignore"):
            raw = np.log(weights * mu / nu) / mu
        return np.clip(raw, 0.0, 1.0)
    top = weights * network.miss_slope(np.zeros(1))[0]
    bottom = weights * network.miss_slope(np.ones(1))[0]
    out = np.where(bottom >= nu, 1.0, 0.0)
    inner = (top > nu) & (bottom < nu)
    if np.any(inner):
        w = weights[inner]
        lo = np.zeros(w.size)
        hi = np.ones(w.size)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            above = w * network.miss_slope(mid) > nu
            lo = np.where(above, mid, lo)
            hi = np.where(above, hi, mid)
        out[inner] = 0.5 * (lo + hi)
    return out


def optimal_within_category(weights, budget: float, network: NetworkModel) -> np.ndarray:
    """Caching probabilities b maximizing sum_n w_n (1 - E[(1-b_n)^J]).

    Subject to sum(b) == budget and 0 <= b_n <= 1. The Lagrange multiplier
    is bisected until the bracketing responses straddle the budget; the
    returned vector interpolates between them so the budget holds exactly.
    """
    w = np.asarray(weights, dtype=np.float64)
    n = w.size
    if budget < 0:
        raise InvalidParameterError(f"budget must be >= 0, got {budget}")
    if budget > n + BUDGET_TOL:
        raise InfeasibleError(f"budget {budget} exceeds the {n} available contents")
    if budget <= 0:
        return np.zeros(n)
    if budget >= n:
        return np.ones(n)

    positive = w > 0
    n_pos = int(positive.sum())
    if network.mean_nodes <= 0 or n_pos == 0:
        # flat objective: every feasible vector is optimal
        return np.full(n, budget / n)
    if n_pos <= budget:
        b = np.zeros(n)
        b[positive] = 1.0
        b[~positive] = (budget - n_pos) / (n - n_pos)
        return b

    wp = w[positive]
    slope0 = network.miss_slope(np.zeros(1))[0]
    slope1 = network.miss_slope(np.ones(1))[0]
    nu_lo = float(wp.min() * slope1)  # every positive-weight content saturates
    nu_hi = float(wp.max() * slope0)  # nothing cached
    b_lo = _response(wp, nu_lo, network) if nu_lo > 0 else np.ones(n_pos)
    b_hi = np.zeros(n_pos)
    s_lo, s_hi = b_lo.sum(), 0.0
    for _ in range(MAX_BISECTIONS):
        if s_lo - s_hi <= 1e-13:
            break
        mid = math.sqrt(nu_lo * nu_hi) if nu_lo > 0 else 0.5 * nu_hi
        if not nu_lo < mid < nu_hi:
            break
        b_mid = _response(wp, mid, network)
        s_mid = b_mid.sum()
        if s_mid >= budget:
            nu_lo, b_lo, s_lo = mid, b_mid, s_mid
        else:
            nu_hi, b_hi, s_hi = mid, b_mid, s_mid
        if abs(s_mid - budget) <= 1e-12:
            b_lo, b_hi, s_lo, s_hi = b_mid, b_mid, s_mid, s_mid
            break
    if s_lo > s_hi:
        theta = (budget - s_hi) / (s_lo - s_hi)
        bp = b_hi + theta * (b_lo - b_hi)
    else:
        bp = b_lo
    b = np.zeros(n)
    b[positive] = np.clip(bp, 0.0, 1.0)
    return b


def hit_within(b, weights, network: NetworkModel) -> float:
    """1 - sum_n w_n E[(1-b_n)^J]: hit probability of a request drawn from ``weights``."""
    b = np.asarray(b, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if b.shape != w.shape:
        raise InvalidParameterError(f"length mismatch: {b.shape} vs {w.shape}")
    return float(1.0 - w @ miss_factor(network, b))


@dataclass(frozen=True)
class Allocation:
    alpha: tuple[int, ...]
    M: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", tuple(int(a) for a in self.alpha))
        if any(a < 0 for a in self.alpha):
            raise InvalidParameterError(f"negative cache share in {self.alpha}")
        if sum(self.alpha) > self.M:
            raise InfeasibleError(f"allocation {self.alpha} exceeds storage {self.M}")

    def check(self, model: LibraryModel) -> None:
        if len(self.alpha) != model.K:
            raise InvalidParameterError("allocation needs one share per category")
        for a, n in zip(self.alpha, model.sizes):
            if a > min(self.M, n):
                raise InfeasibleError(f"share {a} exceeds min(M, N_i) = {min(self.M, n)}")


@dataclass(frozen=True, eq=False)
class PlacementPolicy:
    """Per-category caching probabilities b_{i,n}.

    With ``joint=False`` each node caches exactly sum_n b_{i,n} contents of
    category i. ``joint=True`` marks a library-wide placement (the one-shot
    baseline) where only the total over all categories is integral.
    """

    probs: tuple[np.ndarray, ...]
    joint: bool = False

    def budgets(self) -> np.ndarray:
        return np.array([p.sum() for p in self.probs])

    def flat(self) -> np.ndarray:
        return np.concatenate(self.probs)


def place(model: LibraryModel, network: NetworkModel, alpha: Sequence[int],
          weights: Sequence[np.ndarray] | None = None) -> PlacementPolicy:
    """Optimal within-category placement of every category for shares ``alpha``."""
    if weights is None:
        weights = [model.content_popularity(i) for i in range(model.K)]
    return PlacementPolicy(tuple(
        optimal_within_category(weights[i], alpha[i], network) for i in range(model.K)
    ))


def hit_outside(policy: PlacementPolicy, preferred: int, model: LibraryModel,
                network: NetworkModel) -> float:
    """Hit probability of an outside request, contents outside ``preferred`` taken as uniform."""
    if model.K == 1:
        raise UndefinedOutsideError("a single-category library has no outside contents")
    miss = sum(float(np.sum(miss_factor(network, policy.probs[i])))
               for i in range(model.K) if i != preferred)
    return 1.0 - miss / (model.N - model.sizes[preferred])


def _effective_budget(b: np.ndarray, budget: int | None) -> int:
    total = float(b.sum())
    alpha = round(total)
    if abs(total - alpha) > BUDGET_TOL:
        raise InvalidParameterError(f"caching probabilities sum to non-integer {total}")
    if budget is not None and int(budget) != alpha:
        raise InvalidParameterError(f"caching probabilities sum to {total}, not {budget}")
    return int(alpha)


def systematic_pick(b: np.ndarray, u: float, alpha: int) -> np.ndarray:
    """Indices whose stacked b-intervals contain one of u, u+1, ..., u+alpha-1."""
    if alpha == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.cumsum(b)
    edges[-1] = alpha  # absorb rounding so the last point always lands
    points = u + np.arange(alpha)
    picked = np.searchsorted(edges, points, side="right")
    return picked


def sample_cache_set(b, budget: int | None, rng: np.random.Generator) -> np.ndarray:
    """Draw exactly ``budget`` distinct contents whose inclusion probabilities are ``b``."""
    b = np.asarray(b, dtype=np.float64)
    if np.any(b < -BUDGET_TOL) or np.any(b > 1 + BUDGET_TOL):
        raise InvalidParameterError("caching probabilities must lie in [0, 1]")
    alpha = _effective_budget(b, budget)
    return systematic_pick(np.clip(b, 0.0, 1.0), float(rng.random()), alpha)
