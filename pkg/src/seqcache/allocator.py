"""Integer cache-share allocation across categories by pairwise coordinate descent."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analytics import HitTerms, check_mode, expected_hit_prob, expected_length, hit_terms
from .errors import InfeasibleError, InvalidParameterError
from .placement import (
    Allocation,
    NetworkModel,
    PlacementPolicy,
    hit_within,
    miss_factor,
    optimal_within_category,
)
from .popularity import LibraryModel, RequestModel, category_popularity, request_model

log = logging.getLogger(__name__)

OBJECTIVES = ("hit", "length")


@dataclass(frozen=True)
class CacheProblem:
    """Everything the objectives depend on besides the allocation itself."""

    library: LibraryModel
    network: NetworkModel
    epsilon: float = 0.1
    M: int = 30
    placement_weights: str = "within"

    def __post_init__(self) -> None:
        if self.M < 1:
            raise InvalidParameterError(f"storage size M must be >= 1, got {self.M}")
        if self.placement_weights not in ("within", "blended"):
            raise InvalidParameterError(f"unknown placement_weights {self.placement_weights!r}")
        request_model(self.library, self.epsilon)  # validates epsilon

    @property
    def request(self) -> RequestModel:
        return request_model(self.library, self.epsilon)

    @property
    def f(self) -> np.ndarray:
        return category_popularity(self.library)

    @property
    def caps(self) -> tuple[int, ...]:
        return tuple(min(self.M, n) for n in self.library.sizes)


@dataclass(frozen=True)
class AllocatorConfig:
    objective: str = "hit"
    mode: str = "paper"
    max_sweeps: int = 50
    convergence_tol: float = 1e-12

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise InvalidParameterError(f"objective must be one of {OBJECTIVES}")
        check_mode(self.mode)
        if self.max_sweeps < 1:
            raise InvalidParameterError("max_sweeps must be >= 1")
        if self.convergence_tol < 0:
            raise InvalidParameterError("convergence_tol must be >= 0")


class Evaluator:
    """Objective of any integer allocation, from per-category tables.

    Category i's placement only depends on its own share, so b_i, h_i and
    the summed miss factor are computed once per (i, share) and reused.
    """

    def __init__(self, problem: CacheProblem):
        self.problem = problem
        lib = problem.library
        self.req = problem.request
        self.f = problem.f
        self._weights = self._placement_weights()
        self._b: dict[tuple[int, int], np.ndarray] = {}
        self._h: dict[tuple[int, int], float] = {}
        self._miss: dict[tuple[int, int], float] = {}
        self._outside = np.array([lib.N - n for n in lib.sizes], dtype=np.float64)

    def _placement_weights(self) -> list[np.ndarray]:
        lib = self.problem.library
        within = [lib.content_popularity(i) for i in range(lib.K)]
        if self.problem.placement_weights == "within":
            return within
        req = self.req
        out = []
        for i in range(lib.K):
            spill = sum(self.f[k] * req.p_out_eff / (lib.N - lib.sizes[k])
                        for k in range(lib.K) if k != i)
            out.append(self.f[i] * req.p1_eff * within[i] + spill)
        return out

    def placement(self, i: int, share: int) -> np.ndarray:
        key = (i, share)
        if key not in self._b:
            lib, net = self.problem.library, self.problem.network
            b = optimal_within_category(self._weights[i], share, net)
            self._b[key] = b
            self._h[key] = hit_within(b, lib.content_popularity(i), net)
            self._miss[key] = float(np.sum(miss_factor(net, b)))
        return self._b[key]

    def terms(self, alpha: Sequence[int]) -> HitTerms:
        K = self.problem.library.K
        for i, a in enumerate(alpha):
            self.placement(i, a)
        h = np.array([self._h[(i, a)] for i, a in enumerate(alpha)])
        if K == 1:
            return HitTerms(h, np.zeros(1))
        miss = np.array([self._miss[(i, a)] for i, a in enumerate(alpha)])
        q = 1.0 - (miss.sum() - miss) / self._outside
        return HitTerms(h, q)

    def policy(self, alpha: Sequence[int]) -> PlacementPolicy:
        return PlacementPolicy(tuple(self.placement(i, a) for i, a in enumerate(alpha)))

    def value(self, alpha: Sequence[int], objective: str, mode: str = "paper") -> float:
        terms = self.terms(alpha)
        if objective == "hit":
            return expected_hit_prob(terms, self.f, self.req, mode)
        return expected_length(terms, self.f, self.req)


@dataclass
class AllocationResult:
    alpha: Allocation
    policy: PlacementPolicy
    objective_value: float
    sweeps_used: int
    trace: list[tuple[int, int, tuple[int, ...], float]] = field(default_factory=list)


def initial_allocation(problem: CacheProblem) -> tuple[int, ...]:
    """Even split floor(M/K); leftover units go one at a time by descending f_i, capped at min(M, N_i)."""
    caps = problem.caps
    M, K = problem.M, problem.library.K
    if sum(caps) < M:
        raise InfeasibleError(f"library of {problem.library.N} contents cannot fill M={M}")
    alpha = [min(M // K, c) for c in caps]
    order = sorted(range(K), key=lambda i: (-problem.f[i], i))
    left = M - sum(alpha)
    while left > 0:
        for i in order:
            if left and alpha[i] < caps[i]:
                alpha[i] += 1
                left -= 1
    return tuple(alpha)


def pair_subproblem(u: int, v: int, alpha: Sequence[int], config: AllocatorConfig,
                    evaluator: Evaluator) -> tuple[int, int, float]:
    """Best split of the pair budget M - sum_{i != u,v} alpha_i between categories u and v.

    Candidates are scanned in increasing alpha_u and only a strictly larger
    value replaces the best so far, so ties go to the smaller alpha_u.
    """
    if u == v:
        raise InvalidParameterError("pair needs two distinct categories")
    caps = evaluator.problem.caps
    beta = evaluator.problem.M - (sum(alpha) - alpha[u] - alpha[v])
    lo, hi = max(0, beta - caps[v]), min(beta, caps[u])
    if lo > hi:
        raise InfeasibleError(f"no feasible split of {beta} units between {u} and {v}")
    trial = list(alpha)
    best = None
    for a_u in range(lo, hi + 1):
        trial[u], trial[v] = a_u, beta - a_u
        val = evaluator.value(trial, config.objective, config.mode)
        if best is None or val > best[2]:
            best = (a_u, beta - a_u, val)
    return best


def greedy_allocate(problem: CacheProblem, config: AllocatorConfig = AllocatorConfig(),
                    initial: Sequence[int] | None = None,
                    evaluator: Evaluator | None = None) -> AllocationResult:
    """Pairwise greedy coordinate ascent over integer cache shares.

    Every ordered pair (u, v) is re-split optimally in turn; a split is
    accepted only if it beats the incumbent by more than
    ``config.convergence_tol``. Stops after a sweep with no accepted move.
    """
    evaluator = evaluator or Evaluator(problem)
    caps = problem.caps
    if initial is None:
        alpha = list(initial_allocation(problem))
    else:
        alpha = list(initial)
        Allocation(tuple(alpha), problem.M).check(problem.library)
        if sum(alpha) != problem.M:
            raise InfeasibleError("initial allocation must use the whole storage")
    K = problem.library.K
    current = evaluator.value(alpha, config.objective, config.mode)
    trace = [(-1, -1, tuple(alpha), current)]
    sweeps = 0
    if K > 1:
        for sweeps in range(1, config.max_sweeps + 1):
            moved = False
            for u in range(K):
                for v in range(K):
                    if u == v:
                        continue
                    a_u, a_v, val = pair_subproblem(u, v, alpha, config, evaluator)
                    if val > current + config.convergence_tol:
                        alpha[u], alpha[v] = a_u, a_v
                        current = val
                        moved = True
                        trace.append((u, v, tuple(alpha), val))
            log.debug("sweep %d: alpha=%s value=%.12g", sweeps, alpha, current)
            if not moved:
                break
    assert sum(alpha) == problem.M and all(0 <= a <= c for a, c in zip(alpha, caps))
    return AllocationResult(
        alpha=Allocation(tuple(alpha), problem.M),
        policy=evaluator.policy(alpha),
        objective_value=current,
        sweeps_used=sweeps,
        trace=trace,
    )


@dataclass
class BaselineResult:
    policy: PlacementPolicy
    terms: HitTerms
    hit_paper: float
    hit_consistent: float
    length: float

    def value(self, objective: str, mode: str = "paper") -> float:
        if objective == "length":
            return self.length
        return self.hit_paper if mode == "paper" else self.hit_consistent


def baseline_l1(problem: CacheProblem) -> BaselineResult:
    """One-shot placement over the whole library against g_{i,n} = f_i a_{i,n}.

    The category structure and session behaviour are ignored when placing;
    both session objectives are then evaluated on the resulting policy.
    """
    lib = problem.library
    f = problem.f
    g = np.concatenate([f[i] * lib.content_popularity(i) for i in range(lib.K)])
    b = optimal_within_category(g, min(problem.M, lib.N), problem.network)
    splits = np.cumsum(lib.sizes)[:-1]
    policy = PlacementPolicy(tuple(np.split(b, splits)), joint=True)
    terms = hit_terms(policy, lib, problem.network)
    req = problem.request
    return BaselineResult(
        policy=policy,
        terms=terms,
        hit_paper=expected_hit_prob(terms, f, req, "paper"),
        hit_consistent=expected_hit_prob(terms, f, req, "consistent"),
        length=expected_length(terms, f, req),
    )
