"""Closed-form session objectives: all-requests hit probability and expected consumption length.

Two readings of the session law are supported:

``paper``       per-request success p1_eff*h + p_out_eff*q summed against
                Pr{L=l} = eps (1-eps)^l over l >= 1, exactly as printed.
``consistent``  the step-wise generative process (first request always
                issued, quit with eps before each further request), whose
                all-hit probability is sum_l eps (1-eps)^(l-1) X^l with
                X = Pr{R=1} h + (1 - Pr{R=1}) q.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, EnumerationTooLarge, InvalidParameterError
from .placement import NetworkModel, PlacementPolicy, hit_outside, hit_within
from .popularity import LibraryModel, RequestModel, category_popularity

MODES = ("paper", "consistent")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise InvalidParameterError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass(frozen=True, eq=False)
class HitTerms:
    """Within (h) and outside (q) per-request hit probabilities, one entry per preferred category."""

    h: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.float64)
        q = np.asarray(self.q, dtype=np.float64)
        if h.shape != q.shape:
            raise InvalidParameterError("h and q need matching shapes")
        if np.any((h < -1e-12) | (h > 1 + 1e-12) | (q < -1e-12) | (q > 1 + 1e-12)):
            raise InvalidParameterError("hit terms must lie in [0, 1]")
        object.__setattr__(self, "h", np.clip(h, 0.0, 1.0))
        object.__setattr__(self, "q", np.clip(q, 0.0, 1.0))


def hit_terms(policy: PlacementPolicy, model: LibraryModel, network: NetworkModel) -> HitTerms:
    """h_k and q_k of every category under ``policy``.

    q is set to 0 for a single-category library, where it carries zero weight.
    """
    h = [hit_within(policy.probs[k], model.content_popularity(k), network) for k in range(model.K)]
    if model.K == 1:
        q = [0.0]
    else:
        q = [hit_outside(policy, k, model, network) for k in range(model.K)]
    return HitTerms(np.array(h), np.array(q))


def per_request_success(terms: HitTerms, req: RequestModel, mode: str = "paper") -> np.ndarray:
    """Per-request success factor X_k for every preferred category k."""
    if check_mode(mode) == "paper":
        return req.p1_eff * terms.h + req.p_out_eff * terms.q
    return req.p_stay * terms.h + (1.0 - req.p_stay) * terms.q


def expected_hit_prob(terms: HitTerms, f, req: RequestModel, mode: str = "paper") -> float:
    """Probability that every request of a random-length session is a cache hit."""
    x = per_request_success(terms, req, mode)
    eps = req.epsilon
    ratio = (1.0 - eps) * x
    if np.any(ratio >= 1.0):
        raise DivergenceError("session series diverges: (1 - eps) * X >= 1")
    per_cat = eps * x / (1.0 - ratio)
    if mode == "paper":
        per_cat = (1.0 - eps) * per_cat
    return float(np.asarray(f) @ per_cat)


def stop_prob(terms: HitTerms, req: RequestModel) -> np.ndarray:
    """Per-step stopping probability: voluntary quit or a miss on the next request."""
    return req.epsilon + req.p1_eff * (1.0 - terms.h) + req.p_out_eff * (1.0 - terms.q)


def expected_length(terms: HitTerms, f, req: RequestModel) -> float:
    """Expected number of consecutive consumptions, sum_k f_k (1 - p_k) / p_k."""
    p = stop_prob(terms, req)
    if np.any(p <= 0):
        raise DivergenceError("stop probability is zero")
    return float(np.asarray(f) @ ((1.0 - p) / p))


def objective_value(objective: str, terms: HitTerms, f, req: RequestModel,
                    mode: str = "paper") -> float:
    if objective == "hit":
        return expected_hit_prob(terms, f, req, mode)
    if objective == "length":
        return expected_length(terms, f, req)
    raise InvalidParameterError(f"objective must be 'hit' or 'length', got {objective!r}")


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _multinomial(counts) -> int:
    out = math.factorial(sum(counts))
    for c in counts:
        out //= math.factorial(c)
    return out


def exact_hit_prob_given_length(l: int, policy: PlacementPolicy, model: LibraryModel,
                                network: NetworkModel, req: RequestModel,
                                mode: str = "paper") -> float:
    """All-hit probability of exactly ``l`` requests, with M-Zipf popularity everywhere.

    Enumerates the preferred category, every assignment of the remaining
    categories to ranks 2..K (equally likely), and every split (l_1..l_K) of
    the l requests over ranks.
    """
    if model.K > 4 or l > 8:
        raise EnumerationTooLarge(f"enumeration limited to K <= 4 and l <= 8 (K={model.K}, l={l})")
    scale = (1.0 - req.epsilon) if check_mode(mode) == "paper" else 1.0
    rank = scale * np.asarray(req.rank_probs)
    h_exact = np.array([
        hit_within(policy.probs[i], model.content_popularity(i), network) for i in range(model.K)
    ])
    f = category_popularity(model)
    comps = list(_compositions(l, model.K))
    total = 0.0
    for k in range(model.K):
        others = [i for i in range(model.K) if i != k]
        perms = list(itertools.permutations(others))
        acc = 0.0
        for perm in perms:
            order = (k,) + perm
            factors = rank * h_exact[list(order)]
            for counts in comps:
                acc += _multinomial(counts) * float(np.prod(factors ** np.array(counts)))
        total += f[k] * acc / len(perms)
    return total


def exact_hit_prob_small(policy: PlacementPolicy, model: LibraryModel, network: NetworkModel,
                         req: RequestModel, l_max: int, mode: str = "paper") -> float:
    """Session all-hit probability truncated at ``l_max`` requests, by enumeration."""
    check_mode(mode)
    eps = req.epsilon
    total = 0.0
    for l in range(1, l_max + 1):
        weight = eps * (1 - eps) ** l if mode == "paper" else eps * (1 - eps) ** (l - 1)
        total += weight * exact_hit_prob_given_length(l, policy, model, network, req, mode)
    return total


def approx_hit_prob_truncated(terms: HitTerms, f, req: RequestModel, l_max: int,
                              mode: str = "paper") -> float:
    """Same truncation as :func:`exact_hit_prob_small` but with uniform outside popularity."""
    x = per_request_success(terms, req, mode)
    eps = req.epsilon
    total = 0.0
    for l in range(1, l_max + 1):
        weight = eps * (1 - eps) ** l if mode == "paper" else eps * (1 - eps) ** (l - 1)
        total += weight * float(np.asarray(f) @ x ** l)
    return total



@dataclass(frozen=True)
class RankAveragedMetrics:
    hit: float
    length: float


def rank_averaged_metrics(policy: PlacementPolicy, model: LibraryModel, network: NetworkModel,
                          req: RequestModel, mode: str = "consistent") -> RankAveragedMetrics:
    """Session metrics without the uniform outside approximation.

    Given the preferred category k and the session's order of the other
    categories over ranks 2..K, requests are independent, each hitting with
    X = sum_r Pr{R=r} h_(category at rank r). Averaging the geometric-series
    closed forms over all (K-1)! equally likely orders gives the exact
    all-hit probability and E[L] for M-Zipf outside popularity.
    """
    check_mode(mode)
    K = model.K
    if K > 8:
        raise EnumerationTooLarge(f"rank orders limited to K <= 8 (K={K})")
    eps = req.epsilon
    rank = np.asarray(req.rank_probs)
    h = np.array([hit_within(policy.probs[i], model.content_popularity(i), network)
                  for i in range(K)])
    f = category_popularity(model)
    hit = length = 0.0
    for k in range(K):
        others = [i for i in range(K) if i != k]
        orders = np.array([(k,) + p for p in itertools.permutations(others)])
        x = h[orders] @ rank
        per_order = eps * x / (1.0 - (1.0 - eps) * x)
        if mode == "paper":
            # the paper-mode normalization scales each step by (1 - eps)
            xp = (1.0 - eps) * x
            per_order = (1.0 - eps) * eps * xp / (1.0 - (1.0 - eps) * xp)
        p_stop = 1.0 - (1.0 - eps) * x
        hit += f[k] * float(per_order.mean())
        length += f[k] * float(((1.0 - p_stop) / p_stop).mean())
    return RankAveragedMetrics(hit, length)
