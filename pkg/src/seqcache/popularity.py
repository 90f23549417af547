"""Request-model distributions: category popularity, rank law, M-Zipf content popularity."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError, UndefinedOutsideError


def _check_exponent(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0:
        raise InvalidParameterError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def zipf(n_items: int, gamma: float) -> np.ndarray:
    """Zipf pmf over ranks 1..n_items, p(i) ~ i**-gamma."""
    if n_items < 1:
        raise InvalidParameterError(f"n_items must be >= 1, got {n_items}")
    gamma = _check_exponent("gamma", gamma)
    weights = np.arange(1, n_items + 1, dtype=np.float64) ** -gamma
    return weights / weights.sum()


def mzipf(n_items: int, gamma_in: float, c_in: float) -> np.ndarray:
    """Mandelbrot-Zipf pmf, p(n) ~ (n + c_in)**-gamma_in for n = 1..n_items."""
    if n_items < 1:
        raise InvalidParameterError(f"n_items must be >= 1, got {n_items}")
    gamma_in = _check_exponent("gamma_in", gamma_in)
    c_in = float(c_in)
    if not math.isfinite(c_in) or c_in < 0:
        raise InvalidParameterError(f"c_in must be finite and >= 0, got {c_in!r}")
    # divide by the head weight first so large exponents do not underflow
    ranks = np.arange(1, n_items + 1, dtype=np.float64)
    weights = ((1.0 + c_in) / (ranks + c_in)) ** gamma_in
    return weights / weights.sum()


@dataclass(frozen=True)
class LibraryModel:
    """The static content universe: K categories with sizes and popularity shapes.

    Category indices are 0-based throughout the code; CSV and trace outputs
    label them 1..K.
    """

    sizes: tuple[int, ...]
    gamma: float = 1.0
    gamma_out: float = 5.0
    gamma_in: tuple[float, ...] | float = 2.4
    c_in: float = 69.0
    _content: tuple[np.ndarray, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 1:
            raise InvalidParameterError("library needs at least one category")
        if any(s < 1 for s in sizes):
            raise InvalidParameterError(f"every category size must be >= 1, got {sizes}")
        if isinstance(self.gamma_in, (int, float)):
            gamma_in = (float(self.gamma_in),) * len(sizes)
        else:
            gamma_in = tuple(float(g) for g in self.gamma_in)
        if len(gamma_in) != len(sizes):
            raise InvalidParameterError("gamma_in needs one exponent per category")
        for g in gamma_in:
            _check_exponent("gamma_in", g)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "gamma_in", gamma_in)
        object.__setattr__(self, "gamma", _check_exponent("gamma", self.gamma))
        object.__setattr__(self, "gamma_out", _check_exponent("gamma_out", self.gamma_out))
        object.__setattr__(self, "c_in", float(self.c_in))
        content = tuple(mzipf(n, g, self.c_in) for n, g in zip(sizes, gamma_in))
        object.__setattr__(self, "_content", content)

    @property
    def K(self) -> int:
        return len(self.sizes)

    @property
    def N(self) -> int:
        return sum(self.sizes)

    def content_popularity(self, i: int) -> np.ndarray:
        """Within-category M-Zipf popularity a_{i,n} of category ``i``."""
        return self._content[i]

    def replace(self, **changes) -> "LibraryModel":
        kwargs = dict(sizes=self.sizes, gamma=self.gamma, gamma_out=self.gamma_out,
                      gamma_in=self.gamma_in, c_in=self.c_in)
        kwargs.update(changes)
        return LibraryModel(**kwargs)


def category_popularity(model: LibraryModel) -> np.ndarray:
    """Global category popularity f; only decides the preferred category."""
    return zipf(model.K, model.gamma)


@dataclass(frozen=True)
class RequestModel:
    """Per-step request probabilities of a session.

    ``p_stay`` is Pr{R=1}. ``p1_eff`` and ``p_out_eff`` are the per-step
    probabilities of a preferred / outside request once the quit coin has
    been survived, so ``epsilon + p1_eff + p_out_eff == 1``.
    """

    epsilon: float
    rank_probs: np.ndarray

    @property
    def p_stay(self) -> float:
        return float(self.rank_probs[0])

    @property
    def p1_eff(self) -> float:
        return (1.0 - self.epsilon) * self.p_stay

    @property
    def p_out_eff(self) -> float:
        # written as a difference so the three-way partition closes to rounding
        return (1.0 - self.epsilon) - self.p1_eff


def request_model(model: LibraryModel, epsilon: float) -> RequestModel:
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 1.0:
        raise InvalidParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    return RequestModel(epsilon=epsilon, rank_probs=zipf(model.K, model.gamma_out))


def session_length_pmf(epsilon: float, l: int) -> float:
    """Session-length law written as eps * (1 - eps)**l.

    Summed over l >= 1 this gives 1 - eps; the simulator uses the
    normalized l >= 1 law eps * (1 - eps)**(l - 1) instead.
    """
    return epsilon * (1.0 - epsilon) ** l


def outside_uniform_popularity(model: LibraryModel, preferred: int) -> float:
    """Uniform popularity 1/(N - N_k) assigned to every content outside category k."""
    if model.K == 1:
        raise UndefinedOutsideError("a single-category library has no outside contents")
    if not 0 <= preferred < model.K:
        raise InvalidParameterError(f"category index {preferred} out of range")
    return 1.0 / (model.N - model.sizes[preferred])


def check_distribution(probs: Sequence[float], tol: float = 1e-12) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1 or probs.size == 0:
        raise InvalidParameterError("distribution must be a non-empty vector")
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > tol:
        raise InvalidParameterError("distribution must be nonnegative and sum to 1")
    return probs
