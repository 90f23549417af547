"""Cache allocation for consecutive, category-correlated content requests."""
from .allocator import (
    AllocationResult,
    AllocatorConfig,
    CacheProblem,
    Evaluator,
    baseline_l1,
    greedy_allocate,
    pair_subproblem,
)
from .analytics import (
    HitTerms,
    expected_hit_prob,
    expected_length,
    hit_terms,
    rank_averaged_metrics,
    stop_prob,
)
from .placement import Allocation, NetworkModel, PlacementPolicy, optimal_within_category
from .popularity import LibraryModel, RequestModel, category_popularity, mzipf, request_model, zipf
from .simulator import SimConfig, SimReport, estimate

__version__ = "0.1.0"
