"""Monte Carlo sessions over random caching-node fields.

A session draws its preferred category from f and issues a first request.
Each request stays in the preferred category with probability Pr{R=1} and
otherwise goes outside. A request hits when at least one reachable node
caches the content. After every hit the user quits with probability eps;
a miss ends the session.

Two statistics are reported per session: whether every request hit, and
the consumed length, which is the number of requests issued minus one.
The consumed length is the number of geometric continuation steps, so its
mean is the closed-form E[L].
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .placement import NetworkModel, PlacementPolicy, sample_cache_set
from .popularity import LibraryModel, RequestModel, category_popularity

OUTSIDE_MODES = ("exact-mzipf", "uniform-approx")
RESAMPLE_MODES = ("request", "session")


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``resample`` chooses how often the node field is redrawn: ``request``
    gives every request an independent field (the independence the closed
    forms assume); ``session`` keeps one field for the whole session.
    Results depend on ``batch_size`` but not on ``workers``.
    """

    n_sessions: int = 100_000
    seed: int = 0
    outside_popularity: str = "exact-mzipf"
    resample: str = "request"
    stop_on_miss: bool = True
    record_traces: bool = False
    batch_size: int = 10_000
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_sessions < 1:
            raise InvalidParameterError("n_sessions must be >= 1")
        if self.outside_popularity not in OUTSIDE_MODES:
            raise InvalidParameterError(f"outside_popularity must be one of {OUTSIDE_MODES}")
        if self.resample not in RESAMPLE_MODES:
            raise InvalidParameterError(f"resample must be one of {RESAMPLE_MODES}")
        if self.batch_size < 1 or self.workers < 1:
            raise InvalidParameterError("batch_size and workers must be >= 1")


@dataclass
class SessionTrace:
    preferred: int
    requests: list[tuple[int, int, bool]]
    terminated_by: str

    @property
    def length(self) -> int:
        return len(self.requests)

    @property
    def all_hit(self) -> bool:
        return all(hit for _, _, hit in self.requests)


@dataclass
class SimReport:
    sessions: int
    all_hit_rate: float
    all_hit_se: float
    mean_length: float
    mean_length_se: float
    per_category_hit_rates: np.ndarray
    within_hit_rates: np.ndarray
    outside_hit_rates: np.ndarray
    within_requests: np.ndarray
    outside_requests: np.ndarray
    mean_requests: float
    traces: list[SessionTrace] | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# single-session reference path, built on explicit per-node cache sets


def sample_node_field(network: NetworkModel, rng: np.random.Generator):
    """Draw the reachable node count J and, for the PPP disk, node positions."""
    if network.kind == "poisson-disk":
        J = int(rng.poisson(network.mean_nodes))
        r = network.radius * np.sqrt(rng.random(J))
        theta = 2 * math.pi * rng.random(J)
        return J, np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    pmf = np.asarray(network.node_count_pmf)
    return int(rng.choice(pmf.size, p=pmf / pmf.sum())), None


def populate_caches(J: int, policy: PlacementPolicy, rng: np.random.Generator,
                    alpha=None) -> list[frozenset[tuple[int, int]]]:
    """Cache contents of J independent nodes as sets of (category, content) pairs."""
    if alpha is not None:
        budgets = policy.budgets()
        if policy.joint or np.any(np.abs(budgets - np.asarray(alpha)) > 1e-9):
            raise InvalidParameterError("policy does not match the allocation")
    sizes = [p.size for p in policy.probs]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    nodes = []
    for _ in range(J):
        if policy.joint:
            picked = sample_cache_set(policy.flat(), None, rng)
            cat = np.searchsorted(starts, picked, side="right") - 1
            nodes.append(frozenset((int(i), int(c - starts[i])) for i, c in zip(cat, picked)))
        else:
            items = set()
            for i, b in enumerate(policy.probs):
                items.update((i, int(n)) for n in sample_cache_set(b, None, rng))
            nodes.append(frozenset(items))
    return nodes


def _draw_outside(library: LibraryModel, req: RequestModel, k: int, ranks,
                  outside: str, rng: np.random.Generator) -> tuple[int, int]:
    if outside == "uniform-approx":
        idx = int(rng.integers(library.N - library.sizes[k]))
        for i, n in enumerate(library.sizes):
            if i == k:
                continue
            if idx < n:
                return i, idx
            idx -= n
    tail = np.asarray(req.rank_probs[1:])
    r = int(rng.choice(tail.size, p=tail / tail.sum()))
    i = ranks[r]
    a = library.content_popularity(i)
    return i, int(rng.choice(a.size, p=a))


def simulate_session(caches, library: LibraryModel, req: RequestModel, policy: PlacementPolicy,
                     network: NetworkModel, config: SimConfig,
                     rng: np.random.Generator) -> SessionTrace:
    """One session against explicit node caches.

    ``caches`` is the node field used when ``config.resample == "session"``;
    with per-request resampling a fresh field is drawn for every request.
    """
    f = category_popularity(library)
    k = int(rng.choice(library.K, p=f))
    others = [i for i in range(library.K) if i != k]
    ranks = [others[j] for j in rng.permutation(len(others))]
    requests: list[tuple[int, int, bool]] = []
    while True:
        if library.K == 1 or rng.random() < req.p_stay:
            i = k
            a = library.content_popularity(k)
            n = int(rng.choice(a.size, p=a))
        else:
            i, n = _draw_outside(library, req, k, ranks, config.outside_popularity, rng)
        if config.resample == "request":
            J, _ = sample_node_field(network, rng)
            caches = populate_caches(J, policy, rng)
        hit = any((i, n) in node for node in caches)
        requests.append((i, n, hit))
        if not hit and config.stop_on_miss:
            return SessionTrace(k, requests, "cache-miss")
        if rng.random() < req.epsilon:
            return SessionTrace(k, requests, "voluntary-quit")


# ---------------------------------------------------------------------------
# vectorized batch engine used by estimate()


@dataclass(frozen=True, eq=False)
class _Layout:
    """Flattened per-content placement geometry for vectorized membership tests."""

    cat: np.ndarray        # category of each global content index
    local: np.ndarray      # index within its category
    group: np.ndarray      # sampling group (category, or 0 for a joint policy)
    lo: np.ndarray         # left edge of the content's interval within its group
    hi: np.ndarray         # right edge
    n_groups: int
    starts: np.ndarray     # first global index of each category
    cdfs: tuple[np.ndarray, ...]

    @classmethod
    def build(cls, library: LibraryModel, policy: PlacementPolicy) -> "_Layout":
        sizes = np.array(library.sizes)
        starts = np.concatenate([[0], np.cumsum(sizes)])
        cat = np.repeat(np.arange(library.K), sizes)
        local = np.arange(library.N) - starts[cat]
        segments = [policy.flat()] if policy.joint else list(policy.probs)
        lo, hi = [], []
        for b in segments:
            b = np.clip(np.asarray(b, dtype=np.float64), 0.0, 1.0)
            edges = np.cumsum(b)
            total = round(float(edges[-1])) if edges.size else 0
            if edges.size and abs(edges[-1] - total) > 1e-9:
                raise InvalidParameterError("per-group caching probabilities must sum to an integer")
            if edges.size:
                edges[-1] = total
            lo.append(np.concatenate([[0.0], edges[:-1]]))
            hi.append(edges)
        group = np.zeros(library.N, dtype=np.int64) if policy.joint else cat.copy()
        cdfs = tuple(np.cumsum(library.content_popularity(i)) for i in range(library.K))
        return cls(cat, local, group, np.concatenate(lo), np.concatenate(hi),
                   1 if policy.joint else library.K, starts, cdfs)

    def member(self, content: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        """Whether a node with systematic offset ``offsets`` caches ``content``."""
        lo = self.lo[content]
        hi = self.hi[content]
        x = offsets + np.ceil(lo - offsets)
        return (x < hi) & (hi > lo)


def _draw_node_counts(network: NetworkModel, size: int, rng: np.random.Generator) -> np.ndarray:
    if network.kind == "poisson-disk":
        return rng.poisson(network.mean_nodes, size=size)
    pmf = np.asarray(network.node_count_pmf)
    return rng.choice(pmf.size, size=size, p=pmf / pmf.sum())


def _draw_content(layout: _Layout, cats: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(cats.size)
    out = np.empty(cats.size, dtype=np.int64)
    for i, cdf in enumerate(layout.cdfs):
        sel = cats == i
        if np.any(sel):
            local = np.minimum(np.searchsorted(cdf, u[sel], side="right"), cdf.size - 1)
            out[sel] = layout.starts[i] + local
    return out


def _run_batch(args) -> dict:
    library, req, network, policy, config, batch_index, size = args
    rng = np.random.default_rng([config.seed, batch_index])
    layout = _Layout.build(library, policy)
    K = library.K
    f = category_popularity(library)

    pref = rng.choice(K, size=size, p=f)
    # ranks 2..K of each session: a uniformly random order of the other categories
    keys = rng.random((size, K))
    keys[np.arange(size), pref] = -1.0
    rank_cat = np.argsort(keys, axis=1)
    tail = np.asarray(req.rank_probs[1:])
    tail_cdf = np.cumsum(tail / tail.sum()) if K > 1 else None

    if config.resample == "session":
        J = _draw_node_counts(network, size, rng)
        jmax = int(J.max()) if size else 0
        field_offsets = rng.random((size, jmax, layout.n_groups))
        field_mask = np.arange(jmax)[None, :] < J[:, None]

    active = np.ones(size, dtype=bool)
    all_hit = np.ones(size, dtype=bool)
    n_req = np.zeros(size, dtype=np.int64)
    first_miss = np.zeros(size, dtype=np.int64)
    within_n = np.zeros(K)
    within_hits = np.zeros(K)
    outside_n = np.zeros(K)
    outside_hits = np.zeros(K)
    steps = []

    while np.any(active):
        idx = np.flatnonzero(active)
        k = pref[idx]
        stay = np.ones(idx.size, dtype=bool) if K == 1 else rng.random(idx.size) < req.p_stay
        cats = k.copy()
        out = ~stay
        if np.any(out):
            if config.outside_popularity == "uniform-approx":
                span = library.N - np.asarray(library.sizes)[k[out]]
                pick = np.floor(rng.random(out.sum()) * span).astype(np.int64)
                start_k = layout.starts[k[out]]
                glob = np.where(pick < start_k, pick, pick + np.asarray(library.sizes)[k[out]])
                cats[out] = layout.cat[glob]
            else:
                r = np.minimum(np.searchsorted(tail_cdf, rng.random(out.sum()), side="right"),
                               tail.size - 1)
                cats[out] = rank_cat[idx[out], r + 1]
        content = _draw_content(layout, cats, rng)
        if np.any(out) and config.outside_popularity == "uniform-approx":
            content[out] = glob

        grp = layout.group[content]
        if config.resample == "request":
            Jr = _draw_node_counts(network, idx.size, rng)
            jm = int(Jr.max()) if idx.size else 0
            offs = rng.random((idx.size, jm))
            mask = np.arange(jm)[None, :] < Jr[:, None]
        else:
            offs = field_offsets[idx][np.arange(idx.size), :, grp]
            mask = field_mask[idx]
        member = layout.member(content[:, None], offs) & mask
        hit = member.any(axis=1)

        n_req[idx] += 1
        np.add.at(within_n, k[stay], 1)
        np.add.at(within_hits, k[stay], hit[stay])
        np.add.at(outside_n, k[out], 1)
        np.add.at(outside_hits, k[out], hit[out])
        newly_missed = ~hit & all_hit[idx]
        first_miss[idx[newly_missed]] = n_req[idx[newly_missed]]
        all_hit[idx] &= hit
        if config.record_traces:
            steps.append((idx, layout.cat[content], layout.local[content], hit))

        quit_now = rng.random(idx.size) < req.epsilon
        done = quit_now | (~hit & config.stop_on_miss)
        active[idx[done]] = False

    reached = np.where(first_miss > 0, first_miss, n_req)
    consumed = reached - 1
    result = dict(
        pref=pref, all_hit=all_hit, consumed=consumed, n_req=n_req,
        within_n=within_n, within_hits=within_hits,
        outside_n=outside_n, outside_hits=outside_hits,
    )
    if config.record_traces:
        result["traces"] = _assemble_traces(pref, steps, config)
    return result


def _assemble_traces(pref, steps, config) -> list[SessionTrace]:
    reqs: list[list[tuple[int, int, bool]]] = [[] for _ in range(pref.size)]
    for idx, cats, local, hit in steps:
        for s, c, n, h in zip(idx.tolist(), cats.tolist(), local.tolist(), hit.tolist()):
            reqs[s].append((c, n, h))
    traces = []
    for s in range(pref.size):
        ended_on_miss = config.stop_on_miss and not reqs[s][-1][2]
        traces.append(SessionTrace(int(pref[s]), reqs[s],
                                   "cache-miss" if ended_on_miss else "voluntary-quit"))
    return traces


def estimate(config: SimConfig, library: LibraryModel, req: RequestModel,
             network: NetworkModel, policy: PlacementPolicy) -> SimReport:
    """Run ``config.n_sessions`` independent sessions and summarize them.

    Batch b draws from the stream seeded by (seed, b), so reports are
    reproducible and independent of the worker count.
    """
    sizes = []
    left = config.n_sessions
    while left > 0:
        sizes.append(min(config.batch_size, left))
        left -= sizes[-1]
    jobs = [(library, req, network, policy, config, b, s) for b, s in enumerate(sizes)]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            parts = list(pool.map(_run_batch, jobs))
    else:
        parts = [_run_batch(job) for job in jobs]

    pref = np.concatenate([p["pref"] for p in parts])
    all_hit = np.concatenate([p["all_hit"] for p in parts])
    consumed = np.concatenate([p["consumed"] for p in parts])
    n_req = np.concatenate([p["n_req"] for p in parts])
    n = pref.size
    K = library.K

    p_hit = float(all_hit.mean())
    per_cat = np.array([all_hit[pref == k].mean() if np.any(pref == k) else np.nan
                        for k in range(K)])

    def ratio(key_hits, key_n):
        hits = sum(p[key_hits] for p in parts)
        tot = sum(p[key_n] for p in parts)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, hits / np.maximum(tot, 1), np.nan)

    traces = None
    if config.record_traces:
        traces = [t for p in parts for t in p["traces"]]
    return SimReport(
        sessions=n,
        all_hit_rate=p_hit,
        all_hit_se=math.sqrt(p_hit * (1 - p_hit) / n),
        mean_length=float(consumed.mean()),
        mean_length_se=float(consumed.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        per_category_hit_rates=per_cat,
        within_hit_rates=ratio("within_hits", "within_n"),
        outside_hit_rates=ratio("outside_hits", "outside_n"),
        within_requests=sum(p["within_n"] for p in parts),
        outside_requests=sum(p["outside_n"] for p in parts),
        mean_requests=float(n_req.mean()),
        traces=traces,
    )


def write_trace_dump(path, traces: list[SessionTrace]) -> None:
    """One line per session: session_id,preferred,length,all_hit,terminated_by (categories 1-based)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("session_id,preferred,length,all_hit,terminated_by\n")
        for sid, t in enumerate(traces):
            fh.write(f"{sid},{t.preferred + 1},{t.length},{int(t.all_hit)},{t.terminated_by}\n")
