import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from seqcache.allocator import CacheProblem, Evaluator
from seqcache.analytics import (
    HitTerms,
    approx_hit_prob_truncated,
    exact_hit_prob_given_length,
    exact_hit_prob_small,
    expected_hit_prob,
    expected_length,
    hit_terms,
    per_request_success,
    rank_averaged_metrics,
    stop_prob,
)
from seqcache.errors import EnumerationTooLarge, InvalidParameterError
from seqcache.placement import NetworkModel, PlacementPolicy, place
from seqcache.popularity import LibraryModel, category_popularity, request_model

PPP = NetworkModel.poisson_disk(0.02, 10.0)
CASE_A = LibraryModel((20,) * 5)


def series_hit(h, q, f, eps, p_stay, mode, l_max=200):
    """Session all-hit probability as a truncated double sum over l and the in/out split m."""
    if mode == "paper":
        a, c = (1 - eps) * p_stay, (1 - eps) * (1 - p_stay)
    else:
        a, c = p_stay, 1 - p_stay
    total = 0.0
    for k in range(len(f)):
        for l in range(1, l_max + 1):
            pl = eps * (1 - eps) ** l if mode == "paper" else eps * (1 - eps) ** (l - 1)
            m = np.arange(l + 1)
            inner = np.sum(special.comb(l, m) * (a * h[k]) ** m * (c * q[k]) ** (l - m))
            total += f[k] * pl * inner
    return total


unit = st.floats(min_value=0.0, max_value=1.0)


def terms_strategy(K):
    return st.tuples(st.lists(unit, min_size=K, max_size=K), st.lists(unit, min_size=K, max_size=K))


class TestPerRequestSuccess:
    req = request_model(CASE_A, 0.1)

    def test_perfect_caching(self):
        ones = HitTerms(np.ones(5), np.ones(5))
        np.testing.assert_allclose(per_request_success(ones, self.req, "paper"), 0.9)
        np.testing.assert_allclose(per_request_success(ones, self.req, "consistent"), 1.0)

    def test_no_caching(self):
        zeros = HitTerms(np.zeros(5), np.zeros(5))
        for mode in ("paper", "consistent"):
            np.testing.assert_array_equal(per_request_success(zeros, self.req, mode), 0.0)

    def test_unknown_mode(self):
        with pytest.raises(InvalidParameterError):
            per_request_success(HitTerms(np.ones(5), np.ones(5)), self.req, "exact")

    def test_hit_terms_range_checked(self):
        with pytest.raises(InvalidParameterError):
            HitTerms(np.array([1.2]), np.array([0.0]))


class TestExpectedHitProb:
    def test_zero_success(self):
        req = request_model(CASE_A, 0.1)
        f = category_popularity(CASE_A)
        assert expected_hit_prob(HitTerms(np.zeros(5), np.zeros(5)), f, req) == 0.0

    def test_single_category_perfect_cache(self):
        lib = LibraryModel((4,))
        req = request_model(lib, 0.5)
        val = expected_hit_prob(HitTerms(np.ones(1), np.zeros(1)), [1.0], req, "paper")
        assert val == pytest.approx(1 / 6, abs=1e-15)

    @pytest.mark.parametrize("mode", ["paper", "consistent"])
    def test_closed_form_matches_series_at_reference_parameters(self, mode):
        prob = CacheProblem(CASE_A, PPP)
        ev = Evaluator(prob)
        for alpha in [(6, 6, 6, 6, 6), (12, 9, 6, 3, 0), (20, 10, 0, 0, 0), (2, 3, 5, 8, 12)]:
            t = ev.terms(alpha)
            closed = expected_hit_prob(t, prob.f, prob.request, mode)
            series = series_hit(t.h, t.q, prob.f, 0.1, prob.request.p_stay, mode)
            assert closed == pytest.approx(series, rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(terms_strategy(3), st.floats(0.1, 0.95), st.floats(0, 8),
           st.sampled_from(["paper", "consistent"]))
    def test_closed_form_matches_series_random(self, hq, eps, gamma_out, mode):
        lib = LibraryModel((3, 4, 5), gamma_out=gamma_out)
        req = request_model(lib, eps)
        f = category_popularity(lib)
        t = HitTerms(np.array(hq[0]), np.array(hq[1]))
        closed = expected_hit_prob(t, f, req, mode)
        series = series_hit(t.h, t.q, f, eps, req.p_stay, mode, l_max=400)
        assert closed == pytest.approx(series, rel=1e-9, abs=1e-12)


class TestStopAndLength:
    req = request_model(CASE_A, 0.1)
    f = category_popularity(CASE_A)

    def test_stop_prob_limits(self):
        np.testing.assert_allclose(stop_prob(HitTerms(np.ones(5), np.ones(5)), self.req), 0.1)
        np.testing.assert_allclose(stop_prob(HitTerms(np.zeros(5), np.zeros(5)), self.req), 1.0)

    def test_stop_prob_reference_value(self):
        t = HitTerms(np.full(5, 0.9), np.full(5, 0.5))
        # 0.1 + 0.9 * p_stay * 0.1 + 0.9 * (1 - p_stay) * 0.5 with p_stay = 0.964634763977784
        np.testing.assert_allclose(stop_prob(t, self.req), 0.2027314849679977, atol=1e-12)

    def test_length_limits(self):
        assert expected_length(HitTerms(np.zeros(5), np.zeros(5)), self.f, self.req) == 0.0
        assert expected_length(HitTerms(np.ones(5), np.ones(5)), self.f, self.req) == \
            pytest.approx(9.0, abs=1e-12)

    @given(terms_strategy(5), st.floats(0.01, 0.99), st.floats(0, 8))
    def test_length_bound(self, hq, eps, gamma_out):
        lib = LibraryModel((20,) * 5, gamma_out=gamma_out)
        req = request_model(lib, eps)
        t = HitTerms(np.array(hq[0]), np.array(hq[1]))
        assert expected_length(t, category_popularity(lib), req) <= 1 / eps - 1 + 1e-12

    @given(terms_strategy(4), st.integers(0, 3), st.sampled_from(["h", "q"]),
           st.floats(0.01, 0.9))
    def test_objectives_nondecreasing_in_hit_terms(self, hq, k, which, eps):
        lib = LibraryModel((5,) * 4)
        req = request_model(lib, eps)
        f = category_popularity(lib)
        h, q = np.array(hq[0]), np.array(hq[1])
        bumped_h, bumped_q = h.copy(), q.copy()
        target = bumped_h if which == "h" else bumped_q
        target[k] = min(1.0, target[k] + 1e-3)
        base, up = HitTerms(h, q), HitTerms(bumped_h, bumped_q)
        for mode in ("paper", "consistent"):
            assert expected_hit_prob(up, f, req, mode) >= expected_hit_prob(base, f, req, mode)
        assert expected_length(up, f, req) >= expected_length(base, f, req)


class TestExactEnumeration:
    def _setup(self, sizes=(3, 3), gamma_out=8.0, alpha=(1, 2), eps=0.1):
        lib = LibraryModel(sizes, gamma_out=gamma_out, gamma_in=2.4, c_in=0)
        policy = place(lib, PPP, alpha)
        return lib, policy, request_model(lib, eps)

    def test_single_request_collapses_to_mixture(self):
        lib, policy, req = self._setup(sizes=(3, 4, 2), alpha=(1, 2, 1), gamma_out=2)
        h = hit_terms(policy, lib, PPP).h
        f = category_popularity(lib)
        # outside requests pick each other category equally often, content by M-Zipf
        qbar = np.array([np.mean([h[i] for i in range(3) if i != k]) for k in range(3)])
        expected = float(f @ (req.p1_eff * h + req.p_out_eff * qbar))
        got = exact_hit_prob_given_length(1, policy, lib, PPP, req, "paper")
        assert got == pytest.approx(expected, abs=1e-14)

    def test_matches_brute_force_over_request_sequences(self):
        lib, policy, req = self._setup(sizes=(2, 3, 2), alpha=(1, 1, 1), gamma_out=1.5)
        h = hit_terms(policy, lib, PPP).h
        f = category_popularity(lib)
        l = 3
        brute = 0.0
        for k in range(3):
            others = [i for i in range(3) if i != k]
            perms = list(itertools.permutations(others))
            for perm in perms:
                order = (k,) + perm
                for ranks in itertools.product(range(3), repeat=l):
                    p = 1.0
                    for r in ranks:
                        p *= req.rank_probs[r] * h[order[r]]
                    brute += f[k] * p / len(perms)
        got = exact_hit_prob_given_length(l, policy, lib, PPP, req, "consistent")
        assert got == pytest.approx(brute, rel=1e-12)

    def test_full_cache_with_sure_node_gives_truncated_length_mass(self):
        lib = LibraryModel((2, 3))
        net = NetworkModel.explicit([0.0, 1.0])
        policy = PlacementPolicy((np.ones(2), np.ones(3)))
        req = request_model(lib, 0.2)
        got = exact_hit_prob_small(policy, lib, net, req, 6, "consistent")
        assert got == pytest.approx(1 - 0.8 ** 6, abs=1e-14)

    def test_uniform_outside_approximation_is_close_for_large_gamma_out(self):
        lib, policy, req = self._setup()
        f = category_popularity(lib)
        exact = exact_hit_prob_small(policy, lib, PPP, req, 3)
        approx = approx_hit_prob_truncated(hit_terms(policy, lib, PPP), f, req, 3)
        assert abs(exact - approx) <= 0.02

    def test_enumeration_guard(self):
        lib = LibraryModel((2,) * 5)
        policy = place(lib, PPP, (1,) * 5)
        with pytest.raises(EnumerationTooLarge):
            exact_hit_prob_given_length(2, policy, lib, PPP, request_model(lib, 0.1))
        lib2, policy2, req2 = self._setup()
        with pytest.raises(EnumerationTooLarge):
            exact_hit_prob_given_length(9, policy2, lib2, PPP, req2)


class TestRankAveraged:
    def test_two_equal_uniform_categories_need_no_approximation(self):
        lib = LibraryModel((6, 6), gamma_in=0.0)
        policy = place(lib, PPP, (4, 2))
        req = request_model(lib, 0.15)
        t = hit_terms(policy, lib, PPP)
        f = category_popularity(lib)
        for mode in ("paper", "consistent"):
            got = rank_averaged_metrics(policy, lib, PPP, req, mode)
            assert got.hit == pytest.approx(expected_hit_prob(t, f, req, mode), rel=1e-12)
            assert got.length == pytest.approx(expected_length(t, f, req), rel=1e-12)

    @pytest.mark.parametrize("mode", ["paper", "consistent"])
    def test_matches_sequence_enumeration(self, mode):
        # eps = 0.9 makes the mass beyond eight requests negligible (< 1e-7)
        lib = LibraryModel((3, 2, 4), gamma_out=1.0, c_in=0)
        policy = place(lib, PPP, (2, 1, 1))
        req = request_model(lib, 0.9)
        exact = exact_hit_prob_small(policy, lib, PPP, req, 8, mode)
        assert rank_averaged_metrics(policy, lib, PPP, req, mode).hit == \
            pytest.approx(exact, abs=1e-7)

    def test_uniform_outside_underestimates_when_it_is_exact_per_request(self):
        # equal sizes and flat popularity: only the within-session rank correlation differs
        lib = LibraryModel((5, 5, 5, 5), gamma_in=0.0, gamma_out=2.0)
        policy = place(lib, PPP, (4, 3, 2, 1))
        req = request_model(lib, 0.1)
        t = hit_terms(policy, lib, PPP)
        f = category_popularity(lib)
        got = rank_averaged_metrics(policy, lib, PPP, req)
        assert got.hit > expected_hit_prob(t, f, req, "consistent")
        assert got.length > expected_length(t, f, req)

    def test_guard(self):
        lib = LibraryModel((1,) * 9)
        with pytest.raises(EnumerationTooLarge):
            rank_averaged_metrics(place(lib, PPP, (1,) * 9), lib, PPP, request_model(lib, 0.1))


class TestShareTransfers:
    def test_moving_a_unit_helps_away_from_saturation(self):
        prob = CacheProblem(CASE_A, PPP)
        ev = Evaluator(prob)
        req = prob.request
        rng = np.random.default_rng(3)
        bases = [(6,) * 5, (12, 9, 6, 3, 0)]
        while len(bases) < 12:
            alpha = rng.multinomial(30, [0.2] * 5)
            if alpha.max() <= 20:
                bases.append(tuple(int(a) for a in alpha))
        for alpha in bases:
            base = ev.terms(alpha)
            for k in range(5):
                if alpha[k] >= 20:
                    continue
                for u in range(5):
                    if u == k or alpha[u] == 0:
                        continue
                    moved = list(alpha)
                    moved[k] += 1
                    moved[u] -= 1
                    t = ev.terms(moved)
                    before = req.p1_eff * base.h[k] + req.p_out_eff * base.q[k]
                    after = req.p1_eff * t.h[k] + req.p_out_eff * t.q[k]
                    assert after > before

    def test_spare_storage_never_hurts(self):
        prob = CacheProblem(LibraryModel((35, 25, 20, 15, 5)), PPP)
        ev = Evaluator(prob)
        rng = np.random.default_rng(5)
        for _ in range(30):
            alpha = [int(rng.integers(0, min(30, n) + 1)) for n in prob.library.sizes]
            while sum(alpha) >= 30:
                alpha[int(np.argmax(alpha))] -= 1
            for i in range(5):
                if alpha[i] < prob.caps[i]:
                    more = list(alpha)
                    more[i] += 1
                    for objective, mode in [("hit", "paper"), ("hit", "consistent"),
                                            ("length", "paper")]:
                        assert ev.value(more, objective, mode) >= ev.value(alpha, objective, mode)
