import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hscrl.baselines import (
    CandidateScore,
    GAConfig,
    ParetoMember,
    PSOConfig,
    Schedule,
    balance_scores,
    crowding_distance,
    decode,
    encode,
    evaluate_candidate,
    evaluate_population,
    fast_nondominated_sort,
    is_nondominated,
    nsga2_run,
    pso_minimize,
    pso_run,
    select_balance_score,
    select_best_efficiency,
)
from hscrl.demand import DemandParams, generate_series
from hscrl.env import Action, HSCEnv
from hscrl.errors import ConfigurationError
from hscrl.network import NetworkConfig, generate_instance
from oracles import brute_fronts


@pytest.fixture(scope="module")
def default_setup():
    return generate_instance(NetworkConfig()), generate_series(DemandParams(), 100, 10)


@pytest.fixture(scope="module")
def tiny():
    inst = generate_instance(NetworkConfig(n_centers=2, n_warehouses=1, n_points=2))
    return inst, generate_series(DemandParams(), 2, 2)


def member(eff, cost, idx=0):
    return ParetoMember(Schedule(np.array([idx % 2]), 1, 0), CandidateScore(eff, cost, 0.0))


class TestSchedule:
    def test_all_ones_decode(self):
        s = Schedule(np.ones(60, int), 15, 5)
        for t in range(3):
            a = decode(s, t)
            assert a.x_c.all() and a.x_w.all()

    def test_index_layout(self):
        bits = np.zeros(100 * 20, int)
        bits[7 * 20 + 17] = 1
        a = decode(Schedule(bits, 15, 5), 7)
        assert a.x_w.tolist() == [0, 0, 1, 0, 0] and not a.x_c.any()

    def test_roundtrip(self):
        rng = np.random.default_rng(0)
        acts = [Action(rng.integers(0, 2, 4), rng.integers(0, 2, 3)) for _ in range(6)]
        s = encode(acts)
        assert [decode(s, t) for t in range(6)] == acts
        assert s.horizon == 6 and len(s.to_string()) == 42

    def test_bounds(self):
        with pytest.raises(IndexError):
            decode(Schedule(np.ones(20, int), 15, 5), 1)

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            Schedule(np.array([0, 2]), 1, 1)
        with pytest.raises(ConfigurationError):
            Schedule(np.ones(21, int), 15, 5)


class TestEvaluation:
    def test_all_zero(self, default_setup):
        inst, series = default_setup
        s = evaluate_candidate(Schedule(np.zeros(2000, int), 15, 5), inst, series, 0)
        assert (s.total_efficiency, s.total_cost, s.total_reward) == (0, 0, 0)

    def test_all_ones_costs(self, default_setup):
        inst, series = default_setup
        s = evaluate_candidate(Schedule(np.ones(2000, int), 15, 5), inst, series, 0)
        assert s.total_cost >= 100 * (inst.E_c.sum() + inst.E_w.sum())

    def test_deterministic_and_totals(self, default_setup):
        inst, series = default_setup
        sched = Schedule(np.random.default_rng(0).integers(0, 2, 2000), 15, 5)
        a = evaluate_candidate(sched, inst, series, 3)
        b = evaluate_candidate(sched, inst, series, 3)
        assert (a.total_efficiency, a.total_cost, a.total_reward) == (b.total_efficiency, b.total_cost, b.total_reward)
        assert abs(a.total_reward - a.series["reward"].sum()) < 1e-9
        assert abs(a.total_cost - a.series["cost"].sum()) < 1e-9

    def test_matches_env(self, default_setup):
        inst, series = default_setup
        sched = Schedule(np.random.default_rng(1).integers(0, 2, 200), 15, 5)
        score = evaluate_candidate(sched, inst, series, 8)
        env = HSCEnv(inst, series, horizon=10)
        env.reset(8)
        total = sum(env.step(decode(sched, t))[1].reward for t in range(10))
        assert total == pytest.approx(score.total_reward, abs=1e-12)

    def test_population_chunking(self, default_setup):
        inst, series = default_setup
        bits = np.random.default_rng(2).integers(0, 2, (7, 200))
        a = evaluate_population(bits, inst, series, 0, chunk=3)
        b = evaluate_population(bits, inst, series, 0)
        assert np.array_equal(a["reward"], b["reward"])


class TestSorting:
    def test_single(self):
        assert fast_nondominated_sort([(1.0, 1.0)]) == [[0]]

    def test_pair(self):
        assert fast_nondominated_sort([(10, 5), (20, 3)]) == [[1], [0]]

    def test_duplicates_share_front(self):
        assert fast_nondominated_sort([(1, 1), (1, 1), (0, 2)]) == [[0, 1], [2]]

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 65))
            # coarse grid so ties and duplicates occur
            pts = rng.integers(0, 8, size=(n, 2)).astype(float)
            got = [set(f) for f in fast_nondominated_sort(pts)]
            assert got == brute_fronts(pts.tolist())

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=40))
    def test_partition(self, pts):
        fronts = fast_nondominated_sort(pts)
        flat = sorted(i for f in fronts for i in f)
        assert flat == list(range(len(pts)))


class TestCrowding:
    def test_small_fronts_infinite(self):
        assert np.all(np.isinf(crowding_distance([(1, 2), (3, 4)])))
        assert np.all(np.isinf(crowding_distance([(1, 2)])))

    def test_collinear(self):
        d = crowding_distance([(0, 0), (1, 1), (2, 2)])
        assert np.isinf(d[0]) and np.isinf(d[2]) and d[1] == 2.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 10), st.integers(0, 10)), min_size=1, max_size=15), st.randoms())
    def test_order_invariant(self, pts, rnd):
        perm = list(range(len(pts)))
        rnd.shuffle(perm)
        d = crowding_distance(pts)
        dp = crowding_distance([pts[i] for i in perm])
        assert np.array_equal(d[perm], dp)


class TestSelection:
    def test_single(self):
        m = member(1, 2)
        assert select_balance_score([m]) is m and select_best_efficiency([m]) is m

    def test_bs_tie_break(self):
        a, b = member(100, 100), member(0, 0)
        assert np.allclose(balance_scores([a, b]), [0.5, 0.5])
        assert select_balance_score([a, b]) is b

    def test_be(self):
        a, b = member(100, 50), member(90, 10)
        assert select_best_efficiency([b, a]) is a

    def test_be_tie_prefers_cheaper(self):
        a, b = member(100, 50), member(100, 40)
        assert select_best_efficiency([a, b]) is b

    def test_empty(self):
        with pytest.raises(ConfigurationError):
            select_balance_score([])
        with pytest.raises(ConfigurationError):
            select_best_efficiency([])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 100), st.floats(-1000, 1000))
    def test_affine_invariance_and_be_dominates_bs(self, seed, scale, shift):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 12))
        eff = np.sort(rng.uniform(0, 1000, n))
        cost = np.sort(rng.uniform(0, 1000, n))  # monotone pairs form a valid front
        front = [member(e, c, i) for i, (e, c) in enumerate(zip(eff, cost))]
        scaled = [member(e * scale + shift, c, i) for i, (e, c) in enumerate(zip(eff, cost))]
        assert front.index(select_balance_score(front)) == scaled.index(select_balance_score(scaled))
        be, bs = select_best_efficiency(front), select_balance_score(front)
        assert be.score.total_efficiency >= bs.score.total_efficiency


class TestNSGA:
    def test_zero_generations(self, tiny):
        inst, series = tiny
        front = nsga2_run(inst, series, GAConfig(pop=20, generations=0))
        assert front and is_nondominated(front)

    def test_front_valid_and_deterministic(self, default_setup):
        inst, series = default_setup
        cfg = GAConfig(pop=30, generations=5, seed=2, eval_seed=1)
        a = nsga2_run(inst, series, cfg, horizon=10)
        b = nsga2_run(inst, series, cfg, horizon=10)
        assert is_nondominated(a)
        assert [m.schedule for m in a] == [m.schedule for m in b]
        assert len({m.schedule.to_string() for m in a}) == len(a)
        for m in a:
            re = evaluate_candidate(m.schedule, inst, series, 1)
            assert re.total_efficiency == m.score.total_efficiency and re.total_cost == m.score.total_cost

    def test_tiny_exhaustive(self, tiny):
        inst, series = tiny
        T, K = 2, 3
        best_eff = -np.inf
        for bits in itertools.product([0, 1], repeat=T * K):
            env = HSCEnv(inst, series, horizon=T)
            env.reset(0)
            eff = sum(env.step(Action.from_bits(np.array(bits[t * K:(t + 1) * K]), 2))[1].efficiency
                      for t in range(T))
            best_eff = max(best_eff, eff)
        front = nsga2_run(inst, series, GAConfig(pop=20, generations=20, eval_seed=0))
        assert select_best_efficiency(front).score.total_efficiency == best_eff


class TestPSO:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_sphere(self, seed):
        cfg = PSOConfig(pop=40, generations=200, seed=seed)
        _, f = pso_minimize(lambda x: (x**2).sum(axis=1), 10, -5.0, 5.0, cfg)
        assert f < 1e-3

    def test_zero_generations_and_monotone(self, default_setup):
        inst, series = default_setup
        hist = []
        sched, score = pso_run(inst, series, PSOConfig(pop=10, generations=0), horizon=5, history=hist)
        assert len(hist) == 1 and score.total_reward == pytest.approx(hist[0], abs=1e-12)
        hist = []
        pso_run(inst, series, PSOConfig(pop=10, generations=8), horizon=5, history=hist)
        assert len(hist) == 9 and all(b >= a for a, b in zip(hist, hist[1:]))

    def test_deterministic(self, default_setup):
        inst, series = default_setup
        cfg = PSOConfig(pop=8, generations=3, seed=4)
        a, _ = pso_run(inst, series, cfg, horizon=5)
        b, _ = pso_run(inst, series, cfg, horizon=5)
        assert a == b
