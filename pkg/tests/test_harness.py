from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hscrl import harness
from hscrl.baselines import Schedule, evaluate_candidate
from hscrl.demand import generate_series
from hscrl.errors import ConfigurationError, InsufficientDataError
from hscrl.network import generate_instance
from hscrl.records import config_hash, format_csv, parse_csv, parse_key_values, read_csv

# a few seconds per training job at these sizes
FAST = {"total_steps": "200", "time_steps": "10", "hidden": "8", "runs": "2",
        "nsga_pop": "10", "nsga_generations": "2", "pso_pop": "6", "pso_generations": "2"}


def fast_cfg(tmp_path=None, **extra):
    cfg = harness.apply_overrides(harness.ExperimentConfig(), {**FAST, **extra})
    return replace(cfg, out_dir=str(tmp_path) if tmp_path else None)


class TestSummarize:
    def test_constant(self):
        s = harness.summarize(np.full((3, 20), 2.0))
        assert (s.avg_reward_first10, s.avg_reward_last10, s.reward_std) == (2.0, 2.0, 0.0)

    def test_arithmetic_sequence(self):
        # values 0.01, 0.02, ..., 2.00
        m = (np.arange(1, 201) / 100.0)[None]
        s = harness.summarize(m)
        assert s.avg_reward_first10 == pytest.approx(0.055, abs=1e-12)
        assert s.avg_reward_last10 == pytest.approx(1.955, abs=1e-12)
        # population std of 1..n is sqrt((n^2 - 1) / 12)
        assert s.reward_std == pytest.approx(np.sqrt((200**2 - 1) / 12) / 100, abs=1e-12)

    def test_permutation_invariant(self):
        m = np.random.default_rng(0).normal(size=(5, 30))
        assert harness.summarize(m) == harness.summarize(m[::-1])

    def test_single_run(self):
        row = np.random.default_rng(1).normal(size=15)
        s = harness.summarize(row[None])
        assert s.avg_reward_first10 == row[:10].mean() and s.reward_std == row.std()

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            harness.summarize(np.zeros((2, 9)))


class TestConfig:
    def test_overrides(self):
        cfg = harness.apply_overrides(harness.ExperimentConfig(),
                                      {"clip_max": "1000", "h": "2", "dist_cw": "5-100", "seed": "3", "runs": "2"})
        assert cfg.demand.clip_high == 1000 and cfg.network.transport_coef == 2
        assert cfg.network.dist_cw_range == (5, 100)
        assert cfg.run_seeds == (3, 4) and cfg.n_runs == 2

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError):
            harness.apply_overrides(harness.ExperimentConfig(), {"warp_factor": "9"})

    def test_bad_value(self):
        with pytest.raises(ConfigurationError):
            harness.apply_overrides(harness.ExperimentConfig(), {"gamma": "lots"})
        with pytest.raises(ConfigurationError):
            harness.apply_overrides(harness.ExperimentConfig(), {"dist_cw": "5-"})

    def test_invalid_combination(self):
        with pytest.raises(ConfigurationError):
            harness.apply_overrides(harness.ExperimentConfig(), {"dist_cw": "10-5"})

    def test_config_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\ndemand_model = poisson\nclip_max=3000\ntotal_steps=400  # short\n")
        cfg = harness.load_config_file(p)
        assert cfg.demand.model.value == "poisson" and cfg.demand.clip_high == 3000
        assert cfg.train.total_steps == 400

    def test_config_file_errors(self, tmp_path):
        with pytest.raises(ConfigurationError):
            harness.load_config_file(tmp_path / "missing.cfg")
        p = tmp_path / "bad.cfg"
        p.write_text("just words\n")
        with pytest.raises(ConfigurationError):
            harness.load_config_file(p)

    def test_hash_stable_and_sensitive(self):
        a = harness.ExperimentConfig()
        assert a.hash() == harness.ExperimentConfig().hash()
        assert a.hash() != harness.apply_overrides(a, {"mu": "0.03"}).hash()
        assert a.hash() == replace(a, out_dir="/elsewhere", jobs=4).hash()

    def test_every_parameter_name_resolves(self):
        for key, (section, name, _) in harness.PARAMS.items():
            if section == "experiment":
                continue
            target = getattr(harness.ExperimentConfig(), section)
            assert name == "init_range" or hasattr(target, name), key


class TestVariants:
    def test_variant_2(self):
        [(label, cfg)] = harness.variant_configs(harness.ExperimentConfig(), "②")
        assert (cfg.network.n_centers, cfg.network.n_warehouses, cfg.network.n_points) == (5, 10, 15)

    def test_variant_4(self):
        [(_, cfg)] = harness.variant_configs(harness.ExperimentConfig(), "4")
        assert cfg.network.dist_cw_range == (5, 100) and cfg.network.dist_wp_range == (5, 100)

    def test_variant_6_swaps_5(self):
        [(_, c5)] = harness.variant_configs(harness.ExperimentConfig(), "5")
        [(_, c6)] = harness.variant_configs(harness.ExperimentConfig(), "6")
        assert c5.network.center_cost_range == c6.network.warehouse_cost_range
        assert c5.network.center_capacity_range == c6.network.warehouse_capacity_range

    def test_triples(self):
        subs = harness.variant_configs(harness.ExperimentConfig(), "9")
        assert [c.network.switch_cost_warehouse for _, c in subs] == [5, 50, 25]

    def test_unknown(self):
        with pytest.raises(ConfigurationError):
            harness.variant_configs(harness.ExperimentConfig(), "10")

    def test_empty_suite(self):
        assert harness.run_sensitivity_suite(fast_cfg(), []) == []


class TestTraining:
    def test_single_run_summary(self):
        res = harness.run_training_experiment(fast_cfg(runs="1"))
        assert res.metrics["reward"].shape == (1, 20)
        assert res.summary == harness.summarize(res.metrics["reward"])

    def test_csvs_recompute(self, tmp_path):
        res = harness.run_training_experiment(fast_cfg(tmp_path))
        header, rows, chash = read_csv(tmp_path / "train_runs.csv")
        assert header == ["run", "episode", "reward", "avg_satisfaction", "efficiency", "cost", "avg_inventory"]
        assert chash and len(rows) == 2 * 20
        m = np.zeros((2, 20))
        for r in rows:
            m[int(r[0]), int(r[1]) - 1] = float(r[2])
        s = harness.summarize(m)
        _, srows, _ = read_csv(tmp_path / "summary.csv")
        emitted = [float(v) for v in srows[0][2:]]
        assert np.allclose(emitted, [s.avg_reward_first10, s.avg_reward_last10, s.reward_std], atol=1e-9, rtol=0)
        header, avg_rows, _ = read_csv(tmp_path / "train_metrics.csv")
        assert header == ["episode", "reward", "avg_satisfaction", "efficiency", "cost", "avg_inventory"]
        assert np.allclose([float(r[1]) for r in avg_rows], m.mean(axis=0), atol=1e-12, rtol=0)
        assert (tmp_path / "policy_seed0.ckpt").exists()

    def test_runs_use_distinct_demand(self):
        res = harness.run_training_experiment(fast_cfg())
        assert not np.array_equal(res.metrics["reward"][0], res.metrics["reward"][1])

    def test_parallel_matches_serial(self):
        a = harness.run_training_experiment(fast_cfg())
        b = harness.run_training_experiment(replace(fast_cfg(), jobs=2))
        assert np.array_equal(a.metrics["reward"], b.metrics["reward"])


class TestSweep:
    def test_degenerate_pair_equals_default(self):
        cfg = fast_cfg()
        [cell] = harness.run_price_sweep(cfg, [0.5], [100], grid=True)
        inst = generate_instance(cfg.network)
        series = generate_series(cfg.demand, cfg.train.horizon, cfg.network.n_points)
        base = harness.train_runs(cfg, inst, series)
        assert cell.final_avg_reward == float(harness.run_mean(base.metrics["reward"])[-10:].mean())

    def test_grid_shape(self, tmp_path):
        cells = harness.run_price_sweep(fast_cfg(tmp_path, runs="1"), [0.5, 1.0], [50, 100, 200], grid=True)
        assert len(cells) == 6
        _, rows, _ = read_csv(tmp_path / "sweep.csv")
        assert len(rows) == 6

    def test_per_axis(self):
        cells = harness.run_price_sweep(fast_cfg(runs="1"), [0.5, 1.0], [50], grid=False)
        assert [(c.axis, c.h, c.V) for c in cells] == [("h", 0.5, 100), ("h", 1.0, 100), ("V", 0.5, 50)]

    def test_zero_value_nonpositive_rewards(self):
        cfg = fast_cfg(runs="1")
        inst = generate_instance(cfg.network).with_prices(kit_value=0)
        series = generate_series(cfg.demand, cfg.train.horizon, cfg.network.n_points)
        res = harness.train_runs(cfg, inst, series)
        assert np.all(res.metrics["efficiency"] == 0) and np.all(res.metrics["reward"] <= 0)

    def test_empty_lists(self):
        with pytest.raises(ConfigurationError):
            harness.run_price_sweep(fast_cfg(), [], [100])


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    out = tmp_path_factory.mktemp("cmp")
    return harness.run_comparison(fast_cfg(out)), out


class TestComparison:
    def test_shape(self, report):
        rep, _ = report
        assert set(rep.series) == set(harness.METHODS)
        for m in harness.METHODS:
            assert rep.series[m].shape == (10, 5)

    def test_totals(self, report):
        rep, out = report
        for m in harness.METHODS:
            assert np.allclose(rep.totals[m], rep.series[m].sum(axis=0), atol=1e-9, rtol=0)
        _, rows, _ = read_csv(out / "compare_totals.csv")
        _, ts, _ = read_csv(out / "compare_timeseries.csv")
        assert len(rows) == 4 and len(ts) == 40
        for row in rows:
            per = np.array([[float(v) for v in r[2:]] for r in ts if r[0] == row[0]])
            assert np.allclose([float(v) for v in row[1:]], per.sum(axis=0), atol=1e-9, rtol=0)

    def test_shared_inputs(self, report):
        rep, out = report
        assert len(set(rep.fingerprints.values())) == 1
        _, rows, _ = read_csv(out / "compare_meta.csv")
        assert len({r[1] for r in rows}) == 1

    def test_front_csv_and_schedules(self, report):
        rep, out = report
        header, rows, _ = read_csv(out / "front.csv")
        assert header == ["member", "total_efficiency", "total_cost", "total_reward", "selected_by"]
        assert len(rows) == len(rep.front)
        tags = [r[4] for r in rows]
        assert sum("BS" in t for t in tags) == 1 and sum("BE" in t for t in tags) == 1
        lines = (out / "schedules.txt").read_text().splitlines()
        assert [l.split(",")[0] for l in lines] == list(harness.METHODS)
        assert all(len(l.split(",")[1]) == 10 * 20 for l in lines)

    def test_heuristic_series_replays(self, report):
        rep, _ = report
        cfg = fast_cfg()
        inst = generate_instance(cfg.network)
        series = generate_series(cfg.demand, 10, 10)
        score = evaluate_candidate(Schedule(rep.schedules["PSO"], 15, 5), inst, series, cfg.eval_seed)
        assert score.total_reward == pytest.approx(rep.total("PSO", "reward"), abs=1e-9)

    def test_ppo_schedule_replays(self, report):
        rep, _ = report
        cfg = fast_cfg()
        inst = generate_instance(cfg.network)
        series = generate_series(cfg.demand, 10, 10)
        score = evaluate_candidate(Schedule(rep.schedules["PPO"], 15, 5), inst, series, cfg.eval_seed)
        assert score.total_reward == pytest.approx(rep.total("PPO", "reward"), abs=1e-9)


class TestDeterminism:
    def test_training_csvs_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            harness.run_training_experiment(fast_cfg(tmp_path / d))
        for name in ("train_runs.csv", "train_metrics.csv", "summary.csv", "policy_seed0.ckpt", "instance.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestRecords:
    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(-10**6, 10**6),
                              st.floats(allow_nan=False, allow_infinity=False),
                              st.text(alphabet="abc,\" ", max_size=5)), max_size=10))
    def test_csv_roundtrip(self, rows):
        text = format_csv(["i", "x", "s"], rows, "deadbeef")
        header, parsed, chash = parse_csv(text)
        assert header == ["i", "x", "s"] and chash == "deadbeef"
        assert [(int(a), float(b), c) for a, b, c in parsed] == [tuple(r) for r in rows]

    def test_config_hash_canonical(self):
        assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})

    def test_key_values(self):
        assert parse_key_values("a=1\n\n# c\nb = x y # tail\n") == {"a": "1", "b": "x y"}
        with pytest.raises(ValueError):
            parse_key_values("=3\n")

    def test_parse_range(self):
        assert harness.parse_range("5-100") == (5, 100)
        assert harness.parse_range("0.5,1.5") == (0.5, 1.5)
        assert harness.parse_range((1, 2)) == (1, 2)
