"""Experiment orchestration: training tables, sensitivity suite, price sweeps,
four-method comparison, and their CSV outputs.

Every CSV starts with ``# config_sha256=<hash>`` (the resolved experiment
configuration) followed by a header row. Outputs depend only on the
configuration and seeds, so reruns reproduce them byte for byte.
"""

from __future__ import annotations

import enum
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from hscrl import baselines
from hscrl.demand import DemandModel, DemandParams, DemandSeries, generate_series
from hscrl.env import ROLLOUT_FIELDS, Action, HSCEnv, MismatchMode
from hscrl.errors import ConfigurationError, InsufficientDataError
from hscrl.network import NetworkConfig, NetworkInstance, dumps_instance, generate_instance
from hscrl.ppo import METRICS, PolicyParams, TrainConfig, run_episode, save_checkpoint, train
from hscrl.records import config_hash, parse_key_values, write_csv
from hscrl.streams import POLICY, make_stream

log = logging.getLogger(__name__)


class ExperimentKind(str, enum.Enum):
    TRAIN = "train"
    SENSITIVITY = "sensitivity"
    PRICE_SWEEP = "sweep"
    COMPARE = "compare"
    DEMAND = "demand"


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkConfig = NetworkConfig()
    demand: DemandParams = DemandParams()
    train: TrainConfig = TrainConfig()
    ga: baselines.GAConfig = baselines.GAConfig()
    pso: baselines.PSOConfig = baselines.PSOConfig()
    run_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    kind: ExperimentKind = ExperimentKind.TRAIN
    overrides: tuple[tuple[str, str], ...] = ()
    mismatch_mode: MismatchMode = MismatchMode.CURRENT
    eval_seed: int = 0
    jobs: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if not self.run_seeds:
            raise ConfigurationError("at least one run seed is required")
        object.__setattr__(self, "run_seeds", tuple(int(s) for s in self.run_seeds))
        object.__setattr__(self, "kind", ExperimentKind(self.kind))
        object.__setattr__(self, "mismatch_mode", MismatchMode.parse(self.mismatch_mode))

    @property
    def n_runs(self) -> int:
        return len(self.run_seeds)

    def resolved(self) -> dict:
        """Everything that influences results; ``out_dir`` and ``jobs`` are excluded."""
        return {
            "network": self.network, "demand": self.demand, "train": self.train,
            "ga": self.ga, "pso": self.pso, "run_seeds": list(self.run_seeds),
            "kind": self.kind, "mismatch_mode": self.mismatch_mode, "eval_seed": self.eval_seed,
        }

    def hash(self, **extra) -> str:
        return config_hash({**self.resolved(), **extra})


# ---------------------------------------------------------------------------
# parameter names for config files and overrides
# ---------------------------------------------------------------------------

def parse_range(value) -> tuple[float, float]:
    if isinstance(value, (tuple, list)):
        lo, hi = value
    else:
        text = str(value).replace(" ", "")
        sep = "," if "," in text else "-"
        parts = text.split(sep)
        if len(parts) != 2:
            raise ConfigurationError(f"expected a range like 400-800, got {value!r}")
        lo, hi = parts
    lo, hi = float(lo), float(hi)
    return (int(lo) if lo.is_integer() else lo, int(hi) if hi.is_integer() else hi)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"expected a boolean, got {value!r}")


def _opt_float(value):
    if value is None or str(value).strip().lower() in ("", "none", "auto"):
        return None
    return float(value)


PARAMS: dict[str, tuple[str, str, Any]] = {
    # network
    "n_centers": ("network", "n_centers", int),
    "n_warehouses": ("network", "n_warehouses", int),
    "n_points": ("network", "n_points", int),
    "center_cost": ("network", "center_cost_range", parse_range),
    "center_capacity": ("network", "center_capacity_range", parse_range),
    "warehouse_cost": ("network", "warehouse_cost_range", parse_range),
    "warehouse_capacity": ("network", "warehouse_capacity_range", parse_range),
    "dist_cw": ("network", "dist_cw_range", parse_range),
    "dist_wp": ("network", "dist_wp_range", parse_range),
    "h": ("network", "transport_coef", float),
    "V": ("network", "kit_value", float),
    "mismatch_coef": ("network", "mismatch_coef", float),
    "switch_center": ("network", "switch_cost_center", float),
    "switch_warehouse": ("network", "switch_cost_warehouse", float),
    "network_seed": ("network", "seed", int),
    # demand
    "demand_model": ("demand", "model", DemandModel.parse),
    "mu": ("demand", "mu", float),
    "sigma": ("demand", "sigma", float),
    "shock_std": ("demand", "shock_std", float),
    "poisson_rate": ("demand", "poisson_rate", float),
    "jump_intensity": ("demand", "jump_intensity", float),
    "jump_mean": ("demand", "jump_mean", float),
    "jump_std": ("demand", "jump_std", float),
    "init_demand": ("demand", "init_range", parse_range),
    "clip_min": ("demand", "clip_low", float),
    "clip_max": ("demand", "clip_high", float),
    "demand_seed": ("demand", "seed", int),
    # training
    "time_steps": ("train", "horizon", int),
    "gamma": ("train", "gamma", float),
    "gae_lambda": ("train", "gae_lambda", float),
    "clip_epsilon": ("train", "clip_epsilon", float),
    "learning_rate": ("train", "learning_rate", float),
    "entropy_coef": ("train", "entropy_coef", float),
    "value_coef": ("train", "value_coef", float),
    "batch_size": ("train", "minibatch_size", int),
    "epochs_per_update": ("train", "epochs_per_update", int),
    "rollout_episodes": ("train", "rollout_episodes_per_update", int),
    "total_steps": ("train", "total_steps", int),
    "max_grad_norm": ("train", "max_grad_norm", float),
    "hidden": ("train", "hidden", int),
    "normalize_values": ("train", "normalize_values", _bool),
    # heuristics
    "nsga_pop": ("ga", "pop", int),
    "nsga_generations": ("ga", "generations", int),
    "crossover_p": ("ga", "crossover_p", float),
    "mutation_p": ("ga", "mutation_p", _opt_float),
    "pso_pop": ("pso", "pop", int),
    "pso_generations": ("pso", "generations", int),
    "pso_inertia": ("pso", "inertia", float),
    "pso_c1": ("pso", "c1", float),
    "pso_c2": ("pso", "c2", float),
    # experiment
    "seed": ("experiment", "seed", int),
    "runs": ("experiment", "runs", int),
    "eval_seed": ("experiment", "eval_seed", int),
    "mismatch_mode": ("experiment", "mismatch_mode", MismatchMode.parse),
    "jobs": ("experiment", "jobs", int),
}


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """Return a copy of ``cfg`` with named parameters replaced.

    ``seed``/``runs`` rebuild ``run_seeds`` as ``seed, seed+1, ...``.
    """
    sections: dict[str, dict] = {"network": {}, "demand": {}, "train": {}, "ga": {}, "pso": {}, "experiment": {}}
    for key, value in overrides.items():
        if key not in PARAMS:
            raise ConfigurationError(f"unknown parameter {key!r}")
        section, name, conv = PARAMS[key]
        try:
            converted = conv(value)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad value for {key}: {value!r} ({exc})") from None
        if name == "init_range":
            sections[section]["init_low"], sections[section]["init_high"] = map(float, converted)
        else:
            sections[section][name] = converted
    exp = sections.pop("experiment")
    changes: dict[str, Any] = {}
    for section, fields_ in sections.items():
        if fields_:
            changes[section] = replace(getattr(cfg, section), **fields_)
    if "seed" in exp or "runs" in exp:
        start = exp.pop("seed", cfg.run_seeds[0])
        count = exp.pop("runs", cfg.n_runs)
        if count < 1:
            raise ConfigurationError("runs must be >= 1")
        changes["run_seeds"] = tuple(range(start, start + count))
    changes.update(exp)
    recorded = dict(cfg.overrides)
    recorded.update({k: str(v) for k, v in overrides.items()})
    changes["overrides"] = tuple(sorted(recorded.items()))
    return replace(cfg, **changes)


def load_config_file(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        kv = parse_key_values(Path(path).read_text())
    except ValueError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return apply_overrides(base or ExperimentConfig(), kv)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSummary:
    avg_reward_first10: float
    avg_reward_last10: float
    reward_std: float


def summarize(rewards) -> RunSummary:
    """Average across runs per episode, then first/last-10 means and population std."""
    m = np.atleast_2d(np.asarray(rewards, dtype=np.float64))
    if m.shape[1] < 10:
        raise InsufficientDataError(f"need at least 10 episodes, got {m.shape[1]}")
    curve = run_mean(m)
    return RunSummary(float(curve[:10].mean()), float(curve[-10:].mean()), float(curve.std()))


def run_mean(m: np.ndarray) -> np.ndarray:
    """Per-episode mean over runs; sorting first makes it exactly order-independent."""
    return np.sort(m, axis=0).mean(axis=0)


@dataclass
class TrainingResult:
    metrics: dict[str, np.ndarray]  # metric -> (runs, episodes)
    summary: RunSummary
    params: list[PolicyParams] = field(default_factory=list, repr=False)

    def averaged(self) -> dict[str, np.ndarray]:
        return {k: run_mean(v) for k, v in self.metrics.items()}


def _train_one(job):
    instance, demand, tcfg, mode = job
    params, metrics = train(instance, demand, tcfg, mismatch_mode=mode)
    return params, np.array([m.as_tuple() for m in metrics])


def _map(fn, jobs: list, n_workers: int):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def train_runs(cfg: ExperimentConfig, instance: NetworkInstance, series: DemandSeries | None = None) -> TrainingResult:
    """Train one agent per run seed.

    With ``series=None`` every run draws its own demand (seed ``demand.seed + run_seed``);
    otherwise all runs share the given series.
    """
    jobs = []
    for rs in cfg.run_seeds:
        demand = series if series is not None else cfg.demand.with_(seed=cfg.demand.seed + rs)
        jobs.append((instance, demand, cfg.train.with_(seed=rs), cfg.mismatch_mode))
    results = _map(_train_one, jobs, cfg.jobs)
    stacked = np.stack([r[1] for r in results])  # (runs, episodes, 5)
    metrics = {m: stacked[:, :, i] for i, m in enumerate(METRICS)}
    return TrainingResult(metrics, summarize(metrics["reward"]), [r[0] for r in results])


def _metric_rows(metrics: dict[str, np.ndarray]):
    runs, episodes = metrics["reward"].shape
    for r in range(runs):
        for e in range(episodes):
            yield [r, e + 1] + [metrics[m][r, e] for m in METRICS]


def _averaged_rows(avg: dict[str, np.ndarray], prefix=()):
    for e in range(len(avg["reward"])):
        yield list(prefix) + [e + 1] + [avg[m][e] for m in METRICS]


SUMMARY_HEADER = ["avg_reward_first10", "avg_reward_last10", "reward_std"]


def _summary_row(s: RunSummary):
    return [s.avg_reward_first10, s.avg_reward_last10, s.reward_std]


def run_training_experiment(cfg: ExperimentConfig, write_checkpoints: bool = True) -> TrainingResult:
    """Train ``n_runs`` agents on per-run stochastic demand and emit CSVs."""
    instance = generate_instance(cfg.network)
    result = train_runs(cfg, instance)
    if cfg.out_dir:
        out, chash = Path(cfg.out_dir), cfg.hash()
        write_csv(out / "train_runs.csv", ["run", "episode", *METRICS], _metric_rows(result.metrics), chash)
        write_csv(out / "train_metrics.csv", ["episode", *METRICS], _averaged_rows(result.averaged()), chash)
        write_csv(out / "summary.csv", ["demand", "clip_max", *SUMMARY_HEADER],
                  [[cfg.demand.model.value, cfg.demand.clip_high, *_summary_row(result.summary)]], chash)
        (out / "instance.txt").write_text(dumps_instance(instance))
        if write_checkpoints:
            for rs, params in zip(cfg.run_seeds, result.params):
                save_checkpoint(params, cfg.train.with_(seed=rs), out / f"policy_seed{rs}.ckpt")
    return result


# ---------------------------------------------------------------------------
# sensitivity suite
# ---------------------------------------------------------------------------

SENSITIVITY_VARIANTS: dict[str, list[tuple[str, dict]]] = {
    "1": [("1", {"n_centers": 15, "n_warehouses": 5, "n_points": 10})],
    "2": [("2", {"n_centers": 5, "n_warehouses": 10, "n_points": 15})],
    "3": [("3", {"n_centers": 15, "n_warehouses": 10, "n_points": 5})],
    "4": [("4", {"dist_cw": (5, 100), "dist_wp": (5, 100)})],
    "5": [("5", {"center_cost": (500, 1000), "center_capacity": (600, 1125),
                 "warehouse_cost": (300, 700), "warehouse_capacity": (2000, 5000)})],
    "6": [("6", {"center_cost": (300, 700), "center_capacity": (2000, 5000),
                 "warehouse_cost": (500, 1000), "warehouse_capacity": (600, 1125)})],
    "7": [(f"7:{v}", {"mismatch_coef": v}) for v in (0.5, 15, 20)],
    "8": [(f"8:{v}", {"switch_center": v}) for v in (10, 5, 3)],
    "9": [(f"9:{v}", {"switch_warehouse": v}) for v in (5, 50, 25)],
}

_CIRCLED = {chr(0x2460 + i): str(i + 1) for i in range(9)}


def variant_configs(cfg: ExperimentConfig, variant_id: str) -> list[tuple[str, ExperimentConfig]]:
    vid = _CIRCLED.get(str(variant_id).strip(), str(variant_id).strip())
    if vid not in SENSITIVITY_VARIANTS:
        raise ConfigurationError(f"unknown sensitivity variant {variant_id!r} (expected 1-9)")
    return [(label, apply_overrides(cfg, ov)) for label, ov in SENSITIVITY_VARIANTS[vid]]


def run_sensitivity_suite(cfg: ExperimentConfig, variant_ids) -> list[tuple[str, RunSummary]]:
    """Train every sub-variant on one fixed GBM series shared by all runs."""
    rows, curves, table = [], [], []
    for vid in variant_ids:
        for label, vcfg in variant_configs(cfg, vid):
            instance = generate_instance(vcfg.network)
            series = generate_series(vcfg.demand, vcfg.train.horizon, vcfg.network.n_points)
            result = train_runs(vcfg, instance, series)
            table.append((label, result.summary))
            rows.append([label, *_summary_row(result.summary)])
            curves.extend(_averaged_rows(result.averaged(), prefix=(label,)))
            log.info("variant %s: %s", label, result.summary)
    if cfg.out_dir:
        out, chash = Path(cfg.out_dir), cfg.hash(variants=[str(v) for v in variant_ids])
        write_csv(out / "sensitivity_summary.csv", ["variant", *SUMMARY_HEADER], rows, chash)
        write_csv(out / "sensitivity_curves.csv", ["variant", "episode", *METRICS], curves, chash)
    return table


# ---------------------------------------------------------------------------
# price sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    axis: str
    h: float
    V: float
    final_avg_reward: float


def run_price_sweep(cfg: ExperimentConfig, h_values, V_values, grid: bool = False,
                    window: int = 10) -> list[SweepCell]:
    """Final-phase (last ``window`` episodes) average reward for each price setting.

    Per-axis mode varies one price with the other at its configured value;
    grid mode trains every ``(h, V)`` pair. Topology and the fixed demand series
    are shared by all cells.
    """
    h_values, V_values = [float(v) for v in h_values], [float(v) for v in V_values]
    if not h_values or not V_values:
        raise ConfigurationError("price sweep needs at least one h and one V value")
    base = generate_instance(cfg.network)
    series = generate_series(cfg.demand, cfg.train.horizon, cfg.network.n_points)
    if grid:
        settings = [("grid", h, V) for h in h_values for V in V_values]
    else:
        settings = [("h", h, base.kit_value) for h in h_values] + [("V", base.transport_coef, V) for V in V_values]
    finals: dict[tuple[float, float], float] = {}
    cells = []
    for axis, h, V in settings:
        if (h, V) not in finals:
            result = train_runs(cfg, base.with_prices(transport_coef=h, kit_value=V), series)
            finals[h, V] = float(run_mean(result.metrics["reward"])[-window:].mean())
        cells.append(SweepCell(axis, h, V, finals[h, V]))
    if cfg.out_dir:
        chash = cfg.hash(h_values=h_values, V_values=V_values, grid=grid)
        write_csv(Path(cfg.out_dir) / "sweep.csv", ["axis", "h", "V", "final_avg_reward"],
                  [[c.axis, c.h, c.V, c.final_avg_reward] for c in cells], chash)
    return cells


# ---------------------------------------------------------------------------
# four-method comparison
# ---------------------------------------------------------------------------

METHODS = ("PPO", "NSGA2-BS", "NSGA2-BE", "PSO")


@dataclass
class ComparisonReport:
    series: dict[str, np.ndarray]  # method -> (T, 5) columns per METRICS
    front: baselines.ParetoFront = field(default_factory=list, repr=False)
    schedules: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    fingerprints: dict[str, str] = field(default_factory=dict)

    @property
    def totals(self) -> dict[str, np.ndarray]:
        return {m: s.sum(axis=0) for m, s in self.series.items()}

    def total(self, method: str, metric: str) -> float:
        return float(self.totals[method][METRICS.index(metric)])


def _fingerprint(instance: NetworkInstance, series: DemandSeries, eval_seed: int) -> str:
    h = hashlib.sha256(dumps_instance(instance).encode())
    h.update(np.ascontiguousarray(series.values, dtype="<i8").tobytes())
    h.update(str(eval_seed).encode())
    return h.hexdigest()


def _score_matrix(score: baselines.CandidateScore) -> np.ndarray:
    return np.stack([score.series[m] for m in METRICS], axis=1)


def run_comparison(cfg: ExperimentConfig) -> ComparisonReport:
    """Train PPO ``n_runs`` times on the comparison series and evaluate the last
    agent once; run NSGA-II (BS and BE picks) and PSO once each; evaluate every
    selection once under the same instance, series and ``eval_seed``."""
    instance = generate_instance(cfg.network)
    T = cfg.train.horizon
    series = generate_series(cfg.demand, T, cfg.network.n_points)
    result = train_runs(cfg, instance, series)
    agent = result.params[-1]

    env = HSCEnv(instance, series, horizon=T, mismatch_mode=cfg.mismatch_mode)
    actions: list[Action] = []
    ppo_rows = run_episode(env, agent, make_stream(cfg.eval_seed, POLICY), cfg.eval_seed, actions=actions)

    ga_cfg = replace(cfg.ga, eval_seed=cfg.eval_seed)
    pso_cfg = replace(cfg.pso, eval_seed=cfg.eval_seed)
    front = baselines.nsga2_run(instance, series, ga_cfg, horizon=T, mismatch_mode=cfg.mismatch_mode)
    bs = baselines.select_balance_score(front)
    be = baselines.select_best_efficiency(front)
    pso_schedule, _ = baselines.pso_run(instance, series, pso_cfg, horizon=T, mismatch_mode=cfg.mismatch_mode)

    picks = {"NSGA2-BS": bs.schedule, "NSGA2-BE": be.schedule, "PSO": pso_schedule}
    report = ComparisonReport(series={"PPO": ppo_rows}, front=front)
    report.schedules["PPO"] = np.concatenate([a.bits for a in actions])
    fp = _fingerprint(instance, series, cfg.eval_seed)
    log.info("comparison inputs fingerprint %s shared by %s", fp, ", ".join(METHODS))
    report.fingerprints["PPO"] = fp
    for name, schedule in picks.items():
        score = baselines.evaluate_candidate(schedule, instance, series, cfg.eval_seed, cfg.mismatch_mode)
        report.series[name] = _score_matrix(score)
        report.schedules[name] = schedule.bits
        report.fingerprints[name] = fp

    if cfg.out_dir:
        out, chash = Path(cfg.out_dir), cfg.hash()
        write_csv(out / "compare_timeseries.csv", ["method", "t", *METRICS],
                  ([m, t, *report.series[m][t]] for m in METHODS for t in range(T)), chash)
        write_csv(out / "compare_totals.csv", ["method", *METRICS],
                  ([m, *report.totals[m]] for m in METHODS), chash)
        write_csv(out / "compare_meta.csv", ["method", "fingerprint_sha256", "eval_seed"],
                  ([m, report.fingerprints[m], cfg.eval_seed] for m in METHODS), chash)
        write_front_csv(out / "front.csv", front, bs, be, chash)
        lines = [f"{m},{''.join(map(str, report.schedules[m]))}" for m in METHODS]
        (out / "schedules.txt").write_text("\n".join(lines) + "\n")
    return report


def write_front_csv(path, front, bs, be, chash=None):
    def tag(member):
        if member is bs and member is be:
            return "BS+BE"
        return "BS" if member is bs else "BE" if member is be else "none"

    rows = [[i, m.score.total_efficiency, m.score.total_cost, m.score.total_reward, tag(m)]
            for i, m in enumerate(front)]
    return write_csv(path, ["member", "total_efficiency", "total_cost", "total_reward", "selected_by"], rows, chash)


# ---------------------------------------------------------------------------
# demand export and replay
# ---------------------------------------------------------------------------

def demand_rows(series: DemandSeries):
    for t in range(series.horizon):
        yield [t, *series.values[t]]


def demand_header(series: DemandSeries) -> list[str]:
    return ["t", *(f"p{p}" for p in range(series.n_points))]


TRAJECTORY_HEADER = ["run", "episode", "t", *ROLLOUT_FIELDS]


def replay(instance: NetworkInstance, series: DemandSeries, actions: list[Action], seed: int,
           mismatch_mode=MismatchMode.CURRENT, run: int = 0, episode: int = 0) -> list[list]:
    """Step the environment through a fixed action list; returns trajectory rows."""
    env = HSCEnv(instance, series, horizon=len(actions), mismatch_mode=mismatch_mode)
    env.reset(seed)
    rows = []
    for t, action in enumerate(actions):
        _, o, _ = env.step(action)
        rows.append([run, episode, t, o.reward, o.efficiency, o.cost, o.penalty_mismatch, o.penalty_switch,
                     o.avg_satisfaction, o.avg_inventory, int(o.outsourced.sum())])
    return rows


# ---------------------------------------------------------------------------
# optional SVG plots
# ---------------------------------------------------------------------------

def plot_curves(curves: dict[str, dict[str, np.ndarray]], path: str | Path, xlabel: str = "episode") -> Path:
    """One panel per metric, one line per label. Requires matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, len(METRICS), figsize=(4 * len(METRICS), 3.2))
    for ax, metric in zip(axes, METRICS):
        for label, data in curves.items():
            ax.plot(np.arange(1, len(data[metric]) + 1), data[metric], label=label, lw=1)
        ax.set_title(metric)
        ax.set_xlabel(xlabel)
    axes[0].legend(fontsize=7)
    fig.tight_layout()
    plt.rcParams["svg.hashsalt"] = "hscrl"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return Path(path)
