"""Heuristic baselines over time-expanded activation schedules.

A schedule fixes every activation bit for the whole horizon, laid out time-major:
step ``t`` occupies bits ``[t*K, (t+1)*K)`` with ``K = C + W`` (centers first).
Candidates are scored by an open-loop rollout whose environment noise is fixed
by ``eval_seed`` (common random numbers), so two identical schedules always get
identical scores within a run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hscrl.demand import DemandSeries
from hscrl.env import Action, MismatchMode, rollout
from hscrl.errors import ConfigurationError
from hscrl.network import NetworkInstance
from hscrl.streams import GA, PSO, RandomStream, make_stream


@dataclass(frozen=True, eq=False)
class Schedule:
    bits: np.ndarray
    n_centers: int
    n_warehouses: int

    def __post_init__(self):
        bits = np.asarray(self.bits).astype(np.int64).ravel()
        if not np.all((bits == 0) | (bits == 1)):
            raise ConfigurationError("schedule bits must be binary")
        if len(bits) % self.width:
            raise ConfigurationError(f"schedule length {len(bits)} is not a multiple of {self.width}")
        object.__setattr__(self, "bits", bits)

    @property
    def width(self) -> int:
        return self.n_centers + self.n_warehouses

    @property
    def horizon(self) -> int:
        return len(self.bits) // self.width

    def matrix(self) -> np.ndarray:
        return self.bits.reshape(self.horizon, self.width)

    def to_string(self) -> str:
        return "".join(map(str, self.bits))

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.bits, other.bits)


def encode(actions: list[Action]) -> Schedule:
    if not actions:
        raise ConfigurationError("cannot encode an empty action list")
    return Schedule(np.concatenate([a.bits for a in actions]), len(actions[0].x_c), len(actions[0].x_w))


def decode(schedule: Schedule, t: int) -> Action:
    if not 0 <= t < schedule.horizon:
        raise IndexError(f"step {t} outside schedule horizon {schedule.horizon}")
    k = schedule.width
    return Action.from_bits(schedule.bits[t * k:(t + 1) * k], schedule.n_centers)


@dataclass
class CandidateScore:
    total_efficiency: float
    total_cost: float
    total_reward: float
    series: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def evaluate_population(bits: np.ndarray, instance: NetworkInstance, series: DemandSeries, eval_seed: int,
                        mismatch_mode=MismatchMode.CURRENT, chunk: int = 512) -> dict[str, np.ndarray]:
    """Score many flat schedules ``(N, T*K)`` at once; returns per-step arrays ``(N, T)``."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
    K = instance.n_facilities
    N, L = bits.shape
    if L % K:
        raise ConfigurationError(f"schedule length {L} is not a multiple of {K}")
    acts = bits.reshape(N, L // K, K)
    parts = [rollout(instance, series, acts[i:i + chunk], eval_seed, mismatch_mode) for i in range(0, N, chunk)]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _scores(out: dict[str, np.ndarray]) -> list[CandidateScore]:
    n = len(out["reward"])
    return [
        CandidateScore(
            total_efficiency=float(out["efficiency"][i].sum()),
            total_cost=float(out["cost"][i].sum()),
            total_reward=float(out["reward"][i].sum()),
            series={k: v[i].copy() for k, v in out.items()},
        )
        for i in range(n)
    ]


def evaluate_candidate(schedule: Schedule, instance: NetworkInstance, series: DemandSeries, eval_seed: int,
                       mismatch_mode=MismatchMode.CURRENT) -> CandidateScore:
    out = evaluate_population(schedule.bits[None], instance, series, eval_seed, mismatch_mode)
    return _scores(out)[0]


# ---------------------------------------------------------------------------
# Pareto machinery; objectives are (efficiency: maximize, cost: minimize)
# ---------------------------------------------------------------------------

def dominance_matrix(points) -> np.ndarray:
    """``D[i, j]`` is True when point ``i`` dominates point ``j``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    eff, cost = pts[:, 0], pts[:, 1]
    ge = eff[:, None] >= eff[None, :]
    le = cost[:, None] <= cost[None, :]
    strict = (eff[:, None] > eff[None, :]) | (cost[:, None] < cost[None, :])
    return ge & le & strict


def fast_nondominated_sort(points) -> list[list[int]]:
    """Fronts of indices, best first; every index appears exactly once."""
    dom = dominance_matrix(points)
    n = len(dom)
    if n == 0:
        return []
    count = dom.sum(axis=0)  # how many points dominate j
    fronts = []
    current = list(np.flatnonzero(count == 0))
    while current:
        fronts.append([int(i) for i in current])
        nxt = []
        for i in current:
            for j in np.flatnonzero(dom[i]):
                count[j] -= 1
                if count[j] == 0:
                    nxt.append(j)
        current = sorted(nxt)
    return fronts


def crowding_distance(points) -> np.ndarray:
    """Crowding distance of each member of one front.

    Members holding an extreme value of either objective get ``inf``. Others add
    ``(upper - lower) / (max - min)`` per objective, where ``lower``/``upper`` are the
    nearest values held by *other* members, which keeps the result independent of
    member order even with duplicate points.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for m in range(2):
        v = pts[:, m]
        lo, hi = v.min(), v.max()
        span = hi - lo
        for i in range(n):
            if v[i] == lo or v[i] == hi:
                dist[i] = np.inf
                continue
            others = np.delete(v, i)
            lower = others[others <= v[i]].max()
            upper = others[others >= v[i]].min()
            dist[i] += (upper - lower) / span
    return dist


@dataclass
class ParetoMember:
    schedule: Schedule
    score: CandidateScore


ParetoFront = list[ParetoMember]


def is_nondominated(front: ParetoFront) -> bool:
    pts = [(m.score.total_efficiency, m.score.total_cost) for m in front]
    return not dominance_matrix(pts).any() if pts else True


@dataclass(frozen=True)
class GAConfig:
    pop: int = 200
    generations: int = 200
    crossover_p: float = 0.9
    mutation_p: float | None = None  # None -> 1 / L
    seed: int = 0
    eval_seed: int = 0


def _rank_and_crowding(objs: np.ndarray):
    fronts = fast_nondominated_sort(objs)
    rank = np.empty(len(objs), dtype=np.int64)
    crowd = np.empty(len(objs))
    for r, f in enumerate(fronts):
        rank[f] = r
        crowd[f] = crowding_distance(objs[f])
    return fronts, rank, crowd


def _tournament(rng: RandomStream, rank, crowd, n: int) -> np.ndarray:
    a = rng.integers(0, len(rank), n)
    b = rng.integers(0, len(rank), n)
    a_wins = (rank[a] < rank[b]) | ((rank[a] == rank[b]) & (crowd[a] >= crowd[b]))
    return np.where(a_wins, a, b)


def nsga2_run(instance: NetworkInstance, series: DemandSeries, config: GAConfig = GAConfig(),
              horizon: int | None = None, mismatch_mode=MismatchMode.CURRENT) -> ParetoFront:
    """Bi-objective NSGA-II over schedules; returns the final first front (unique schedules)."""
    T = series.horizon if horizon is None else horizon
    K = instance.n_facilities
    L = T * K
    rng = make_stream(config.seed, GA)
    mut_p = 1.0 / L if config.mutation_p is None else config.mutation_p
    pop_n = config.pop

    def objectives(bits):
        out = evaluate_population(bits, instance, series, config.eval_seed, mismatch_mode)
        return np.stack([out["efficiency"].sum(1), out["cost"].sum(1)], axis=1), out

    pop = rng.integers(0, 2, size=(pop_n, L))
    objs, out = objectives(pop)
    for _ in range(config.generations):
        _, rank, crowd = _rank_and_crowding(objs)
        parents = pop[_tournament(rng, rank, crowd, pop_n + pop_n % 2)]
        p1, p2 = parents[0::2], parents[1::2]
        do_cross = rng.random(len(p1)) < config.crossover_p
        mask = (rng.random(p1.shape) < 0.5) & do_cross[:, None]
        c1 = np.where(mask, p2, p1)
        c2 = np.where(mask, p1, p2)
        children = np.concatenate([c1, c2])[:pop_n]
        flips = rng.random(children.shape) < mut_p
        children = children ^ flips
        child_objs, child_out = objectives(children)

        merged = np.concatenate([pop, children])
        merged_objs = np.concatenate([objs, child_objs])
        merged_out = {k: np.concatenate([out[k], child_out[k]]) for k in out}
        fronts, _, _ = _rank_and_crowding(merged_objs)
        keep = []
        for f in fronts:
            if len(keep) + len(f) <= pop_n:
                keep.extend(f)
                continue
            cd = crowding_distance(merged_objs[f])
            order = sorted(range(len(f)), key=lambda i: (-cd[i], f[i]))
            keep.extend(f[i] for i in order[: pop_n - len(keep)])
            break
        keep = np.asarray(keep)
        pop, objs = merged[keep], merged_objs[keep]
        out = {k: v[keep] for k, v in merged_out.items()}

    first = fast_nondominated_sort(objs)[0]
    seen = set()
    front = []
    scores = _scores({k: v[first] for k, v in out.items()})
    for idx, score in zip(first, scores):
        key = pop[idx].tobytes()
        if key in seen:
            continue
        seen.add(key)
        front.append(ParetoMember(Schedule(pop[idx], instance.n_centers, instance.n_warehouses), score))
    return front


def balance_scores(front: ParetoFront) -> np.ndarray:
    """Mean of min-max normalized efficiency and (1 - normalized cost).

    A constant objective normalizes to 0 for every member.
    """
    eff = np.array([m.score.total_efficiency for m in front])
    cost = np.array([m.score.total_cost for m in front])
    ne = (eff - eff.min()) / (np.ptp(eff) or 1.0)
    nc = (cost - cost.min()) / (np.ptp(cost) or 1.0)
    return (ne + 1.0 - nc) / 2.0


def select_balance_score(front: ParetoFront, tol: float = 1e-9) -> ParetoMember:
    """Highest balance score; ties within ``tol`` go to the lower cost, then the earlier member."""
    if not front:
        raise ConfigurationError("empty Pareto front")
    bs = balance_scores(front)
    best = bs.max()
    tied = [i for i in range(len(front)) if bs[i] >= best - tol]
    return front[min(tied, key=lambda i: (front[i].score.total_cost, i))]


def select_best_efficiency(front: ParetoFront) -> ParetoMember:
    if not front:
        raise ConfigurationError("empty Pareto front")
    return min(enumerate(front),
               key=lambda im: (-im[1].score.total_efficiency, im[1].score.total_cost, im[0]))[1]


# ---------------------------------------------------------------------------
# particle swarm
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PSOConfig:
    pop: int = 100
    generations: int = 200
    inertia: float = 0.7
    c1: float = 1.5
    c2: float = 1.5
    seed: int = 0
    eval_seed: int = 0


def pso_minimize(objective, dim: int, lower, upper, config: PSOConfig = PSOConfig(),
                 rng: RandomStream | None = None, history: list | None = None):
    """Global-best PSO on a box. ``objective`` maps ``(N, dim)`` to ``(N,)``.

    Positions are clamped to the box and velocities to its width. Returns
    ``(best_position, best_value)``; ``history`` receives the best value after
    initialization and after each generation.
    """
    rng = rng if rng is not None else make_stream(config.seed, PSO)
    lower = np.broadcast_to(np.asarray(lower, dtype=np.float64), (dim,))
    upper = np.broadcast_to(np.asarray(upper, dtype=np.float64), (dim,))
    span = upper - lower
    n = config.pop
    x = lower + rng.random((n, dim)) * span
    v = (rng.random((n, dim)) * 2.0 - 1.0) * span * 0.1
    fx = np.asarray(objective(x), dtype=np.float64)
    pbest, pbest_f = x.copy(), fx.copy()
    g = int(np.argmin(pbest_f))
    gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
    if history is not None:
        history.append(gbest_f)
    for _ in range(config.generations):
        r1 = rng.random((n, dim))
        r2 = rng.random((n, dim))
        v = config.inertia * v + config.c1 * r1 * (pbest - x) + config.c2 * r2 * (gbest - x)
        v = np.clip(v, -span, span)
        x = np.clip(x + v, lower, upper)
        fx = np.asarray(objective(x), dtype=np.float64)
        better = fx < pbest_f
        pbest[better], pbest_f[better] = x[better], fx[better]
        g = int(np.argmin(pbest_f))
        if pbest_f[g] < gbest_f:
            gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
        if history is not None:
            history.append(gbest_f)
    return gbest, gbest_f


def pso_run(instance: NetworkInstance, series: DemandSeries, config: PSOConfig = PSOConfig(),
            horizon: int | None = None, mismatch_mode=MismatchMode.CURRENT, history: list | None = None):
    """Maximize total reward with PSO on ``[0, 1]^L``; a bit is on iff its position > 0.5.

    Returns ``(Schedule, CandidateScore)`` of the global best. ``history`` receives
    the best total reward per generation.
    """
    T = series.horizon if horizon is None else horizon
    L = T * instance.n_facilities

    def objective(x):
        bits = (x > 0.5).astype(np.int64)
        out = evaluate_population(bits, instance, series, config.eval_seed, mismatch_mode)
        return -out["reward"].sum(axis=1)

    trace: list[float] = []
    best_x, _ = pso_minimize(objective, L, 0.0, 1.0, config, make_stream(config.seed, PSO), trace)
    if history is not None:
        history.extend(-f for f in trace)
    schedule = Schedule((best_x > 0.5).astype(np.int64), instance.n_centers, instance.n_warehouses)
    return schedule, evaluate_candidate(schedule, instance, series, config.eval_seed, mismatch_mode)
