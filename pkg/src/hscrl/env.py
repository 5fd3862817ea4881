"""The supply chain environment.

One step takes a binary activation vector for centers and warehouses and runs

    replenish (Dirichlet split of center capacity over open warehouses)
    -> sample warehouse shipments (uniform integers bounded by start-of-step stock)
    -> scale shipments down to each point's demand
    -> unmet demand and satisfaction
    -> inventory update with outsourcing
    -> efficiency, cost, penalties, log-ratio reward

Each step draws a fixed amount of noise (a ``C x W`` block of standard exponentials
and a ``W x P`` block of uniforms) regardless of the action. Two rollouts that share
a seed therefore see identical noise, which is what the heuristic baselines rely on
for common random numbers. The kernels below broadcast over leading batch axes so
``rollout`` can evaluate many schedules at once with the same noise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hscrl.demand import DemandSeries
from hscrl.errors import ConfigurationError, StateError
from hscrl.network import NetworkInstance
from hscrl.streams import ENV, RandomStream, make_stream


class MismatchMode(str, enum.Enum):
    CURRENT = "current"
    WITH_PREV_INVENTORY = "b13"

    @classmethod
    def parse(cls, value) -> "MismatchMode":
        if isinstance(value, MismatchMode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown mismatch mode: {value!r}") from None


@dataclass(frozen=True)
class Action:
    x_c: np.ndarray
    x_w: np.ndarray

    def __post_init__(self):
        for name in ("x_c", "x_w"):
            arr = np.asarray(getattr(self, name))
            if arr.ndim != 1 or not np.all((arr == 0) | (arr == 1)):
                raise ConfigurationError(f"{name} must be a binary vector")
            object.__setattr__(self, name, arr.astype(np.int64))

    @classmethod
    def zeros(cls, n_centers: int, n_warehouses: int) -> "Action":
        return cls(np.zeros(n_centers, np.int64), np.zeros(n_warehouses, np.int64))

    @classmethod
    def from_bits(cls, bits, n_centers: int) -> "Action":
        bits = np.asarray(bits)
        return cls(bits[:n_centers], bits[n_centers:])

    @property
    def bits(self) -> np.ndarray:
        return np.concatenate([self.x_c, self.x_w])

    def __eq__(self, other):
        if not isinstance(other, Action):
            return NotImplemented
        return np.array_equal(self.x_c, other.x_c) and np.array_equal(self.x_w, other.x_w)


@dataclass
class EnvState:
    t: int
    inventory: np.ndarray  # (W,)
    demand_now: np.ndarray  # (P,)
    prev_shipments: np.ndarray  # (W, P)
    prev_action: Action


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    efficiency: float
    cost: float
    penalty_mismatch: float
    penalty_switch: float
    A_cw: np.ndarray
    A_wp: np.ndarray
    outsourced: np.ndarray
    unmet: np.ndarray
    satisfaction: np.ndarray
    avg_satisfaction: float
    avg_inventory: float


# ---------------------------------------------------------------------------
# kernels (broadcast over leading axes)
# ---------------------------------------------------------------------------

def _replenish(x_c, x_w, capacity, expo):
    weights = expo * x_w[..., None, :]
    total = weights.sum(axis=-1, keepdims=True)
    share = np.divide(weights, total, out=np.zeros_like(weights, dtype=float), where=total > 0)
    alloc = np.floor(share * capacity[:, None]).astype(np.int64)
    return alloc * x_c[..., :, None]


def _ship(x_w, inventory, uniforms):
    bound = np.maximum(inventory, 1)[..., :, None]
    raw = np.minimum(np.floor(uniforms * (bound + 1)).astype(np.int64), bound)
    return raw * x_w[..., :, None]


def _scale(raw, demand):
    colsum = raw.sum(axis=-2, keepdims=True)
    demand = np.broadcast_to(demand, colsum.shape)
    over = colsum > demand
    # exact integer form of floor(a * min(1, d / colsum)); epsilon only guards colsum = 0
    scaled = (raw * demand) // np.maximum(colsum, 1)
    return np.where(over, scaled, raw)


def _settle(inventory, A_cw, A_wp):
    inflow = A_cw.sum(axis=-2)
    outflow = A_wp.sum(axis=-1)
    outsourced = np.maximum(0, outflow - inventory - inflow)
    return inventory + inflow - outflow + outsourced, outsourced


def _satisfaction(demand, delivered):
    safe = np.maximum(demand, 1)
    return np.where(demand > 0, np.minimum(1.0, delivered / safe), 1.0)


def _cost_terms(x_c, x_w, prev_c, prev_w, A_cw, A_wp, inst: NetworkInstance, mode, prev_inventory):
    fixed = (x_c * inst.E_c).sum(-1) + (x_w * inst.E_w).sum(-1)
    transport = inst.transport_coef * (
        (A_cw * inst.D_cw).sum(axis=(-2, -1)) + (A_wp * inst.D_wp).sum(axis=(-2, -1))
    )
    gap = A_cw.sum(axis=-2) - A_wp.sum(axis=-1)
    if mode is MismatchMode.WITH_PREV_INVENTORY:
        gap = gap + prev_inventory
    mismatch = inst.mismatch_coef * np.abs(gap).sum(-1)
    switch = (
        inst.switch_cost_center * np.abs(x_c - prev_c).sum(-1)
        + inst.switch_cost_warehouse * np.abs(x_w - prev_w).sum(-1)
    )
    cost = fixed + transport + mismatch + switch
    return cost.astype(float), mismatch.astype(float), switch.astype(float)


# ---------------------------------------------------------------------------
# single-step operations
# ---------------------------------------------------------------------------

def allocate_replenishment(action: Action, instance: NetworkInstance, rng: RandomStream) -> np.ndarray:
    expo = rng.standard_exponential((instance.n_centers, instance.n_warehouses))
    return _replenish(action.x_c, action.x_w, instance.C_c, expo)


def sample_shipments(inventory: np.ndarray, action: Action, n_points: int, rng: RandomStream) -> np.ndarray:
    uniforms = rng.random((len(inventory), n_points))
    return _ship(action.x_w, np.asarray(inventory, dtype=np.int64), uniforms)


def scale_shipments(raw: np.ndarray, demand: np.ndarray) -> np.ndarray:
    return _scale(np.asarray(raw, dtype=np.int64), np.asarray(demand, dtype=np.int64))


def settle_inventory(inventory: np.ndarray, A_cw: np.ndarray, A_wp: np.ndarray):
    """Return ``(new_inventory, outsourced)``; stock never goes negative."""
    return _settle(np.asarray(inventory, dtype=np.int64), A_cw, A_wp)


def compute_efficiency(demand, unmet, kit_value: float) -> float:
    return float(((np.asarray(demand) - np.asarray(unmet)) * kit_value).sum())


def compute_cost(action: Action, prev_action: Action, A_cw, A_wp, instance: NetworkInstance,
                 mismatch_mode=MismatchMode.CURRENT, prev_inventory=None):
    """Return ``(cost, penalty_mismatch, penalty_switch)``."""
    mode = MismatchMode.parse(mismatch_mode)
    if prev_inventory is None:
        prev_inventory = np.zeros(instance.n_warehouses, dtype=np.int64)
    cost, mismatch, switch = _cost_terms(
        action.x_c, action.x_w, prev_action.x_c, prev_action.x_w,
        np.asarray(A_cw), np.asarray(A_wp), instance, mode, np.asarray(prev_inventory),
    )
    return float(cost), float(mismatch), float(switch)


def compute_reward(efficiency, cost):
    """Log of the cost-efficiency ratio, ``log(1+eff) - log(1+cost)``."""
    return np.log1p(efficiency) - np.log1p(cost)


def observation_size(instance: NetworkInstance) -> int:
    W, P = instance.n_warehouses, instance.n_points
    return P + W + W * P + 1


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------

class HSCEnv:
    """Single-owner episodic environment over a fixed instance and demand series.

    Observation layout (all float64)::

        demand / clip_high            (P)
        inventory / max(C_w)          (W)
        previous shipments / clip_high (W*P, row-major)
        t / T                          (1)

    Demand and shipment sections lie in [0, 1]. Inventory has no hard cap in the
    dynamics; it is bounded by ``T * sum(C_c) / max(C_w)`` (see ``obs_bound``).
    """

    def __init__(self, instance: NetworkInstance, series: DemandSeries, horizon: int | None = None,
                 mismatch_mode=MismatchMode.CURRENT):
        T = series.horizon if horizon is None else int(horizon)
        if series.n_points != instance.n_points:
            raise ConfigurationError(
                f"demand series has {series.n_points} points, instance has {instance.n_points}")
        if T < 1 or series.horizon < T:
            raise ConfigurationError(f"demand series has {series.horizon} rows, need {T}")
        self.instance = instance
        self.series = series
        self.horizon = T
        self.mismatch_mode = MismatchMode.parse(mismatch_mode)
        self.demand_scale = float(series.params.clip_high) if np.isfinite(series.params.clip_high) \
            else float(max(series.values.max(), 1))
        self.inventory_scale = instance.inventory_scale
        self.obs_size = observation_size(instance)
        self.state: EnvState | None = None
        self.rng: RandomStream | None = None
        self.done = True

    @property
    def obs_bound(self) -> float:
        return max(1.0, self.horizon * float(self.instance.C_c.sum()) / self.inventory_scale)

    def reset(self, seed: int = 0, rng: RandomStream | None = None) -> np.ndarray:
        inst = self.instance
        self.rng = rng if rng is not None else make_stream(seed, ENV)
        self.state = EnvState(
            t=0,
            inventory=np.zeros(inst.n_warehouses, dtype=np.int64),
            demand_now=self.series.values[0].copy(),
            prev_shipments=np.zeros((inst.n_warehouses, inst.n_points), dtype=np.int64),
            prev_action=Action.zeros(inst.n_centers, inst.n_warehouses),
        )
        self.done = False
        return self.observe()

    def observe(self, state: EnvState | None = None) -> np.ndarray:
        s = self.state if state is None else state
        return np.concatenate([
            s.demand_now / self.demand_scale,
            s.inventory / self.inventory_scale,
            s.prev_shipments.ravel() / self.demand_scale,
            [s.t / self.horizon],
        ]).astype(np.float64)

    def step(self, action: Action):
        """Advance one period. Returns ``(observation, outcome, done)``."""
        if self.state is None or self.done:
            raise StateError("step() called on a finished or un-reset episode")
        if not isinstance(action, Action):
            action = Action.from_bits(action, self.instance.n_centers)
        if len(action.x_c) != self.instance.n_centers or len(action.x_w) != self.instance.n_warehouses:
            raise ConfigurationError("action dimensions do not match the instance")
        s, inst = self.state, self.instance
        demand = s.demand_now

        A_cw = allocate_replenishment(action, inst, self.rng)
        raw = sample_shipments(s.inventory, action, inst.n_points, self.rng)
        A_wp = scale_shipments(raw, demand)
        delivered = A_wp.sum(axis=0)
        unmet = np.maximum(demand - delivered, 0)
        satisfaction = _satisfaction(demand, delivered)
        new_inv, outsourced = settle_inventory(s.inventory, A_cw, A_wp)
        efficiency = compute_efficiency(demand, unmet, inst.kit_value)
        cost, pen_m, pen_s = compute_cost(action, s.prev_action, A_cw, A_wp, inst,
                                          self.mismatch_mode, s.inventory)
        reward = float(compute_reward(efficiency, cost))

        outcome = StepOutcome(
            reward=reward, efficiency=efficiency, cost=cost,
            penalty_mismatch=pen_m, penalty_switch=pen_s,
            A_cw=A_cw, A_wp=A_wp, outsourced=outsourced, unmet=unmet,
            satisfaction=satisfaction,
            avg_satisfaction=float(satisfaction.mean()),
            avg_inventory=float(new_inv.mean()),
        )
        t_next = s.t + 1
        self.done = t_next >= self.horizon
        self.state = EnvState(
            t=t_next,
            inventory=new_inv,
            demand_now=self.series.values[min(t_next, self.series.horizon - 1)].copy(),
            prev_shipments=A_wp,
            prev_action=action,
        )
        return self.observe(), outcome, self.done


# ---------------------------------------------------------------------------
# batched rollout of fixed action sequences
# ---------------------------------------------------------------------------

ROLLOUT_FIELDS = ("reward", "efficiency", "cost", "penalty_mismatch", "penalty_switch",
                  "avg_satisfaction", "avg_inventory", "total_outsourced")


def rollout(instance: NetworkInstance, series: DemandSeries, actions: np.ndarray, seed: int,
            mismatch_mode=MismatchMode.CURRENT) -> dict[str, np.ndarray]:
    """Play open-loop action sequences ``actions`` of shape ``(N, T, C+W)``.

    Every sequence sees the noise of ``make_stream(seed, ENV)``; the result for row
    ``i`` equals stepping ``HSCEnv`` with ``reset(seed)`` through ``actions[i]``.
    Returns per-step arrays of shape ``(N, T)`` keyed by ``ROLLOUT_FIELDS``.
    """
    actions = np.asarray(actions, dtype=np.int64)
    if actions.ndim == 2:
        actions = actions[None]
    N, T, K = actions.shape
    inst = instance
    C, W, P = inst.n_centers, inst.n_warehouses, inst.n_points
    if K != C + W:
        raise ConfigurationError(f"action width {K} != {C + W}")
    if series.horizon < T or series.n_points != P:
        raise ConfigurationError("demand series does not cover the schedule")
    mode = MismatchMode.parse(mismatch_mode)
    rng = make_stream(seed, ENV)

    out = {k: np.zeros((N, T)) for k in ROLLOUT_FIELDS}
    inventory = np.zeros((N, W), dtype=np.int64)
    prev = np.zeros((N, K), dtype=np.int64)
    for t in range(T):
        x = actions[:, t]
        x_c, x_w = x[:, :C], x[:, C:]
        demand = series.values[t]
        expo = rng.standard_exponential((C, W))
        uniforms = rng.random((W, P))
        A_cw = _replenish(x_c, x_w, inst.C_c, expo)
        A_wp = _scale(_ship(x_w, inventory, uniforms), demand[None, None, :])
        delivered = A_wp.sum(axis=-2)
        unmet = np.maximum(demand - delivered, 0)
        sat = _satisfaction(demand, delivered)
        new_inv, outsourced = _settle(inventory, A_cw, A_wp)
        eff = ((demand - unmet) * inst.kit_value).sum(-1).astype(float)
        cost, pen_m, pen_s = _cost_terms(x_c, x_w, prev[:, :C], prev[:, C:], A_cw, A_wp, inst, mode, inventory)
        out["reward"][:, t] = compute_reward(eff, cost)
        out["efficiency"][:, t] = eff
        out["cost"][:, t] = cost
        out["penalty_mismatch"][:, t] = pen_m
        out["penalty_switch"][:, t] = pen_s
        out["avg_satisfaction"][:, t] = sat.mean(-1)
        out["avg_inventory"][:, t] = new_inv.mean(-1)
        out["total_outsourced"][:, t] = outsourced.sum(-1)
        inventory = new_inv
        prev = x
    return out


# ---------------------------------------------------------------------------
# replay files: one line per step, "t,<center bits>,<warehouse bits>"
# ---------------------------------------------------------------------------

def format_replay(actions: list[Action]) -> str:
    lines = []
    for t, a in enumerate(actions):
        lines.append(f"{t},{''.join(map(str, a.x_c))},{''.join(map(str, a.x_w))}")
    return "\n".join(lines) + "\n"


def parse_replay(text: str) -> list[Action]:
    actions = []
    for n, line in enumerate(text.splitlines()):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3 or int(parts[0]) != len(actions):
            raise ConfigurationError(f"bad replay line {n + 1}: {line!r}")
        actions.append(Action(np.array([int(c) for c in parts[1]]), np.array([int(c) for c in parts[2]])))
    return actions


def write_replay(actions: list[Action], path: str | Path) -> None:
    Path(path).write_text(format_replay(actions))


def read_replay(path: str | Path) -> list[Action]:
    return parse_replay(Path(path).read_text())
