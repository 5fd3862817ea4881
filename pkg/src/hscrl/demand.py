"""Stochastic demand generation for the demand points.

Three models are supported:

* ``GBM``     multiplicative lognormal steps with an extra normal shock in the exponent
* ``POISSON`` additive Poisson increments
* ``MERTON``  GBM steps plus normal jumps triggered by a Poisson draw

Values are rounded to whole kits after every step and then clipped.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from hscrl.errors import ConfigurationError
from hscrl.streams import DEMAND, RandomStream, make_stream


class DemandModel(str, enum.Enum):
    GBM = "gbm"
    POISSON = "poisson"
    MERTON = "merton"

    @classmethod
    def parse(cls, value: "str | DemandModel") -> "DemandModel":
        if isinstance(value, DemandModel):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigurationError(f"unknown demand model: {value!r}") from None


@dataclass(frozen=True)
class DemandParams:
    model: DemandModel = DemandModel.GBM
    mu: float = 0.02
    sigma: float = 0.1
    shock_std: float = 0.05
    poisson_rate: float = 30.0
    jump_intensity: float = 0.1
    jump_mean: float = 0.05
    jump_std: float = 0.2
    init_low: float = 1200.0
    init_high: float = 2000.0
    clip_low: float = 0.0
    clip_high: float = 2000.0
    seed: int = 42

    def __post_init__(self):
        object.__setattr__(self, "model", DemandModel.parse(self.model))
        for name in ("sigma", "shock_std", "jump_std", "poisson_rate", "jump_intensity"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.init_low > self.init_high:
            raise ConfigurationError("init_low must not exceed init_high")
        if self.clip_low > self.clip_high:
            raise ConfigurationError("clip_low must not exceed clip_high")
        if self.clip_low > self.init_low:
            raise ConfigurationError("clip_low must not exceed init_low")

    def with_(self, **changes) -> "DemandParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class DemandSeries:
    values: np.ndarray  # (T, n_points), int64
    params: DemandParams

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.values.shape[1]


def _finish(value: float, params: DemandParams, rounding: bool) -> float:
    if rounding:
        value = float(np.rint(value))
    return min(max(value, params.clip_low), params.clip_high)


def init_demand(params: DemandParams, n_points: int, rng: RandomStream) -> np.ndarray:
    """Initial demand per point: uniform on the init range, rounded, clipped."""
    if n_points < 1:
        raise ConfigurationError("n_points must be >= 1")
    raw = rng.uniform(params.init_low, params.init_high, size=n_points)
    return np.clip(np.rint(raw), params.clip_low, params.clip_high).astype(np.int64)


def gbm_log_increment(params: DemandParams, rng: RandomStream) -> float:
    z = rng.standard_normal()
    shock = rng.normal(0.0, params.shock_std) if params.shock_std > 0 else 0.0
    return (params.mu - 0.5 * params.sigma**2) + params.sigma * z + shock


def merton_log_increment(params: DemandParams, rng: RandomStream) -> tuple[float, bool]:
    """Log growth for one Merton step and whether a jump fired."""
    eps = rng.standard_normal()
    jumped = rng.poisson(params.jump_intensity) > 0
    jump = rng.normal(params.jump_mean, params.jump_std) if jumped else 0.0
    return (params.mu - 0.5 * params.sigma**2) + params.sigma * eps + jump, bool(jumped)


def step_gbm(prev: float, params: DemandParams, rng: RandomStream, rounding: bool = True) -> float:
    inc = gbm_log_increment(params, rng)
    return _finish(prev * math.exp(inc), params, rounding)


def step_poisson(prev: float, params: DemandParams, rng: RandomStream, rounding: bool = True) -> float:
    delta = rng.poisson(params.poisson_rate) if params.poisson_rate > 0 else 0
    return _finish(prev + delta, params, rounding)


def step_merton(prev: float, params: DemandParams, rng: RandomStream, rounding: bool = True) -> float:
    inc, _ = merton_log_increment(params, rng)
    return _finish(prev * math.exp(inc), params, rounding)


_STEPPERS = {
    DemandModel.GBM: step_gbm,
    DemandModel.POISSON: step_poisson,
    DemandModel.MERTON: step_merton,
}


def point_stream(params: DemandParams, point: int) -> RandomStream:
    return make_stream(params.seed, DEMAND, point)


def generate_series(params: DemandParams, T: int, n_points: int) -> DemandSeries:
    """Build a ``T x n_points`` demand matrix.

    Each point owns a substream keyed by ``(seed, point)``, so column ``p`` is the
    same no matter how many points are generated.
    """
    if T < 1 or n_points < 1:
        raise ConfigurationError("T and n_points must be >= 1")
    try:
        stepper = _STEPPERS[DemandModel.parse(params.model)]
    except KeyError:
        raise ConfigurationError(f"unknown demand model: {params.model!r}") from None
    out = np.empty((T, n_points), dtype=np.int64)
    for p in range(n_points):
        rng = point_stream(params, p)
        value = float(init_demand(params, 1, rng)[0])
        out[0, p] = value
        for t in range(1, T):
            value = stepper(value, params, rng)
            out[t, p] = value
    return DemandSeries(values=out, params=params)
