"""Static network instances: facilities, distances, costs and capacities."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from hscrl.errors import ConfigurationError
from hscrl.streams import NETWORK, make_stream

Range = tuple[float, float]

_RANGE_FIELDS = (
    "center_cost_range",
    "warehouse_cost_range",
    "center_capacity_range",
    "warehouse_capacity_range",
    "dist_cw_range",
    "dist_wp_range",
)


@dataclass(frozen=True)
class NetworkConfig:
    n_centers: int = 15
    n_warehouses: int = 5
    n_points: int = 10
    center_cost_range: Range = (400, 800)
    warehouse_cost_range: Range = (200, 500)
    center_capacity_range: Range = (800, 1500)
    warehouse_capacity_range: Range = (4000, 10000)
    dist_cw_range: Range = (5, 10)
    dist_wp_range: Range = (5, 10)
    transport_coef: float = 0.5
    kit_value: float = 100.0
    mismatch_coef: float = 1.0
    switch_cost_center: float = 30.0
    switch_cost_warehouse: float = 10.0
    seed: int = 42

    def __post_init__(self):
        for name in ("n_centers", "n_warehouses", "n_points"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        for name in _RANGE_FIELDS:
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name}: low {lo} exceeds high {hi}")
            if lo <= 0:
                raise ConfigurationError(f"{name}: values must be positive, got low {lo}")

    def with_(self, **changes) -> "NetworkConfig":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class NetworkInstance:
    D_cw: np.ndarray  # (C, W)
    D_wp: np.ndarray  # (W, P)
    E_c: np.ndarray
    E_w: np.ndarray
    C_c: np.ndarray
    C_w: np.ndarray
    transport_coef: float
    kit_value: float
    mismatch_coef: float
    switch_cost_center: float
    switch_cost_warehouse: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                v.setflags(write=False)

    @property
    def n_centers(self) -> int:
        return self.D_cw.shape[0]

    @property
    def n_warehouses(self) -> int:
        return self.D_cw.shape[1]

    @property
    def n_points(self) -> int:
        return self.D_wp.shape[1]

    @property
    def n_facilities(self) -> int:
        return self.n_centers + self.n_warehouses

    @property
    def inventory_scale(self) -> float:
        """Observation divisor for inventories: the largest warehouse capacity."""
        return float(self.C_w.max())

    def with_prices(self, transport_coef: float | None = None, kit_value: float | None = None):
        return replace(
            self,
            transport_coef=self.transport_coef if transport_coef is None else transport_coef,
            kit_value=self.kit_value if kit_value is None else kit_value,
        )

    def __eq__(self, other):
        if not isinstance(other, NetworkInstance):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True


def _draw(rng, rng_range: Range, size) -> np.ndarray:
    lo, hi = int(rng_range[0]), int(rng_range[1])
    return rng.integers(lo, hi, size=size, endpoint=True).astype(np.int64)


def generate_instance(config: NetworkConfig) -> NetworkInstance:
    """Sample an instance; every quantity is an integer drawn uniformly from its range."""
    rng = make_stream(config.seed, NETWORK)
    C, W, P = config.n_centers, config.n_warehouses, config.n_points
    return NetworkInstance(
        D_cw=_draw(rng, config.dist_cw_range, (C, W)),
        D_wp=_draw(rng, config.dist_wp_range, (W, P)),
        E_c=_draw(rng, config.center_cost_range, C),
        E_w=_draw(rng, config.warehouse_cost_range, W),
        C_c=_draw(rng, config.center_capacity_range, C),
        C_w=_draw(rng, config.warehouse_capacity_range, W),
        transport_coef=float(config.transport_coef),
        kit_value=float(config.kit_value),
        mismatch_coef=float(config.mismatch_coef),
        switch_cost_center=float(config.switch_cost_center),
        switch_cost_warehouse=float(config.switch_cost_warehouse),
    )


def validate(instance: NetworkInstance, config: NetworkConfig | None = None) -> list[str]:
    """List every violated invariant; an empty list means the instance is valid."""
    problems = []
    C, W = instance.D_cw.shape if instance.D_cw.ndim == 2 else (None, None)
    if config is not None:
        C, W = config.n_centers, config.n_warehouses
        P = config.n_points
    else:
        P = instance.D_wp.shape[1] if instance.D_wp.ndim == 2 else None
    expected = {
        "D_cw": (C, W),
        "D_wp": (W, P),
        "E_c": (C,),
        "E_w": (W,),
        "C_c": (C,),
        "C_w": (W,),
    }
    for name, shape in expected.items():
        arr = np.asarray(getattr(instance, name))
        if arr.shape != shape:
            problems.append(f"{name}: shape {arr.shape} != expected {shape}")
        bad = np.argwhere(~(arr > 0))
        for idx in bad[:10]:
            problems.append(f"{name}[{','.join(map(str, idx))}] = {arr[tuple(idx)]} is not strictly positive")
        if len(bad) > 10:
            problems.append(f"{name}: {len(bad) - 10} more non-positive entries")
    for name in ("transport_coef", "kit_value", "mismatch_coef", "switch_cost_center", "switch_cost_warehouse"):
        value = getattr(instance, name)
        if not np.isfinite(value) or value < 0:
            problems.append(f"{name} = {value} must be finite and >= 0")
    return problems


_ARRAY_KEYS = ("D_cw", "D_wp", "E_c", "E_w", "C_c", "C_w")
_SCALAR_KEYS = ("transport_coef", "kit_value", "mismatch_coef", "switch_cost_center", "switch_cost_warehouse")


def dumps_instance(instance: NetworkInstance) -> str:
    """Flat ``name=value`` text; matrices row-major with a ``.shape`` line."""
    lines = [f"n_centers={instance.n_centers}", f"n_warehouses={instance.n_warehouses}",
             f"n_points={instance.n_points}"]
    for key in _ARRAY_KEYS:
        arr = getattr(instance, key)
        if arr.ndim == 2:
            lines.append(f"{key}.shape={arr.shape[0]},{arr.shape[1]}")
        lines.append(f"{key}=" + ",".join(str(int(v)) for v in arr.ravel()))
    for key in _SCALAR_KEYS:
        lines.append(f"{key}={getattr(instance, key)!r}")
    return "\n".join(lines) + "\n"


def loads_instance(text: str) -> NetworkInstance:
    kv = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"malformed instance line: {line!r}")
        kv[key.strip()] = value.strip()
    try:
        arrays = {}
        for key in _ARRAY_KEYS:
            arr = np.array([int(v) for v in kv[key].split(",")], dtype=np.int64)
            if f"{key}.shape" in kv:
                arr = arr.reshape(tuple(int(v) for v in kv[f"{key}.shape"].split(",")))
            arrays[key] = arr
        scalars = {key: float(kv[key]) for key in _SCALAR_KEYS}
    except KeyError as exc:
        raise ConfigurationError(f"instance file missing key {exc}") from None
    return NetworkInstance(**arrays, **scalars)


def dump_instance(instance: NetworkInstance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(instance))


def load_instance(path: str | Path) -> NetworkInstance:
    return loads_instance(Path(path).read_text())
