"""Fixed-step closed-loop simulation with dead time, saturation and stressors."""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from .controllers import SATURATION, ControllerParams, ControllerState
from .errors import ConfigurationError, SingularStateError
from .plant import TransferFunction, advance_linearized, design_plant

NOISE_LEVEL = 0.10  # measured output is y * (1 + U(-0.1, 0.1))
DISTURBANCE_LEVEL = 0.20  # fraction of the setpoint added to the applied control
GAIN_UNCERTAINTY = 2.0  # plant gain multiplier at level 1

CSV_HEADER = ("t", "r", "y", "y_meas", "e", "u_raw", "u_applied")


class PlantMode(str, Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


@dataclass(frozen=True)
class FactorLevels:
    a_gain_uncertainty: int = 0
    b_noise: int = 0
    c_disturbance: int = 0

    def __post_init__(self):
        for name in ("a_gain_uncertainty", "b_noise", "c_disturbance"):
            if getattr(self, name) not in (0, 1):
                raise ConfigurationError(f"{name} must be 0 or 1")

    @property
    def coded(self) -> tuple[int, int, int]:
        """(A, B, C) mapped to -1/+1."""
        return tuple(2 * v - 1 for v in (self.a_gain_uncertainty, self.b_noise, self.c_disturbance))


@dataclass(frozen=True)
class SimConfig:
    step: float = 0.01
    horizon: float = 30.0
    setpoint: float = 1.0
    plant_mode: PlantMode = PlantMode.LINEAR
    seed: int = 42
    factors: FactorLevels = field(default_factory=FactorLevels)
    disturbance_time: float = 15.0
    plant: TransferFunction = field(default_factory=design_plant)
    nonlinear_x0: tuple[float, float] = (0.01, 0.01)
    saturation: tuple[float, float] = SATURATION
    anti_windup: bool = False

    def __post_init__(self):
        object.__setattr__(self, "plant_mode", PlantMode(self.plant_mode))
        if not self.step > 0:
            raise ConfigurationError(f"step must be > 0, got {self.step}")
        if self.horizon < self.disturbance_time:
            raise ConfigurationError("horizon must not end before the disturbance time")
        n = self.horizon / self.step
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigurationError("horizon must be an integer number of steps")

    @property
    def samples(self) -> int:
        return int(round(self.horizon / self.step))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["plant_mode"] = self.plant_mode.value
        d["nonlinear_x0"] = list(self.nonlinear_x0)
        d["saturation"] = list(self.saturation)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        data = dict(data)
        if "factors" in data:
            data["factors"] = FactorLevels(**data["factors"])
        if "plant" in data:
            data["plant"] = TransferFunction(**data["plant"])
        for key in ("nonlinear_x0", "saturation"):
            if key in data:
                data[key] = tuple(data[key])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> SimConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class SimTrace:
    t: np.ndarray
    r: np.ndarray
    y: np.ndarray
    y_meas: np.ndarray
    e: np.ndarray
    u_raw: np.ndarray
    u_applied: np.ndarray

    @property
    def step(self) -> float:
        return float(self.t[1] - self.t[0]) if self.t.size > 1 else 0.0

    def columns(self):
        return [getattr(self, name) for name in CSV_HEADER]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row in zip(*self.columns()):
                writer.writerow([repr(float(v)) for v in row])

    def to_dict(self) -> dict:
        return {name: col.tolist() for name, col in zip(CSV_HEADER, self.columns())}

    @classmethod
    def from_dict(cls, data: dict) -> SimTrace:
        return cls(**{name: np.asarray(data[name], dtype=float) for name in CSV_HEADER})


@dataclass(frozen=True)
class ResponseMetrics:
    ise: float
    step_std: float
    control_mean: float
    control_std: float

    def to_dict(self) -> dict:
        return asdict(self)


class _LinearPlant:
    """RK4 realisation of ``gain / ((tau1 s + 1)(tau2 s + 1))`` with held input.

    Second-order models use controllable canonical form
    ``x1' = x2, x2' = -b0 x1 - b1 x2 + u, y = c x1``.
    """

    def __init__(self, plant: TransferFunction, gain_factor: float, h: float):
        self.order = plant.order
        self.h = h
        self.gain = plant.gain * gain_factor
        self.tau = plant.tau1
        if self.order == 2:
            self.b0, self.b1 = plant.b0, plant.b1
            self.c = plant.numerator * gain_factor
        self.x1 = 0.0
        self.x2 = 0.0
        self.u_last = 0.0

    @property
    def output(self) -> float:
        if self.order == 2:
            return self.c * self.x1
        if self.order == 1:
            return self.gain * self.x1
        return self.gain * self.u_last

    def advance(self, u: float) -> None:
        h = self.h
        self.u_last = u
        if self.order == 1:
            a = 1.0 / self.tau
            x = self.x1
            k1 = a * (u - x)
            k2 = a * (u - (x + 0.5 * h * k1))
            k3 = a * (u - (x + 0.5 * h * k2))
            k4 = a * (u - (x + h * k3))
            self.x1 = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            return
        if self.order == 0:
            return
        b0, b1 = self.b0, self.b1
        x1, x2 = self.x1, self.x2
        k1a, k1b = x2, -b0 * x1 - b1 * x2 + u
        y1, y2 = x1 + 0.5 * h * k1a, x2 + 0.5 * h * k1b
        k2a, k2b = y2, -b0 * y1 - b1 * y2 + u
        y1, y2 = x1 + 0.5 * h * k2a, x2 + 0.5 * h * k2b
        k3a, k3b = y2, -b0 * y1 - b1 * y2 + u
        y1, y2 = x1 + h * k3a, x2 + h * k3b
        k4a, k4b = y2, -b0 * y1 - b1 * y2 + u
        self.x1 = x1 + h / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
        self.x2 = x2 + h / 6.0 * (k1b + 2 * k2b + 2 * k3b + k4b)


class _LinearizedTanks:
    """Tanks under the linearizing law; the controller output plays the role of v."""

    def __init__(self, x0, gain_factor: float, h: float):
        if min(x0) <= 0:
            raise SingularStateError(f"nonlinear runs need positive initial levels, got {x0}")
        self.x = np.array(x0, dtype=float)
        self.g_scale = gain_factor
        self.h = h

    @property
    def output(self) -> float:
        return float(self.x[1])

    def advance(self, v: float) -> None:
        self.x = advance_linearized(self.x, v, self.h, self.g_scale)


def _make_plant(config: SimConfig, gain_factor: float):
    if config.plant_mode is PlantMode.LINEAR:
        return _LinearPlant(config.plant, gain_factor, config.step)
    return _LinearizedTanks(config.nonlinear_x0, gain_factor, config.step)


def _delay_samples(config: SimConfig) -> int:
    return int(round(config.plant.delay / config.step))


def simulate(controller: ControllerParams, config: SimConfig) -> SimTrace:
    """Run one closed loop and return every sampled signal."""
    n = config.samples + 1
    h = config.step
    f = config.factors
    rng = np.random.default_rng(config.seed)
    if f.b_noise:
        noise = rng.uniform(-NOISE_LEVEL, NOISE_LEVEL, size=n)
    else:
        noise = np.zeros(n)
    gain_factor = GAIN_UNCERTAINTY if f.a_gain_uncertainty else 1.0
    plant = _make_plant(config, gain_factor)
    state = ControllerState(
        step=h, bounds=config.saturation, capacity=n, anti_windup=config.anti_windup
    )
    fifo = deque([0.0] * _delay_samples(config))
    bump = DISTURBANCE_LEVEL * config.setpoint if f.c_disturbance else 0.0
    # disturbance starts at the first sample at or after disturbance_time
    k_dist = math.ceil(config.disturbance_time / h - 1e-9)

    t = np.arange(n) * h
    r = np.full(n, float(config.setpoint))
    y = np.empty(n)
    y_meas = np.empty(n)
    e = np.empty(n)
    u_raw = np.empty(n)
    u_app = np.empty(n)
    for k in range(n):
        y[k] = plant.output
        y_meas[k] = y[k] * (1.0 + noise[k])
        e[k] = r[k] - y_meas[k]
        u = state.update(controller, e[k])
        u_raw[k] = state.last_unsaturated
        if k >= k_dist:
            u += bump
        u_app[k] = u
        if k == n - 1:
            break
        fifo.append(u)
        plant.advance(fifo.popleft())
    return SimTrace(t, r, y, y_meas, e, u_raw, u_app)


def open_loop(u, config: SimConfig) -> np.ndarray:
    """Plant output for an explicit input sequence, with the same delay and integrator."""
    u = np.asarray(u, dtype=float)
    gain_factor = GAIN_UNCERTAINTY if config.factors.a_gain_uncertainty else 1.0
    plant = _make_plant(config, gain_factor)
    fifo = deque([0.0] * _delay_samples(config))
    y = np.empty(u.size)
    for k, uk in enumerate(u):
        y[k] = plant.output
        fifo.append(uk)
        plant.advance(fifo.popleft())
    return y


def metrics(trace: SimTrace) -> ResponseMetrics:
    """ISE of the measured error plus population statistics of y and applied u."""
    h = trace.step
    return ResponseMetrics(
        ise=float(np.sum(trace.e**2) * h),
        step_std=float(np.std(trace.y)),
        control_mean=float(np.mean(trace.u_applied)),
        control_std=float(np.std(trace.u_applied)),
    )


def nominal_config(**overrides) -> SimConfig:
    return replace(SimConfig(), **overrides)
