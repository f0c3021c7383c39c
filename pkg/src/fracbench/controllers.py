"""Fractional and integer PID controllers, SIMC tuning and reference presets."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameterError
from .fracops import gl_weights, s_power
from .plant import TransferFunction

SATURATION = (0.0, 10.0)


@dataclass(frozen=True)
class ControllerParams:
    """``K (1 + s**-lam / tau_i + tau_d s**mu)``; ``lam = mu = 1`` is a plain PID."""

    k: float
    tau_i: float
    tau_d: float
    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not self.k > 0:
            raise InvalidParameterError(f"k must be > 0, got {self.k}")
        if not self.tau_i > 0:
            raise InvalidParameterError(f"tau_i must be > 0, got {self.tau_i}")
        if not self.tau_d >= 0:
            raise InvalidParameterError(f"tau_d must be >= 0, got {self.tau_d}")
        if not 0 < self.lam < 2:
            raise InvalidParameterError(f"integral order must lie in (0, 2), got {self.lam}")
        if not 0 <= self.mu < 2:
            raise InvalidParameterError(f"derivative order must lie in [0, 2), got {self.mu}")

    @property
    def is_integer_order(self) -> bool:
        return self.lam == 1 and self.mu == 1

    def scaled(self, factor: float) -> ControllerParams:
        return ControllerParams(self.k * factor, self.tau_i, self.tau_d, self.lam, self.mu)

    def to_dict(self, name: str = "", saturation=SATURATION) -> dict:
        return {
            "name": name,
            "k": self.k,
            "tau_i": self.tau_i,
            "tau_d": self.tau_d,
            "lambda": self.lam,
            "mu": self.mu,
            "saturation": list(saturation),
        }

    @classmethod
    def from_dict(cls, data: dict) -> ControllerParams:
        try:
            return cls(
                k=float(data["k"]),
                tau_i=float(data["tau_i"]),
                tau_d=float(data["tau_d"]),
                lam=float(data.get("lambda", 1.0)),
                mu=float(data.get("mu", 1.0)),
            )
        except KeyError as exc:
            raise InvalidParameterError(f"controller JSON is missing {exc}") from None


def load_controller(path) -> tuple[str, ControllerParams, tuple[float, float]]:
    with open(path) as fh:
        data = json.load(fh)
    sat = tuple(float(v) for v in data.get("saturation", SATURATION))
    return data.get("name", ""), ControllerParams.from_dict(data), sat


@dataclass
class ControllerState:
    """Mutable error history for one controller driving one loop.

    The GL sums run over the whole stored history. `capacity` only sizes the
    initial buffers; they grow as needed.
    """

    step: float
    bounds: tuple[float, float] = SATURATION
    capacity: int = 4096
    anti_windup: bool = False
    last_unsaturated: float = field(default=0.0, init=False)
    _errors: np.ndarray = field(init=False, repr=False)
    _integrand: np.ndarray = field(init=False, repr=False)
    _n: int = field(default=0, init=False)
    _orders: tuple | None = field(default=None, init=False, repr=False)
    _wi: np.ndarray = field(init=False, repr=False)
    _wd: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidParameterError(f"step must be > 0, got {self.step}")
        lo, hi = self.bounds
        if not lo < hi:
            raise InvalidParameterError(f"empty saturation range {self.bounds}")
        self._errors = np.zeros(self.capacity)
        self._integrand = np.zeros(self.capacity)

    @property
    def history(self) -> np.ndarray:
        return self._errors[: self._n].copy()

    def __len__(self):
        return self._n

    def _reserve(self, params: ControllerParams) -> None:
        size = self._errors.size
        if self._n >= size:
            size *= 2
            self._errors = np.concatenate([self._errors, np.zeros(size - self._errors.size)])
            self._integrand = np.concatenate(
                [self._integrand, np.zeros(size - self._integrand.size)]
            )
        orders = (params.lam, params.mu, size)
        if orders != self._orders:
            self._wi = gl_weights(-params.lam, size - 1)
            self._wd = gl_weights(params.mu, size - 1)
            self._orders = orders

    def update(self, params: ControllerParams, e: float) -> float:
        if not math.isfinite(e):
            raise InvalidParameterError(f"error sample must be finite, got {e!r}")
        self._reserve(params)
        lo, hi = self.bounds
        k = self._n
        self._errors[k] = e
        # conditional integration: skip samples that would deepen saturation
        frozen = self.anti_windup and (
            (self.last_unsaturated >= hi and e > 0) or (self.last_unsaturated <= lo and e < 0)
        )
        self._integrand[k] = 0.0 if frozen else e
        self._n = k + 1

        h = self.step
        integral = h**params.lam * float(np.dot(self._wi[: k + 1], self._integrand[k::-1]))
        deriv = 0.0
        if params.tau_d:
            deriv = h ** (-params.mu) * float(np.dot(self._wd[: k + 1], self._errors[k::-1]))
        u = params.k * (e + integral / params.tau_i + params.tau_d * deriv)
        self.last_unsaturated = u
        return min(max(u, lo), hi)


def controller_step(state: ControllerState, params: ControllerParams, e: float) -> float:
    """Append `e` to the history and return the saturated control signal."""
    return state.update(params, e)


def controller_frequency_response(params: ControllerParams, omega: float) -> complex:
    """``C(j omega)`` for the fractional PID."""
    integral = s_power(-params.lam, omega) / params.tau_i
    return params.k * (1 + integral + params.tau_d * s_power(params.mu, omega))


def frequency_response_array(params: ControllerParams, omega) -> np.ndarray:
    """Vectorised :func:`controller_frequency_response` over positive `omega`."""
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise InvalidParameterError("omega must be > 0")
    half_pi = math.pi / 2
    integral = w ** (-params.lam) * np.exp(-1j * params.lam * half_pi) / params.tau_i
    deriv = params.tau_d * w**params.mu * np.exp(1j * params.mu * half_pi)
    return params.k * (1 + integral + deriv)


def simc_tune(plant: TransferFunction, tau_c: float | None = None) -> ControllerParams:
    """SIMC PID settings for a second-order-plus-dead-time model.

    ``Kp = tau1 / (k (tau_c + theta))``, ``tau_i = min(tau1, 4 (tau_c + theta))``,
    ``tau_d = tau2``. `tau_c` defaults to the dead time.
    """
    if plant.gain == 0:
        raise InvalidParameterError("SIMC needs a non-zero plant gain")
    theta = plant.delay
    if tau_c is None:
        tau_c = theta
    if not tau_c > 0:
        raise InvalidParameterError(f"tau_c must be > 0, got {tau_c}")
    horizon = tau_c + theta
    return ControllerParams(
        k=plant.tau1 / (plant.gain * horizon),
        tau_i=min(plant.tau1, 4.0 * horizon),
        tau_d=plant.tau2,
        lam=1.0,
        mu=1.0,
    )


class Preset(NamedTuple):
    params: ControllerParams
    ise: float
    mean_control: float


def table1_presets() -> dict[str, Preset]:
    """Published controller settings with their reported ISE and mean control."""
    return {
        "FOPID": Preset(ControllerParams(0.46, 0.64, 3.2, 0.85, 0.67), 0.73, 0.29),
        "SIMC PID": Preset(ControllerParams(4.94, 10.2, 0.002, 1.0, 1.0), 1.56, 0.76),
        "IOPID": Preset(ControllerParams(0.76, 1.4, 0.003, 1.0, 1.0), 0.82, 0.33),
    }


PRESET_ALIASES = {"fopid": "FOPID", "simc": "SIMC PID", "iopid": "IOPID"}


def preset(name: str) -> Preset:
    key = PRESET_ALIASES.get(name.lower(), name)
    presets = table1_presets()
    if key not in presets:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESET_ALIASES)}")
    return presets[key]
