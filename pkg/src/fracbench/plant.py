"""Two-tank level process, its input-output linearization, and the design model."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidParameterError, InvalidStateError, SingularStateError

# Closed-loop polynomial s**2 + BETA1*s + BETA0 imposed by the linearizing law.
BETA1 = 1.66
BETA0 = 0.666

# Factorisation printed alongside the polynomial; it expands to
# s**2 + 1.6335 s + 0.6662, not to the coefficients above, so it is kept
# for reference only and never used in computation.
PUBLISHED_FACTOR_ROOTS = (-0.8471, -0.7864)


@dataclass(frozen=True)
class TankState:
    x1: float
    x2: float

    def __post_init__(self):
        if not (self.x1 >= 0 and self.x2 >= 0):
            raise InvalidStateError(f"tank levels must be >= 0, got ({self.x1}, {self.x2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2])


class LieBundle(NamedTuple):
    lfh: float
    lf2h: float
    lglfh: float


@dataclass(frozen=True)
class TransferFunction:
    """``gain / ((tau1 s + 1)(tau2 s + 1)) * exp(-delay s)``.

    `gain` is the DC gain. Models written with a monic denominator, such as
    ``2 / (s**2 + 1.66 s + 0.666)``, are built with :meth:`from_monic`.
    """

    gain: float
    tau1: float
    tau2: float
    delay: float = 0.0

    def __post_init__(self):
        # tau = 0 drops that pole, so a static gain is tau1 = tau2 = 0
        if not (self.tau1 >= self.tau2 >= 0):
            raise InvalidParameterError(
                f"need tau1 >= tau2 >= 0, got tau1={self.tau1}, tau2={self.tau2}"
            )
        if not self.delay >= 0:
            raise InvalidParameterError(f"delay must be >= 0, got {self.delay}")

    @classmethod
    def from_monic(cls, numerator: float, b1: float, b0: float, delay: float = 0.0):
        """Build from ``numerator / (s**2 + b1 s + b0)`` with real stable poles."""
        disc = b1 * b1 - 4.0 * b0
        if b0 <= 0 or b1 <= 0 or disc < 0:
            raise InvalidParameterError("denominator must have real negative roots")
        root = math.sqrt(disc)
        slow = (b1 - root) / 2.0  # magnitude of the slower pole
        fast = (b1 + root) / 2.0
        return cls(gain=numerator / b0, tau1=1.0 / slow, tau2=1.0 / fast, delay=delay)

    @property
    def order(self) -> int:
        return int(self.tau1 > 0) + int(self.tau2 > 0)

    @property
    def b1(self) -> float:
        """``s**1`` coefficient of the monic second-order denominator."""
        return (self.tau1 + self.tau2) / (self.tau1 * self.tau2)

    @property
    def b0(self) -> float:
        return 1.0 / (self.tau1 * self.tau2)

    @property
    def numerator(self) -> float:
        return self.gain * self.b0

    @property
    def poles(self) -> tuple[float, ...]:
        return tuple(-1.0 / tau for tau in (self.tau2, self.tau1) if tau > 0)

    def with_delay(self, delay: float) -> TransferFunction:
        return TransferFunction(self.gain, self.tau1, self.tau2, delay)

    def __call__(self, omega: float) -> complex:
        """Frequency response at ``s = j*omega`` (delay exact, no Padé)."""
        s = 1j * omega
        return self.gain / ((self.tau1 * s + 1) * (self.tau2 * s + 1)) * cmath.exp(-self.delay * s)

    def phase(self, omega):
        """Continuous phase in radians, zero at DC for positive gain."""
        omega = np.asarray(omega, dtype=float)
        ph = -np.arctan(self.tau1 * omega) - np.arctan(self.tau2 * omega) - self.delay * omega
        return ph - math.pi if self.gain < 0 else ph


def _check_state(x1: float, x2: float) -> None:
    if x1 < 0 or x2 < 0:
        raise InvalidStateError(f"tank levels must be >= 0, got ({x1}, {x2})")


def tank_dynamics(state: TankState, u: float) -> tuple[float, float]:
    """Right-hand side of the two non-interacting tank model."""
    x1, x2 = state.x1, state.x2
    _check_state(x1, x2)
    if not math.isfinite(u):
        raise InvalidParameterError(f"inflow must be finite, got {u!r}")
    q1 = math.sqrt(x1)
    return (-q1 + u, q1 - math.sqrt(x2))


def lie_bundle(state: TankState) -> LieBundle:
    """Lie derivatives of ``h(x) = x2`` along ``f`` and ``g = (1, 0)``.

    ``L_g h`` is identically zero (``dh/dx = (0, 1)`` is orthogonal to ``g``),
    so the relative degree is two.
    """
    x1, x2 = state.x1, state.x2
    if x1 <= 0 or x2 <= 0:
        raise SingularStateError(f"Lie derivatives undefined at ({x1}, {x2})")
    q1, q2 = math.sqrt(x1), math.sqrt(x2)
    return LieBundle(lfh=q1 - q2, lf2h=-0.5 * q1 / q2, lglfh=1.0 / (2.0 * q1))


def lgh(state: TankState) -> float:
    """``L_g h``; zero for every state."""
    dh = np.array([0.0, 1.0])
    g = np.array([1.0, 0.0])
    return float(dh @ g)


def linearizing_control(state: TankState, v: float) -> float:
    """Inflow that makes ``y'' + 1.66 y' + 0.666 y = v``."""
    lie = lie_bundle(state)
    return (-BETA0 * state.x2 - BETA1 * lie.lfh - lie.lf2h + v) / lie.lglfh


def characteristic_polynomial() -> tuple[np.ndarray, np.ndarray]:
    """Return ``(roots, coefficients)`` of ``s**2 + 1.66 s + 0.666``.

    Roots come from the coefficients, ordered slowest first.
    """
    coeffs = np.array([1.0, BETA1, BETA0])
    roots = np.sort(np.roots(coeffs).real)[::-1]
    return roots, coeffs


def design_plant() -> TransferFunction:
    """``2 exp(-0.5 s) / (s**2 + 1.66 s + 0.666)``."""
    return TransferFunction.from_monic(2.0, BETA1, BETA0, delay=0.5)


def rk4_step(f, x: np.ndarray, h: float) -> np.ndarray:
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _tank_rhs(x: np.ndarray, u: float, g_scale: float = 1.0) -> np.ndarray:
    q1 = math.sqrt(max(x[0], 0.0))
    q2 = math.sqrt(max(x[1], 0.0))
    return np.array([-q1 + g_scale * u, q1 - q2])


def _linearized_rhs(x: np.ndarray, v: float, g_scale: float = 1.0) -> np.ndarray:
    # the law assumes g = (1, 0); g_scale perturbs only the true plant
    x1, x2 = x[0], x[1]
    if x1 <= 0 or x2 <= 0:
        raise SingularStateError(f"linearizing law undefined at ({x1}, {x2})")
    q1, q2 = math.sqrt(x1), math.sqrt(x2)
    u = 2.0 * q1 * (-BETA0 * x2 - BETA1 * (q1 - q2) + 0.5 * q1 / q2 + v)
    return np.array([-q1 + g_scale * u, q1 - q2])


def advance_tanks(x: np.ndarray, u: float, h: float, g_scale: float = 1.0) -> np.ndarray:
    """One RK4 step of the open tank model under constant inflow `u`."""
    nxt = rk4_step(lambda s: _tank_rhs(s, u, g_scale), x, h)
    return np.maximum(nxt, 0.0)


def advance_linearized(x: np.ndarray, v: float, h: float, g_scale: float = 1.0) -> np.ndarray:
    """One RK4 step of the tanks with the linearizing law evaluated at every stage."""
    nxt = rk4_step(lambda s: _linearized_rhs(s, v, g_scale), x, h)
    return np.maximum(nxt, 0.0)


def open_loop_step(u: float = 1.0, horizon: float = 60.0, h: float = 0.01, x0=(0.0, 0.0)):
    """Level ``x2`` of the uncontrolled tanks under a constant inflow.

    Returns ``(t, y)``.
    """
    n = int(round(horizon / h))
    x = np.array(x0, dtype=float)
    y = np.empty(n + 1)
    y[0] = x[1]
    for k in range(n):
        x = advance_tanks(x, u, h)
        y[k + 1] = x[1]
    return np.arange(n + 1) * h, y


def linearized_step(r: float = 1.0, horizon: float = 30.0, h: float = 1e-3, x0=(0.01, 0.01)):
    """Tank level under the linearizing law with ``v = 0.666 r``.

    Returns ``(t, y)``; the output should follow
    ``0.666 r / (s**2 + 1.66 s + 0.666)``.
    """
    n = int(round(horizon / h))
    x = np.array(x0, dtype=float)
    v = BETA0 * r
    y = np.empty(n + 1)
    y[0] = x[1]
    for k in range(n):
        x = advance_linearized(x, v, h)
        y[k + 1] = x[1]
    return np.arange(n + 1) * h, y


def settling_time(t, y, band: float = 0.005, final: float | None = None) -> float:
    """First time after which ``y`` stays within ``band * |final|`` of `final`."""
    t = np.asarray(t)
    y = np.asarray(y)
    if final is None:
        final = y[-1]
    outside = np.flatnonzero(np.abs(y - final) > band * abs(final))
    if outside.size == 0:
        return float(t[0])
    if outside[-1] == y.size - 1:
        return math.inf
    return float(t[outside[-1] + 1])


def overshoot(y, final: float | None = None) -> float:
    """Peak excursion above the final value, as a fraction of it."""
    y = np.asarray(y)
    if final is None:
        final = y[-1]
    return max(0.0, (float(y.max()) - final) / abs(final))
