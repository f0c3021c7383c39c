"""Loop-shaping evaluators and constrained FOPID / IOPID tuning."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize

from .controllers import ControllerParams, frequency_response_array
from .errors import ConfigurationError, InvalidParameterError, SingularLoopError
from .plant import TransferFunction

PM_TOL = 1.0  # degrees
CROSSOVER_TOL = 0.25  # dB
_UNWRAP_POINTS = 400
_UNWRAP_SPAN = 1e-6  # controller phase is tracked up from omega * _UNWRAP_SPAN


class Family(str, Enum):
    FOPID = "fopid"
    IOPID = "iopid"


@dataclass(frozen=True)
class FrequencySpec:
    phase_margin: float = 75.0
    gain_crossover: float = 1.94
    gain_margin: float = 10.0
    noise_band_level: float = -3.0
    noise_band_freq: float | None = None
    disturbance_level: float = -20.0
    disturbance_freq: float | None = None
    flat_phase_tolerance: float = 0.5

    def __post_init__(self):
        if not 0 < self.phase_margin <= 90:
            raise ConfigurationError(f"phase margin must be in (0, 90], got {self.phase_margin}")
        if not self.gain_crossover > 0:
            raise ConfigurationError("gain crossover must be > 0")
        if not (self.noise_band_level < 0 and self.disturbance_level < 0):
            raise ConfigurationError("sensitivity levels A and B must be negative dB")
        if self.noise_band_freq is None:
            object.__setattr__(self, "noise_band_freq", 10.0 * self.gain_crossover)
        if self.disturbance_freq is None:
            object.__setattr__(self, "disturbance_freq", 0.01 * self.gain_crossover)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> FrequencySpec:
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None

    @classmethod
    def load(cls, path) -> FrequencySpec:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TuningResult:
    params: ControllerParams
    family: Family
    achieved: dict
    feasible: bool
    ise: float = math.nan
    violations: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "params": self.params.to_dict(self.family.value.upper()),
            "achieved": self.achieved,
            "feasible": self.feasible,
            "ise": self.ise,
            "violations": list(self.violations),
        }

    @classmethod
    def from_dict(cls, data: dict) -> TuningResult:
        return cls(
            params=ControllerParams.from_dict(data["params"]),
            family=Family(data["family"]),
            achieved=dict(data["achieved"]),
            feasible=bool(data["feasible"]),
            ise=float(data["ise"]),
            violations=list(data.get("violations", [])),
        )


def _check_omega(omega: float) -> None:
    if not omega > 0:
        raise InvalidParameterError(f"omega must be > 0, got {omega!r}")


def loop_phase(loop, omega) -> np.ndarray:
    """Phase of an arbitrary ``loop(omega) -> complex`` unwrapped from ``omega -> 0+``.

    The lowest tracked frequency takes its principal value in ``[-pi, pi)``.
    Loops with a pure delay should prefer :func:`open_loop_phase`, which adds
    the delay analytically instead of tracking it point by point.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(omega <= 0):
        raise InvalidParameterError("omega must be > 0")
    lo = omega.min() * _UNWRAP_SPAN
    grid = np.unique(np.concatenate([np.geomspace(lo, omega.max(), _UNWRAP_POINTS), omega]))
    vals = np.array([complex(loop(w)) for w in grid])
    ph = np.angle(vals)
    if ph[0] >= math.pi:
        ph[0] -= 2 * math.pi
    ph = np.unwrap(ph)
    return np.interp(omega, grid, ph)


def _controller_phase(params: ControllerParams, omega: np.ndarray) -> np.ndarray:
    lo = omega.min() * _UNWRAP_SPAN
    grid = np.unique(np.concatenate([np.geomspace(lo, omega.max(), _UNWRAP_POINTS), omega]))
    ph = np.angle(frequency_response_array(params, grid))
    # near DC the integral term dominates, so the phase sits at -lam*pi/2
    ph[0] += 2 * math.pi * round((-params.lam * math.pi / 2 - ph[0]) / (2 * math.pi))
    ph = np.unwrap(ph)
    return ph[np.searchsorted(grid, omega)]


def open_loop(params: ControllerParams, plant: TransferFunction, omega: float) -> complex:
    """``C(j omega) G(j omega)`` with the exact dead-time factor."""
    _check_omega(omega)
    return complex(frequency_response_array(params, [omega])[0]) * plant(omega)


def open_loop_array(params: ControllerParams, plant: TransferFunction, omega) -> np.ndarray:
    w = np.asarray(omega, dtype=float)
    s = 1j * w
    g = plant.gain / ((plant.tau1 * s + 1) * (plant.tau2 * s + 1)) * np.exp(-plant.delay * s)
    return frequency_response_array(params, w) * g


def open_loop_phase(params: ControllerParams, plant: TransferFunction, omega) -> np.ndarray:
    """Continuous open-loop phase in radians."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(w <= 0):
        raise InvalidParameterError("omega must be > 0")
    return _controller_phase(params, w) + plant.phase(w)


def phase_margin_of(loop, omega_c: float) -> float:
    return 180.0 + math.degrees(float(loop_phase(loop, omega_c)[0]))


def eval_phase_margin(params: ControllerParams, plant: TransferFunction, omega_c: float) -> float:
    """``180 + arg L(j omega_c)`` in degrees."""
    _check_omega(omega_c)
    return 180.0 + math.degrees(float(open_loop_phase(params, plant, omega_c)[0]))


def crossover_residual_of(value: complex) -> float:
    return 20.0 * math.log10(abs(value))


def eval_crossover_residual(params: ControllerParams, plant: TransferFunction, omega_c: float) -> float:
    """``|L(j omega_c)|`` in dB; zero at a true gain crossover."""
    return crossover_residual_of(open_loop(params, plant, omega_c))


def phase_slope_of(phase_fn, omega_c: float) -> float:
    """Central difference of ``phase_fn`` (radians) in degrees per rad/s."""
    _check_omega(omega_c)
    d = 1e-4 * omega_c
    lo, hi = phase_fn(omega_c - d), phase_fn(omega_c + d)
    return math.degrees(float(hi - lo) / (2 * d))


def eval_phase_flatness(params: ControllerParams, plant: TransferFunction, omega_c: float) -> float:
    """Slope of the loop phase at ``omega_c``, degrees per rad/s."""
    return phase_slope_of(lambda w: open_loop_phase(params, plant, w)[0], omega_c)


def complementary_sensitivity_db(value: complex) -> float:
    den = 1 + value
    if den == 0:
        raise SingularLoopError("1 + L vanishes")
    return 20.0 * math.log10(abs(value / den))


def sensitivity_db(value: complex) -> float:
    den = 1 + value
    if den == 0:
        raise SingularLoopError("1 + L vanishes")
    return -20.0 * math.log10(abs(den))


def eval_noise_rejection(params: ControllerParams, plant: TransferFunction, omega_t: float) -> float:
    """``|T(j omega_t)|`` in dB."""
    return complementary_sensitivity_db(open_loop(params, plant, omega_t))


def eval_disturbance_rejection(params: ControllerParams, plant: TransferFunction, omega_s: float) -> float:
    """``|S(j omega_s)|`` in dB."""
    return sensitivity_db(open_loop(params, plant, omega_s))


def phase_curve(params: ControllerParams, plant: TransferFunction, omega_c: float, points: int = 400):
    """``(omega, phase_deg)`` on a log grid spanning two decades each side of ``omega_c``."""
    w = np.geomspace(omega_c / 100, omega_c * 100, points)
    return w, np.degrees(open_loop_phase(params, plant, w))


def gain_crossovers(params: ControllerParams, plant: TransferFunction, lo=1e-3, hi=1e3, points=4000):
    w = np.geomspace(lo, hi, points)
    mag = np.abs(open_loop_array(params, plant, w))
    idx = np.flatnonzero(np.diff(np.sign(np.log(mag))))
    out = []
    for i in idx:
        a, b = np.log(w[i]), np.log(w[i + 1])
        ma, mb = np.log(mag[i]), np.log(mag[i + 1])
        out.append(float(np.exp(a - ma * (b - a) / (mb - ma))))
    return out


def stability_margins(params: ControllerParams, plant: TransferFunction, lo=1e-3, hi=1e3, points=4000):
    """Worst phase margin over the gain crossovers and gain margin at the first -180 deg crossing.

    Returns a dict with ``phase_margin``, ``gain_crossover``, ``gain_margin`` (dB)
    and ``phase_crossover``; missing crossings are reported as None.
    """
    w = np.geomspace(lo, hi, points)
    ph = open_loop_phase(params, plant, w)
    out = {"phase_margin": None, "gain_crossover": None, "gain_margin": None, "phase_crossover": None}
    wcs = gain_crossovers(params, plant, lo, hi, points)
    if wcs:
        # worst case over every crossing
        pms = [eval_phase_margin(params, plant, wc) for wc in wcs]
        i = int(np.argmin(pms))
        out["gain_crossover"] = wcs[i]
        out["phase_margin"] = pms[i]
    below = np.flatnonzero(ph <= -math.pi)
    if below.size and below[0] > 0:
        i = below[0] - 1
        frac = (-math.pi - ph[i]) / (ph[i + 1] - ph[i])
        w180 = float(np.exp(np.log(w[i]) + frac * (np.log(w[i + 1]) - np.log(w[i]))))
        out["phase_crossover"] = w180
        out["gain_margin"] = -20.0 * math.log10(abs(open_loop(params, plant, w180)))
    return out


def achieved(params: ControllerParams, plant: TransferFunction, spec: FrequencySpec) -> dict:
    """Every loop-shaping quantity a FrequencySpec constrains, evaluated independently."""
    wc = spec.gain_crossover
    margins = stability_margins(params, plant)
    crossings = gain_crossovers(params, plant, wc / 1000, wc * 1000)
    return {
        "gain_crossovers": crossings,
        "phase_margin": eval_phase_margin(params, plant, wc),
        "crossover_db": eval_crossover_residual(params, plant, wc),
        "phase_slope": eval_phase_flatness(params, plant, wc),
        "t_db": eval_noise_rejection(params, plant, spec.noise_band_freq),
        "s_db": eval_disturbance_rejection(params, plant, spec.disturbance_freq),
        "gain_margin": margins["gain_margin"],
    }


def violations(values: dict, spec: FrequencySpec, family: Family, saturation_ok: bool = True,
               slack: float = 1.0) -> list[str]:
    """Names of the constraints `values` fails for this family.

    `slack` < 1 shrinks the tolerance bands; the polishing stage uses it to
    stay clear of the feasibility boundary.
    """
    bad = []
    if abs(values["phase_margin"] - spec.phase_margin) > slack * PM_TOL:
        bad.append("phase_margin")
    if abs(values["crossover_db"]) > slack * CROSSOVER_TOL:
        bad.append("crossover")
    elif any(w > 1.01 * spec.gain_crossover for w in values.get("gain_crossovers", ())):
        bad.append("crossover_above_target")
    if family is Family.FOPID:
        # a 3-term PID cannot also flatten the phase on a delayed plant;
        # for IOPID the slope is minimised but not gated
        if abs(values["phase_slope"]) > slack * spec.flat_phase_tolerance:
            bad.append("phase_slope")
        if values["t_db"] > spec.noise_band_level:
            bad.append("noise_rejection")
        if values["s_db"] > spec.disturbance_level:
            bad.append("disturbance_rejection")
        if not saturation_ok:
            bad.append("saturation")
    return bad


@dataclass(frozen=True)
class TuningOptions:
    starts: int = 16
    seed: int = 42
    maxiter: int = 4000
    refine_evals: int = 80
    bounds: tuple = (
        (1e-3, 50.0),  # k
        (0.01, 100.0),  # tau_i
        (0.0, 100.0),  # tau_d
        (0.1, 1.9),  # lam
        (0.0, 1.9),  # mu
    )
    start_box: tuple = ((0.1, 5.0), (0.1, 10.0), (0.0, 5.0), (0.3, 1.7), (0.1, 1.7))
    weights: tuple = (100.0, 100.0, 1.0, 1.0, 1.0)  # crossover, pm, slope, T, S
    saturation_fraction: float = 0.05


def _params(x, family: Family) -> ControllerParams:
    x = [float(v) for v in x]
    if family is Family.IOPID:
        return ControllerParams(x[0], x[1], x[2], 1.0, 1.0)
    return ControllerParams(*x)


class _Problem:
    def __init__(self, plant: TransferFunction, spec: FrequencySpec, family: Family, options: TuningOptions):
        self.plant = plant
        self.spec = spec
        self.family = family
        self.options = options
        dims = 3 if family is Family.IOPID else 5
        self.bounds = [tuple(b) for b in options.bounds[:dims]]
        self.box = [tuple(b) for b in options.start_box[:dims]]
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ConfigurationError(f"empty search interval ({lo}, {hi})")
        # fixed evaluation frequencies for the penalty
        wc = spec.gain_crossover
        d = 1e-4 * wc
        self.omegas = np.array([wc, wc - d, wc + d, spec.noise_band_freq, spec.disturbance_freq])
        # omega_c must be the highest gain crossover
        self.above = np.geomspace(wc * 1.02, wc * 100, 32)

    def residuals(self, x):
        p = _params(x, self.family)
        w = self.omegas
        loop = open_loop_array(p, self.plant, w)
        ph = open_loop_phase(p, self.plant, w[:3])
        pm = 180.0 + math.degrees(ph[0])
        cr = 20.0 * math.log10(abs(loop[0]))
        slope = math.degrees((ph[2] - ph[1]) / (w[2] - w[1]))
        t_db = 20.0 * math.log10(abs(loop[3] / (1 + loop[3])))
        s_db = -20.0 * math.log10(abs(1 + loop[4]))
        return pm, cr, slope, t_db, s_db

    def crossing_excess(self, x) -> float:
        p = _params(x, self.family)
        hi = 20.0 * np.log10(np.abs(open_loop_array(p, self.plant, self.above)))
        return float(np.sum(np.maximum(hi, 0.0) ** 2))

    def penalty(self, x) -> float:
        try:
            p = _params(x, self.family)
        except InvalidParameterError:
            return 1e12
        del p
        pm, cr, slope, t_db, s_db = self.residuals(x)
        w = self.options.weights
        spec = self.spec
        val = w[0] * cr**2 + w[1] * (pm - spec.phase_margin) ** 2
        val += w[0] * self.crossing_excess(x)
        if self.family is Family.FOPID:
            val += w[2] * max(0.0, abs(slope) - 0.9 * spec.flat_phase_tolerance) ** 2
            val += w[3] * max(0.0, t_db - spec.noise_band_level + 0.5) ** 2
            val += w[4] * max(0.0, s_db - spec.disturbance_level + 0.5) ** 2
        return float(val) if math.isfinite(val) else 1e12

    def starts(self):
        rng = np.random.default_rng(self.options.seed)
        for _ in range(self.options.starts):
            yield np.array([rng.uniform(lo, hi) for lo, hi in self.box])


def saturation_fraction(trace) -> float:
    """Share of samples in which the unclamped controller output leaves [0, 10]."""
    lo, hi = 0.0, 10.0
    raw = trace.u_raw
    return float(np.mean((raw < lo) | (raw > hi)))


def _nominal_ise(params: ControllerParams, plant: TransferFunction):
    from .simloop import SimConfig, metrics, simulate

    trace = simulate(params, SimConfig(plant=plant))
    return metrics(trace).ise, saturation_fraction(trace)


def evaluate(params: ControllerParams, plant: TransferFunction, spec: FrequencySpec, family: Family,
             options: TuningOptions | None = None) -> TuningResult:
    """Score a parameter set against `spec` with the standalone evaluators and a nominal run."""
    options = options or TuningOptions()
    values = achieved(params, plant, spec)
    ise, sat = _nominal_ise(params, plant)
    values["saturation_fraction"] = sat
    bad = violations(values, spec, family, sat <= options.saturation_fraction)
    if not math.isfinite(ise):
        bad.append("unstable")
    return TuningResult(params, family, values, not bad, ise, bad)


def tune(plant: TransferFunction, spec: FrequencySpec, family: Family | str = Family.FOPID,
         options: TuningOptions | None = None) -> TuningResult:
    """Multi-start simplex search over the controller parameters.

    Stage one drives the loop-shaping residuals to zero from every start.
    Stage two keeps the candidates that satisfy every constraint, picks the
    one with the smallest nominal closed-loop ISE and polishes it on ISE
    without leaving the feasible set. With no feasible candidate, the one
    with the smallest penalty is returned, flagged infeasible.
    """
    family = Family(family)
    options = options or TuningOptions()
    prob = _Problem(plant, spec, family, options)

    candidates = []
    for x0 in prob.starts():
        res = minimize(
            prob.penalty, x0, method="Nelder-Mead", bounds=prob.bounds,
            options={"maxiter": options.maxiter, "maxfev": 2 * options.maxiter,
                     "xatol": 1e-9, "fatol": 1e-12},
        )
        candidates.append((float(res.fun), tuple(float(v) for v in res.x)))
    # de-duplicate converged starts; order is fixed by the start sequence
    seen = {}
    for fun, x in candidates:
        key = tuple(round(v, 6) for v in x)
        if key not in seen or fun < seen[key][0]:
            seen[key] = (fun, x)
    ranked = sorted(seen.values())

    results = []
    for _, x in ranked:
        try:
            results.append(evaluate(_params(x, family), plant, spec, family, options))
        except InvalidParameterError:
            continue
    feasible = [r for r in results if r.feasible]
    if not feasible:
        return results[0] if results else _fail(prob)

    best = min(feasible, key=lambda r: r.ise)
    return _polish(best, prob)


def _fail(prob: _Problem) -> TuningResult:
    raise ConfigurationError("no admissible candidate inside the search region")


def _polish(best: TuningResult, prob: _Problem) -> TuningResult:
    if prob.options.refine_evals <= 0:
        return best
    family, plant, spec, options = prob.family, prob.plant, prob.spec, prob.options
    cache = {}

    def objective(x):
        key = tuple(x)
        if key in cache:
            return cache[key]
        try:
            p = _params(x, family)
        except InvalidParameterError:
            cache[key] = 1e12
            return 1e12
        pm, cr, slope, t_db, s_db = prob.residuals(x)
        vals = {"phase_margin": pm, "crossover_db": cr, "phase_slope": slope, "t_db": t_db, "s_db": s_db}
        if violations(vals, spec, family, slack=0.8) or prob.crossing_excess(x) > 0:
            cache[key] = 1e6 + prob.penalty(x)
            return cache[key]
        ise, sat = _nominal_ise(p, plant)
        val = ise if sat <= options.saturation_fraction else 1e6 + ise
        cache[key] = val if math.isfinite(val) else 1e12
        return cache[key]

    x0 = np.array(_x(best.params, family))
    res = minimize(objective, x0, method="Nelder-Mead", bounds=prob.bounds,
                   options={"maxfev": options.refine_evals, "xatol": 1e-6, "fatol": 1e-9})
    if res.fun < best.ise:
        cand = evaluate(_params(res.x, family), plant, spec, family, options)
        if cand.feasible and cand.ise < best.ise:
            return cand
    return best


def _x(params: ControllerParams, family: Family):
    if family is Family.IOPID:
        return (params.k, params.tau_i, params.tau_d)
    return (params.k, params.tau_i, params.tau_d, params.lam, params.mu)
