"""Grünwald-Letnikov differ-integration and s**alpha on the imaginary axis.

Positive orders differentiate, negative orders integrate. Signals are taken
to be zero before their first sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError


def gl_weights(alpha: float, n: int) -> np.ndarray:
    """Return the Grünwald-Letnikov weights ``w_0 .. w_n`` for order `alpha`.

    ``w_j = (-1)**j * binom(alpha, j)``, generated with the recursion
    ``w_j = w_{j-1} * (1 - (alpha + 1) / j)`` so no Gamma function is
    evaluated and large ``j`` cannot overflow.
    """
    if not math.isfinite(alpha):
        raise InvalidParameterError(f"order must be finite, got {alpha!r}")
    if n < 0:
        raise InvalidParameterError(f"weight count must be >= 0, got {n}")

    w = np.empty(n + 1)
    w[0] = 1.0
    if n:
        factors = 1.0 - (alpha + 1.0) / np.arange(1, n + 1)
        w[1:] = np.cumprod(factors)
    return w


@dataclass(frozen=True)
class GLKernel:
    """Precomputed weights for repeated GL evaluation at a fixed step."""

    alpha: float
    step: float
    n: int
    memory: int | None = None
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.step > 0:
            raise InvalidParameterError(f"step must be > 0, got {self.step!r}")
        if self.memory is not None and self.memory < 1:
            raise InvalidParameterError("memory window must hold at least one sample")
        size = self.n if self.memory is None else min(self.n, self.memory - 1)
        object.__setattr__(self, "weights", gl_weights(self.alpha, size))

    @property
    def scale(self) -> float:
        return self.step ** (-self.alpha)

    def at(self, history: np.ndarray, k: int) -> float:
        """GL value at sample `k` given ``history[0..k]`` (oldest first)."""
        m = min(k + 1, self.weights.size)
        # weights run backward in time from sample k
        past = history[k::-1] if k + 1 == m else history[k : k - m : -1]
        return self.scale * float(np.dot(self.weights[:m], past))


def gl_apply(signal, alpha: float, step: float, memory: int | None = None) -> np.ndarray:
    """Apply the GL operator of order `alpha` to a uniformly sampled signal.

    ``out[k] = step**-alpha * sum_{j<=k} w_j * signal[k-j]``. With `memory`
    set, only the most recent `memory` samples contribute (short-memory
    principle); by default the whole history is used.
    """
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidParameterError("signal must be a non-empty 1-D sequence")
    if not step > 0:
        raise InvalidParameterError(f"step must be > 0, got {step!r}")
    if alpha == 0:
        return x.copy()

    n = x.size
    size = n - 1 if memory is None else min(n - 1, memory - 1)
    w = gl_weights(alpha, size)
    # causal convolution, truncated to the signal length
    out = np.convolve(x, w)[:n]
    return out * step ** (-alpha)


def s_power(alpha: float, omega: float) -> complex:
    """Evaluate ``s**alpha`` at ``s = j*omega`` on the principal branch."""
    if not omega > 0:
        raise InvalidParameterError(f"omega must be > 0, got {omega!r}")
    mag = omega**alpha
    phase = alpha * math.pi / 2
    return complex(mag * math.cos(phase), mag * math.sin(phase))
