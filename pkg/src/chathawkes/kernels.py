"""Influence shapes for subtitles (exogenous) and chat events (endogenous).

All times are in minutes.  Every shape vanishes for non-positive elapsed time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

LOGNORMAL = "lognormal"
POWERLAW = "powerlaw"

#: Default log-normal constraints: influence peaks 2 s after a subtitle and
#: half of its mass arrives within 10 s.
DEFAULT_PEAK_MIN = 2.0 / 60.0
DEFAULT_MEDIAN_MIN = 10.0 / 60.0
DEFAULT_POWERLAW_EPS = 1.0 / 60.0


def solve_lognormal_params(peak_time: float, median_time: float) -> tuple[float, float]:
    """Return ``(mu, sigma)`` of the log-normal whose mode is `peak_time` and
    whose median is `median_time` (both in the same unit)."""
    if not (0.0 < peak_time < median_time):
        raise ValueError(
            f"need 0 < peak_time < median_time, got peak={peak_time}, median={median_time}"
        )
    mu = math.log(median_time)
    sigma = math.sqrt(math.log(median_time / peak_time))
    return mu, sigma


@dataclass(frozen=True)
class ShapeConfig:
    """Shape family of a single subtitle's influence on the chat.

    ``lognormal`` uses the log-time location `mu` and scale `sigma`;
    ``powerlaw`` is ``1 / (dt + eps) ** c``.
    """

    family: str = LOGNORMAL
    mu: float = math.log(DEFAULT_MEDIAN_MIN)
    sigma: float = math.sqrt(math.log(DEFAULT_MEDIAN_MIN / DEFAULT_PEAK_MIN))
    c: float = 2.5
    eps: float = DEFAULT_POWERLAW_EPS

    def __post_init__(self):
        if self.family not in (LOGNORMAL, POWERLAW):
            raise ValueError(f"unknown shape family {self.family!r}")
        if self.family == LOGNORMAL and not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.family == POWERLAW:
            if not self.c > 1:
                raise ValueError(f"power-law exponent must be > 1, got {self.c}")
            if not self.eps > 0:
                raise ValueError(f"power-law offset must be > 0, got {self.eps}")

    @classmethod
    def lognormal(cls, mu: float, sigma: float) -> "ShapeConfig":
        return cls(family=LOGNORMAL, mu=float(mu), sigma=float(sigma))

    @classmethod
    def from_peak_median(
        cls, peak_time: float = DEFAULT_PEAK_MIN, median_time: float = DEFAULT_MEDIAN_MIN
    ) -> "ShapeConfig":
        return cls.lognormal(*solve_lognormal_params(peak_time, median_time))

    @classmethod
    def powerlaw(cls, c: float, eps: float = DEFAULT_POWERLAW_EPS) -> "ShapeConfig":
        return cls(family=POWERLAW, c=float(c), eps=float(eps))

    def density(self, dt):
        if self.family == LOGNORMAL:
            return lognormal_shape(dt, self)
        return powerlaw_shape(dt, self)

    def mass(self, dt):
        """Integral of :meth:`density` over ``(0, dt]``."""
        if self.family == LOGNORMAL:
            return lognormal_cdf(dt, self)
        return powerlaw_mass(dt, self)

    def mode(self) -> float:
        """Elapsed time at which the shape is largest (0 for the power law)."""
        if self.family == LOGNORMAL:
            return math.exp(self.mu - self.sigma**2)
        return 0.0

    def window_max(self, lo, hi):
        """Upper bound of the shape over elapsed times in ``[lo, hi]``.

        Exact for both families since they are unimodal in ``dt``.
        """
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        m = self.mode()
        if self.family == POWERLAW:
            # decreasing on (0, inf); the sup is at lo, or the finite limit eps**-c
            return np.where(hi <= 0, 0.0, (np.maximum(lo, 0.0) + self.eps) ** -self.c)
        inside = (lo <= m) & (m <= hi)
        peak = float(self.density(m))
        return np.where(hi <= 0, 0.0,
                        np.where(inside, peak, np.maximum(self.density(lo), self.density(hi))))

    def to_dict(self) -> dict:
        if self.family == LOGNORMAL:
            return {"family": LOGNORMAL, "mu": self.mu, "sigma": self.sigma}
        return {"family": POWERLAW, "c": self.c, "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeConfig":
        family = d.get("family", LOGNORMAL)
        if family == LOGNORMAL:
            return cls.lognormal(d["mu"], d["sigma"])
        if family == POWERLAW:
            return cls.powerlaw(d["c"], d.get("eps", DEFAULT_POWERLAW_EPS))
        raise ValueError(f"unknown shape family {family!r}")


def lognormal_shape(dt, cfg: ShapeConfig):
    """Log-normal density at elapsed time `dt`; zero for ``dt <= 0``."""
    dt = np.asarray(dt, dtype=float)
    pos = dt > 0
    safe = np.where(pos, dt, 1.0)
    z = (np.log(safe) - cfg.mu) / cfg.sigma
    val = np.exp(-0.5 * z * z) / (math.sqrt(2.0 * math.pi) * cfg.sigma * safe)
    out = np.where(pos, val, 0.0)
    return float(out) if out.ndim == 0 else out


def lognormal_cdf(dt, cfg: ShapeConfig):
    dt = np.asarray(dt, dtype=float)
    pos = dt > 0
    safe = np.where(pos, dt, 1.0)
    out = np.where(pos, ndtr((np.log(safe) - cfg.mu) / cfg.sigma), 0.0)
    return float(out) if out.ndim == 0 else out


def powerlaw_shape(dt, cfg: ShapeConfig):
    """``1 / (dt + eps) ** c`` for ``dt > 0``, else 0."""
    dt = np.asarray(dt, dtype=float)
    pos = dt > 0
    out = np.where(pos, (np.where(pos, dt, 0.0) + cfg.eps) ** -cfg.c, 0.0)
    return float(out) if out.ndim == 0 else out


def powerlaw_mass(dt, cfg: ShapeConfig):
    dt = np.asarray(dt, dtype=float)
    pos = dt > 0
    x = np.where(pos, dt, 0.0)
    k = 1.0 - cfg.c
    out = np.where(pos, (cfg.eps**k - (x + cfg.eps) ** k) / (cfg.c - 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ExpKernelParams:
    alpha: float
    gamma: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")


def exp_kernel(dt, params: ExpKernelParams):
    """``(alpha / gamma) * exp(-dt / gamma)`` for ``dt >= 0``, else 0."""
    dt = np.asarray(dt, dtype=float)
    a, g = params.alpha, params.gamma
    out = np.where(dt >= 0, (a / g) * np.exp(-np.maximum(dt, 0.0) / g), 0.0)
    return float(out) if out.ndim == 0 else out


def exp_kernel_mass(x, params: ExpKernelParams):
    """Closed-form integral of :func:`exp_kernel` over ``(0, x]``."""
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    out = params.alpha * -np.expm1(-x / params.gamma)
    return float(out) if out.ndim == 0 else out


def adaptive_simpson(
    f: Callable[[float], float], a: float, b: float, rtol: float = 1e-8, max_depth: int = 60
) -> float:
    """Integrate scalar `f` over ``[a, b]`` by adaptive Simpson quadrature."""
    if b <= a:
        return 0.0

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = simpson(fa, fm, fb, a, b)
    # the absolute tolerance comes from a composite estimate; a single panel
    # can miss a narrow peak entirely
    x = np.linspace(a, b, 257)
    y = np.array([f(v) for v in x])
    rough = (b - a) / 768.0 * (y[0] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-1:2].sum() + y[-1])
    atol = rtol * max(abs(rough), 1e-300)

    total = 0.0
    stack = [(a, b, fa, fm, fb, whole, atol, 0)]
    while stack:
        a, b, fa, fm, fb, whole, tol, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) <= 15.0 * tol:
            total += left + right + delta / 15.0
        else:
            stack.append((a, m, fa, flm, fm, left, 0.5 * tol, depth + 1))
            stack.append((m, b, fm, frm, fb, right, 0.5 * tol, depth + 1))
    return total
