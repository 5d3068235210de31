"""Exogenous background, conditional intensity and compensator.

The intensity of target label ``e`` is

    lambda_e(t) = mu0_e + sum_f nu[e, f] S_f(t)
                + sum_f sum_{t_j^f < t} alpha[e, f] / gamma_e exp(-(t - t_j^f) / gamma_e)

where ``S_f(t)`` sums the subtitle shape over subtitles of label ``f`` shown
strictly before ``t``.  Functions here evaluate these terms directly (no
recursion); the likelihood module has the fast path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .events import VideoSession
from .kernels import ShapeConfig, adaptive_simpson
from .params import HawkesParams

_CHUNK = 1 << 20


def background_S(t, subtitle_times, shape: ShapeConfig):
    """Sum of ``shape(t - tau)`` over subtitles ``tau < t``; vectorized in `t`."""
    t = np.asarray(t, dtype=float)
    tau = np.asarray(subtitle_times, dtype=float).ravel()
    flat = t.ravel()
    out = np.zeros(flat.size)
    if tau.size and flat.size:
        step = max(1, _CHUNK // tau.size)
        for i in range(0, flat.size, step):
            dt = flat[i:i + step, None] - tau[None, :]
            out[i:i + step] = shape.density(dt).sum(axis=1)
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def M1(subtitle_times, T: float, shape: ShapeConfig, closed_form: bool = True) -> float:
    """Integral of ``S_f`` over ``[0, T]``.

    Closed form via the shape's cumulative mass; with ``closed_form=False`` each
    subtitle's term is integrated by adaptive Simpson (relative tolerance 1e-8).
    """
    tau = np.asarray(subtitle_times, dtype=float).ravel()
    tau = tau[tau < T]
    if closed_form:
        return float(np.sum(shape.mass(T - tau)))
    total = 0.0
    for x in tau:
        # right limit at 0, where the power law jumps to eps**-c
        f = lambda s: float(shape.density(max(s, 1e-300)))  # noqa: E731
        m = shape.mode()
        # split at the mode so the peak is a node of the quadrature
        if 0.0 < m < T - x:
            total += adaptive_simpson(f, 0.0, m) + adaptive_simpson(f, m, T - x)
        else:
            total += adaptive_simpson(f, 0.0, T - x)
    return total


def exo_rate(t, e: int, params: HawkesParams, session: VideoSession):
    """Spontaneous plus video-driven rate ``mu0_e + sum_f nu[e, f] S_f(t)``."""
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, params.mu0[e])
    for f, subs in enumerate(session.subtitle_events):
        if params.nu[e, f] != 0.0 and subs.size:
            out = out + params.nu[e, f] * background_S(t, subs, params.shape)
    return float(out) if out.ndim == 0 else out


def endo_rate(t, e: int, params: HawkesParams, session: VideoSession):
    """Excitation from chat events strictly before `t` (direct double sum)."""
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    g = params.gamma[e]
    out = np.zeros(flat.size)
    for f, ev in enumerate(session.chat_events):
        a = params.alpha[e, f]
        if a == 0.0 or ev.size == 0:
            continue
        dt = flat[:, None] - ev[None, :]
        out += (a / g) * np.where(dt > 0, np.exp(-np.maximum(dt, 0.0) / g), 0.0).sum(axis=1)
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


def total_intensity(t, e: int, params: HawkesParams, session: VideoSession):
    """Conditional intensity of label `e`; history is events with ``t_j < t``."""
    return exo_rate(t, e, params, session) + endo_rate(t, e, params, session)


def compensator(e: int, params: HawkesParams, session: VideoSession, t):
    """Expected count of label `e` over ``[0, t]`` (vectorized in `t`)."""
    t = np.asarray(t, dtype=float)
    flat = t.ravel()
    g = params.gamma[e]
    out = params.mu0[e] * flat
    for f in range(session.n_labels):
        subs = session.subtitle_events[f]
        if params.nu[e, f] != 0.0 and subs.size:
            dt = flat[:, None] - subs[None, :]
            out = out + params.nu[e, f] * params.shape.mass(dt).sum(axis=1)
        ev = session.chat_events[f]
        if params.alpha[e, f] != 0.0 and ev.size:
            dt = flat[:, None] - ev[None, :]
            out = out + params.alpha[e, f] * np.where(dt > 0, -np.expm1(-np.maximum(dt, 0.0) / g), 0.0).sum(axis=1)
    return float(out[0]) if t.ndim == 0 else out.reshape(t.shape)


@dataclass(frozen=True, eq=False)
class BackgroundCache:
    """Parameter-independent per-session quantities, computed once per shape.

    `times` / `labels` list every label event in time order (a message with
    several labels appears once per label); `S` holds ``S_f`` at each of those
    times, one column per source label; `M1` holds the integral of ``S_f``
    over the whole session.
    """

    session_id: str
    duration: float
    times: np.ndarray
    labels: np.ndarray
    S: np.ndarray
    M1: np.ndarray
    n_labels: int

    @classmethod
    def build(cls, session: VideoSession, shape: ShapeConfig) -> "BackgroundCache":
        times, labels = session.merged_events()
        k = session.n_labels
        S = np.zeros((times.size, k))
        m1 = np.zeros(k)
        for f, subs in enumerate(session.subtitle_events):
            if subs.size:
                S[:, f] = background_S(times, subs, shape)
                m1[f] = M1(subs, session.duration, shape)
        for a in (times, labels, S, m1):
            a.setflags(write=False)
        return cls(session.session_id, session.duration, times, labels, S, m1, k)

    def target_mask(self, e: int) -> np.ndarray:
        return self.labels == e

    def source_times(self, f: int) -> np.ndarray:
        return self.times[self.labels == f]
