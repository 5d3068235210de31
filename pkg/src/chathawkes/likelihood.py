"""Exact log-likelihood of one target label, its gradient, and the O(N) recursion.

For target ``e`` over a session of length ``T``::

    log L = sum_i log lambda_e(t_i) - mu0 T - sum_f nu_f M1_f
            + sum_f alpha_f sum_j (exp(-(T - t_j^f) / gamma) - 1)

Because all source labels share the decay time ``gamma`` of the target, the
excitation felt at each target event is carried forward in O(N) with

    A_f(t) = sum_{t_j^f < t} exp(-(t - t_j^f) / gamma)
    B_f(t) = sum_{t_j^f < t} (t - t_j^f) exp(-(t - t_j^f) / gamma)

where ``B`` feeds the gamma derivative.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .events import VideoSession
from .intensity import BackgroundCache
from .params import HawkesParams, unpack

#: Value reported when some event has non-positive intensity (log of 0).
INFEASIBLE = -1e50


class LikelihoodError(ArithmeticError):
    def __init__(self, message: str, event_index: int | None = None):
        self.event_index = event_index
        super().__init__(message)


@njit(cache=True, nogil=True)
def _decay_states(times, labels, offsets, target, k, gamma):
    """A and B at every target event, sessions delimited by `offsets`."""
    n_target = 0
    for i in range(times.size):
        if labels[i] == target:
            n_target += 1
    out_a = np.zeros((n_target, k))
    out_b = np.zeros((n_target, k))
    a = np.zeros(k)
    b = np.zeros(k)
    pending = np.zeros(k)
    j = 0
    for s in range(offsets.size - 1):
        a[:] = 0.0
        b[:] = 0.0
        pending[:] = 0.0
        t_cur = 0.0
        for i in range(offsets[s], offsets[s + 1]):
            t = times[i]
            d = t - t_cur
            if d > 0.0:
                w = np.exp(-d / gamma)
                for f in range(k):
                    carried = a[f] + pending[f]
                    b[f] = w * (b[f] + d * carried)
                    a[f] = w * carried
                    pending[f] = 0.0
                t_cur = t
            if labels[i] == target:
                out_a[j, :] = a
                out_b[j, :] = b
                j += 1
            # events at t join the history only for strictly later times
            pending[labels[i]] += 1.0
    return out_a, out_b


def _naive_states(times, labels, offsets, target, k, gamma):
    """O(N^2) pairwise version of :func:`_decay_states`, kept as an oracle."""
    blocks_a, blocks_b = [], []
    for s in range(offsets.size - 1):
        t = times[offsets[s]:offsets[s + 1]]
        lab = labels[offsets[s]:offsets[s + 1]]
        ti = t[lab == target]
        dt = ti[:, None] - t[None, :]
        past = dt > 0
        w = np.where(past, np.exp(-np.where(past, dt, 0.0) / gamma), 0.0)
        onehot = np.eye(k)[lab]
        blocks_a.append(w @ onehot)
        blocks_b.append((w * np.where(past, dt, 0.0)) @ onehot)
    if not blocks_a:
        return np.zeros((0, k)), np.zeros((0, k))
    return np.vstack(blocks_a), np.vstack(blocks_b)


class TargetData:
    """Concatenated per-session arrays needed to score one target label."""

    def __init__(self, e: int, caches: Sequence[BackgroundCache]):
        if not caches:
            raise ValueError("need at least one session")
        self.e = int(e)
        self.k = caches[0].n_labels
        self.session_ids = [c.session_id for c in caches]
        self.durations = np.array([c.duration for c in caches])
        self.times = np.concatenate([c.times for c in caches])
        self.labels = np.concatenate([c.labels for c in caches]).astype(np.int64)
        sizes = [c.times.size for c in caches]
        self.offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        session_of_event = np.repeat(np.arange(len(caches)), sizes)
        mask = self.labels == self.e
        self.S = np.vstack([c.S[c.labels == self.e] for c in caches]) if mask.any() else np.zeros((0, self.k))
        self.target_session = session_of_event[mask]
        self.M1 = np.array([c.M1 for c in caches]).reshape(len(caches), self.k)
        self.tail = np.repeat(self.durations, sizes) - self.times
        self.session_of_event = session_of_event
        self.n_events = int(mask.sum())
        self.total_T = float(self.durations.sum())
        self.M1_total = self.M1.sum(axis=0)

    @property
    def n_sessions(self) -> int:
        return self.durations.size

    def states(self, gamma: float, method: str = "recursive"):
        if method == "recursive":
            return _decay_states(self.times, self.labels, self.offsets, self.e, self.k, float(gamma))
        if method == "naive":
            return _naive_states(self.times, self.labels, self.offsets, self.e, self.k, float(gamma))
        raise ValueError(f"unknown method {method!r}")


@dataclass(frozen=True)
class LogLikReport:
    value: float
    per_session: tuple[float, ...]
    n_events: int
    feasible: bool = True

    @property
    def normalized(self) -> float | None:
        return self.value / self.n_events if self.n_events > 0 else None


def evaluate(theta, data: TargetData, gradient: bool = False, method: str = "recursive",
             per_session: bool = False):
    """Score `data` at per-target vector `theta`.

    Returns ``(value, grad, feasible, per_session_values)``; `grad` and the
    per-session values are None unless requested.
    """
    mu0, nu, alpha, gamma = unpack(theta)
    k = data.k
    A, B = data.states(gamma, method)
    exo = mu0 + data.S @ nu
    lam = exo + (A @ alpha) / gamma
    if not np.all(np.isfinite(lam)):
        bad = int(np.flatnonzero(~np.isfinite(lam))[0])
        raise LikelihoodError(f"non-finite intensity at target event {bad}", bad)
    feasible = bool(np.all(lam > 0))
    decay_T = np.exp(-data.tail / gamma)
    endo_mass = np.bincount(data.labels, weights=decay_T - 1.0, minlength=k)
    comp = -mu0 * data.total_T - nu @ data.M1_total + alpha @ endo_mass
    if feasible:
        log_lam = np.log(lam)
        value = float(log_lam.sum() + comp)
    else:
        log_lam = None
        value = INFEASIBLE
    if not np.isfinite(value):
        raise LikelihoodError("non-finite log-likelihood")

    sess = None
    if per_session:
        n = data.n_sessions
        if feasible:
            part = np.bincount(data.target_session, weights=log_lam, minlength=n)
        else:
            part = np.zeros(n)
        endo_by_sess = np.zeros((n, k))
        np.add.at(endo_by_sess, (data.session_of_event, data.labels), decay_T - 1.0)
        part = part - mu0 * data.durations - data.M1 @ nu + endo_by_sess @ alpha
        sess = tuple(float(x) if feasible else INFEASIBLE for x in part)

    grad = None
    if gradient:
        inv = 1.0 / np.maximum(lam, 1e-300 if feasible else 1e-12)
        g_mu0 = inv.sum() - data.total_T
        g_nu = data.S.T @ inv - data.M1_total
        g_alpha = (A.T @ inv) / gamma + endo_mass
        d_endo = (B / gamma**3 - A / gamma**2) @ alpha
        d_mass = np.bincount(data.labels, weights=decay_T * data.tail, minlength=k) / gamma**2
        g_gamma = float(d_endo @ inv) + float(alpha @ d_mass)
        grad = np.concatenate(([g_mu0], g_nu, g_alpha, [g_gamma]))
    return value, grad, feasible, sess


def _theta(params, e: int) -> np.ndarray:
    if isinstance(params, HawkesParams):
        return params.vector(e)
    return np.asarray(params, dtype=float)


def _caches(sessions, shape):
    return [s if isinstance(s, BackgroundCache) else BackgroundCache.build(s, shape) for s in sessions]


def loglik_session(e: int, params: HawkesParams, session: VideoSession | BackgroundCache,
                   method: str = "recursive") -> float:
    """Log-likelihood of label `e` in one session; :data:`INFEASIBLE` if some
    event has zero intensity."""
    data = TargetData(e, _caches([session], params.shape))
    return evaluate(_theta(params, e), data, method=method, per_session=True)[3][0]


def loglik_total(e: int, params: HawkesParams, sessions, method: str = "recursive") -> LogLikReport:
    data = TargetData(e, _caches(list(sessions), params.shape))
    value, _, feasible, per = evaluate(_theta(params, e), data, method=method, per_session=True)
    if feasible:
        # fixed-order reduction so the total equals the per-session sum exactly
        value = float(sum(per))
    return LogLikReport(value, per, data.n_events, feasible)


def endo_sum_recursive(e: int, params: HawkesParams, session: VideoSession | BackgroundCache) -> np.ndarray:
    """Excitation ``sum_f alpha[e, f] A_f(t_i) / gamma_e`` at each event of label `e`."""
    data = TargetData(e, _caches([session], params.shape))
    A, _ = data.states(params.gamma[e])
    return A @ params.alpha[e] / params.gamma[e]


def grad_loglik(e: int, params: HawkesParams, sessions) -> np.ndarray:
    """Gradient over ``[mu0, nu..., alpha..., gamma]`` of the summed log-likelihood."""
    data = TargetData(e, _caches(list(sessions), params.shape))
    return evaluate(_theta(params, e), data, gradient=True)[1]
