"""Synthetic sessions from known parameters by Ogata thinning."""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .analytics import spectral_radius
from .events import SessionCollection, VideoSession
from .fitter import FitConfig, FitResult, bootstrap_fit
from .params import HawkesParams, parameter_names
from .seeding import substream

log = logging.getLogger(__name__)

MAX_EVENTS = 1_000_000


class SupercriticalError(RuntimeError):
    """Simulation produced more events than the runaway guard allows."""


class ThinningBoundError(AssertionError):
    """The dominating rate fell below the true intensity (a bound-policy bug)."""


@dataclass(frozen=True)
class SimConfig:
    """`subtitle_rates` (per label, or one value for all) is used when
    `subtitle_times` is not given."""

    duration: float
    seed: int = 0
    subtitle_rates: tuple[float, ...] | float = 0.0
    subtitle_times: tuple | None = None
    window: float = 0.5
    max_events: int = MAX_EVENTS

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be > 0")
        rates = np.atleast_1d(np.asarray(self.subtitle_rates, dtype=float))
        if np.any(rates < 0):
            raise ValueError("subtitle rates must be >= 0")
        if not self.window > 0:
            raise ValueError("window must be > 0")


def simulate_subtitles(rates, T: float, seed=None, rng: np.random.Generator | None = None):
    """Independent homogeneous Poisson subtitle times per label on ``[0, T]``."""
    if rng is None:
        rng = np.random.default_rng(seed)
    out = []
    for r in np.atleast_1d(np.asarray(rates, dtype=float)):
        if r < 0:
            raise ValueError("subtitle rates must be >= 0")
        n = rng.poisson(r * T) if r > 0 else 0
        out.append(np.sort(rng.uniform(0.0, T, size=n)))
    return out


def _background_bounds(params: HawkesParams, subs, edges):
    """Upper bound of ``sum_e mu_e(t)`` on each window ``[edges[i], edges[i+1]]``."""
    weight = params.nu.sum(axis=0)  # total weight of each source label's subtitles
    bound = np.full(edges.size - 1, params.mu0.sum())
    for f, tau in enumerate(subs):
        if tau.size == 0 or weight[f] == 0.0:
            continue
        for i in range(edges.size - 1):
            a, b = edges[i], edges[i + 1]
            past = tau[tau < b]
            if past.size:
                bound[i] += weight[f] * float(np.sum(params.shape.window_max(a - past, b - past)))
    return bound


def simulate_session(
    params: HawkesParams,
    sim: SimConfig,
    session_id: str = "sim-0",
    rng: np.random.Generator | None = None,
) -> VideoSession:
    """Draw one session on ``[0, sim.duration]``.

    The dominating rate is the background bound of the current window plus the
    current excitation, which only decays until the next accepted event.
    """
    k = params.k
    T = float(sim.duration)
    if rng is None:
        rng = substream(sim.seed, f"simulate/{session_id}")
    rho = spectral_radius(params.alpha)
    if rho >= 1.0:
        warnings.warn(
            f"branching matrix has spectral radius {rho:.3f} >= 1; the process may explode",
            RuntimeWarning,
            stacklevel=2,
        )

    if sim.subtitle_times is not None:
        subs = [np.sort(np.asarray(x, dtype=float)) for x in sim.subtitle_times]
        if len(subs) != k:
            raise ValueError("subtitle_times needs one list per label")
    else:
        rates = np.broadcast_to(np.asarray(sim.subtitle_rates, dtype=float), (k,))
        subs = simulate_subtitles(rates, T, rng=rng)

    sub_t = np.concatenate(subs)
    sub_l = np.concatenate([np.full(s.size, f) for f, s in enumerate(subs)]).astype(int)
    order = np.argsort(sub_t, kind="stable")
    sub_t, sub_l = sub_t[order], sub_l[order]

    edges = np.arange(0.0, T, sim.window)
    edges = np.append(edges, T)
    exo_bound = _background_bounds(params, subs, edges)

    mu0, nu, alpha, gamma = params.mu0, params.nu, params.alpha, params.gamma
    jump = alpha / gamma[:, None]  # excitation added to each target per source event
    endo = np.zeros(k)
    times: list[float] = []
    labels: list[int] = []
    t = 0.0
    win = 0
    while win < edges.size - 1:
        w_end = edges[win + 1]
        bound = exo_bound[win] + endo.sum()
        if bound <= 0.0:
            t_next = math.inf
        else:
            t_next = t + rng.exponential(1.0 / bound)
        if t_next >= w_end:
            endo *= np.exp(-(w_end - t) / gamma)
            t = w_end
            win += 1
            continue
        endo *= np.exp(-(t_next - t) / gamma)
        t = t_next
        n_past = np.searchsorted(sub_t, t, side="left")
        if n_past:
            dens = params.shape.density(t - sub_t[:n_past])
            S = np.bincount(sub_l[:n_past], weights=dens, minlength=k)
            lam = mu0 + nu @ S + endo
        else:
            lam = mu0 + endo
        total = float(lam.sum())
        if total > bound * (1.0 + 1e-9):
            raise ThinningBoundError(f"intensity {total} exceeds bound {bound} at t={t}")
        u = rng.uniform() * bound
        if u <= total:
            # given acceptance u is uniform on [0, total]; reuse it to pick the label
            e = min(int(np.searchsorted(np.cumsum(lam), u, side="right")), k - 1)
            times.append(t)
            labels.append(e)
            endo += jump[:, e]
            if len(times) > sim.max_events:
                raise SupercriticalError(
                    f"more than {sim.max_events} events by t={t:.3f} "
                    f"(spectral radius {rho:.3f}); the process looks explosive"
                )

    chat_times = np.array(times)
    chat_labels = np.zeros((chat_times.size, k), dtype=bool)
    chat_labels[np.arange(chat_times.size), labels] = True
    sub_labels = np.zeros((sub_t.size, k), dtype=bool)
    sub_labels[np.arange(sub_t.size), sub_l] = True
    return VideoSession(session_id, T, chat_times, chat_labels, sub_t, sub_labels)


def simulate_corpus(
    params: HawkesParams, n_sessions: int, sim: SimConfig, threads: int = 1, prefix: str = "sim"
) -> SessionCollection:
    """`n_sessions` independent sessions; session ``i`` draws from its own named
    sub-stream, so the corpus does not depend on `threads`."""
    ids = [f"{prefix}-{i:04d}" for i in range(n_sessions)]

    def one(sid):
        return simulate_session(params, sim, sid, substream(sim.seed, f"simulate/{sid}"))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            sessions = list(pool.map(one, ids))
    else:
        sessions = [one(s) for s in ids]
    return SessionCollection(tuple(sessions), params.emotion_set)


@dataclass(frozen=True)
class RecoveryTolerances:
    alpha_rel: float = 0.20
    alpha_abs: float = 0.05
    alpha_min: float = 0.1
    mu0_rel: float = 0.15
    nu_rel: float = 0.30
    nu_min: float = 0.1
    gamma_rel: float = 0.50


@dataclass
class RecoveryRow:
    name: str
    family: str
    true: float
    estimate: float
    std: float
    abs_error: float
    rel_error: float
    within_2std: bool
    gated: bool
    passed: bool


@dataclass
class RecoveryReport:
    rows: list[RecoveryRow]
    fit: FitResult
    n_events: list[int]
    tolerances: RecoveryTolerances = field(default_factory=RecoveryTolerances)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if r.gated)

    def failures(self) -> list[RecoveryRow]:
        return [r for r in self.rows if r.gated and not r.passed]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_events": self.n_events,
            "tolerances": self.tolerances.__dict__,
            "rows": [r.__dict__ for r in self.rows],
        }


def recovery_rows(truth: HawkesParams, fit: FitResult, tol: RecoveryTolerances) -> list[RecoveryRow]:
    rows = []
    est, std = fit.params, fit.std
    for e, target in enumerate(truth.emotion_set):
        names = parameter_names(truth.emotion_set, target)
        tv, ev, sv = truth.vector(e), est.vector(e), std[e]
        k = truth.k
        fam = ["mu0"] + ["nu"] * k + ["alpha"] * k + ["gamma"]
        for name, f, x, y, s in zip(names, fam, tv, ev, sv):
            abs_err = abs(y - x)
            rel_err = abs_err / abs(x) if x != 0 else math.inf if abs_err > 0 else 0.0
            if f == "mu0":
                gated, ok = True, rel_err <= tol.mu0_rel
            elif f == "gamma":
                gated, ok = True, rel_err <= tol.gamma_rel
            elif f == "alpha":
                gated = x >= tol.alpha_min
                ok = abs_err <= max(tol.alpha_rel * abs(x), tol.alpha_abs) if gated else abs_err <= tol.alpha_abs
            else:
                gated = x >= tol.nu_min
                ok = rel_err <= tol.nu_rel
            rows.append(RecoveryRow(
                name, f, float(x), float(y), float(s), float(abs_err), float(rel_err),
                bool(abs_err <= 2.0 * s), bool(gated), bool(ok),
            ))
    return rows


def round_trip_validate(
    true_params: HawkesParams,
    n_sessions: int,
    T: float,
    fit_config: FitConfig | None = None,
    seed: int = 0,
    subtitle_rates=1.0,
    n_replicas: int = 10,
    frac: float = 0.6,
    tolerances: RecoveryTolerances = RecoveryTolerances(),
    threads: int = 1,
) -> RecoveryReport:
    """Simulate a corpus from `true_params`, fit it, and compare."""
    fit_config = fit_config or FitConfig(seed=seed)
    sim = SimConfig(duration=T, seed=seed, subtitle_rates=subtitle_rates)
    corpus = simulate_corpus(true_params, n_sessions, sim, threads=threads)
    n_events = [int(sum(s.counts[e] for s in corpus)) for e in range(true_params.k)]
    log.info("simulated %d sessions, events per label %s", n_sessions, n_events)
    fit = bootstrap_fit(corpus, n_replicas=n_replicas, frac=frac, seed=seed,
                        config=fit_config, shape=true_params.shape, threads=threads)
    return RecoveryReport(recovery_rows(true_params, fit, tolerances), fit, n_events, tolerances)
