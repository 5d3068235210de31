"""Post-fit interpretation: endo/exo ratios, branching structure, residuals."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .events import SessionCollection, VideoSession
from .intensity import BackgroundCache, background_S, endo_rate
from .likelihood import TargetData
from .params import HawkesParams


class AnalyticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# endogenous / exogenous decomposition


@dataclass
class LabelInfluence:
    session_id: str
    label: str
    n_events: int
    r_exo_mean: float
    r_endo_mean: float
    r0_mean: float
    r1_mean: float
    events: dict | None = None


@dataclass
class InfluenceReport:
    rows: list[LabelInfluence]
    labels: tuple[str, ...]
    grid_step: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["session", "label", "r_exo_mean", "r_endo_mean", "r0_mean", "r1_mean", "n_events"])
        for r in self.rows:
            w.writerow([r.session_id, r.label, repr(r.r_exo_mean), repr(r.r_endo_mean),
                        repr(r.r0_mean), repr(r.r1_mean), r.n_events])
        return buf.getvalue()

    def summary(self) -> dict:
        """Per label, the endo-to-exo dominance computed two ways.

        ``ratio_of_means`` is mean(<R_endo>) / mean(<R_exo>) over sessions;
        ``mean_of_ratios`` averages <R_endo> / <R_exo> over sessions with
        <R_exo> > 0.
        """
        out = {}
        for lab in self.labels:
            rows = [r for r in self.rows if r.label == lab and r.n_events > 0]
            if not rows:
                continue
            exo = np.array([r.r_exo_mean for r in rows])
            endo = np.array([r.r_endo_mean for r in rows])
            r0 = np.array([r.r0_mean for r in rows])
            r1 = np.array([r.r1_mean for r in rows])
            pos = exo > 0
            out[lab] = {
                "n_sessions": len(rows),
                "r_exo_mean": float(exo.mean()),
                "r_endo_mean": float(endo.mean()),
                "r0_mean": float(r0.mean()),
                "r1_mean": float(r1.mean()),
                "ratio_of_means": float(endo.mean() / exo.mean()) if exo.mean() > 0 else math.inf,
                "mean_of_ratios": float(np.mean(endo[pos] / exo[pos])) if pos.any() else math.inf,
            }
        return out


def _components_at_events(params: HawkesParams, cache: BackgroundCache, e: int):
    """(mu0, video-driven, excitation) at each event of label `e`, left limits."""
    data = TargetData(e, [cache])
    A, _ = data.states(params.gamma[e])
    mu1 = data.S @ params.nu[e]
    endo = A @ params.alpha[e] / params.gamma[e]
    return np.full(mu1.shape, params.mu0[e]), mu1, endo, data.times[data.labels == e]


def _components_on_grid(params: HawkesParams, session: VideoSession, e: int, step: float):
    t = np.arange(step, session.duration + 0.5 * step, step)
    t = t[t <= session.duration]
    mu1 = np.zeros(t.size)
    for f, subs in enumerate(session.subtitle_events):
        if subs.size and params.nu[e, f] != 0.0:
            mu1 += params.nu[e, f] * background_S(t, subs, params.shape)
    endo = endo_rate(t, e, params, session)
    return np.full(t.size, params.mu0[e]), mu1, endo, t


def _ratios(mu0, mu1, endo, where: str):
    exo = mu0 + mu1
    lam = exo + endo
    if np.any(lam <= 0):
        i = int(np.flatnonzero(lam <= 0)[0])
        raise AnalyticsError(f"zero total intensity at {where} {i}")
    r_exo = exo / lam
    r_endo = endo / lam
    with np.errstate(invalid="ignore", divide="ignore"):
        r0 = mu0 / exo
        r1 = mu1 / exo
    return r_exo, r_endo, r0, r1, exo


def influence_decomposition(
    params: HawkesParams,
    session: VideoSession,
    keep_events: bool = False,
    grid_step: float | None = None,
    cache: BackgroundCache | None = None,
) -> list[LabelInfluence]:
    """Average exo/endo and spontaneous/video ratios per label of one session.

    Ratios are taken at the label's event times from the intensity's left
    limit.  With `grid_step`, they are averaged over a uniform time grid
    instead (sensitivity check).
    """
    if cache is None and grid_step is None:
        cache = BackgroundCache.build(session, params.shape)
    rows = []
    for e, lab in enumerate(params.emotion_set):
        if grid_step is None:
            mu0, mu1, endo, t = _components_at_events(params, cache, e)
        else:
            mu0, mu1, endo, t = _components_on_grid(params, session, e, grid_step)
        if t.size == 0:
            rows.append(LabelInfluence(session.session_id, lab, 0, math.nan, math.nan, math.nan, math.nan))
            continue
        r_exo, r_endo, r0, r1, exo = _ratios(mu0, mu1, endo, "event" if grid_step is None else "grid point")
        if np.any(exo <= 0):
            i = int(np.flatnonzero(exo <= 0)[0])
            raise AnalyticsError(f"{lab}: spontaneous and video rates both zero at event {i}")
        rows.append(LabelInfluence(
            session.session_id, lab, int(t.size),
            float(r_exo.mean()), float(r_endo.mean()), float(r0.mean()), float(r1.mean()),
            {"t": t, "r_exo": r_exo, "r_endo": r_endo, "r0": r0, "r1": r1} if keep_events else None,
        ))
    return rows


def influence_report(params: HawkesParams, sessions: SessionCollection, **kw) -> InfluenceReport:
    rows = []
    for s in sessions:
        rows.extend(influence_decomposition(params, s, **kw))
    return InfluenceReport(rows, params.emotion_set.labels, kw.get("grid_step"))


def spontaneous_ratio(params: HawkesParams, session: VideoSession) -> dict[str, dict]:
    """Per label: per-event ``R_0 = mu0 / (mu0 + mu1(t))``, ``R_1 = 1 - R_0`` and their means."""
    rows = influence_decomposition(params, session, keep_events=True)
    out = {}
    for r in rows:
        if r.n_events == 0:
            out[r.label] = {"r0": np.zeros(0), "r1": np.zeros(0), "r0_mean": math.nan, "r1_mean": math.nan}
        else:
            out[r.label] = {"r0": r.events["r0"], "r1": r.events["r1"],
                            "r0_mean": r.r0_mean, "r1_mean": r.r1_mean}
    return out


# ---------------------------------------------------------------------------
# branching structure


def _power_iteration(m: np.ndarray, tol: float, max_iter: int, seed: int = 0):
    """Perron root of a nonnegative matrix; returns (rho, iterations, converged).

    Iterates on ``m + I``, which has the same Perron vector and is aperiodic,
    so periodic matrices (e.g. permutations) still converge.  Stops when the
    Collatz-Wielandt bracket closes, or when successive estimates contract
    geometrically below `tol`.  A stalled run restarts from a random positive
    vector.
    """
    k = m.shape[0]
    if not np.any(m):
        return 0.0, 0, True
    b = m + np.eye(k)
    rng = np.random.default_rng(seed)
    x = np.full(k, 1.0 / k)
    diffs: list[float] = []
    r_prev = None
    stall = 0
    r = 1.0
    for it in range(1, max_iter + 1):
        y = b @ x
        r = float(y.sum())
        if np.all(x > 0):
            ratios = y / x
            lo, hi = float(ratios.min()), float(ratios.max())
            if hi - lo <= tol:
                return 0.5 * (lo + hi) - 1.0, it, True
        x = y / r
        if r_prev is not None:
            diffs.append(abs(r - r_prev))
            if diffs[-1] == 0.0:
                return r - 1.0, it, True
            if len(diffs) >= 6:
                recent = diffs[-6:]
                q = max(recent[i + 1] / recent[i] for i in range(5) if recent[i] > 0)
                if q < 1.0 and max(recent[-3:]) <= tol * (1.0 - q):
                    return r - 1.0, it, True
                stall = stall + 1 if q >= 1.0 else 0
                if stall >= 50:
                    x = rng.uniform(0.5, 1.5, k)
                    x /= x.sum()
                    diffs.clear()
                    r_prev = None
                    stall = 0
                    continue
        r_prev = r
    return r - 1.0, max_iter, False


def spectral_radius(alpha, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    m = _check_nonneg(alpha)
    return _power_iteration(m, tol, max_iter)[0]


def _check_nonneg(alpha) -> np.ndarray:
    m = np.asarray(alpha, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise AnalyticsError(f"branching matrix must be square, got shape {m.shape}")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise AnalyticsError("branching matrix must be finite and nonnegative")
    return m


@dataclass
class BranchingReport:
    alpha: np.ndarray
    column_sums: np.ndarray
    row_sums: np.ndarray
    spectral_radius: float
    subcritical: bool
    iterations: int
    converged: bool
    labels: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "column_sums": [float(x) for x in self.column_sums],
            "row_sums": [float(x) for x in self.row_sums],
            "spectral_radius": float(self.spectral_radius),
            "subcritical": bool(self.subcritical),
            "power_iteration": {"iterations": self.iterations, "converged": self.converged},
        }


def branching_report(alpha, tol: float = 1e-10, max_iter: int = 10_000, labels=()) -> BranchingReport:
    """Column sums (offspring of each source label) and spectral radius."""
    m = _check_nonneg(alpha)
    rho, it, ok = _power_iteration(m, tol, max_iter)
    return BranchingReport(m, m.sum(axis=0), m.sum(axis=1), rho, rho < 1.0, it, ok, tuple(labels))


# ---------------------------------------------------------------------------
# time-rescaling residuals


@dataclass
class ResidualReport:
    label: str
    xi: np.ndarray
    ks_statistic: float
    p_value: float
    n_zero_gaps: int


def compensator_at_events(params: HawkesParams, session: VideoSession, e: int,
                          cache: BackgroundCache | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Event times of label `e` and the compensator ``Lambda_e(0, t_i)`` there."""
    cache = cache or BackgroundCache.build(session, params.shape)
    data = TargetData(e, [cache])
    t = data.times[data.labels == e]
    A, _ = data.states(params.gamma[e])
    comp = params.mu0[e] * t
    for f in range(params.k):
        subs = session.subtitle_events[f]
        if subs.size and params.nu[e, f] != 0.0:
            comp = comp + params.nu[e, f] * params.shape.mass(t[:, None] - subs[None, :]).sum(axis=1)
        if params.alpha[e, f] != 0.0:
            before = np.searchsorted(session.chat_events[f], t, side="left")
            comp = comp + params.alpha[e, f] * (before - A[:, f])
    return t, comp


def residual_diagnostics(params: HawkesParams, session: VideoSession, e: int,
                         min_events: int = 10) -> ResidualReport:
    """Rescaled inter-arrival times of label `e` and their KS test against Exp(1)."""
    t, comp = compensator_at_events(params, session, e)
    if t.size < min_events:
        raise AnalyticsError(
            f"residual diagnostics need >= {min_events} events of {params.emotion_set.labels[e]!r}, got {t.size}"
        )
    xi = np.diff(np.concatenate(([0.0], comp)))
    xi = np.maximum(xi, 0.0)  # clip round-off below zero for coincident events
    res = stats.kstest(xi, "expon")
    return ResidualReport(params.emotion_set.labels[e], xi, float(res.statistic), float(res.pvalue),
                          int(np.sum(xi == 0.0)))
