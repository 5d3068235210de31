"""Bounded quasi-Newton maximum likelihood, per target label, with subsampled replicas.

Each label's 2K + 2 parameters are fitted independently with L-BFGS-B on the
log-likelihood normalized by the label's event count.  "Bootstrap" here means
repeated fits on subsamples of sessions drawn *without* replacement.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .events import SessionCollection
from .intensity import BackgroundCache
from .kernels import ShapeConfig
from .likelihood import TargetData, evaluate
from .params import BOUNDS, HawkesParams, bounds_vector, pack, unpack
from .seeding import substream

log = logging.getLogger(__name__)

GAMMA_PROFILE_FACTORS = (0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5, 2.0)


class NoEventsError(ValueError):
    pass


@dataclass(frozen=True)
class FitConfig:
    max_iterations: int = 500
    gtol: float = 1e-6  # projected-gradient inf-norm, normalized objective
    ftol: float = 1e-9  # objective change over `ftol_window` iterations
    ftol_window: int = 5
    n_starts: int = 3
    seed: int = 0
    bounds: dict = field(default_factory=lambda: dict(BOUNDS))

    def to_dict(self) -> dict:
        return {
            "max_iterations": self.max_iterations, "gtol": self.gtol, "ftol": self.ftol,
            "ftol_window": self.ftol_window, "n_starts": self.n_starts, "seed": self.seed,
            "bounds": {k: list(v) for k, v in self.bounds.items()},
        }

    def bounds_vector(self, k: int):
        if self.bounds == BOUNDS:
            return bounds_vector(k)
        b = self.bounds
        lo = pack(b["mu0"][0], [b["nu"][0]] * k, [b["alpha"][0]] * k, b["gamma"][0])
        hi = pack(b["mu0"][1], [b["nu"][1]] * k, [b["alpha"][1]] * k, b["gamma"][1])
        return lo, hi


@dataclass
class EmotionFit:
    target: str
    theta: np.ndarray
    loglik: float
    n_events: int
    converged: bool
    status: str
    n_iter: int
    grad_norm: float
    start_logliks: list[float]
    init_loglik: float

    @property
    def normalized(self) -> float:
        return self.loglik / self.n_events


def initial_theta(k: int, e: int, n_events: int, total_T: float) -> np.ndarray:
    alpha = np.full(k, 0.1)
    alpha[e] = 0.3
    return pack(0.5 * n_events / total_T, np.full(k, 0.1), alpha, 1.0)


def _projected_grad_norm(x, g, lo, hi) -> float:
    # g is the gradient of the minimized objective
    pg = np.clip(x - g, lo, hi) - x
    return float(np.max(np.abs(pg)))


class _StopOnStall:
    def __init__(self, ftol: float, window: int):
        self.ftol, self.window = ftol, window
        self.history: list[float] = []
        self.stalled = False

    def __call__(self, intermediate_result):
        self.history.append(float(intermediate_result.fun))
        if len(self.history) > self.window:
            if self.history[-1 - self.window] - self.history[-1] < self.ftol:
                self.stalled = True
                raise StopIteration


def _optimize(data: TargetData, x0, lo, hi, config: FitConfig):
    n = data.n_events

    def objective(theta):
        value, grad, _, _ = evaluate(theta, data, gradient=True)
        return -value / n, -grad / n

    stop = _StopOnStall(config.ftol, config.ftol_window)
    res = minimize(
        objective, np.clip(x0, lo, hi), jac=True, method="L-BFGS-B",
        bounds=list(zip(lo, hi)), callback=stop,
        options={"maxiter": config.max_iterations, "gtol": config.gtol, "ftol": 1e-15, "maxcor": 20},
    )
    x = np.clip(res.x, lo, hi)
    f, g = objective(x)
    pg = _projected_grad_norm(x, g, lo, hi)
    converged = bool(pg < config.gtol or stop.stalled or res.status == 0)
    if stop.stalled:
        msg = f"objective change < {config.ftol} over {config.ftol_window} iterations"
    else:
        msg = str(res.message)
    return x, -f * n, converged, msg, int(res.nit), pg


def fit_target(e: int, data: TargetData, config: FitConfig, label: str, stream: str = "") -> EmotionFit:
    """Multi-start fit of label `e` on prepared data."""
    if data.n_events == 0:
        raise NoEventsError(f"no events of label {label!r}")
    k = data.k
    lo, hi = config.bounds_vector(k)
    base = np.clip(initial_theta(k, e, data.n_events, data.total_T), lo, hi)
    rng = substream(config.seed, f"init/{stream}/{label}")
    starts = [base]
    for _ in range(config.n_starts - 1):
        starts.append(np.clip(base * np.exp(rng.uniform(-1.0, 1.0, base.size)), lo, hi))

    init_ll = evaluate(base, data)[0]
    best = None
    start_lls = []
    for x0 in starts:
        x, ll, conv, msg, nit, pg = _optimize(data, x0, lo, hi, config)
        start_lls.append(ll)
        # ties keep the earlier start
        if best is None or ll > best[1]:
            best = (x, ll, conv, msg, nit, pg)
    x, ll, conv, msg, nit, pg = best
    return EmotionFit(label, x, ll, data.n_events, conv, msg, nit, pg, start_lls, init_ll)


def build_caches(sessions: SessionCollection, shape: ShapeConfig, threads: int = 1) -> list[BackgroundCache]:
    def one(s):
        return BackgroundCache.build(s, shape)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, sessions.sessions))
    return [one(s) for s in sessions.sessions]


def fit_emotion(e: int | str, sessions: SessionCollection, config: FitConfig = FitConfig(),
                shape: ShapeConfig = ShapeConfig(), caches=None) -> EmotionFit:
    """Maximize the summed log-likelihood of one label over all `sessions`."""
    es = sessions.emotion_set
    idx = es.index(e) if isinstance(e, str) else int(e)
    caches = caches if caches is not None else build_caches(sessions, shape)
    # same jitter stream as the first replica of bootstrap_fit
    return fit_target(idx, TargetData(idx, caches), config, es.labels[idx], "replica0")


def gamma_profile(theta, data: TargetData, factors=GAMMA_PROFILE_FACTORS, bounds=BOUNDS):
    """Normalized log-likelihood along gamma with the other parameters held fixed."""
    lo, hi = bounds["gamma"]
    out = []
    for fct in factors:
        th = np.array(theta, dtype=float)
        th[-1] = min(max(th[-1] * fct, lo), hi)
        out.append((float(th[-1]), evaluate(th, data)[0] / max(data.n_events, 1)))
    return out


@dataclass
class ReplicaFit:
    members: list[int]
    fits: dict[str, EmotionFit | None]
    skipped: list[str]


@dataclass
class FitResult:
    params: HawkesParams
    std: np.ndarray  # (K, 2K+2) standard deviation across replicas
    replicas: list[ReplicaFit]
    loglik: dict[str, float]  # full corpus, at the final estimate
    n_events: dict[str, int]
    status: dict[str, str]
    errors: dict[str, str]
    gamma_profiles: dict[str, list]
    n_replicas: int
    frac: float
    seed: int
    config: FitConfig

    @property
    def failed_labels(self) -> list[str]:
        return [x for x, s in self.status.items() if s == "failed"]

    def to_dict(self) -> dict:
        es = self.params.emotion_set
        k = self.params.k
        mean_params = self.params.to_dict()["per_emotion"]
        std_rows = []
        for e, lab in enumerate(es):
            _mu0, nu, alpha, gamma = unpack(self.std[e])
            std_rows.append({"target": lab, "mu0": float(self.std[e][0]), "gamma": float(gamma),
                             "nu": [float(v) for v in nu], "alpha": [float(v) for v in alpha]})
        replicas = []
        for r in self.replicas:
            fits = {}
            for lab, f in r.fits.items():
                if f is None:
                    continue
                mu0, nu, alpha, gamma = unpack(f.theta)
                fits[lab] = {
                    "mu0": float(mu0), "gamma": float(gamma),
                    "nu": [float(v) for v in nu], "alpha": [float(v) for v in alpha],
                    "loglik": float(f.loglik), "n_events": f.n_events, "converged": f.converged,
                    "message": f.status, "iterations": f.n_iter, "projected_grad_norm": f.grad_norm,
                }
            replicas.append({"sessions": len(r.members), "members": r.members,
                             "skipped": r.skipped, "fits": fits})
        out = self.params.to_dict()
        out.update({
            "loglik": {x: self.loglik.get(x) for x in es},
            "loglik_normalized": {
                x: (self.loglik[x] / self.n_events[x]) if self.n_events.get(x) else None for x in es
            },
            "status": dict(self.status),
            "errors": dict(self.errors),
            "n_parameters": self.params.n_parameters,
            "bootstrap": {
                "n": self.n_replicas, "frac": self.frac, "seed": self.seed,
                "sampling": "without replacement",
                "mean": mean_params, "std": std_rows, "replicas": replicas,
            },
            "diagnostics": {
                "gamma_profile": {x: [[g, v] for g, v in p] for x, p in self.gamma_profiles.items()},
            },
            "fit_config": self.config.to_dict(),
        })
        return out


def subsample_size(n: int, frac: float) -> int:
    return max(1, min(n, int(math.floor(frac * n + 0.5))))


def replica_members(n: int, n_replicas: int, frac: float, seed: int) -> list[list[int]]:
    """Session indices of each replica (sorted, drawn without replacement)."""
    if not (0.0 < frac <= 1.0):
        raise ValueError(f"frac must be in (0, 1], got {frac}")
    m = subsample_size(n, frac)
    rng = substream(seed, "bootstrap")
    return [sorted(rng.choice(n, size=m, replace=False).tolist()) for _ in range(n_replicas)]


def bootstrap_fit(
    sessions: SessionCollection,
    n_replicas: int = 10,
    frac: float = 0.6,
    seed: int = 0,
    config: FitConfig | None = None,
    shape: ShapeConfig = ShapeConfig(),
    threads: int = 1,
    caches=None,
) -> FitResult:
    """Fit every label on `n_replicas` subsamples of ``frac`` of the sessions.

    The estimate is the per-parameter mean over replicas, the dispersion their
    (population) standard deviation.  A replica whose subsample has no event of
    some label is skipped for that label only.
    """
    if not sessions.sessions:
        raise ValueError("no sessions to fit")
    config = config or FitConfig(seed=seed)
    es = sessions.emotion_set
    k = len(es)
    caches = caches if caches is not None else build_caches(sessions, shape, threads)
    members = replica_members(len(sessions), n_replicas, frac, seed)

    tasks = [(r, e) for r in range(n_replicas) for e in range(k)]

    def run(task):
        r, e = task
        data = TargetData(e, [caches[i] for i in members[r]])
        if data.n_events == 0:
            return None
        return fit_target(e, data, config, es.labels[e], f"replica{r}")

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    replicas = [ReplicaFit(members[r], {}, []) for r in range(n_replicas)]
    for (r, e), fit in zip(tasks, results):
        replicas[r].fits[es.labels[e]] = fit
        if fit is None:
            replicas[r].skipped.append(es.labels[e])

    lo, hi = config.bounds_vector(k)
    thetas, std = [], np.zeros((k, 2 * k + 2))
    status, errors, loglik, n_events, profiles = {}, {}, {}, {}, {}
    for e, lab in enumerate(es):
        fits = [rep.fits[lab] for rep in replicas if rep.fits[lab] is not None]
        full = TargetData(e, caches)
        n_events[lab] = full.n_events
        if not fits:
            status[lab] = "failed"
            errors[lab] = f"no replica contains events of label {lab!r}"
            placeholder = initial_theta(k, e, 0, full.total_T)
            placeholder[1 + k:1 + 2 * k] = 0.0
            thetas.append(np.clip(placeholder, lo, hi))
            continue
        stacked = np.array([f.theta for f in fits])
        theta = np.clip(stacked.mean(axis=0), lo, hi)
        thetas.append(theta)
        std[e] = stacked.std(axis=0)
        status[lab] = "converged" if all(f.converged for f in fits) else "not_converged"
        if full.n_events:
            loglik[lab] = evaluate(theta, full)[0]
            profiles[lab] = gamma_profile(theta, full, bounds=config.bounds)
    params = HawkesParams.from_vectors(es, thetas, shape)
    return FitResult(params, std, replicas, loglik, n_events, status, errors, profiles,
                     n_replicas, frac, seed, config)


def fit_all(sessions: SessionCollection, config: FitConfig | None = None,
            shape: ShapeConfig = ShapeConfig(), threads: int = 1) -> tuple[HawkesParams, FitResult]:
    """Full-corpus fit of every label (one replica holding all sessions)."""
    config = config or FitConfig()
    res = bootstrap_fit(sessions, 1, 1.0, config.seed, config, shape, threads)
    return res.params, res
