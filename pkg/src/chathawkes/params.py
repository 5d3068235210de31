"""Model parameters, their bounds, and the params file format."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .events import EmotionSet
from .kernels import ShapeConfig

# Box constraints of the optimizer, per parameter family.
BOUNDS = {
    "mu0": (0.0, 50.0),
    "nu": (1e-6, 10.0),
    "alpha": (0.0, 50.0),
    "gamma": (0.1, 20.0),
}


@dataclass(frozen=True)
class EmotionParams:
    """Parameters of the intensity of one target label."""

    target: str
    mu0: float
    gamma: float
    nu: tuple[float, ...]
    alpha: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "nu", tuple(float(x) for x in self.nu))
        object.__setattr__(self, "alpha", tuple(float(x) for x in self.alpha))
        if len(self.nu) != len(self.alpha):
            raise ValueError("nu and alpha need one entry per source label")
        if self.mu0 < 0 or min(self.nu, default=0) < 0 or min(self.alpha, default=0) < 0:
            raise ValueError(f"{self.target}: parameters must be nonnegative")
        if not self.gamma > 0:
            raise ValueError(f"{self.target}: gamma must be > 0")

    def to_vector(self) -> np.ndarray:
        return pack(self.mu0, self.nu, self.alpha, self.gamma)

    @classmethod
    def from_vector(cls, target: str, theta) -> "EmotionParams":
        mu0, nu, alpha, gamma = unpack(theta)
        return cls(target, float(mu0), float(gamma), tuple(nu), tuple(alpha))

    def within_bounds(self) -> bool:
        lo, hi = bounds_vector(len(self.nu))
        v = self.to_vector()
        return bool(np.all(v >= lo) and np.all(v <= hi))


def pack(mu0, nu, alpha, gamma) -> np.ndarray:
    """Per-target parameter vector ``[mu0, nu..., alpha..., gamma]``."""
    return np.concatenate(([mu0], np.asarray(nu, float), np.asarray(alpha, float), [gamma]))


def unpack(theta):
    theta = np.asarray(theta, dtype=float)
    k = (theta.size - 2) // 2
    return theta[0], theta[1:1 + k], theta[1 + k:1 + 2 * k], theta[-1]


def bounds_vector(k: int) -> tuple[np.ndarray, np.ndarray]:
    lo = pack(BOUNDS["mu0"][0], [BOUNDS["nu"][0]] * k, [BOUNDS["alpha"][0]] * k, BOUNDS["gamma"][0])
    hi = pack(BOUNDS["mu0"][1], [BOUNDS["nu"][1]] * k, [BOUNDS["alpha"][1]] * k, BOUNDS["gamma"][1])
    return lo, hi


def parameter_names(emotion_set: EmotionSet, target: str) -> list[str]:
    labels = list(emotion_set)
    return (
        [f"mu0[{target}]"]
        + [f"nu[{target},{f}]" for f in labels]
        + [f"alpha[{target},{f}]" for f in labels]
        + [f"gamma[{target}]"]
    )


@dataclass(frozen=True, eq=False)
class HawkesParams:
    """Full parameter set. Row ``e`` of `nu` / `alpha` holds the weights of
    every source label on target label ``e``."""

    emotion_set: EmotionSet
    mu0: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray
    shape: ShapeConfig = ShapeConfig()

    def __post_init__(self):
        k = len(self.emotion_set)
        for name, want in (("mu0", (k,)), ("gamma", (k,)), ("nu", (k, k)), ("alpha", (k, k))):
            a = np.array(getattr(self, name), dtype=float).reshape(want)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if np.any(self.mu0 < 0) or np.any(self.nu < 0) or np.any(self.alpha < 0):
            raise ValueError("mu0, nu and alpha must be nonnegative")
        if np.any(self.gamma <= 0):
            raise ValueError("gamma must be > 0")

    @property
    def k(self) -> int:
        return len(self.emotion_set)

    @property
    def n_parameters(self) -> int:
        return self.k * (2 * self.k + 2)

    def for_target(self, e: int | str) -> EmotionParams:
        i = self._idx(e)
        return EmotionParams(
            self.emotion_set.labels[i], float(self.mu0[i]), float(self.gamma[i]),
            tuple(self.nu[i]), tuple(self.alpha[i]),
        )

    def vector(self, e: int | str) -> np.ndarray:
        i = self._idx(e)
        return pack(self.mu0[i], self.nu[i], self.alpha[i], self.gamma[i])

    def _idx(self, e) -> int:
        return self.emotion_set.index(e) if isinstance(e, str) else int(e)

    @classmethod
    def from_targets(
        cls, emotion_set: EmotionSet, per_target, shape: ShapeConfig = ShapeConfig()
    ) -> "HawkesParams":
        by_name = {p.target: p for p in per_target}
        missing = [x for x in emotion_set if x not in by_name]
        if missing:
            raise ValueError(f"no parameters for labels {missing}")
        rows = [by_name[x] for x in emotion_set]
        return cls(
            emotion_set,
            mu0=[p.mu0 for p in rows],
            gamma=[p.gamma for p in rows],
            nu=[p.nu for p in rows],
            alpha=[p.alpha for p in rows],
            shape=shape,
        )

    @classmethod
    def from_vectors(cls, emotion_set: EmotionSet, thetas, shape: ShapeConfig = ShapeConfig()):
        return cls.from_targets(
            emotion_set, [EmotionParams.from_vector(x, th) for x, th in zip(emotion_set, thetas)], shape
        )

    def replace(self, **changes) -> "HawkesParams":
        fields = dict(
            emotion_set=self.emotion_set, mu0=self.mu0, gamma=self.gamma,
            nu=self.nu, alpha=self.alpha, shape=self.shape,
        )
        fields.update(changes)
        return HawkesParams(**fields)

    def permuted(self, perm) -> "HawkesParams":
        """Relabel: new label ``i`` is old label ``perm[i]``."""
        p = np.asarray(perm)
        es = EmotionSet(tuple(self.emotion_set.labels[j] for j in p))
        return HawkesParams(
            es, self.mu0[p], self.gamma[p], self.nu[np.ix_(p, p)], self.alpha[np.ix_(p, p)], self.shape
        )

    def to_dict(self) -> dict:
        return {
            "emotions": list(self.emotion_set.labels),
            "shape": self.shape.to_dict(),
            "per_emotion": [
                {
                    "target": x,
                    "mu0": float(self.mu0[i]),
                    "gamma": float(self.gamma[i]),
                    "nu": [float(v) for v in self.nu[i]],
                    "alpha": [float(v) for v in self.alpha[i]],
                }
                for i, x in enumerate(self.emotion_set)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HawkesParams":
        es = EmotionSet(tuple(d["emotions"]))
        shape = ShapeConfig.from_dict(d.get("shape", {"family": "lognormal", **ShapeConfig().to_dict()}))
        per = [
            EmotionParams(p["target"], p["mu0"], p["gamma"], tuple(p["nu"]), tuple(p["alpha"]))
            for p in d["per_emotion"]
        ]
        return cls.from_targets(es, per, shape)

    def __eq__(self, other):
        if not isinstance(other, HawkesParams):
            return NotImplemented
        return (
            self.emotion_set == other.emotion_set
            and self.shape == other.shape
            and all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("mu0", "gamma", "nu", "alpha"))
        )

    __hash__ = None


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def save_params(params: HawkesParams, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_json(params.to_dict()))


def load_params(path) -> HawkesParams:
    with open(path, encoding="utf-8") as fh:
        return HawkesParams.from_dict(json.load(fh))
