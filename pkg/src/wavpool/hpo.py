"""Hyperparameter search: random sampling and GP expected improvement.

Configurations are plain dicts. Every dimension maps to ``[0, 1]`` for the
surrogate model (log scale where flagged, one-hot for categoricals).
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import pdist
from scipy.stats import norm

from .data import LabeledDataset
from .errors import ConfigError, DivergenceError
from .models import CNNConfig, MLPConfig, WavPoolConfig, build_model, level_count
from .nn import OptimizerConfig
from .tensor import SeededRng
from .training import TrainConfig, train

LR_BOUNDS = (1e-6, 0.8)
CANDIDATE_POOL = 512
GP_NOISE = 1e-6


@dataclass(frozen=True)
class Continuous:
    name: str
    lo: float
    hi: float
    log: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"{self.name}: lo must be < hi")

    def sample(self, rng: SeededRng):
        if self.log:
            return float(math.exp(rng.uniform(math.log(self.lo), math.log(self.hi))))
        return float(rng.uniform(self.lo, self.hi))

    def encode(self, value):
        if self.log:
            return [(math.log(value) - math.log(self.lo)) / (math.log(self.hi) - math.log(self.lo))]
        return [(value - self.lo) / (self.hi - self.lo)]

    def contains(self, value) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class Integer:
    name: str
    lo: int
    hi: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"{self.name}: lo must be < hi")

    def sample(self, rng: SeededRng):
        return int(rng.integers(self.lo, self.hi + 1))

    def encode(self, value):
        return [(value - self.lo) / (self.hi - self.lo)]

    def contains(self, value) -> bool:
        return isinstance(value, (int, np.integer)) and self.lo <= value <= self.hi


@dataclass(frozen=True)
class Categorical:
    name: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ConfigError(f"{self.name}: categorical set is empty")

    def sample(self, rng: SeededRng):
        return self.values[int(rng.integers(0, len(self.values)))]

    def encode(self, value):
        return [1.0 if value == v else 0.0 for v in self.values]

    def contains(self, value) -> bool:
        return value in self.values


class SearchSpace:
    def __init__(self, dims):
        self.dims = list(dims)
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate dimension names in {names}")

    def __len__(self):
        return len(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def names(self):
        return [d.name for d in self.dims]

    def sample(self, rng: SeededRng) -> dict:
        return {d.name: d.sample(rng) for d in self.dims}

    def encode(self, config: dict) -> np.ndarray:
        return np.array([x for d in self.dims for x in d.encode(config[d.name])])

    def contains(self, config: dict) -> bool:
        return set(config) == set(self.names()) and all(d.contains(config[d.name]) for d in self.dims)


def default_space(arch: str) -> SearchSpace:
    lr = Continuous("learning_rate", *LR_BOUNDS, log=True)
    optimizer = Categorical("optimizer", ("sgd", "adam"))
    if arch == "wavpool":
        return SearchSpace([lr, Integer("hidden_size", 200, 300), Integer("pool_size", 2, 4),
                            Categorical("scaling", (True, False)), optimizer])
    if arch == "mlp":
        return SearchSpace([lr, Integer("hidden_size", 200, 300), optimizer])
    if arch == "cnn":
        return SearchSpace([lr, Integer("kernel_size", 2, 4), Integer("channels_1", 1, 20),
                            Integer("channels_2", 1, 20), optimizer])
    raise ConfigError(f"unknown architecture {arch!r}")


def realize(arch: str, config: dict, input_shape=(28, 28), num_classes: int = 10):
    """Turn a sampled search config into ``(model_config, OptimizerConfig)``.

    The WavPool pool size ``p`` becomes kernel ``(k1, k1, p)`` with
    ``k1 = min(p, 3, L)``; the level/orientation axes cannot hold a larger window.
    """
    opt = OptimizerConfig(kind=config["optimizer"], learning_rate=config["learning_rate"])
    if arch == "wavpool":
        p = config["pool_size"]
        k1 = min(p, 3, level_count(input_shape))
        model_cfg = WavPoolConfig(input_shape, config["hidden_size"], config["scaling"], (k1, k1, p), num_classes)
    elif arch == "mlp":
        h = config["hidden_size"]
        model_cfg = MLPConfig(int(np.prod(input_shape)), h, h, num_classes)
    elif arch == "cnn":
        model_cfg = CNNConfig(config["kernel_size"], config["channels_1"], config["channels_2"],
                              num_classes, input_shape)
    else:
        raise ConfigError(f"unknown architecture {arch!r}")
    return model_cfg, opt


@dataclass
class TrialRecord:
    config: dict
    f1: float
    seconds: float = 0.0
    diverged: bool = False

    def __post_init__(self):
        if not 0.0 <= self.f1 <= 1.0:
            raise ValueError(f"F1 {self.f1} outside [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        return cls(**json.loads(line))


def evaluate_config(arch: str, config: dict, train_ds: LabeledDataset, val_ds: LabeledDataset,
                    seed: int = 0, epochs: int = 20, batch_size: int = 64) -> TrialRecord:
    """Abbreviated run: ``epochs`` epochs, no early stopping, final validation macro F1."""
    num_classes = int(max(train_ds.labels.max(), val_ds.labels.max()) + 1)
    model_cfg, opt = realize(arch, config, train_ds.image_shape, num_classes)
    model = build_model(arch, model_cfg, seed)
    t0 = time.perf_counter()
    try:
        report = train(model, train_ds, val_ds, TrainConfig(epochs, None, batch_size, opt, seed),
                       num_classes, restore_best=False)
    except DivergenceError:
        return TrialRecord(config, 0.0, time.perf_counter() - t0, diverged=True)
    return TrialRecord(config, report.final["f1"], time.perf_counter() - t0)


class GaussianProcess:
    """Squared-exponential GP on unit-normalized inputs with standardized targets."""

    def __init__(self, X, y, noise=GP_NOISE, length_scale=None):
        self.X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.y_mean = y.mean()
        self.y_std = y.std() or 1.0
        yn = (y - self.y_mean) / self.y_std
        if length_scale is None:
            dists = pdist(self.X) if len(self.X) > 1 else np.array([])
            dists = dists[dists > 0]
            length_scale = float(np.median(dists)) if dists.size else 1.0
        self.length_scale = length_scale
        K = self.kernel(self.X, self.X) + noise * np.eye(len(self.X))
        self._chol = cho_factor(K, lower=True)
        self._alpha = cho_solve(self._chol, yn)

    def kernel(self, A, B):
        sq = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return np.exp(-0.5 * sq / self.length_scale**2)

    def predict(self, Xs):
        Ks = self.kernel(np.asarray(Xs, dtype=float), self.X)
        mu = Ks @ self._alpha
        v = cho_solve(self._chol, Ks.T)
        var = np.clip(1.0 - np.sum(Ks * v.T, axis=1), 1e-12, None)
        return mu * self.y_std + self.y_mean, np.sqrt(var) * self.y_std


def expected_improvement(mu, sigma, best):
    z = (mu - best) / sigma
    return (mu - best) * norm.cdf(z) + sigma * norm.pdf(z)


def _propose_gp(space: SearchSpace, records, rng: SeededRng) -> dict:
    X = np.array([space.encode(r.config) for r in records])
    y = np.array([r.f1 for r in records])
    gp = GaussianProcess(X, y)
    seen = {tuple(x) for x in X}
    candidates = [space.sample(rng) for _ in range(CANDIDATE_POOL)]
    enc = np.array([space.encode(c) for c in candidates])
    mu, sigma = gp.predict(enc)
    ei = expected_improvement(mu, sigma, y.max())
    for i in np.argsort(-ei, kind="stable"):
        if tuple(enc[i]) not in seen:
            return candidates[i]
    return candidates[0]


def search(space: SearchSpace, objective, budget: int, strategy: str = "gp_ei", seed: int = 0,
           history=(), log_path=None):
    """Run ``budget`` trials and return ``(best_config, records)``.

    ``objective(config)`` returns an F1-like score in ``[0, 1]`` or a
    :class:`TrialRecord`; a :class:`DivergenceError` scores 0. Records in
    ``history`` replay the first trials without calling the objective, which
    lets an interrupted search resume. New records are appended to ``log_path``
    as JSON lines when given.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if strategy not in ("random", "gp_ei"):
        raise ValueError(f"unknown strategy {strategy!r}")
    rng = SeededRng(seed, stream=4)
    warmup = math.ceil(budget / 4)
    history = list(history)
    records: list[TrialRecord] = []
    for i in range(budget):
        if strategy == "random" or i < warmup:
            config = space.sample(rng)
        else:
            config = _propose_gp(space, records, rng)
        if i < len(history):
            if history[i].config != config:
                raise ValueError(f"resume log diverges from the seeded search at trial {i}")
            records.append(history[i])
            continue
        t0 = time.perf_counter()
        try:
            result = objective(config)
        except DivergenceError:
            result = TrialRecord(config, 0.0, diverged=True)
        if not isinstance(result, TrialRecord):
            result = TrialRecord(config, float(result))
        if not result.seconds:
            result.seconds = time.perf_counter() - t0
        records.append(result)
        if log_path is not None:
            with open(log_path, "a") as f:
                f.write(result.to_json() + "\n")
    best = max(records, key=lambda r: r.f1)
    return best.config, records


def read_log(path) -> list[TrialRecord]:
    path = Path(path)
    if not path.exists():
        return []
    return [TrialRecord.from_json(line) for line in path.read_text().splitlines() if line.strip()]
