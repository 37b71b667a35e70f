"""Kernel SVM trained with sequential minimal optimisation, one-vs-one multiclass.

The binary solver follows the maximal-violating-pair SMO scheme with
second-order working set selection (Fan, Chen & Lin 2005) and stops when
the KKT violation gap drops below ``tol``.  Models serialise to JSON.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numba
import numpy as np

MODEL_FORMAT = "leishscan-svm"
MODEL_VERSION = 1
TAU = 1e-12


class ModelError(ValueError):
    pass


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    name: str = "rbf"  # linear | polynomial | rbf | tanh
    gamma: float | None = None  # None: 1 / n_features
    degree: int = 3
    coef0: float = 0.0

    def __post_init__(self):
        if self.name not in ("linear", "polynomial", "rbf", "tanh"):
            raise ValueError(f"unknown kernel {self.name!r}")

    def resolved(self, n_features: int) -> "Kernel":
        if self.gamma is not None:
            return self
        return Kernel(self.name, 1.0 / n_features, self.degree, self.coef0)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if self.name == "linear":
            return a @ b.T
        if self.name == "polynomial":
            return (self.gamma * (a @ b.T) + self.coef0) ** self.degree
        if self.name == "tanh":
            return np.tanh(self.gamma * (a @ b.T) + self.coef0)
        sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
        return np.exp(-self.gamma * np.maximum(sq, 0.0))

    def to_dict(self) -> dict:
        return {"name": self.name, "gamma": self.gamma, "degree": self.degree, "coef0": self.coef0}


@numba.njit(cache=True)
def _smo(K, y, C, tol, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.empty(n)
    for t in range(n):
        QD[t] = K[t, t]
    it = 0
    while it < max_iter:
        # i: maximal violator from the "up" set
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
            else:
                if alpha[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
        gmax2 = -np.inf
        j = -1
        obj_min = np.inf
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    diff = gmax + G[t]
                    if G[t] >= gmax2:
                        gmax2 = G[t]
                    if diff > 0 and i >= 0:
                        quad = QD[i] + QD[t] - 2.0 * y[i] * K[i, t]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= obj_min:
                            j = t
                            obj_min = obj
            else:
                if alpha[t] < C:
                    diff = gmax - G[t]
                    if -G[t] >= gmax2:
                        gmax2 = -G[t]
                    if diff > 0 and i >= 0:
                        quad = QD[i] + QD[t] + 2.0 * y[i] * K[i, t]
                        if quad <= 0:
                            quad = TAU
                        obj = -(diff * diff) / quad
                        if obj <= obj_min:
                            j = t
                            obj_min = obj
        if gmax + gmax2 < tol or i < 0 or j < 0:
            break
        it += 1
        ai_old = alpha[i]
        aj_old = alpha[j]
        qij = y[i] * y[j] * K[i, j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            d = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if d > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = d
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -d
            if d > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - d
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + d
        else:
            quad = QD[i] + QD[j] - 2.0 * qij
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if s > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = s - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = s
            if s > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = s - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = s
        dai = alpha[i] - ai_old
        daj = alpha[j] - aj_old
        for t in range(n):
            G[t] += y[t] * (y[i] * K[i, t] * dai + y[j] * K[j, t] * daj)
    # threshold from free vectors, else midpoint of the feasible interval
    ub = np.inf
    lb = -np.inf
    nfree = 0
    sfree = 0.0
    for t in range(n):
        yg = y[t] * G[t]
        if alpha[t] >= C:
            if y[t] < 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                ub = min(ub, yg)
            else:
                lb = max(lb, yg)
        else:
            nfree += 1
            sfree += yg
    rho = sfree / nfree if nfree > 0 else 0.5 * (ub + lb)
    return alpha, rho, it, gmax + gmax2


@dataclass
class BinarySVM:
    """Decision function ``sum(coef * K(sv, x)) - rho``; positive favours ``classes[0]``."""

    classes: tuple[int, int]
    support: np.ndarray  # indices into the model's training vectors
    coef: np.ndarray  # alpha_i * y_i
    rho: float


def solve_binary(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
                 max_iter: int = 1_000_000) -> tuple[np.ndarray, float, float]:
    """Dual coefficients ``alpha``, offset ``rho`` and final KKT gap."""
    alpha, rho, _, gap = _smo(np.ascontiguousarray(K, dtype=float), np.asarray(y, dtype=float),
                              float(C), float(tol), int(max_iter))
    return alpha, rho, gap


@dataclass
class ClassifierModel:
    kernel: Kernel
    C: float
    classes: list[int]
    mean: np.ndarray
    std: np.ndarray
    vectors: np.ndarray  # standardised training vectors that are support vectors somewhere
    machines: list[BinarySVM] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.mean)

    def scale(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.shape[-1] != self.n_features:
            raise ModelError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return (x - self.mean) / self.std

    def decision_values(self, features) -> np.ndarray:
        z = np.atleast_2d(self.scale(features))
        kmat = self.kernel(self.vectors, z) if len(self.vectors) else np.zeros((0, len(z)))
        out = np.empty((len(z), len(self.machines)))
        for m, svm in enumerate(self.machines):
            out[:, m] = svm.coef @ kmat[svm.support] - svm.rho
        return out

    def predict(self, features) -> np.ndarray:
        dec = self.decision_values(features)
        idx = {c: i for i, c in enumerate(self.classes)}
        votes = np.zeros((dec.shape[0], len(self.classes)), dtype=int)
        for m, svm in enumerate(self.machines):
            a, b = svm.classes
            win_a = dec[:, m] > 0
            votes[win_a, idx[a]] += 1
            votes[~win_a, idx[b]] += 1
        # argmax returns the first maximum, i.e. the smaller class on ties
        return np.asarray(self.classes)[np.argmax(votes, axis=1)]

    def to_json(self) -> str:
        obj = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kernel": self.kernel.to_dict(),
            "C": self.C,
            "classes": list(map(int, self.classes)),
            "scaling": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "vectors": self.vectors.tolist(),
            "machines": [
                {"classes": list(map(int, m.classes)), "support": m.support.tolist(),
                 "coef": m.coef.tolist(), "rho": m.rho}
                for m in self.machines
            ],
            "summary": self.summary,
        }
        return json.dumps(obj, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ClassifierModel":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelError(f"model file is not valid JSON: {exc}") from exc
        if obj.get("format") != MODEL_FORMAT or obj.get("version") != MODEL_VERSION:
            raise ModelError("unsupported model format or version")
        k = obj["kernel"]
        model = cls(
            kernel=Kernel(k["name"], k["gamma"], k["degree"], k["coef0"]),
            C=obj["C"],
            classes=obj["classes"],
            mean=np.asarray(obj["scaling"]["mean"], dtype=float),
            std=np.asarray(obj["scaling"]["std"], dtype=float),
            vectors=np.asarray(obj["vectors"], dtype=float).reshape(-1, len(obj["scaling"]["mean"])),
            machines=[
                BinarySVM(tuple(m["classes"]), np.asarray(m["support"], dtype=int),
                          np.asarray(m["coef"], dtype=float), float(m["rho"]))
                for m in obj["machines"]
            ],
            summary=obj.get("summary", {}),
        )
        pairs = {tuple(m.classes) for m in model.machines}
        if pairs != set(combinations(model.classes, 2)):
            raise ModelError("model lacks a decision function for some class pair")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        return cls.from_json(Path(path).read_text())


def train_model(features, labels, kernel: Kernel | None = None, C: float = 10.0,
                tol: float = 1e-3) -> ClassifierModel:
    """Standardise the features and train one SMO machine per class pair."""
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or len(x) != len(y):
        raise TrainingError("features must be (n, d) with one label per row")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise TrainingError("training needs at least two classes")
    if counts.min() < 2:
        raise TrainingError(f"every class needs >= 2 samples: {dict(zip(classes.tolist(), counts.tolist()))}")
    if C <= 0:
        raise TrainingError("C must be positive")
    kernel = (kernel or Kernel()).resolved(x.shape[1])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    z = (x - mean) / std
    kfull = kernel(z, z)
    machines = []
    used = np.zeros(len(z), dtype=bool)
    for a, b in combinations(classes.tolist(), 2):
        idx = np.flatnonzero((y == a) | (y == b))
        yy = np.where(y[idx] == a, 1.0, -1.0)
        alpha, rho, _ = solve_binary(kfull[np.ix_(idx, idx)], yy, C, tol)
        sv = alpha > 0
        used[idx[sv]] = True
        machines.append(BinarySVM((a, b), idx[sv], alpha[sv] * yy[sv], float(rho)))
    # compact the stored vectors to those referenced by some machine
    remap = np.cumsum(used) - 1
    for m in machines:
        m.support = remap[m.support]
    return ClassifierModel(kernel, float(C), classes.tolist(), mean, std, z[used], machines)
