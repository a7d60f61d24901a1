"""Finite-sum objectives f(x) = (1/n) sum_i f_i(x) and a small zoo of test functions.

Every objective exposes vectorized per-component values and gradients. The
scalar accessors (``component_value``, ``component_gradient``) are thin
wrappers kept for readability in tests and small scripts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import (
    DatasetTooSmallError,
    InvalidDimensionError,
    InvalidRegularizerError,
    InvalidSpectrumError,
)

# max |sigma''(z)| for the logistic sigmoid, attained at z = log(2 -+ sqrt(3))
SIGMOID_CURVATURE_MAX = 1.0 / (6.0 * math.sqrt(3.0))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ObjectiveMetadata:
    """Analytically known (or explicitly estimated) constants of an objective."""

    grad_lipschitz: float
    hessian_lipschitz: float | None = None
    strict_saddle_q: float | None = None
    reg_mu1: float | None = None
    reg_psi1: float | None = None
    reg_mu2: float | None = None
    reg_psi2: float | None = None
    known_min_value: float | None = None
    known_fsp_list: list[tuple[np.ndarray, float]] | None = None
    lipschitz_source: str = "analytic"
    # half-width of the box used for randomized spot checks
    check_box: float = 2.0

    @property
    def has_regularization(self) -> bool:
        return None not in (self.reg_mu1, self.reg_psi1, self.reg_mu2, self.reg_psi2)

    def to_dict(self) -> dict[str, Any]:
        fsp = None
        if self.known_fsp_list is not None:
            fsp = [[list(map(float, p)), float(lam)] for p, lam in self.known_fsp_list]
        return {
            "grad_lipschitz": self.grad_lipschitz,
            "hessian_lipschitz": self.hessian_lipschitz,
            "strict_saddle_q": self.strict_saddle_q,
            "reg_mu1": self.reg_mu1,
            "reg_psi1": self.reg_psi1,
            "reg_mu2": self.reg_mu2,
            "reg_psi2": self.reg_psi2,
            "known_min_value": self.known_min_value,
            "known_fsp_list": fsp,
            "lipschitz_source": self.lipschitz_source,
            "check_box": self.check_box,
        }


class FiniteSumObjective:
    """Base class. Subclasses implement the two vectorized component methods.

    ``component_values(idx, x)`` returns shape ``(len(idx),)`` and
    ``component_gradients(idx, x)`` returns shape ``(len(idx), d)``. Indices may
    repeat (sampling with replacement).
    """

    id: str = "objective"

    def __init__(self, n: int, d: int, params: dict[str, Any] | None = None):
        self.n = int(n)
        self.d = int(d)
        self.params = dict(params or {})

    def component_values(self, idx, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def component_gradients(self, idx, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def component_value(self, i: int, x) -> float:
        return float(self.component_values(np.array([i]), np.asarray(x, dtype=float))[0])

    def component_gradient(self, i: int, x) -> np.ndarray:
        return self.component_gradients(np.array([i]), np.asarray(x, dtype=float))[0]

    def batch_gradient(self, idx, x: np.ndarray) -> np.ndarray:
        """Mean of the component gradients over ``idx``."""
        return self.component_gradients(idx, x).mean(axis=0)

    def full_value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self.component_values(np.arange(self.n), x).mean())

    def full_gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.batch_gradient(np.arange(self.n), x)

    def batch_gradient_many(self, idx: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Row r is ``batch_gradient(idx[r], X[r])``; subclasses may vectorize."""
        return np.stack([self.batch_gradient(i, x) for i, x in zip(idx, X)])

    def full_gradient_many(self, X: np.ndarray) -> np.ndarray:
        return np.stack([self.full_gradient(x) for x in X])

    def hessian_vec(self, x, v) -> np.ndarray:
        raise NotImplementedError(f"{self.id} does not provide Hessian-vector products")

    @property
    def spec(self) -> dict[str, Any]:
        """Identifier plus constructor parameters, enough to rebuild the objective."""
        return {"id": self.id, **self.params}


class SeparableQuadratic(FiniteSumObjective):
    """f(x) = 1/2 sum_j lam_j x_j^2, split by coordinate with an n = d factor."""

    id = "separable_quadratic"

    def __init__(self, eigenvalues, params=None):
        lam = _frozen(eigenvalues)
        super().__init__(n=lam.size, d=lam.size, params=params)
        self.eigenvalues = lam

    def component_values(self, idx, x):
        idx = np.asarray(idx)
        return 0.5 * self.d * self.eigenvalues[idx] * x[idx] ** 2

    def component_gradients(self, idx, x):
        idx = np.asarray(idx)
        out = np.zeros((idx.size, self.d))
        out[np.arange(idx.size), idx] = self.d * self.eigenvalues[idx] * x[idx]
        return out

    def batch_gradient(self, idx, x):
        idx = np.asarray(idx)
        counts = np.bincount(idx, minlength=self.d)
        return counts * (self.d * self.eigenvalues * x) / idx.size

    def batch_gradient_many(self, idx, X):
        idx = np.asarray(idx)
        counts = np.zeros((idx.shape[0], self.d), dtype=np.int64)
        np.add.at(counts, (np.arange(idx.shape[0])[:, None], idx), 1)
        return counts * (self.d * self.eigenvalues * X) / idx.shape[1]

    def full_gradient_many(self, X):
        return self.eigenvalues * np.asarray(X, dtype=float)

    def full_value(self, x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * np.dot(self.eigenvalues * x, x))

    def full_gradient(self, x):
        return self.eigenvalues * np.asarray(x, dtype=float)

    def hessian_vec(self, x, v):
        return self.eigenvalues * np.asarray(v, dtype=float)


class Quadratic(SeparableQuadratic):
    id = "quadratic"


class SaddleQuadratic(SeparableQuadratic):
    id = "saddle_quadratic"


def make_quadratic(d: int, scale: float = 1.0) -> tuple[Quadratic, ObjectiveMetadata]:
    """f(x) = scale * ||x||^2 with components f_i(x) = scale * d * x_i^2."""
    if d < 1:
        raise InvalidDimensionError(f"d must be >= 1, got {d}")
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    obj = Quadratic(np.full(d, 2.0 * scale), params={"d": d, "scale": scale})
    meta = ObjectiveMetadata(
        # worst case over components: grad f_i is (2 scale d)-Lipschitz
        grad_lipschitz=2.0 * scale * d,
        hessian_lipschitz=0.0,
        reg_mu1=4.0 * scale,
        reg_psi1=0.0,
        reg_mu2=1.0 / scale,
        reg_psi2=0.0,
        known_min_value=0.0,
        known_fsp_list=[(np.zeros(d), 2.0 * scale)],
    )
    return obj, meta


def make_saddle_quadratic(
    d: int, neg_eig: float, pos_eig: float
) -> tuple[SaddleQuadratic, ObjectiveMetadata]:
    """f(x) = 1/2 (-neg_eig x_1^2 + pos_eig sum_{j>=2} x_j^2); strict saddle at 0."""
    if d < 2:
        raise InvalidDimensionError(f"saddle quadratic needs d >= 2, got {d}")
    if neg_eig <= 0 or pos_eig <= 0:
        raise InvalidSpectrumError(f"eigenvalue magnitudes must be positive, got {neg_eig}, {pos_eig}")
    lam = np.full(d, float(pos_eig))
    lam[0] = -float(neg_eig)
    obj = SaddleQuadratic(lam, params={"d": d, "neg_eig": neg_eig, "pos_eig": pos_eig})
    meta = ObjectiveMetadata(
        grad_lipschitz=max(neg_eig, pos_eig),
        hessian_lipschitz=0.0,
        strict_saddle_q=min(neg_eig, pos_eig),
        known_fsp_list=[(np.zeros(d), -float(neg_eig))],
    )
    return obj, meta


class SigmoidNet(FiniteSumObjective):
    """f(x) = sum_k sigmoid(a_k . x) + gamma ||x||^2 + C, one component per row of A."""

    id = "sigmoid_net"

    def __init__(self, A, gamma: float, offset: float, params=None):
        A = _frozen(np.atleast_2d(A))
        super().__init__(n=A.shape[0], d=A.shape[1], params=params)
        self.A = A
        self.gamma = float(gamma)
        self.offset = float(offset)

    def component_values(self, idx, x):
        idx = np.asarray(idx)
        z = self.A[idx] @ x
        return self.n * sigmoid(z) + self.gamma * np.dot(x, x) + self.offset

    def component_gradients(self, idx, x):
        idx = np.asarray(idx)
        s = sigmoid(self.A[idx] @ x)
        return (self.n * s * (1.0 - s))[:, None] * self.A[idx] + 2.0 * self.gamma * x

    def full_value(self, x):
        x = np.asarray(x, dtype=float)
        return float(sigmoid(self.A @ x).sum() + self.gamma * np.dot(x, x) + self.offset)

    def full_gradient(self, x):
        x = np.asarray(x, dtype=float)
        s = sigmoid(self.A @ x)
        return self.A.T @ (s * (1.0 - s)) + 2.0 * self.gamma * x

    def hessian_vec(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        s = sigmoid(self.A @ x)
        curv = s * (1.0 - s) * (1.0 - 2.0 * s)
        return self.A.T @ (curv * (self.A @ v)) + 2.0 * self.gamma * v


def make_sigmoid_net(A, tikhonov_gamma: float, offset_C: float = 0.0) -> tuple[SigmoidNet, ObjectiveMetadata]:
    """One sigmoid neuron layer with Tikhonov regularization.

    Constants: the Hessian is A^T diag(sigma'') A + 2 gamma I, so
    L = ||A||_2^2 max|sigma''| + 2 gamma. Since 0 < sigma < 1,
    gamma ||x||^2 + C <= f <= m + gamma ||x||^2 + C, which gives
    mu2 = 1/gamma, psi2 = max(0, -C)/gamma. With g0 = ||A||_2 sqrt(m)/4 bounding
    the sigmoid part of the gradient, ||grad f||^2 >= 2 gamma^2 ||x||^2 - g0^2,
    hence mu1 = 2 gamma, psi1 = 2 gamma (m + C) + g0^2.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if tikhonov_gamma <= 0:
        raise InvalidRegularizerError(f"tikhonov_gamma must be positive, got {tikhonov_gamma}")
    m = A.shape[0]
    gamma = float(tikhonov_gamma)
    op_norm = float(np.linalg.norm(A, 2)) if A.size else 0.0
    g0 = op_norm * math.sqrt(m) / 4.0
    obj = SigmoidNet(A, gamma, offset_C, params={"A": A.tolist(), "gamma": gamma, "offset": offset_C})
    meta = ObjectiveMetadata(
        grad_lipschitz=op_norm**2 * SIGMOID_CURVATURE_MAX + 2.0 * gamma,
        reg_mu1=2.0 * gamma,
        reg_psi1=max(0.0, 2.0 * gamma * (m + offset_C) + g0**2),
        reg_mu2=1.0 / gamma,
        reg_psi2=max(0.0, -offset_C) / gamma,
    )
    return obj, meta


# ---------------------------------------------------------------------------
# binary classification network


@dataclass(frozen=True)
class Dataset:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        if name == "train":
            return self.X_train, self.y_train
        if name == "test":
            return self.X_test, self.y_test
        raise ValueError(f"unknown split {name!r}")


def write_dataset_csv(path, X: np.ndarray, y: np.ndarray) -> None:
    """One row per sample: feature columns, then the label in {-1, +1}."""
    X = np.atleast_2d(X)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{j}" for j in range(X.shape[1])] + ["label"])
        for row, label in zip(X, y):
            w.writerow([format(float(v), ".17g") for v in row] + [int(label)])


def read_dataset_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise ValueError(f"{path}: expected a header ending in 'label'")
    body = rows[1:]
    X = np.array([[float(v) for v in r[:-1]] for r in body], dtype=float).reshape(len(body), len(rows[0]) - 1)
    y = np.array([int(r[-1]) for r in body], dtype=float)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError(f"{path}: labels must be -1 or +1")
    return X, y


def make_blobs(n_train: int, n_test: int, n_features: int, separation: float, flip_rate: float, seed: int) -> Dataset:
    """Two Gaussian blobs at +-mu with balanced labels and random label flips."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
    mu = np.full(n_features, separation / math.sqrt(n_features))

    def draw(n):
        y = np.where(np.arange(n) < n // 2, 1.0, -1.0)
        y = rng.permutation(y)
        X = rng.standard_normal((n, n_features)) + y[:, None] * mu
        flips = rng.random(n) < flip_rate
        return X, np.where(flips, -y, y)

    X_tr, y_tr = draw(n_train)
    X_te, y_te = draw(n_test)
    return Dataset(_frozen(X_tr), _frozen(y_tr), _frozen(X_te), _frozen(y_te))


class BinaryClassifierNet(FiniteSumObjective):
    """Two sigmoid hidden layers and a linear output, per-sample squared loss (o - y)^2.

    Parameters are packed as [W1, b1, W2, b2, w3, b3].
    """

    id = "binary_classifier"

    def __init__(self, dataset: Dataset, hidden_widths: tuple[int, int], params=None):
        self.dataset = dataset
        self.X = dataset.X_train
        self.y = dataset.y_train
        p = self.X.shape[1]
        h1, h2 = hidden_widths
        self.shapes = [(h1, p), (h1,), (h2, h1), (h2,), (h2,), ()]
        sizes = [int(np.prod(s)) for s in self.shapes]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        super().__init__(n=self.X.shape[0], d=int(self.offsets[-1]), params=params)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        return [theta[a:b].reshape(s) for a, b, s in zip(self.offsets[:-1], self.offsets[1:], self.shapes)]

    def _forward(self, X, theta):
        W1, b1, W2, b2, w3, b3 = self.unpack(theta)
        h1 = sigmoid(X @ W1.T + b1)
        h2 = sigmoid(h1 @ W2.T + b2)
        return h1, h2, h2 @ w3 + b3

    def predict(self, theta, X) -> np.ndarray:
        return self._forward(np.atleast_2d(X), theta)[2]

    def component_values(self, idx, x):
        idx = np.asarray(idx)
        out = self.predict(x, self.X[idx])
        return (out - self.y[idx]) ** 2

    def _backward(self, idx, x, per_sample: bool):
        idx = np.asarray(idx)
        X = self.X[idx]
        W1, b1, W2, b2, w3, b3 = self.unpack(x)
        h1, h2, out = self._forward(X, x)
        g = 2.0 * (out - self.y[idx])
        dz2 = g[:, None] * w3 * h2 * (1.0 - h2)
        dz1 = (dz2 @ W2) * h1 * (1.0 - h1)
        if per_sample:
            k = idx.size
            parts = [
                (dz1[:, :, None] * X[:, None, :]).reshape(k, -1),
                dz1,
                (dz2[:, :, None] * h1[:, None, :]).reshape(k, -1),
                dz2,
                g[:, None] * h2,
                g[:, None],
            ]
            return np.concatenate(parts, axis=1)
        k = idx.size
        parts = [
            (dz1.T @ X).ravel() / k,
            dz1.mean(axis=0),
            (dz2.T @ h1).ravel() / k,
            dz2.mean(axis=0),
            h2.T @ g / k,
            [g.mean()],
        ]
        return np.concatenate(parts)

    def component_gradients(self, idx, x):
        return self._backward(idx, np.asarray(x, dtype=float), per_sample=True)

    def batch_gradient(self, idx, x):
        return self._backward(idx, np.asarray(x, dtype=float), per_sample=False)

    def misclassification_rate(self, theta, split: str = "train") -> float:
        X, y = self.dataset.split(split)
        pred = np.where(self.predict(theta, X) > 0.0, 1.0, -1.0)
        return float(np.mean(pred != y))

    def loss(self, theta, split: str = "train") -> float:
        X, y = self.dataset.split(split)
        return float(np.mean((self.predict(theta, X) - y) ** 2))


def make_binary_classifier(
    n_samples: int = 1000,
    hidden_widths: tuple[int, int] = (8, 8),
    data_seed: int = 0,
    *,
    n_features: int = 2,
    separation: float = 2.0,
    flip_rate: float = 0.05,
    lipschitz_pairs: int = 10_000,
    lipschitz_box: float = 1.0,
) -> tuple[BinaryClassifierNet, ObjectiveMetadata, Dataset]:
    """Synthetic two-blob classification problem and its squared-loss network.

    ``n_samples`` training points form the components; a held-out split of
    ``n_samples // 4`` points gives an 80/20 train/test ratio.
    """
    if n_samples < 10:
        raise DatasetTooSmallError(f"need at least 10 samples, got {n_samples}")
    h1, h2 = (int(w) for w in hidden_widths)
    if h1 < 1 or h2 < 1:
        raise InvalidDimensionError(f"hidden widths must be positive, got {hidden_widths}")
    data = make_blobs(n_samples, n_samples // 4, n_features, separation, flip_rate, data_seed)
    params = {
        "n_samples": n_samples,
        "hidden_widths": [h1, h2],
        "data_seed": data_seed,
        "n_features": n_features,
        "separation": separation,
        "flip_rate": flip_rate,
        "lipschitz_pairs": lipschitz_pairs,
        "lipschitz_box": lipschitz_box,
    }
    obj = BinaryClassifierNet(data, (h1, h2), params=params)
    L = estimate_lipschitz(obj, lipschitz_box, lipschitz_pairs, seed=data_seed) if lipschitz_pairs else float("nan")
    meta = ObjectiveMetadata(grad_lipschitz=L, lipschitz_source="empirical", check_box=lipschitz_box)
    return obj, meta, data


# ---------------------------------------------------------------------------
# oracles and spot checks


def finite_difference_gradient(obj: FiniteSumObjective, x, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_j) - f(x - h e_j)) / 2h, coordinate by coordinate."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (obj.full_value(x + e) - obj.full_value(x - e)) / (2.0 * h)
    return g


def estimate_lipschitz(obj: FiniteSumObjective, box: float, n_pairs: int, seed: int = 0) -> float:
    """max ||grad f(x) - grad f(y)|| / ||x - y|| over random pairs in [-box, box]^d."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x11B]))
    best = 0.0
    for _ in range(n_pairs):
        x = rng.uniform(-box, box, obj.d)
        y = rng.uniform(-box, box, obj.d)
        dist = np.linalg.norm(x - y)
        if dist == 0.0:
            continue
        best = max(best, np.linalg.norm(obj.full_gradient(x) - obj.full_gradient(y)) / dist)
    return float(best)


def lipschitz_spot_check(obj, meta: ObjectiveMetadata, n_pairs: int = 1000, seed: int = 0) -> float:
    """Largest observed ||grad f(x) - grad f(y)|| - L ||x - y||; <= 0 means the check passed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C]))
    box = meta.check_box
    worst = -np.inf
    for _ in range(n_pairs):
        x = rng.uniform(-box, box, obj.d)
        y = rng.uniform(-box, box, obj.d)
        lhs = np.linalg.norm(obj.full_gradient(x) - obj.full_gradient(y))
        worst = max(worst, lhs - meta.grad_lipschitz * np.linalg.norm(x - y))
    return float(worst)


def regularization_spot_check(obj, meta: ObjectiveMetadata, n_points: int = 1000, seed: int = 0) -> tuple[float, float]:
    """Worst margins of the two regularization inequalities at random points.

    Returns (min over x of ||grad f||^2 - mu1 f + psi1, min over x of mu2 f + psi2 - ||x||^2);
    both must be >= 0.
    """
    if not meta.has_regularization:
        raise ValueError("objective does not declare regularization constants")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x2E6]))
    box = meta.check_box
    m1 = m2 = np.inf
    for _ in range(n_points):
        x = rng.uniform(-box, box, obj.d)
        f = obj.full_value(x)
        g = obj.full_gradient(x)
        m1 = min(m1, float(g @ g) - meta.reg_mu1 * f + meta.reg_psi1)
        m2 = min(m2, meta.reg_mu2 * f + meta.reg_psi2 - float(x @ x))
    return m1, m2


# ---------------------------------------------------------------------------
# selection by identifier


def random_sigmoid_matrix(rows: int, cols: int, seed: int) -> np.ndarray:
    return np.random.default_rng(np.random.SeedSequence([seed, 0xA])).standard_normal((rows, cols))


def make_objective(spec: dict[str, Any]) -> tuple[FiniteSumObjective, ObjectiveMetadata]:
    """Build an objective from a config mapping such as ``{"id": "quadratic", "d": 10}``."""
    spec = dict(spec)
    kind = spec.pop("id", None)
    if kind == "quadratic":
        return make_quadratic(int(spec.get("d", 10)), float(spec.get("scale", 1.0)))
    if kind == "saddle_quadratic":
        return make_saddle_quadratic(
            int(spec.get("d", 2)), float(spec.get("neg_eig", 1.0)), float(spec.get("pos_eig", 1.0))
        )
    if kind == "sigmoid_net":
        if "A" in spec:
            A = np.asarray(spec["A"], dtype=float)
        else:
            A = random_sigmoid_matrix(int(spec.get("rows", 4)), int(spec.get("d", 3)), int(spec.get("seed", 0)))
        return make_sigmoid_net(A, float(spec.get("gamma", 0.1)), float(spec.get("offset", 0.0)))
    if kind == "binary_classifier":
        obj, meta, _ = make_binary_classifier(
            int(spec.get("n_samples", 1000)),
            tuple(spec.get("hidden_widths", (8, 8))),
            int(spec.get("data_seed", 0)),
            n_features=int(spec.get("n_features", 2)),
            separation=float(spec.get("separation", 2.0)),
            flip_rate=float(spec.get("flip_rate", 0.05)),
            lipschitz_pairs=int(spec.get("lipschitz_pairs", 10_000)),
            lipschitz_box=float(spec.get("lipschitz_box", 1.0)),
        )
        return obj, meta
    raise ValueError(f"unknown objective id {kind!r}")


OBJECTIVE_IDS: Sequence[str] = ("quadratic", "saddle_quadratic", "sigmoid_net", "binary_classifier")

__all__ = [
    "BinaryClassifierNet",
    "Dataset",
    "FiniteSumObjective",
    "OBJECTIVE_IDS",
    "ObjectiveMetadata",
    "Quadratic",
    "SaddleQuadratic",
    "SigmoidNet",
    "estimate_lipschitz",
    "finite_difference_gradient",
    "lipschitz_spot_check",
    "make_binary_classifier",
    "make_blobs",
    "make_objective",
    "make_quadratic",
    "make_saddle_quadratic",
    "make_sigmoid_net",
    "read_dataset_csv",
    "regularization_spot_check",
    "write_dataset_csv",
]
