"""Bias-free homogeneous predictors: linear and feedforward networks.

Parameters are always one flat float vector.  For a network it is the
row-major concatenation of W_1 (h_1 x d), ..., W_H (1 x h_{H-1}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, DomainError, StructuralError


class DegenerateInputError(ValueError):
    pass


@dataclass(frozen=True)
class MarginReading:
    gamma_tilde: float
    argmin_index: int
    norm_theta: float
    alpha: float


class LinearPredictor:
    """f(theta, x) = theta . x"""

    alpha = 1.0

    def __init__(self, d: int):
        if d < 1:
            raise StructuralError("dimension must be positive")
        self.d = int(d)

    def __repr__(self):
        return f"LinearPredictor(d={self.d})"

    @property
    def n_params(self) -> int:
        return self.d

    @property
    def input_dim(self) -> int:
        return self.d

    @property
    def layer_shapes(self):
        return [(1, self.d)]

    def init(self, seed: int = 0, scale: float = 1.0) -> np.ndarray:
        return np.zeros(self.d)

    def outputs(self, theta, X) -> np.ndarray:
        return X @ theta

    def vjp(self, theta, X, v) -> np.ndarray:
        """sum_i v_i * grad_theta f(theta, x_i)"""
        return X.T @ v

    def forward(self, theta, x) -> float:
        theta, x = self._check(theta, x)
        return float(theta @ x)

    def grad_theta(self, theta, x) -> np.ndarray:
        theta, x = self._check(theta, x)
        return x.copy()

    def layers(self, theta):
        return [np.asarray(theta, dtype=float).reshape(1, self.d)]

    def _check(self, theta, x):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        x = np.asarray(x, dtype=float).reshape(-1)
        if theta.shape[0] != self.d or x.shape[0] != self.d:
            raise StructuralError(f"expected length-{self.d} theta and x")
        return theta, x


def _relu(u):
    return np.maximum(u, 0.0)


def _relu_prime(u):
    # subgradient 0 at the kink
    return (u > 0).astype(float)


def _square(u):
    return u * u


def _square_prime(u):
    return 2.0 * u


ACTIVATIONS = {
    # name: (sigma, sigma', positive-homogeneity degree of sigma)
    "relu": (_relu, _relu_prime, 1),
    "square": (_square, _square_prime, 2),
}


class HomogeneousMLP:
    """W_H s(W_{H-1} s(... s(W_1 x)))  with no biases.

    With ReLU the network is H-homogeneous in theta.  The quadratic
    activation is smooth but raises the degree to 1 + 2 + ... + 2^(H-1).
    """

    def __init__(self, layer_dims: Sequence[int], activation: str = "relu"):
        dims = [int(v) for v in layer_dims]
        if len(dims) < 2 or dims[-1] != 1 or min(dims) < 1:
            raise StructuralError(f"layer_dims must look like [d, h1, ..., 1], got {dims}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.layer_dims = dims
        self.activation = activation
        self._sigma, self._sigma_prime, k = ACTIVATIONS[activation]
        self.depth = len(dims) - 1
        self.alpha = float(sum(k ** j for j in range(self.depth)))
        self.layer_shapes = [(dims[h + 1], dims[h]) for h in range(self.depth)]
        offsets = np.cumsum([0] + [a * b for a, b in self.layer_shapes])
        self._slices = [slice(int(offsets[h]), int(offsets[h + 1])) for h in range(self.depth)]
        self._n_params = int(offsets[-1])

    def __repr__(self):
        return f"HomogeneousMLP({self.layer_dims}, activation={self.activation!r})"

    @property
    def n_params(self) -> int:
        return self._n_params

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def layers(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.shape[0] != self._n_params:
            raise StructuralError(f"theta has {theta.shape[0]} entries, expected {self._n_params}")
        return [theta[s].reshape(shape) for s, shape in zip(self._slices, self.layer_shapes)]

    def flatten(self, mats) -> np.ndarray:
        return np.concatenate([np.asarray(m, dtype=float).reshape(-1) for m in mats])

    def init(self, seed: int = 0, scale: float = 1.0) -> np.ndarray:
        """Gaussian entries with std scale / sqrt(fan_in)."""
        rng = np.random.default_rng(seed)
        mats = [rng.normal(0.0, scale / math.sqrt(cols), size=(rows, cols)) for rows, cols in self.layer_shapes]
        return self.flatten(mats)

    def _forward_cache(self, theta, X):
        Ws = self.layers(theta)
        pre, post = [], [X.T]
        h = X.T
        for W in Ws[:-1]:
            z = W @ h
            pre.append(z)
            h = self._sigma(z)
            post.append(h)
        out = (Ws[-1] @ h).reshape(-1)
        return Ws, pre, post, out

    def outputs(self, theta, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise StructuralError(f"expected an n x {self.input_dim} matrix")
        return self._forward_cache(theta, X)[3]

    def vjp(self, theta, X, v) -> np.ndarray:
        """sum_i v_i * grad_theta f(theta, x_i), by reverse accumulation."""
        Ws, pre, post, _ = self._forward_cache(theta, X)
        delta = np.asarray(v, dtype=float).reshape(1, -1)
        grads = [None] * self.depth
        for h in range(self.depth - 1, -1, -1):
            grads[h] = delta @ post[h].T
            if h > 0:
                delta = (Ws[h].T @ delta) * self._sigma_prime(pre[h - 1])
        return self.flatten(grads)

    def forward(self, theta, x) -> float:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return float(self.outputs(theta, x)[0])

    def grad_theta(self, theta, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.input_dim:
            raise StructuralError(f"expected length-{self.input_dim} input")
        return self.vjp(theta, x, np.ones(1))

    def preactivations(self, theta, X):
        return self._forward_cache(theta, np.asarray(X, dtype=float))[1]


def normalized_margin(predictor, theta, data: Dataset) -> MarginReading:
    """min_i y_i f(theta, x_i) / ||theta||^alpha, lowest index on ties."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    nrm = float(np.linalg.norm(theta))
    if nrm == 0:
        raise DomainError("normalized margin undefined at theta = 0")
    margins = data.labels * predictor.outputs(theta, data.features)
    i = int(np.argmin(margins))
    return MarginReading(float(margins[i] / nrm ** predictor.alpha), i, nrm, float(predictor.alpha))


def frobenius_rebalance(mlp: HomogeneousMLP, theta) -> np.ndarray:
    """Rescale unit-norm ReLU network layers to a common Frobenius norm.

    Each layer becomes W_h * g / ||W_h||_F with g the geometric mean of the
    layer norms, which leaves the function unchanged and puts every layer
    norm at or below 1/sqrt(H).
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if isinstance(mlp, LinearPredictor):
        mlp_layers = [theta.reshape(1, -1)]
    else:
        if ACTIVATIONS[mlp.activation][2] != 1:
            raise DomainError("rebalancing needs a 1-homogeneous activation")
        mlp_layers = mlp.layers(theta)
    if abs(np.linalg.norm(theta) - 1.0) > 1e-9:
        raise DomainError("theta must have unit norm")
    norms = np.array([np.linalg.norm(W) for W in mlp_layers])
    if np.any(norms == 0):
        raise DegenerateInputError("a layer is identically zero")
    g = float(np.exp(np.mean(np.log(norms))))
    scaled = [W * (g / nW) for W, nW in zip(mlp_layers, norms)]
    return np.concatenate([W.reshape(-1) for W in scaled])


def save_params(path, predictor, theta) -> None:
    """One block per layer: a ``layer h rows cols`` line, then row-major values."""
    lines = []
    for h, W in enumerate(predictor.layers(theta), start=1):
        lines.append(f"layer {h} {W.shape[0]} {W.shape[1]}")
        for row in W:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append("")
    Path(path).write_text("\n".join(lines))


def load_params(path):
    """Returns (layer shapes, flat theta)."""
    shapes, values = [], []
    rows_left = 0
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("layer"):
            if rows_left:
                raise StructuralError(f"{path}: truncated layer block")
            _, _, r, c = line.split()
            shapes.append((int(r), int(c)))
            rows_left = int(r)
            continue
        vals = [float(t) for t in line.split()]
        if not shapes or rows_left == 0 or len(vals) != shapes[-1][1]:
            raise StructuralError(f"{path}: malformed row {line!r}")
        values.extend(vals)
        rows_left -= 1
    if rows_left:
        raise StructuralError(f"{path}: truncated layer block")
    return shapes, np.array(values, dtype=float)


def predictor_from_shapes(shapes, activation: str = "relu"):
    if len(shapes) == 1 and shapes[0][0] == 1:
        return LinearPredictor(shapes[0][1])
    dims = [shapes[0][1]] + [r for r, _ in shapes]
    return HomogeneousMLP(dims, activation)
