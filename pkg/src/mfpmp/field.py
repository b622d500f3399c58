"""The controlled layer map ``F(x, theta) = tanh(W x + tau)`` and its derivatives.

All functions accept a single point ``x`` of shape (d,) or a batch of shape
(N, d); batch outputs gain a leading axis. Parameters are flattened as
row-major ``W`` followed by ``tau`` (when present).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


def param_dim(d: int, with_bias: bool) -> int:
    return d * d + (d if with_bias else 0)


@dataclass(frozen=True)
class ControlParams:
    W: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        tau = np.asarray(self.tau, dtype=float).reshape(-1)
        if W.shape != (tau.size, tau.size):
            raise ValueError(f"W {W.shape} incompatible with tau {tau.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "tau", tau)

    @property
    def d(self) -> int:
        return self.tau.size

    @classmethod
    def from_flat(cls, vec, d: int, with_bias: bool) -> "ControlParams":
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.size != param_dim(d, with_bias):
            raise ValueError(f"expected {param_dim(d, with_bias)} parameters, got {vec.size}")
        tau = vec[d * d:] if with_bias else np.zeros(d)
        return cls(vec[:d * d].reshape(d, d), tau)

    def flat(self, with_bias: bool) -> np.ndarray:
        parts = [self.W.ravel()] + ([self.tau] if with_bias else [])
        return np.concatenate(parts)


class ControlPath:
    """Piecewise-constant controls ``theta_k`` on ``[k dt, (k+1) dt)``, k < L.

    ``values`` has shape (L, m) in the flattened parameter layout.
    """

    def __init__(self, values, dt: float, d: int, with_bias: bool = False):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] < 1:
            raise ValueError("a control path needs at least one layer")
        if values.shape[1] != param_dim(d, with_bias):
            raise ValueError(f"layer width {values.shape[1]} != {param_dim(d, with_bias)}")
        if dt <= 0:
            raise ValueError("dt must be positive")
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite control values")
        self.values = values
        self.dt = float(dt)
        self.d = int(d)
        self.with_bias = bool(with_bias)

    @classmethod
    def constant(cls, value, n_layers: int, dt: float, d: int, with_bias: bool = False):
        m = param_dim(d, with_bias)
        return cls(np.full((n_layers, m), float(value)), dt, d, with_bias)

    @classmethod
    def zeros(cls, n_layers: int, dt: float, d: int, with_bias: bool = False):
        return cls.constant(0.0, n_layers, dt, d, with_bias)

    @property
    def n_layers(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def T(self) -> float:
        return self.n_layers * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_layers + 1) * self.dt

    @property
    def W(self) -> np.ndarray:
        d = self.d
        return self.values[:, :d * d].reshape(-1, d, d)

    @property
    def tau(self) -> np.ndarray:
        if self.with_bias:
            return self.values[:, self.d * self.d:]
        return np.zeros((self.n_layers, self.d))

    def layer(self, k: int) -> ControlParams:
        return ControlParams(self.W[k], self.tau[k])

    def layer_index(self, t: float) -> int:
        """Index of the layer active at time ``t`` (the last layer includes ``T``)."""
        k = int(np.floor(t / self.dt + 1e-12))
        return min(max(k, 0), self.n_layers - 1)

    def at(self, t: float) -> ControlParams:
        return self.layer(self.layer_index(t))

    def replace(self, values) -> "ControlPath":
        return ControlPath(values, self.dt, self.d, self.with_bias)

    def __add__(self, other: "ControlPath") -> "ControlPath":
        return self.replace(self.values + other.values)

    def __sub__(self, other: "ControlPath") -> "ControlPath":
        return self.replace(self.values - other.values)

    def scaled(self, c: float) -> "ControlPath":
        return self.replace(c * self.values)

    def norm2(self) -> float:
        return float(np.sqrt(self.dt * np.sum(self.values ** 2)))

    def norm1(self) -> float:
        return float(self.dt * np.sum(np.linalg.norm(self.values, axis=1)))

    def norm_inf(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def to_dict(self) -> dict:
        return {"dt": self.dt, "d": self.d, "with_bias": self.with_bias,
                "layers": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "ControlPath":
        return cls(np.asarray(data["layers"], dtype=float), data["dt"], data["d"],
                   data["with_bias"])

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "ControlPath":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self) -> str:
        return f"ControlPath(L={self.n_layers}, dt={self.dt}, d={self.d}, bias={self.with_bias})"


def _pre(x, theta: ControlParams):
    x = np.asarray(x, dtype=float)
    return x, x @ theta.W.T + theta.tau


def eval_field(x, theta: ControlParams) -> np.ndarray:
    return np.tanh(_pre(x, theta)[1])


def jac_x(x, theta: ControlParams) -> np.ndarray:
    """``dF_k/dx_i = tanh'(z_k) W_ki``; shape (..., d, d)."""
    _, z = _pre(x, theta)
    s = 1.0 - np.tanh(z) ** 2
    return s[..., :, None] * theta.W


def grad_theta(x, theta: ControlParams, with_bias: bool = False) -> np.ndarray:
    """``dF_k/dtheta``; shape (..., d, m) in the flattened layout."""
    x, z = _pre(x, theta)
    d = theta.d
    s = 1.0 - np.tanh(z) ** 2
    eye = np.eye(d)
    # dF_k / dW_ij = delta_ki s_k x_j
    gw = (s[..., :, None, None] * eye[:, :, None]) * x[..., None, None, :]
    gw = gw.reshape(*x.shape[:-1], d, d * d)
    if not with_bias:
        return gw
    gb = s[..., :, None] * eye
    return np.concatenate([gw, gb], axis=-1)


def hessian_theta_contract(x, theta: ControlParams, a, b, with_bias: bool = False) -> np.ndarray:
    """Second theta-derivative of F applied to directions ``a`` and ``b`` (in R^m)."""
    x, z = _pre(x, theta)
    d = theta.d
    t = np.tanh(z)
    s2 = -2.0 * t * (1.0 - t ** 2)
    pa = ControlParams.from_flat(a, d, with_bias)
    pb = ControlParams.from_flat(b, d, with_bias)
    # d/dtheta of z_k along a is (A x + alpha)_k
    za = x @ pa.W.T + pa.tau
    zb = x @ pb.W.T + pb.tau
    return s2 * za * zb


def hessian_theta_norm(x, theta: ControlParams, with_bias: bool = False) -> float:
    """Operator norm ``sup_{|a|=1} |D^2_theta F[a, a]|`` at a single point.

    Each output row k only sees its own parameter block ``v_k = (x, 1)``, so the
    supremum is ``max_k |tanh''(z_k)| |v_k|^2``.
    """
    x, z = _pre(x, theta)
    t = np.tanh(z)
    s2 = np.abs(2.0 * t * (1.0 - t ** 2))
    block = float(x @ x) + (1.0 if with_bias else 0.0)
    return float(np.max(s2) * block)


def field_bound(d: int) -> float:
    """Uniform bound on ``|F|`` for the tanh field."""
    return float(np.sqrt(d))
