"""Small MLPs with hand-written reverse mode, and the dispatch representation model.

Edge embeddings are ``phi[e] = psi(vartheta[e], theta(T))``: a static net on
the 20 edge features, a context net on the 27 environment features, and a
cross net on their concatenation. Edge costs are squared norms of the rows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch
from .netgraph import EDGE_FEATURE_DIM, Path, RoadNetwork
from .seeding import rng_for

CONTEXT_DIM = 27
ACTIVATIONS = ("swish", "softplus", "tanh", "identity")
MODEL_VERSION = 1


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def softplus(a):
    a = np.asarray(a, dtype=float)
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def activate(name: str, a):
    """Value and elementwise derivative of an activation."""
    if name == "identity":
        return a, np.ones_like(a)
    if name == "tanh":
        h = np.tanh(a)
        return h, 1.0 - h * h
    if name == "softplus":
        return softplus(a), _sigmoid(a)
    if name == "swish":
        s = _sigmoid(a)
        return a * s, s + a * s * (1.0 - s)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Mlp:
    """Fully connected net; ``weights[i]`` has shape (out, in) and rows are samples."""

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists disagree in length")
        for i, (W, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if b.shape != (W.shape[0],):
                raise ValueError(f"layer {i}: bias shape {b.shape} vs weight {W.shape}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input {W.shape[1]} does not chain")

    @classmethod
    def init(cls, dims, activations, rng) -> "Mlp":
        """Glorot-uniform weights, zero biases."""
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        Ws, bs = [], []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            lim = math.sqrt(6.0 / (n_in + n_out))
            Ws.append(rng.uniform(-lim, lim, size=(n_out, n_in)))
            bs.append(np.zeros(n_out))
        return cls(Ws, bs, list(activations))

    @property
    def dims(self) -> list:
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    def params(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, x, cache=False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dims[0]:
            raise DimMismatch(f"input width {x.shape[-1]}, expected {self.dims[0]}")
        h = x
        tape = []
        for W, b, act in zip(self.weights, self.biases, self.activations):
            a = h @ W.T + b
            out, dh = activate(act, a)
            tape.append((h, dh))
            h = out
        return (h, tape) if cache else h

    def backward(self, tape, g_out):
        """Gradients ``(g_input, [gW0, gb0, gW1, ...])`` for upstream gradient ``g_out``."""
        g = np.asarray(g_out, dtype=float)
        grads = []
        for (h_in, dh), W in zip(reversed(tape), reversed(self.weights)):
            ga = g * dh
            grads.append(ga.reshape(-1, W.shape[0]).sum(axis=0))
            grads.append(ga.reshape(-1, W.shape[0]).T @ h_in.reshape(-1, W.shape[1]))
            g = ga @ W
        return g, grads[::-1]

    def to_json(self) -> dict:
        return {
            "dims": self.dims,
            "activations": list(self.activations),
            "weights": [W.ravel().tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, doc) -> "Mlp":
        dims = doc["dims"]
        Ws = [np.array(w, dtype=float).reshape(o, i) for w, i, o in zip(doc["weights"], dims[:-1], dims[1:])]
        bs = [np.array(b, dtype=float) for b in doc["biases"]]
        return cls(Ws, bs, list(doc["activations"]))


@dataclass
class RepresentationModel:
    theta_static: Mlp
    theta_ctx: Mlp
    psi: Mlp
    feat_mean: np.ndarray = field(default_factory=lambda: np.zeros(EDGE_FEATURE_DIM))
    feat_scale: np.ndarray = field(default_factory=lambda: np.ones(EDGE_FEATURE_DIM))
    ctx_mean: np.ndarray = field(default_factory=lambda: np.zeros(CONTEXT_DIM))
    ctx_scale: np.ndarray = field(default_factory=lambda: np.ones(CONTEXT_DIM))
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.d
        if self.theta_ctx.dims[-1] != d or self.psi.dims[-1] != d:
            raise DimMismatch("static, context and cross nets must share the output dimension")
        if self.psi.dims[0] != 2 * d:
            raise DimMismatch(f"cross net input {self.psi.dims[0]}, expected {2 * d}")

    @property
    def d(self) -> int:
        return self.theta_static.dims[-1]

    @property
    def nets(self) -> tuple:
        return (self.theta_static, self.theta_ctx, self.psi)

    def params(self) -> list:
        """Parameter arrays in a fixed order: static, context, cross."""
        return [p for net in self.nets for p in net.params()]

    def copy(self) -> "RepresentationModel":
        return RepresentationModel.from_json(self.to_json())

    def to_json(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "d": self.d,
            "seeds": dict(self.seeds),
            "theta_static": self.theta_static.to_json(),
            "theta_ctx": self.theta_ctx.to_json(),
            "psi": self.psi.to_json(),
            "normalization": {
                "feat_mean": self.feat_mean.tolist(),
                "feat_scale": self.feat_scale.tolist(),
                "ctx_mean": self.ctx_mean.tolist(),
                "ctx_scale": self.ctx_scale.tolist(),
            },
        }

    @classmethod
    def from_json(cls, doc) -> "RepresentationModel":
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        nz = doc["normalization"]
        return cls(
            Mlp.from_json(doc["theta_static"]),
            Mlp.from_json(doc["theta_ctx"]),
            Mlp.from_json(doc["psi"]),
            np.array(nz["feat_mean"], dtype=float),
            np.array(nz["feat_scale"], dtype=float),
            np.array(nz["ctx_mean"], dtype=float),
            np.array(nz["ctx_scale"], dtype=float),
            dict(doc.get("seeds", {})),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "RepresentationModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def init_model(seed: int, d=8, hidden=32, network: RoadNetwork | None = None, contexts=None,
               activation="swish") -> RepresentationModel:
    """Default architecture with seeded Glorot init; optional input standardization."""
    rng = rng_for(seed, "init")
    static = Mlp.init([EDGE_FEATURE_DIM, hidden, d], [activation, "identity"], rng)
    ctx = Mlp.init([CONTEXT_DIM, hidden, d], [activation, "identity"], rng)
    psi = Mlp.init([2 * d, hidden, d], [activation, "identity"], rng)
    model = RepresentationModel(static, ctx, psi, seeds={"init": int(seed)})
    if network is not None:
        model.feat_mean, model.feat_scale = _standardizer(network.features)
    if contexts is not None and len(contexts):
        model.ctx_mean, model.ctx_scale = _standardizer(np.asarray(contexts, dtype=float))
    return model


def _standardizer(A):
    A = np.asarray(A, dtype=float)
    mean = A.mean(axis=0)
    sd = A.std(axis=0)
    return mean, np.where(sd > 1e-12, sd, 1.0)


def _check_context(model, context):
    context = np.asarray(context, dtype=float)
    if context.shape != (CONTEXT_DIM,):
        raise DimMismatch(f"context has shape {context.shape}, expected ({CONTEXT_DIM},)")
    return (context - model.ctx_mean) / model.ctx_scale


def _static_inputs(model, network):
    F = network.features
    if F.shape[1] != model.theta_static.dims[0]:
        raise DimMismatch(f"edge features have width {F.shape[1]}")
    return (F - model.feat_mean) / model.feat_scale


def context_embedding(model: RepresentationModel, context) -> np.ndarray:
    """``theta(T)``, the input of the radius network."""
    return model.theta_ctx.forward(_check_context(model, context))


def _forward(model, network, context):
    V, t_static = model.theta_static.forward(_static_inputs(model, network), cache=True)
    th, t_ctx = model.theta_ctx.forward(_check_context(model, context)[None, :], cache=True)
    H = np.hstack([V, np.repeat(th, V.shape[0], axis=0)])
    Phi, t_psi = model.psi.forward(H, cache=True)
    return Phi, V, (t_static, t_ctx, t_psi)


def embed_edges(model: RepresentationModel, network: RoadNetwork, context) -> np.ndarray:
    """Edge embedding matrix of shape (|E|, d) under context ``T``."""
    return _forward(model, network, context)[0]


def edge_costs(Phi) -> np.ndarray:
    Phi = np.asarray(Phi, dtype=float)
    return np.einsum("ij,ij->i", Phi, Phi)


def _zero_grads(model):
    return [np.zeros_like(p) for p in model.params()]


def regularizer(model: RepresentationModel, network: RoadNetwork):
    """Smoothness of length-normalized static embeddings over adjacent edge pairs.

    Returns the value and a gradient list aligned with ``model.params()``;
    only the static-net entries are nonzero.
    """
    grads = _zero_grads(model)
    pairs = network.adjacent_pairs
    if len(pairs) == 0:
        return 0.0, grads
    V, tape = model.theta_static.forward(_static_inputs(model, network), cache=True)
    w = 1.0 / np.sqrt(network.lengths)
    a, b = pairs[:, 0], pairs[:, 1]
    D = V[a] * w[a, None] - V[b] * w[b, None]
    gV = np.zeros_like(V)
    np.add.at(gV, a, 2.0 * D * w[a, None])
    np.add.at(gV, b, -2.0 * D * w[b, None])
    _, g_static = model.theta_static.backward(tape, gV)
    grads[: len(g_static)] = g_static
    return float(np.sum(D * D)), grads


@dataclass(frozen=True)
class LossKind:
    """Squared or Huber loss on the residual, measured in units of ``time_scale`` seconds."""

    kind: str = "huber"
    delta: float = 30.0
    time_scale: float = 10.0

    def __post_init__(self):
        if self.kind not in ("squared", "huber"):
            raise ValueError(f"unknown loss {self.kind!r}")
        if not (self.delta > 0 and self.time_scale > 0):
            raise ValueError("delta and time_scale must be positive")

    def value_and_slope(self, pred: float, t: float) -> tuple[float, float]:
        r = pred - t
        s2 = self.time_scale**2
        if self.kind == "squared" or abs(r) <= self.delta:
            return 0.5 * r * r / s2, r / s2
        return self.delta * (abs(r) - 0.5 * self.delta) / s2, math.copysign(self.delta, r) / s2


def _as_vector(z, n):
    if isinstance(z, Path):
        return z.z
    z = np.asarray(z, dtype=float)
    if z.shape != (n,):
        raise DimMismatch(f"path vector has shape {z.shape}, expected ({n},)")
    return z


def backward_through_path(model: RepresentationModel, network: RoadNetwork, context, z, t_obs: float,
                          loss: LossKind = LossKind(), beta: float = 0.0):
    """Loss and gradient of ``l(c.z, t) + beta R`` with the path ``z`` held fixed.

    Returns ``(loss_value, prediction, grads)`` with ``grads`` aligned with
    ``model.params()``. The regularizer term excludes its value from
    ``loss_value``; callers wanting the full objective add it separately.
    """
    Phi, _, (t_static, t_ctx, t_psi) = _forward(model, network, context)
    zv = _as_vector(z, network.n_edges)
    pred = float(edge_costs(Phi) @ zv)
    val, slope = loss.value_and_slope(pred, float(t_obs))
    gPhi = (2.0 * slope) * Phi * zv[:, None]
    gH, g_psi = model.psi.backward(t_psi, gPhi)
    d = model.d
    _, g_static = model.theta_static.backward(t_static, gH[:, :d])
    _, g_ctx = model.theta_ctx.backward(t_ctx, gH[:, d:].sum(axis=0, keepdims=True))
    grads = g_static + g_ctx + g_psi
    if beta:
        _, g_reg = regularizer(model, network)
        grads = [g + beta * r for g, r in zip(grads, g_reg)]
    return val, pred, grads


def flat_params(model) -> np.ndarray:
    return np.concatenate([p.ravel() for p in model.params()])


def set_flat_params(model, vec) -> None:
    vec = np.asarray(vec, dtype=float)
    i = 0
    for p in model.params():
        n = p.size
        p[...] = vec[i:i + n].reshape(p.shape)
        i += n
    if i != vec.size:
        raise DimMismatch(f"parameter vector has {vec.size} entries, model needs {i}")


def flat_grads(grads) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


@dataclass
class RadiusModel:
    """``rho = softplus(net(theta))``; the softplus head keeps radii nonnegative."""

    rho_net: Mlp

    def __post_init__(self):
        if self.rho_net.dims[-1] != 1 or self.rho_net.activations[-1] != "softplus":
            raise ValueError("radius net needs a single softplus output")

    def params(self) -> list:
        return self.rho_net.params()

    def to_json(self) -> dict:
        return {"version": MODEL_VERSION, "rho_net": self.rho_net.to_json()}

    @classmethod
    def from_json(cls, doc) -> "RadiusModel":
        return cls(Mlp.from_json(doc["rho_net"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "RadiusModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def init_radius_model(seed: int, d=8, hidden=16, activation="swish") -> RadiusModel:
    rng = rng_for(seed, "init-radius")
    return RadiusModel(Mlp.init([d, hidden, 1], [activation, "softplus"], rng))


def radius_predict(rho_model: RadiusModel, theta_vec):
    """Predicted radius for one ``theta(T)`` vector, or a column for a batch of rows."""
    theta_vec = np.asarray(theta_vec, dtype=float)
    out = rho_model.rho_net.forward(theta_vec)
    return float(out[0]) if theta_vec.ndim == 1 else out[:, 0]
