"""Mini-batch conservative gradient descent for the representation model.

Each step solves the lower-level shortest path for every sample in the batch
under the current (optionally perturbed) parameters, freezes that path, and
backpropagates the trip-time loss through it. The radius network is fitted
separately by mean absolute error.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EmptyDataset, NonfiniteLoss
from .netgraph import OdSpec, RoadNetwork, dijkstra
from .nets import (
    LossKind,
    RadiusModel,
    RepresentationModel,
    backward_through_path,
    edge_costs,
    embed_edges,
    flat_grads,
    flat_params,
    regularizer,
    set_flat_params,
)
from .seeding import rng_for


@dataclass(frozen=True)
class Sample:
    context: np.ndarray
    origin: str
    dest: str
    t: float

    def __post_init__(self):
        if not self.t >= 0:
            raise ValueError("observed travel time must be nonnegative")

    @property
    def od(self) -> OdSpec:
        return OdSpec((self.origin,), self.dest)

    def to_json(self) -> dict:
        return {"context": np.asarray(self.context).tolist(), "origin": self.origin,
                "dest": self.dest, "t_s": float(self.t)}

    @classmethod
    def from_json(cls, doc) -> "Sample":
        return cls(np.array(doc["context"], dtype=float), doc["origin"], doc["dest"], float(doc["t_s"]))


def save_samples(samples, path) -> None:
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json()) + "\n")


def load_samples(path) -> list:
    with open(path) as fh:
        return [Sample.from_json(json.loads(line)) for line in fh if line.strip()]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    iterations: int = 200
    step_kind: str = "harmonic"
    alpha0: float = 0.05
    perturb_kind: str = "zero"
    r0: float = 0.0
    loss: str = "huber"
    huber_delta: float = 30.0
    time_scale: float = 10.0
    beta: float = 1e-3
    weight_decay: float = 1e-4
    seed: int = 0
    holdout: float = 0.1
    patience: int = 20
    eval_every: int = 10

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ValueError("batch size and iteration budget must be positive")
        if self.step_kind not in ("harmonic", "constant", "sqrt") or not self.alpha0 > 0:
            raise ValueError("invalid step schedule")
        if self.perturb_kind not in ("zero", "constant", "harmonic"):
            raise ValueError(f"unknown perturbation schedule {self.perturb_kind!r}")
        if self.perturb_kind != "zero" and not self.r0 > 0:
            raise ValueError("perturbed schedules need r0 > 0")
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError("holdout fraction must lie in [0, 1)")

    def step(self, k: int) -> float:
        if self.step_kind == "constant":
            return self.alpha0
        if self.step_kind == "sqrt":
            return self.alpha0 / math.sqrt(1.0 + k)
        return self.alpha0 / (1.0 + k)

    def radius(self, k: int) -> float:
        if self.perturb_kind == "zero":
            return 0.0
        if self.perturb_kind == "constant":
            return self.r0
        return self.r0 / (1.0 + k)

    @property
    def perturbed(self) -> bool:
        return self.perturb_kind != "zero"

    @property
    def stationarity_scale(self) -> float:
        """Smoothing scale ``2 r0`` of the perturbed variant (0 when unperturbed)."""
        return 2.0 * self.r0 if self.perturbed else 0.0

    @property
    def loss_kind(self) -> LossKind:
        return LossKind(self.loss, self.huber_delta, self.time_scale)

    @classmethod
    def from_json(cls, doc) -> "TrainConfig":
        return cls(**doc)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: RepresentationModel
    loss_trace: list
    R: int | None = None
    model_R: RepresentationModel | None = None
    delta: float = 0.0
    holdout_trace: list = field(default_factory=list)
    stopped_at: int = 0
    train_trace: list = field(default_factory=list)


def sample_loss(model, network, sample: Sample, loss: LossKind, beta=0.0):
    """Loss, prediction and gradient for one sample with its tie-broken path frozen."""
    c = edge_costs(embed_edges(model, network, sample.context))
    if not np.all(np.isfinite(c)):
        raise NonfiniteLoss("edge costs overflowed")
    z, _ = dijkstra(network, c, sample.od)
    return backward_through_path(model, network, sample.context, z, sample.t, loss, beta)


def mean_loss(model, network, samples, loss: LossKind) -> float:
    """Mean data loss under the model's own shortest paths."""
    total = 0.0
    for s in samples:
        c = edge_costs(embed_edges(model, network, s.context))
        if not np.all(np.isfinite(c)):
            raise NonfiniteLoss("edge costs overflowed")
        _, pred = dijkstra(network, c, s.od)
        total += loss.value_and_slope(pred, s.t)[0]
    return total / len(samples)


def calibrate_head(model: RepresentationModel, network: RoadNetwork, samples) -> float:
    """Shift the cross-net output bias so predicted trip times match the data on average.

    The cost of an edge is a squared norm, so adding ``b * 1`` to every output
    row scales predictions smoothly; ``b`` is found by bisection on the ratio of
    mean prediction to mean observation.
    """
    if not samples:
        raise EmptyDataset("no samples to calibrate on")
    target = float(np.mean([s.t for s in samples]))
    bias = model.psi.biases[-1]
    base = bias.copy()

    def mean_pred(shift):
        bias[...] = base + shift
        return float(np.mean([dijkstra(network, edge_costs(embed_edges(model, network, s.context)), s.od)[1]
                              for s in samples]))

    lo, hi = 0.0, 1.0
    if mean_pred(0.0) >= target:
        bias[...] = base
        return 0.0
    while mean_pred(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise NonfiniteLoss("cannot scale predictions up to the observed times")
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if mean_pred(mid) < target:
            lo = mid
        else:
            hi = mid
    bias[...] = base + hi
    return hi


def _unit_ball(rng, n):
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    return v * rng.random() ** (1.0 / n)


def train(model: RepresentationModel, network: RoadNetwork, samples, cfg: TrainConfig) -> TrainResult:
    """Run the conservative-gradient loop; the input model is not modified.

    ``loss_trace[k]`` is the mean batch loss at step ``k``; ``train_trace``
    holds ``(k, mean training loss)`` every ``eval_every`` steps and at both
    ends. In perturbed mode an output index ``R`` is
    drawn with probability proportional to the step size and the matching
    iterate is returned alongside the last one.
    """
    samples = list(samples)
    if not samples:
        raise EmptyDataset("no training samples")
    for s in samples:
        s.od.validate(network)
    model = model.copy()
    loss = cfg.loss_kind
    rng_split = rng_for(cfg.seed, "split")
    rng_batch = rng_for(cfg.seed, "batches")
    rng_pert = rng_for(cfg.seed, "perturbations")

    order = rng_split.permutation(len(samples))
    n_hold = int(round(cfg.holdout * len(samples))) if len(samples) >= 10 else 0
    hold = [samples[i] for i in order[:n_hold]]
    tr = [samples[i] for i in order[n_hold:]]

    phi = flat_params(model)
    n_par = phi.size
    alphas = [cfg.step(k) for k in range(cfg.iterations)]
    R = None
    if cfg.perturbed:
        p = np.array(alphas) / np.sum(alphas)
        R = int(rng_pert.choice(cfg.iterations, p=p))
    iterate_R = None

    trace = []
    train_trace = [(0, mean_loss(model, network, tr, loss))]
    hold_trace = []
    best_hold, best_phi, since_best = math.inf, phi.copy(), 0
    perm, pos = rng_batch.permutation(len(tr)), 0
    stopped = cfg.iterations

    for k in range(cfg.iterations):
        if k == R:
            iterate_R = phi.copy()
        batch = []
        while len(batch) < min(cfg.batch_size, len(tr)):
            if pos == len(perm):
                perm, pos = rng_batch.permutation(len(tr)), 0
            batch.append(tr[perm[pos]])
            pos += 1
        r = cfg.radius(k)
        probe = phi + r * _unit_ball(rng_pert, n_par) if r > 0 else phi
        set_flat_params(model, probe)
        g = np.zeros(n_par)
        batch_loss = 0.0
        for s in batch:
            v, _, grads = sample_loss(model, network, s, loss)
            batch_loss += v
            g += flat_grads(grads)
        g /= len(batch)
        trace.append(batch_loss / len(batch))
        if not math.isfinite(trace[-1]):
            raise NonfiniteLoss(f"nonfinite loss at iteration {k}")
        if cfg.beta:
            g += cfg.beta * flat_grads(regularizer(model, network)[1])
        if not np.all(np.isfinite(g)):
            raise NonfiniteLoss(f"nonfinite gradient at iteration {k}")
        phi = phi - alphas[k] * (g + cfg.weight_decay * phi)
        set_flat_params(model, phi)
        if (k + 1) % cfg.eval_every == 0 and k + 1 < cfg.iterations:
            train_trace.append((k + 1, mean_loss(model, network, tr, loss)))
        if hold and (k + 1) % cfg.eval_every == 0:
            h = mean_loss(model, network, hold, loss)
            hold_trace.append(h)
            if h < best_hold:
                best_hold, best_phi, since_best = h, phi.copy(), 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    stopped = k + 1
                    break

    if hold and stopped < cfg.iterations:
        phi = best_phi
        set_flat_params(model, phi)
    train_trace.append((stopped, mean_loss(model, network, tr, loss)))
    model_R = None
    if iterate_R is not None:
        model_R = model.copy()
        set_flat_params(model_R, iterate_R)
    return TrainResult(model, trace, R, model_R, cfg.stationarity_scale, hold_trace, stopped, train_trace)


def fit_radius(rho_model: RadiusModel, thetas, targets, epochs=200, lr=0.01, batch_size=32, seed=0):
    """Fit the radius net by mean absolute error with mini-batch Adam.

    Sign gradients of the absolute error have constant magnitude, so plain
    SGD keeps bouncing around the fit; Adam's per-parameter scaling settles.
    Returns the fitted model (a copy) and the per-epoch MAE trace.
    """
    X = np.asarray(thetas, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDataset("no radius training pairs")
    if np.any(y < 0):
        raise ValueError("radius targets must be nonnegative")
    model = RadiusModel.from_json(rho_model.to_json())
    net = model.rho_net
    rng = rng_for(seed, "radius-batches")
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = [np.zeros_like(p) for p in net.params()]
    v = [np.zeros_like(p) for p in net.params()]
    t = 0
    trace = []
    n = len(y)
    for ep in range(epochs):
        perm = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = perm[i:i + batch_size]
            out, tape = net.forward(X[idx], cache=True)
            g_out = np.sign(out[:, 0] - y[idx])[:, None] / len(idx)
            _, grads = net.backward(tape, g_out)
            t += 1
            for p, gp, mp, vp in zip(net.params(), grads, m, v):
                mp *= b1
                mp += (1 - b1) * gp
                vp *= b2
                vp += (1 - b2) * gp * gp
                p -= lr * (mp / (1 - b1**t)) / (np.sqrt(vp / (1 - b2**t)) + eps)
        trace.append(float(np.mean(np.abs(net.forward(X)[:, 0] - y))))
    return model, trace
