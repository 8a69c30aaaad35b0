"""Backpropagation reference MLP and the PC-versus-BP gradient comparison.

The MLP uses the conventional increasing index: ``y[0]`` is the input and
``y[k + 1] = f(W[k] y[k])``.  A predictive coding network in the supervised
setting holds the input at its top layer ``L`` and the target at layer 0, so
``W[k]`` is the PC matrix ``theta(L - k)``.  :func:`from_pc` and :func:`to_pc`
are the only places that flip between the two conventions.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .activations import Activation
from .errors import ShapeError
from .inference import ClampSpec, InferenceConfig, run_inference
from .learning import nfe_grad_theta
from .model import PCNetwork, backproject, batch_outer_mean, init_network, preactivation


@dataclass(frozen=True, eq=False)
class MLPReference:
    weights: tuple[np.ndarray, ...]
    activation: Activation = Activation.TANH
    output_activation: Activation | None = None

    def __post_init__(self):
        weights = tuple(np.array(w, dtype=float) for w in self.weights)
        for k in range(1, len(weights)):
            if weights[k].shape[1] != weights[k - 1].shape[0]:
                raise ShapeError(f"layer {k} expects width {weights[k].shape[1]}, previous layer gives {weights[k - 1].shape[0]}")
        act = Activation.parse(self.activation)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "activation", act)
        object.__setattr__(
            self, "output_activation", act if self.output_activation is None else Activation.parse(self.output_activation)
        )

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def act(self, k: int) -> Activation:
        """Activation applied after ``W[k]``."""
        return self.output_activation if k == len(self.weights) - 1 else self.activation


def from_pc(net: PCNetwork) -> MLPReference:
    L = net.depth
    return MLPReference(
        weights=tuple(net.theta(L - k) for k in range(L)),
        activation=net.activation,
        output_activation=net.output_activation,
    )


def to_pc(
    mlp: MLPReference,
    covs: Sequence[np.ndarray] | None = None,
    prior_mean: np.ndarray | None = None,
) -> PCNetwork:
    """Inverse of :func:`from_pc`; covariances default to identity."""
    L = len(mlp.weights)
    dims = tuple(reversed(mlp.sizes))
    return PCNetwork(
        dims=dims,
        weights=tuple(mlp.weights[L - l] for l in range(1, L + 1)),
        covs=tuple(covs) if covs is not None else tuple(np.ones(d) for d in dims),
        prior_mean=np.zeros(dims[-1]) if prior_mean is None else prior_mean,
        activation=mlp.activation,
        output_activation=mlp.output_activation,
    )


def init_mlp(sizes: Sequence[int], activation="tanh", output_activation=None, seed: int = 0) -> MLPReference:
    """Same initialiser (and random stream) as :func:`predcode.model.init_network`."""
    net = init_network(tuple(reversed(sizes)), activation, output_activation, rng=seed)
    return from_pc(net)


def bp_forward(mlp: MLPReference, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Pre-activations ``z`` (``z[0]`` is None) and activations ``y`` with ``y[0] = x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mlp.sizes[0]:
        raise ShapeError(f"input width {x.shape[-1]} != {mlp.sizes[0]}")
    zs: list = [None]
    ys = [x]
    for k, w in enumerate(mlp.weights):
        z = preactivation(w, ys[-1])
        zs.append(z)
        ys.append(mlp.act(k).apply(z))
    return zs, ys


def loss(mlp: MLPReference, x: np.ndarray, target: np.ndarray) -> float:
    """Least-squares loss ``0.5 ||y_L - target||^2`` (batch mean)."""
    out = bp_forward(mlp, x)[1][-1]
    sq = 0.5 * np.sum(np.atleast_2d((out - target) ** 2), axis=-1)
    return float(np.mean(sq))


def bp_backward(mlp: MLPReference, x: np.ndarray, target: np.ndarray) -> list[np.ndarray]:
    """Loss gradient for every ``W[k]``, batch-averaged for 2-D inputs.

    ``delta`` is the loss gradient w.r.t. a layer's pre-activation, so the
    output derivative ``f'(z_L)`` is included even for squashing outputs.
    """
    zs, ys = bp_forward(mlp, x)
    target = np.asarray(target, dtype=float)
    if target.shape != ys[-1].shape:
        raise ShapeError(f"target of shape {target.shape}, output has shape {ys[-1].shape}")
    batched = ys[0].ndim == 2
    n = len(mlp.weights)
    grads: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    delta = mlp.act(n - 1).derivative(zs[n]) * (ys[n] - target)
    for k in range(n - 1, -1, -1):
        grads[k] = batch_outer_mean(delta, ys[k]) if batched else np.outer(delta, ys[k])
        if k:
            back = backproject(mlp.weights[k], delta)
            delta = mlp.act(k - 1).derivative(zs[k]) * back
    return grads


def train_bp(
    mlp: MLPReference,
    inputs: np.ndarray,
    targets: np.ndarray,
    eta: float,
    batch_size: int,
    epochs: int,
    seed: int,
    on_epoch=None,
) -> MLPReference:
    """Plain mini-batch gradient descent on the least-squares loss."""
    rng = np.random.default_rng(seed)
    weights = list(mlp.weights)
    for epoch in range(1, epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(inputs))
        for i in range(0, len(order), batch_size):
            idx = order[i : i + batch_size]
            current = MLPReference(tuple(weights), mlp.activation, mlp.output_activation)
            grads = bp_backward(current, inputs[idx], targets[idx])
            weights = [w - eta * g for w, g in zip(weights, grads)]
        mlp = MLPReference(tuple(weights), mlp.activation, mlp.output_activation)
        if on_epoch is not None:
            on_epoch(epoch, mlp, time.perf_counter() - start)
    return mlp


def bp_op_count(mlp: MLPReference) -> int:
    """MACs for one update: forward, error backprop through ``W[1:]``, outer products."""
    sizes = [w.size for w in mlp.weights]
    return 2 * sum(sizes) + sum(sizes[1:])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, with two zero vectors counted as perfectly aligned."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(np.vdot(a, b) / (na * nb), -1.0, 1.0))


def relative_magnitude_error(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if nb == 0.0:
        return 0.0 if na == 0.0 else float("inf")
    return float(abs(na / nb - 1.0))


@dataclass(frozen=True)
class ComparisonRow:
    seed: int
    lam: float
    layer: int
    cosine: float
    rel_mag_err: float
    inference_steps: int
    converged: bool

    COLUMNS = ("seed", "lambda", "layer", "cosine", "rel_mag_err", "inference_steps")


COMPARE_INFERENCE = InferenceConfig(step=0.2, max_steps=20000, grad_tol=1e-12)


def compare_pc_bp(
    shared: PCNetwork,
    sample: np.ndarray,
    target: np.ndarray,
    lambdas: Sequence[float] = (1.0, 10.0, 100.0, 1000.0),
    inf_cfg: InferenceConfig = COMPARE_INFERENCE,
    seed: int = 0,
) -> list[ComparisonRow]:
    """Compare rescaled PC weight updates with BP descent directions.

    For each ``lam`` the output layer (PC layer 0) gets covariance
    ``lam * I`` while every other layer keeps identity.  PC relaxes with the
    input clamped at the top and the target at the bottom, starting from the
    feedforward pass; its weight update ``lam * dF/dtheta`` is compared with
    ``-dLoss/dW`` of the same weights.  ``layer`` is the PC map index.
    """
    L = shared.depth
    mlp = from_pc(shared)
    bp = bp_backward(mlp, np.atleast_2d(sample), np.atleast_2d(target))
    rows = []
    for lam in lambdas:
        covs = [np.full(shared.dims[0], float(lam))] + [np.ones(d) for d in shared.dims[1:]]
        net = shared.replace(covs=tuple(covs), prior_mean=np.zeros(shared.dims[L]))
        result = run_inference(net, ClampSpec(bottom=target, top=sample), inf_cfg)
        for l in range(1, L + 1):
            pc_update = lam * nfe_grad_theta(net, result.state, l)
            bp_update = -bp[L - l]
            rows.append(
                ComparisonRow(
                    seed=seed,
                    lam=float(lam),
                    layer=l,
                    cosine=cosine(pc_update, bp_update),
                    rel_mag_err=relative_magnitude_error(pc_update, bp_update),
                    inference_steps=result.steps,
                    converged=result.converged,
                )
            )
    return rows


def worst_by_lambda(rows: Sequence[ComparisonRow]) -> dict[float, tuple[float, float]]:
    """Per lambda: (minimum cosine over layers, maximum magnitude error over layers)."""
    out: dict[float, tuple[float, float]] = {}
    for r in rows:
        cos, mag = out.get(r.lam, (1.0, 0.0))
        out[r.lam] = (min(cos, r.cosine), max(mag, r.rel_mag_err))
    return out


def write_rows(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ComparisonRow.COLUMNS)
        for r in rows:
            writer.writerow([r.seed, repr(r.lam), r.layer, repr(r.cosine), repr(r.rel_mag_err), r.inference_steps])
