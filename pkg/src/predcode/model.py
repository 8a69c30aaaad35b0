"""Hierarchical Gaussian generative model with a point-mass variational posterior.

Layer 0 is the bottom of the hierarchy (the stimulus), layer ``L`` the top
(the prior).  ``weights[l - 1]`` holds the matrix that maps layer ``l`` down
to layer ``l - 1``, so it has shape ``(dims[l - 1], dims[l])``.  Each layer
carries a covariance that is either a vector of variances (diagonal mode,
the default) or a full symmetric matrix; ``covs[L]`` is the prior covariance.

Variational parameters are batched: every array in a :class:`NetworkState`
has shape ``(batch, width)`` while the generative parameters are shared.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .activations import Activation
from .errors import PrecisionError, ShapeError

SIGMA_FLOOR = 1e-4
CHECKPOINT_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


def preactivation(weights: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``weights @ x`` for a vector, or row-wise for a ``(batch, width)`` array.

    Contractions go through unoptimised ``einsum`` rather than BLAS so each
    row is computed the same way whatever the batch size; a sample's result
    never depends on which other samples share its batch.
    """
    weights = np.asarray(weights, dtype=float)
    x = np.asarray(x, dtype=float)
    if weights.ndim != 2 or x.ndim not in (1, 2) or weights.shape[1] != x.shape[-1]:
        raise ShapeError(f"weights of shape {weights.shape} cannot act on an operand of shape {x.shape}")
    if x.ndim == 1:
        return np.einsum("ij,j->i", weights, x)
    return np.einsum("bj,ij->bi", x, weights)


def backproject(weights: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``weights.T @ v`` row-wise, batch-size independent like :func:`preactivation`."""
    if v.ndim == 1:
        return np.einsum("ij,i->j", weights, v)
    return np.einsum("bi,ij->bj", v, weights)


def batch_outer_mean(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean over rows of ``outer(a[k], b[k])``; a duplicated row averages exactly."""
    return np.mean(a[:, :, None] * b[:, None, :], axis=0)


def layer_prediction(weights: np.ndarray, phi_above: np.ndarray, act: Activation | str) -> np.ndarray:
    """Top-down prediction ``f(weights @ phi_above)``.

    ``phi_above`` may be a single vector or a ``(batch, width)`` array.
    """
    return Activation.parse(act).apply(preactivation(weights, phi_above))


def _check_cov(cov: np.ndarray, width: int, layer: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim == 1:
        if cov.shape != (width,):
            raise ShapeError(f"layer {layer}: variances of shape {cov.shape}, expected ({width},)")
        if not np.all(cov > 0):
            raise PrecisionError(f"layer {layer}: non-positive variance (min {cov.min():.3g})")
    elif cov.ndim == 2:
        if cov.shape != (width, width):
            raise ShapeError(f"layer {layer}: covariance of shape {cov.shape}, expected {(width, width)}")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise PrecisionError(f"layer {layer}: covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise PrecisionError(f"layer {layer}: covariance is not positive definite") from None
    else:
        raise ShapeError(f"layer {layer}: covariance must be 1-D or 2-D, got {cov.ndim}-D")
    return cov


def apply_precision(cov: np.ndarray, residual: np.ndarray) -> np.ndarray:
    """``Sigma^{-1} r`` for a batch of residual rows."""
    if cov.ndim == 1:
        return residual / cov
    return np.linalg.solve(cov, residual.T).T


def logdet(cov: np.ndarray) -> float:
    if cov.ndim == 1:
        return float(np.sum(np.log(cov)))
    sign, value = np.linalg.slogdet(cov)
    if sign <= 0:
        raise PrecisionError("covariance has non-positive determinant")
    return float(value)


@dataclass(frozen=True, eq=False)
class PCNetwork:
    """Generative parameters of a predictive coding hierarchy.

    ``output_activation`` is used by the bottom map (layer 1 -> layer 0) and
    defaults to ``activation``, so an unqualified network shares one
    activation across every map.
    """

    dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    covs: tuple[np.ndarray, ...]
    prior_mean: np.ndarray
    activation: Activation = Activation.TANH
    output_activation: Activation | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeError(f"need at least two positive layer widths, got {dims}")
        L = len(dims) - 1
        weights = tuple(np.array(w, dtype=float) for w in self.weights)
        if len(weights) != L:
            raise ShapeError(f"{len(weights)} weight matrices for {L} maps")
        for l in range(1, L + 1):
            if weights[l - 1].shape != (dims[l - 1], dims[l]):
                raise ShapeError(
                    f"weights for map {l}->{l - 1} have shape {weights[l - 1].shape}, "
                    f"expected {(dims[l - 1], dims[l])}"
                )
        if len(self.covs) != L + 1:
            raise ShapeError(f"{len(self.covs)} covariances for {L + 1} layers")
        covs = tuple(_check_cov(c, dims[l], l) for l, c in enumerate(self.covs))
        prior_mean = np.array(self.prior_mean, dtype=float).reshape(-1)
        if prior_mean.shape != (dims[L],):
            raise ShapeError(f"prior mean of shape {prior_mean.shape}, expected ({dims[L]},)")
        act = Activation.parse(self.activation)
        out_act = act if self.output_activation is None else Activation.parse(self.output_activation)
        set_ = object.__setattr__
        set_(self, "dims", dims)
        set_(self, "weights", weights)
        set_(self, "covs", covs)
        set_(self, "prior_mean", prior_mean)
        set_(self, "activation", act)
        set_(self, "output_activation", out_act)

    @property
    def depth(self) -> int:
        """Number of generative maps ``L``."""
        return len(self.dims) - 1

    @property
    def prior_cov(self) -> np.ndarray:
        return self.covs[-1]

    def theta(self, layer: int) -> np.ndarray:
        """Matrix mapping ``layer`` down to ``layer - 1``."""
        if not 1 <= layer <= self.depth:
            raise IndexError(f"map index {layer} outside 1..{self.depth}")
        return self.weights[layer - 1]

    def act(self, layer: int) -> Activation:
        """Activation of the map from ``layer`` to ``layer - 1``."""
        return self.output_activation if layer == 1 else self.activation

    def replace(self, **changes) -> "PCNetwork":
        return dataclasses.replace(self, **changes)

    def with_theta(self, layer: int, value: np.ndarray) -> "PCNetwork":
        weights = list(self.weights)
        weights[layer - 1] = value
        return self.replace(weights=tuple(weights))

    def with_cov(self, layer: int, value: np.ndarray) -> "PCNetwork":
        covs = list(self.covs)
        covs[layer] = value
        return self.replace(covs=tuple(covs))

    def n_generative_params(self) -> int:
        return sum(w.size for w in self.weights)

    def checksum(self) -> str:
        """SHA-256 over the weight bytes, used to confirm shared initialisation."""
        h = hashlib.sha256()
        for w in self.weights:
            h.update(np.ascontiguousarray(w, dtype="<f8").tobytes())
        return h.hexdigest()

    def generative_pass(self, top: np.ndarray, from_layer: int | None = None) -> list[np.ndarray]:
        """Pure top-down pass.

        Starting with ``top`` at ``from_layer`` (default ``L``), returns the list
        of activities for layers ``0..from_layer``.
        """
        k = self.depth if from_layer is None else from_layer
        acts: list[np.ndarray] = [None] * (k + 1)  # type: ignore[list-item]
        acts[k] = np.asarray(top, dtype=float)
        for l in range(k, 0, -1):
            acts[l - 1] = layer_prediction(self.theta(l), acts[l], self.act(l))
        return acts


def init_network(
    dims: Sequence[int],
    activation: Activation | str = Activation.TANH,
    output_activation: Activation | str | None = None,
    *,
    rng: np.random.Generator | int | None = 0,
    variance: float = 1.0,
    prior_var: float = 1.0,
    prior_mean: np.ndarray | float = 0.0,
) -> PCNetwork:
    """Build a network with scaled-uniform weights, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.

    The same initialiser backs the backprop reference so that both models
    start from identical weights for a given seed.
    """
    rng = np.random.default_rng(rng)
    dims = tuple(int(d) for d in dims)
    weights = []
    for l in range(1, len(dims)):
        bound = 1.0 / math.sqrt(dims[l])
        weights.append(rng.uniform(-bound, bound, size=(dims[l - 1], dims[l])))
    covs = [np.full(d, float(variance)) for d in dims[:-1]] + [np.full(dims[-1], float(prior_var))]
    return PCNetwork(
        dims=dims,
        weights=tuple(weights),
        covs=tuple(covs),
        prior_mean=np.broadcast_to(np.asarray(prior_mean, dtype=float), (dims[-1],)).copy(),
        activation=Activation.parse(activation),
        output_activation=None if output_activation is None else Activation.parse(output_activation),
    )


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Variational parameters with cached predictions and error nodes."""

    phi: tuple[np.ndarray, ...]
    mu: tuple[np.ndarray, ...] = field(default=())
    eps: tuple[np.ndarray, ...] = field(default=())
    clamp: tuple[bool, ...] = field(default=())

    @property
    def batch_size(self) -> int:
        return self.phi[0].shape[0]

    def with_phi(self, phi: Sequence[np.ndarray]) -> "NetworkState":
        return NetworkState(phi=tuple(phi), mu=(), eps=(), clamp=self.clamp)


def make_state(net: PCNetwork, phi: Sequence[np.ndarray], clamp: Sequence[bool] | None = None) -> NetworkState:
    """Wrap per-layer activities into a refreshed state.

    1-D vectors are promoted to a batch of one.
    """
    if len(phi) != len(net.dims):
        raise ShapeError(f"{len(phi)} activity arrays for {len(net.dims)} layers")
    rows = [np.atleast_2d(np.array(p, dtype=float)) for p in phi]
    batch = rows[0].shape[0]
    for l, p in enumerate(rows):
        if p.ndim != 2 or p.shape != (batch, net.dims[l]):
            raise ShapeError(f"layer {l}: activity of shape {p.shape}, expected {(batch, net.dims[l])}")
    clamp = tuple(bool(c) for c in clamp) if clamp is not None else (False,) * len(rows)
    if len(clamp) != len(rows):
        raise ShapeError(f"{len(clamp)} clamp flags for {len(rows)} layers")
    return refresh_state(net, NetworkState(phi=tuple(rows), clamp=clamp))


def refresh_state(net: PCNetwork, state: NetworkState) -> NetworkState:
    """Recompute predictions and error nodes from ``state.phi``."""
    L = net.depth
    phi = state.phi
    if len(phi) != L + 1:
        raise ShapeError(f"{len(phi)} activity arrays for {L + 1} layers")
    batch = phi[0].shape[0]
    for l, p in enumerate(phi):
        if p.shape != (batch, net.dims[l]):
            raise ShapeError(f"layer {l}: activity of shape {p.shape}, expected {(batch, net.dims[l])}")
    mu: list[np.ndarray] = [None] * (L + 1)  # type: ignore[list-item]
    mu[L] = np.broadcast_to(net.prior_mean, (batch, net.dims[L]))
    for l in range(L, 0, -1):
        mu[l - 1] = layer_prediction(net.theta(l), phi[l], net.act(l))
    eps = tuple(apply_precision(net.covs[l], phi[l] - mu[l]) for l in range(L + 1))
    clamp = state.clamp if state.clamp else (False,) * (L + 1)
    return NetworkState(phi=phi, mu=tuple(mu), eps=eps, clamp=clamp)


def nfe_per_sample(net: PCNetwork, state: NetworkState, drop_constants: bool = True) -> np.ndarray:
    """Negative free energy of every sample in the batch."""
    if not state.eps:
        state = refresh_state(net, state)
    total = np.zeros(state.batch_size)
    for l in range(net.depth + 1):
        residual = state.phi[l] - state.mu[l]
        total -= 0.5 * (logdet(net.covs[l]) + np.sum(residual * state.eps[l], axis=1))
        if not drop_constants:
            total -= 0.5 * net.dims[l] * _LOG_2PI
    return total


def nfe(net: PCNetwork, state: NetworkState, drop_constants: bool = True) -> float:
    """Negative free energy, averaged over the batch."""
    return float(np.mean(nfe_per_sample(net, state, drop_constants)))


def op_breakdown(net: PCNetwork, task: str, steps: int) -> dict[str, int]:
    """Multiply-accumulate counts for one full parameter update.

    Counting model, matrix products only (elementwise work is ignored):

    * forward: one top-down pass, ``sum_l d[l-1] * d[l]``.
    * inference, per step: every prediction is recomputed (one forward
      pass) and errors are projected up through ``theta(l).T`` for each map
      whose upper layer is free.  In ``classify`` both ends are clamped so
      maps ``1..L-1`` project; in ``compress`` the top is free so all ``L`` do.
    * learning: one outer product per map, again ``sum_l d[l-1] * d[l]``.
    """
    if task not in ("classify", "compress"):
        raise ValueError(f"unknown task {task!r}")
    sizes = [net.dims[l - 1] * net.dims[l] for l in range(1, net.depth + 1)]
    forward = sum(sizes)
    free_maps = sizes[:-1] if task == "classify" else sizes
    per_step = forward + sum(free_maps)
    return {"forward": forward, "inference": steps * per_step, "learning": forward}


def count_ops(net: PCNetwork, task: str = "classify", steps: int = 0) -> int:
    return sum(op_breakdown(net, task, steps).values())


def save_checkpoint(net: PCNetwork, path: str | Path) -> None:
    """Write the network to a single ``.npz`` container (64-bit floats, row-major)."""
    arrays: dict[str, np.ndarray] = {
        "format_version": np.array(CHECKPOINT_VERSION, dtype=np.int64),
        "dims": np.array(net.dims, dtype=np.int64),
        "prior_mean": net.prior_mean.astype("<f8"),
        "activation": np.array(net.activation.value),
        "output_activation": np.array(net.output_activation.value),
    }
    for l, w in enumerate(net.weights, start=1):
        arrays[f"theta_{l}"] = np.ascontiguousarray(w, dtype="<f8")
    for l, c in enumerate(net.covs):
        arrays[f"cov_{l}"] = np.ascontiguousarray(c, dtype="<f8")
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> PCNetwork:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        dims = tuple(int(d) for d in data["dims"])
        L = len(dims) - 1
        return PCNetwork(
            dims=dims,
            weights=tuple(data[f"theta_{l}"] for l in range(1, L + 1)),
            covs=tuple(data[f"cov_{l}"] for l in range(L + 1)),
            prior_mean=data["prior_mean"],
            activation=Activation(str(data["activation"])),
            output_activation=Activation(str(data["output_activation"])),
        )
