"""Inference phase: gradient ascent of the negative free energy over activities."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ConvergenceWarning, ShapeError
from .model import NetworkState, PCNetwork, backproject, make_state, nfe_per_sample, preactivation, refresh_state


@dataclass(frozen=True)
class InferenceConfig:
    """Euler-scheme settings.

    ``step`` is the product of rate and time resolution.  ``grad_tol`` is an
    infinity-norm threshold on the activity gradients of free layers.
    """

    step: float = 0.1
    max_steps: int = 100
    grad_tol: float = 1e-6
    monotone_guard: bool = False
    record_trace: bool = False
    max_halvings: int = 60

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigurationError(f"step must be positive, got {self.step}")
        if self.max_steps < 1:
            raise ConfigurationError(f"max_steps must be at least 1, got {self.max_steps}")
        if self.grad_tol < 0:
            raise ConfigurationError(f"grad_tol must be non-negative, got {self.grad_tol}")


@dataclass(frozen=True, eq=False)
class ClampSpec:
    """Values pinned at the bottom (stimulus) and/or top (input) layer."""

    bottom: np.ndarray | None = None
    top: np.ndarray | None = None

    def flags(self, depth: int) -> tuple[bool, ...]:
        flags = [False] * (depth + 1)
        flags[0] = self.bottom is not None
        flags[depth] = flags[depth] or self.top is not None
        return tuple(flags)

    def batch_size(self) -> int:
        sizes = {np.atleast_2d(v).shape[0] for v in (self.bottom, self.top) if v is not None}
        if len(sizes) > 1:
            raise ShapeError(f"clamped batches disagree in size: {sorted(sizes)}")
        return sizes.pop() if sizes else 1


@dataclass(eq=False)
class InferenceResult:
    state: NetworkState
    steps: int
    nfe: float
    grad_norm: float
    converged: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "nfe", "grad_norm"])
            for row in self.trace:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])


def nfe_grad_phi(net: PCNetwork, state: NetworkState, layer: int) -> np.ndarray:
    """Gradient of the negative free energy w.r.t. the activity of ``layer``.

    For ``layer >= 1`` this is ``J^T eps[layer-1] - eps[layer]`` where ``J`` is
    the Jacobian of the map ``layer -> layer-1``; for elementwise activations
    ``J^T v = theta^T (f'(theta phi) * v)``.  Layer 0 has nothing below it.
    """
    L = net.depth
    if not 0 <= layer <= L:
        raise IndexError(f"layer {layer} outside 0..{L}")
    if layer == 0:
        return -state.eps[0]
    theta = net.theta(layer)
    z = preactivation(theta, state.phi[layer])
    bottom_up = backproject(theta, net.act(layer).derivative(z) * state.eps[layer - 1])
    return bottom_up - state.eps[layer]


def _free_grads(net: PCNetwork, state: NetworkState) -> dict[int, np.ndarray]:
    return {l: nfe_grad_phi(net, state, l) for l in range(net.depth + 1) if not state.clamp[l]}


def _grad_norm(grads: dict[int, np.ndarray], batch: int) -> np.ndarray:
    norm = np.zeros(batch)
    for g in grads.values():
        if g.shape[1]:
            norm = np.maximum(norm, np.max(np.abs(g), axis=1))
    return norm


def _euler(net, state, grads, step_rows, rows):
    phi = list(state.phi)
    for l, g in grads.items():
        moved = phi[l] + step_rows[:, None] * g
        phi[l] = np.where(rows[:, None], moved, phi[l])
    return refresh_state(net, NetworkState(phi=tuple(phi), clamp=state.clamp))


def _guarded_advance(net, state, grads, step_rows, rows, cfg, before):
    """Euler step with per-sample halving until no sample loses NFE."""
    step_rows = step_rows.copy()
    rows = rows.copy()
    for _ in range(cfg.max_halvings + 1):
        candidate = _euler(net, state, grads, step_rows, rows)
        after = nfe_per_sample(net, candidate)
        bad = rows & (after < before - 1e-12)
        if not bad.any():
            return candidate, step_rows
        step_rows[bad] *= 0.5
    # give up on rows that still lose NFE: they stay where they were
    rows &= ~bad
    return _euler(net, state, grads, step_rows, rows), step_rows


def inference_step(net: PCNetwork, state: NetworkState, cfg: InferenceConfig) -> NetworkState:
    """One synchronous Euler update of every free layer; clamped layers are untouched."""
    if not state.eps:
        state = refresh_state(net, state)
    grads = _free_grads(net, state)
    batch = state.batch_size
    step_rows = np.full(batch, cfg.step)
    rows = np.ones(batch, dtype=bool)
    if cfg.monotone_guard:
        new, _ = _guarded_advance(net, state, grads, step_rows, rows, cfg, nfe_per_sample(net, state))
        return new
    return _euler(net, state, grads, step_rows, rows)


def initial_state(
    net: PCNetwork,
    clamp: ClampSpec,
    init: str = "feedforward",
    given: Sequence[np.ndarray] | NetworkState | None = None,
) -> NetworkState:
    """Starting activities with the clamped values already in place.

    ``feedforward`` runs the top-down pass from the topmost known layer: the
    clamped top in the supervised setting, the prior mean otherwise.
    """
    L = net.depth
    flags = clamp.flags(L)
    if not any(flags):
        raise ConfigurationError("at least one layer must be clamped")
    batch = clamp.batch_size()
    bottom = None if clamp.bottom is None else np.atleast_2d(np.asarray(clamp.bottom, dtype=float))
    top = None if clamp.top is None else np.atleast_2d(np.asarray(clamp.top, dtype=float))
    if bottom is not None and bottom.shape[1] != net.dims[0]:
        raise ShapeError(f"bottom clamp width {bottom.shape[1]} != dims[0] = {net.dims[0]}")
    if top is not None and top.shape[1] != net.dims[L]:
        raise ShapeError(f"top clamp width {top.shape[1]} != dims[L] = {net.dims[L]}")

    if init == "feedforward":
        start = top if top is not None else np.tile(net.prior_mean, (batch, 1))
        phi = net.generative_pass(start)
    elif init == "zeros":
        phi = [np.zeros((batch, d)) for d in net.dims]
    elif init == "given":
        if given is None:
            raise ConfigurationError("init='given' needs initial activities")
        src = given.phi if isinstance(given, NetworkState) else given
        phi = [np.atleast_2d(np.array(p, dtype=float)) for p in src]
    else:
        raise ConfigurationError(f"unknown init {init!r}")
    phi = [np.array(p, dtype=float) for p in phi]
    if bottom is not None:
        phi[0] = bottom.copy()
    if top is not None:
        phi[L] = top.copy()
    return make_state(net, phi, flags)


def run_inference(
    net: PCNetwork,
    clamp: ClampSpec,
    cfg: InferenceConfig = InferenceConfig(),
    init: str = "feedforward",
    given: Sequence[np.ndarray] | NetworkState | None = None,
    warn: bool = False,
) -> InferenceResult:
    """Relax free activities towards the NFE maximum.

    Every sample stops moving once its own gradient norm falls below
    ``grad_tol``, so a batch behaves like independent per-sample runs.
    """
    state = initial_state(net, clamp, init, given)
    batch = state.batch_size
    step_rows = np.full(batch, cfg.step)
    want_nfe = cfg.monotone_guard or cfg.record_trace
    current = nfe_per_sample(net, state) if want_nfe else None
    trace: list[tuple[int, float, float]] = []

    steps = 0
    grads = _free_grads(net, state)
    norm = _grad_norm(grads, batch)
    while True:
        active = norm >= cfg.grad_tol
        if cfg.record_trace:
            trace.append((steps, float(np.mean(current)), float(norm.max(initial=0.0))))
        if not active.any() or steps >= cfg.max_steps:
            break
        if cfg.monotone_guard:
            state, step_rows = _guarded_advance(net, state, grads, step_rows, active, cfg, current)
        else:
            state = _euler(net, state, grads, step_rows, active)
        if want_nfe:
            current = nfe_per_sample(net, state)
        steps += 1
        grads = _free_grads(net, state)
        norm = _grad_norm(grads, batch)

    converged = bool(np.all(norm < cfg.grad_tol))
    if warn and not converged:
        warnings.warn(
            f"inference stopped after {steps} steps with gradient norm {norm.max():.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    value = float(np.mean(current)) if current is not None else float(np.mean(nfe_per_sample(net, state)))
    return InferenceResult(
        state=state,
        steps=steps,
        nfe=value,
        grad_norm=float(norm.max(initial=0.0)),
        converged=converged,
        trace=trace,
    )
