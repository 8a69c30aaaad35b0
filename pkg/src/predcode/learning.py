"""Learning phase: weight and covariance updates at the relaxed activities,
and the alternating (EM-style) mini-batch training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, one_hot
from .errors import ConfigurationError, NumericError, ShapeError
from .inference import ClampSpec, InferenceConfig, run_inference
from .model import SIGMA_FLOOR, NetworkState, PCNetwork, batch_outer_mean, count_ops, preactivation


@dataclass(frozen=True)
class LearningConfig:
    eta: float = 0.01
    sigma_step: float = 0.0
    sigma_floor: float = SIGMA_FLOOR
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be positive, got {self.eta}")
        if self.sigma_step < 0:
            raise ConfigurationError(f"sigma_step must be non-negative, got {self.sigma_step}")
        if not self.sigma_floor >= 1e-8:
            raise ConfigurationError(f"sigma_floor must be at least 1e-8, got {self.sigma_floor}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")


def nfe_grad_theta(net: PCNetwork, state: NetworkState, layer: int) -> np.ndarray:
    """``(f'(theta phi) * eps[layer-1]) phi[layer]^T``, averaged over the batch."""
    theta = net.theta(layer)
    phi = state.phi[layer]
    gated = net.act(layer).derivative(preactivation(theta, phi)) * state.eps[layer - 1]
    return batch_outer_mean(gated, phi)


def nfe_grad_sigma(net: PCNetwork, state: NetworkState, layer: int) -> np.ndarray:
    """``0.5 (eps eps^T - Sigma^{-1})`` averaged over the batch.

    Diagonal layers get only the diagonal, as a vector.
    """
    if not 0 <= layer <= net.depth:
        raise IndexError(f"layer {layer} outside 0..{net.depth}")
    cov = net.covs[layer]
    eps = state.eps[layer]
    if cov.ndim == 1:
        return 0.5 * (np.mean(eps * eps, axis=0) - 1.0 / cov)
    return 0.5 * (batch_outer_mean(eps, eps) - np.linalg.inv(cov))


def project_cov(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clip variances (or eigenvalues, after symmetrising) to at least ``floor``."""
    if cov.ndim == 1:
        return np.maximum(cov, floor)
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    out = (vecs * np.maximum(vals, floor)) @ vecs.T
    return 0.5 * (out + out.T)


def em_update(net: PCNetwork, state: NetworkState, cfg: LearningConfig) -> PCNetwork:
    """One gradient step on the generative parameters at fixed activities.

    The prior covariance (top layer) is never learned.
    """
    weights = []
    for l in range(1, net.depth + 1):
        g = nfe_grad_theta(net, state, l)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite weight gradient at map {l}", layer=l)
        weights.append(net.theta(l) + cfg.eta * g)
    covs = list(net.covs)
    if cfg.sigma_step > 0:
        for l in range(net.depth):
            g = nfe_grad_sigma(net, state, l)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite covariance gradient at layer {l}", layer=l)
            covs[l] = project_cov(net.covs[l] + cfg.sigma_step * g, cfg.sigma_floor)
    return net.replace(weights=tuple(weights), covs=tuple(covs))


def em_step(
    net: PCNetwork,
    clamp: ClampSpec,
    inf_cfg: InferenceConfig,
    lrn_cfg: LearningConfig,
    init: str = "feedforward",
) -> tuple[PCNetwork, float]:
    """Relax activities for a batch, then take one step on the weights.

    Returns the updated network and the mean NFE at the relaxed activities.
    """
    if clamp.batch_size() < 1:
        raise ConfigurationError("empty batch")
    result = run_inference(net, clamp, inf_cfg, init=init)
    return em_update(net, result.state, lrn_cfg), result.nfe


@dataclass
class EpochRecord:
    epoch: int
    nfe: float
    metric: float
    steps: float
    seconds: float
    ops: int


@dataclass
class TrainReport:
    task: str
    metric_name: str
    records: list[EpochRecord] = field(default_factory=list)

    COLUMNS = ("epoch", "nfe", "metric", "steps", "seconds", "ops")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch, repr(r.nfe), repr(r.metric), repr(r.steps), f"{r.seconds:.3f}", r.ops])

    @property
    def final_metric(self) -> float:
        return self.records[-1].metric if self.records else float("nan")


def classify_clamp(net: PCNetwork, inputs: np.ndarray, labels: np.ndarray) -> ClampSpec:
    return ClampSpec(bottom=one_hot(labels, net.dims[0]), top=inputs)


def predict_labels(net: PCNetwork, inputs: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Argmax of the pure top-down pass with the input at the top layer."""
    out = [np.argmax(net.generative_pass(inputs[i : i + chunk])[0], axis=1) for i in range(0, len(inputs), chunk)]
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def accuracy(net: PCNetwork, data: Dataset) -> float:
    return float(np.mean(predict_labels(net, data.inputs) == data.labels))


def encode(net: PCNetwork, inputs: np.ndarray, inf_cfg: InferenceConfig, init: str = "feedforward") -> np.ndarray:
    """Top-layer code obtained by inference with the stimulus clamped at the bottom."""
    return run_inference(net, ClampSpec(bottom=inputs), inf_cfg, init=init).state.phi[net.depth]


def reconstruct(net: PCNetwork, inputs: np.ndarray, inf_cfg: InferenceConfig, chunk: int = 2048) -> np.ndarray:
    """Decode the relaxed top-layer code with a pure generative pass."""
    parts = []
    for i in range(0, len(inputs), chunk):
        code = encode(net, inputs[i : i + chunk], inf_cfg)
        parts.append(net.generative_pass(code)[0])
    return np.concatenate(parts)


def reconstruction_mse(net: PCNetwork, data: Dataset, inf_cfg: InferenceConfig) -> float:
    return float(np.mean((reconstruct(net, data.inputs, inf_cfg) - data.inputs) ** 2))


def train(
    net: PCNetwork,
    dataset: Dataset,
    task: str,
    inf_cfg: InferenceConfig,
    lrn_cfg: LearningConfig,
    eval_set: Dataset | None = None,
    eval_inf_cfg: InferenceConfig | None = None,
    on_epoch=None,
    eval_every: int = 1,
) -> tuple[PCNetwork, TrainReport]:
    """Shuffled mini-batch epochs of :func:`em_step`.

    ``classify`` clamps inputs at the top and one-hot labels at the bottom;
    the metric is argmax accuracy of the pure top-down pass.  ``compress``
    clamps inputs at the bottom and leaves the top free; the metric is the
    mean squared error of decoding the relaxed top-layer code.  Metrics are
    measured on ``eval_set`` when given, else on ``dataset``, every
    ``eval_every`` epochs and after the last one; skipped epochs record NaN.
    """
    if task not in ("classify", "compress"):
        raise ConfigurationError(f"unknown task {task!r}")
    if len(dataset) == 0:
        raise ConfigurationError("empty dataset")
    L = net.depth
    if task == "classify":
        if dataset.labels is None:
            raise ConfigurationError("classification needs labels")
        if dataset.features != net.dims[L] or dataset.classes > net.dims[0]:
            raise ShapeError(
                f"network ends {net.dims[L]} (input) / {net.dims[0]} (classes) do not fit "
                f"{dataset.features} features / {dataset.classes} classes"
            )
    elif dataset.features != net.dims[0]:
        raise ShapeError(f"network bottom width {net.dims[0]} != {dataset.features} features")

    evaluation = eval_set if eval_set is not None else dataset
    eval_inf_cfg = eval_inf_cfg or inf_cfg
    rng = np.random.default_rng(lrn_cfg.seed)
    report = TrainReport(task, "accuracy" if task == "classify" else "mse")
    ops_per_sample = count_ops(net, task, inf_cfg.max_steps)

    for epoch in range(1, lrn_cfg.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(dataset))
        nfes, steps, weights = [], [], []
        for i in range(0, len(order), lrn_cfg.batch_size):
            idx = order[i : i + lrn_cfg.batch_size]
            x = dataset.inputs[idx]
            if task == "classify":
                clamp = classify_clamp(net, x, dataset.labels[idx])
            else:
                clamp = ClampSpec(bottom=x)
            result = run_inference(net, clamp, inf_cfg)
            net = em_update(net, result.state, lrn_cfg)
            nfes.append(result.nfe)
            steps.append(result.steps)
            weights.append(len(idx))
        if epoch % max(eval_every, 1) and epoch != lrn_cfg.epochs:
            metric = float("nan")
        elif task == "classify":
            metric = accuracy(net, evaluation)
        else:
            metric = reconstruction_mse(net, evaluation, eval_inf_cfg)
        record = EpochRecord(
            epoch=epoch,
            nfe=float(np.average(nfes, weights=weights)),
            metric=metric,
            steps=float(np.average(steps, weights=weights)),
            seconds=time.perf_counter() - start,
            ops=ops_per_sample * len(dataset),
        )
        report.records.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return net, report
