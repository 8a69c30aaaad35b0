"""Experiment configuration, drivers and deterministic CSV reporting.

Configuration files are flat ``key = value`` text; ``#`` starts a comment.
Every key is a field of :class:`ExperimentConfig`, so the dataclass doubles
as the schema and its defaults are the documented defaults.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import logging
import os
import tempfile
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable

import numpy as np

from . import bp, kalman
from .data import Dataset, default_data_dir, load_mnist, one_hot, repeated_vector, split, synth_blobs
from .errors import ConfigurationError
from .gradcheck import central_difference, relative_error, symmetric_difference
from .inference import ClampSpec, InferenceConfig, nfe_grad_phi
from .learning import LearningConfig, nfe_grad_sigma, nfe_grad_theta, train
from .model import PCNetwork, init_network, make_state, nfe

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("run_id", "epoch", "model", "metric", "value", "ops", "seconds")
TIMING_COLUMN = "seconds"
GRADCHECK_COLUMNS = ("seed", "activation", "quantity", "layer", "rel_err")
TASKS = ("classify", "compress", "bp-compare", "kf-track", "gradcheck")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).replace(" ", "").split(",") if t)


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "classify"
    seed: int = 0
    out: str = "metrics.csv"
    # data: blobs | repeat | idx (MNIST-format files under data_dir)
    dataset: str = "blobs"
    data_dir: str = ""
    train_subset: int = 0
    test_subset: int = 0
    blob_classes: int = 4
    blob_per_class: int = 250
    blob_dim: int = 16
    blob_spread: float = 0.1
    test_fraction: float = 0.2
    bias_unit: bool = True
    # network, widths bottom -> top; empty means the task default
    dims: tuple[int, ...] = ()
    hidden: tuple[int, ...] = ()
    code: int = 0
    activation: str = "tanh"
    output_activation: str = "identity"
    prior_var: float = 100.0
    # inference
    step: float = 0.1
    steps: int = 0
    grad_tol: float = 1e-6
    eval_steps: int = 500
    eval_tol: float = 1e-8
    eval_every: int = 1
    # learning
    eta: float = 0.05
    sigma_step: float = 0.0
    batch_size: int = 32
    epochs: int = 10
    with_bp: bool = False
    bp_eta: float = 0.05
    # bp-compare
    lambdas: tuple[float, ...] = (1.0, 10.0, 100.0, 1000.0)
    compare_dims: tuple[int, ...] = (4, 6, 6, 5)
    compare_nets: int = 10
    # kf-track
    kf_n: int = 2
    kf_m: int = 2
    kf_steps: int = 100
    system: str = ""
    observations: str = ""
    # gradcheck
    gradcheck_nets: int = 20

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}; choose from {', '.join(TASKS)}")
        if self.dataset not in ("blobs", "repeat", "idx"):
            raise ConfigurationError(f"unknown dataset {self.dataset!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")

    @property
    def inference_steps(self) -> int:
        """Training-time inference steps: 10 for classification, 35 for compression."""
        if self.steps:
            return self.steps
        return 35 if self.task == "compress" else 10

    def run_id(self) -> str:
        payload = repr(sorted((k, v) for k, v in dataclasses.asdict(self).items() if k != "out"))
        return hashlib.sha1(payload.encode()).hexdigest()[:12]


_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": lambda s: str(s).strip().lower() in ("1", "true", "yes", "on"),
    "tuple[int, ...]": _ints,
    "tuple[float, ...]": _floats,
}


def coerce(key: str, value) -> object:
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    if key not in types:
        raise ConfigurationError(f"unknown configuration key {key!r}")
    try:
        return _PARSERS[types[key]](value)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {value!r} ({exc})") from None


def read_config_file(path) -> dict[str, object]:
    values: dict[str, object] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = coerce(key, value)
    return values


def build_config(path=None, **overrides) -> ExperimentConfig:
    values = read_config_file(path) if path else {}
    for key, value in overrides.items():
        if value is not None:
            values[key] = coerce(key, value) if isinstance(value, str) else value
    return ExperimentConfig(**values)


@dataclass(frozen=True)
class MetricRecord:
    run_id: str
    epoch: int
    model: str
    metric: str
    value: float
    ops: int
    seconds: float

    def row(self) -> list[str]:
        return [self.run_id, str(self.epoch), self.model, self.metric, repr(float(self.value)), str(self.ops), f"{self.seconds:.3f}"]


def write_csv_atomic(path, header: Iterable[str], rows: Iterable[Iterable[object]]) -> None:
    """Write the whole file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(header))
            for row in rows:
                writer.writerow(list(row))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- data


def with_bias_unit(data: Dataset) -> Dataset:
    """Append a constant-one feature so the first map gets an affine offset."""
    ones = np.ones((len(data), 1))
    return Dataset(np.hstack([data.inputs, ones]), data.labels, data.name, data.split, data.classes)


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "idx":
        directory = cfg.data_dir or default_data_dir()
        if not directory:
            raise FileNotFoundError("dataset=idx needs data_dir (or the PREDCODE_DATA variable)")
        train_set, test_set = load_mnist(directory)
    elif cfg.dataset == "repeat":
        train_set = repeated_vector(cfg.blob_per_class, cfg.blob_dim, cfg.seed)
        test_set = train_set
    else:
        data = synth_blobs(cfg.blob_classes, cfg.blob_per_class, cfg.blob_dim, cfg.blob_spread, cfg.seed)
        train_set, test_set = split(data, cfg.test_fraction, cfg.seed)
    if cfg.train_subset:
        train_set = train_set.subset(cfg.train_subset)
    if cfg.test_subset:
        test_set = test_set.subset(cfg.test_subset)
    if cfg.task == "classify" and cfg.bias_unit:
        train_set, test_set = with_bias_unit(train_set), with_bias_unit(test_set)
    return train_set, test_set


def network_dims(cfg: ExperimentConfig, data: Dataset) -> tuple[int, ...]:
    """Layer widths bottom -> top.

    Defaults: MNIST-format data uses 128-128-128 hidden layers for
    classification and a 384-wide hidden layer with a 64-wide code for
    compression; synthetic data uses one 32-wide hidden layer.
    """
    if cfg.dims:
        return cfg.dims
    big = cfg.dataset == "idx"
    if cfg.task == "classify":
        hidden = cfg.hidden or ((128, 128, 128) if big else (32,))
        return (data.classes, *hidden, data.features)
    hidden = cfg.hidden or ((384,) if big else (32,) if cfg.dataset == "blobs" else (8,))
    code = cfg.code or (64 if big else 8 if cfg.dataset == "blobs" else 4)
    return (data.features, *hidden, code)


def make_network(cfg: ExperimentConfig, dims: tuple[int, ...]) -> PCNetwork:
    return init_network(dims, cfg.activation, cfg.output_activation, rng=cfg.seed, prior_var=cfg.prior_var)


# ---------------------------------------------------------------- drivers


def run_training(cfg: ExperimentConfig) -> list[MetricRecord]:
    train_set, test_set = load_data(cfg)
    dims = network_dims(cfg, train_set)
    net = make_network(cfg, dims)
    run_id = cfg.run_id()
    inf_cfg = InferenceConfig(step=cfg.step, max_steps=cfg.inference_steps, grad_tol=cfg.grad_tol)
    eval_cfg = InferenceConfig(step=cfg.step, max_steps=cfg.eval_steps, grad_tol=cfg.eval_tol)
    lrn_cfg = LearningConfig(
        eta=cfg.eta, sigma_step=cfg.sigma_step, batch_size=cfg.batch_size, epochs=cfg.epochs, seed=cfg.seed
    )
    records: list[MetricRecord] = []
    metric_name = "accuracy" if cfg.task == "classify" else "mse"
    log.info("PC network %s, %d generative parameters", dims, net.n_generative_params())

    mlp = None
    if cfg.with_bp:
        if cfg.task == "classify":
            mlp = bp.from_pc(net)
            pc_sum, bp_sum = net.checksum(), bp.to_pc(mlp).checksum()
            log.info("shared initial weights: pc %s bp %s", pc_sum[:16], bp_sum[:16])
            if pc_sum != bp_sum:
                raise RuntimeError("BP and PC initial weights differ")
        else:
            sizes = tuple(dims) + tuple(reversed(dims))[1:]
            mlp = bp.init_mlp(sizes, cfg.activation, cfg.output_activation, seed=cfg.seed)

    def pc_epoch(rec):
        for name, value in (("nfe", rec.nfe), (metric_name, rec.metric), ("inference_steps", rec.steps)):
            records.append(MetricRecord(run_id, rec.epoch, "pc", name, value, rec.ops, rec.seconds))
        log.info("pc epoch %d: %s %.6g", rec.epoch, metric_name, rec.metric)

    train(
        net,
        train_set,
        cfg.task,
        inf_cfg,
        lrn_cfg,
        eval_set=test_set,
        eval_inf_cfg=eval_cfg,
        on_epoch=pc_epoch,
        eval_every=cfg.eval_every,
    )

    if mlp is not None:
        if cfg.task == "classify":
            targets = one_hot(train_set.labels, dims[0])
        else:
            targets = train_set.inputs
        ops = bp.bp_op_count(mlp) * len(train_set)

        def bp_epoch(epoch, model, seconds):
            out = bp.bp_forward(model, test_set.inputs)[1][-1]
            if cfg.task == "classify":
                value = float(np.mean(np.argmax(out, axis=1) == test_set.labels))
            else:
                value = float(np.mean((out - test_set.inputs) ** 2))
            records.append(MetricRecord(run_id, epoch, "bp", metric_name, value, ops, seconds))
            log.info("bp epoch %d: %s %.6g", epoch, metric_name, value)

        bp.train_bp(mlp, train_set.inputs, targets, cfg.bp_eta, cfg.batch_size, cfg.epochs, cfg.seed, bp_epoch)

    records.sort(key=lambda r: (r.model != "pc", r.epoch))
    write_csv_atomic(cfg.out, METRIC_COLUMNS, (r.row() for r in records))
    return records


def run_bp_compare(cfg: ExperimentConfig) -> list[bp.ComparisonRow]:
    rows: list[bp.ComparisonRow] = []
    dims = cfg.compare_dims
    for k in range(cfg.compare_nets):
        seed = cfg.seed + k
        rng = np.random.default_rng(seed)
        net = init_network(dims, cfg.activation, rng=rng)
        x = rng.uniform(-1.0, 1.0, dims[-1])
        y = rng.uniform(-1.0, 1.0, dims[0])
        rows.extend(bp.compare_pc_bp(net, x, y, cfg.lambdas, seed=seed))
    write_csv_atomic(
        cfg.out,
        bp.ComparisonRow.COLUMNS,
        ([r.seed, repr(r.lam), r.layer, repr(r.cosine), repr(r.rel_mag_err), r.inference_steps] for r in rows),
    )
    return rows


def _load_system(path) -> tuple[kalman.LinearGaussianSystem, kalman.BeliefState]:
    import json

    with open(path) as fh:
        spec = json.load(fh)
    sys = kalman.LinearGaussianSystem(spec["A"], spec["C"], spec["Sigma_w"], spec["Sigma_z"])
    mean = spec.get("mean0", np.zeros(sys.n))
    cov = spec.get("cov0", np.eye(sys.n))
    return sys, kalman.BeliefState(mean, cov)


def run_kf_track(cfg: ExperimentConfig) -> dict[str, object]:
    """Filter one trajectory with both the closed form and the PC relaxation."""
    truth = None
    if cfg.system:
        sys, init = _load_system(cfg.system)
        if not cfg.observations:
            raise ConfigurationError("a system file needs an observations CSV")
    else:
        sys = kalman.random_system(cfg.kf_n, cfg.kf_m, rng=cfg.seed)
        init = kalman.BeliefState(np.zeros(sys.n), np.eye(sys.n))
    if cfg.observations:
        obs = np.loadtxt(cfg.observations, delimiter=",", skiprows=1, ndmin=2)
    else:
        truth, obs = kalman.simulate(sys, cfg.kf_steps, cfg.seed + 1)
    kf = kalman.run_filter(sys, obs, "kf", init, truth)
    pc = kalman.run_filter(sys, obs, "pc", init, truth)
    diff = np.abs(kf.means - pc.means).max(axis=1)
    header = ["t"]
    if truth is not None:
        header += [f"truth_{i}" for i in range(sys.n)]
    header += [f"kf_mean_{i}" for i in range(sys.n)] + [f"pc_mean_{i}" for i in range(sys.n)] + ["abs_diff"]
    rows = []
    for t in range(len(obs)):
        row = [t + 1]
        if truth is not None:
            row += [repr(float(v)) for v in truth[t]]
        row += [repr(float(v)) for v in kf.means[t]] + [repr(float(v)) for v in pc.means[t]] + [repr(float(diff[t]))]
        rows.append(row)
    write_csv_atomic(cfg.out, header, rows)
    log.info("max |kf - pc| = %.3g, rmse kf %s", diff.max(), kf.rmse)
    return {"max_abs_diff": float(diff.max()), "rmse_kf": kf.rmse, "rmse_pc": pc.rmse}


def _random_spd(rng, d):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    m = (q * rng.uniform(0.5, 2.0, d)) @ q.T
    return 0.5 * (m + m.T)


def random_gradcheck_case(
    rng: np.random.Generator, activation: str, max_depth: int = 4, max_width: int = 8, full_cov: bool = False
):
    """Random network and state for derivative checks; rectifier pre-activations avoid the kink."""
    depth = int(rng.integers(1, max_depth + 1))
    dims = tuple(int(d) for d in rng.integers(1, max_width + 1, size=depth + 1))
    net = init_network(dims, activation, rng=rng)
    if full_cov:
        covs = tuple(_random_spd(rng, d) for d in dims)
    else:
        covs = tuple(rng.uniform(0.5, 2.0, d) for d in dims)
    net = net.replace(
        weights=tuple(rng.standard_normal(w.shape) for w in net.weights),
        covs=covs,
        prior_mean=rng.standard_normal(dims[-1]),
    )
    for _ in range(100):
        phi = [rng.standard_normal((1, d)) for d in dims]
        if activation != "rectifier":
            break
        z = [phi[l] @ net.theta(l).T for l in range(1, net.depth + 1)]
        if min(np.abs(zz).min() for zz in z) > 1e-2:
            break
    return net, make_state(net, phi)


def gradcheck_case(net: PCNetwork, state, h: float = 1e-5) -> list[tuple[str, int, float]]:
    """Relative errors of the analytic activity, weight and variance gradients."""
    out = []
    for l in range(net.depth + 1):

        def f_phi(v, l=l):
            phi = list(state.phi)
            phi[l] = v
            return nfe(net, make_state(net, phi))

        out.append(("phi", l, relative_error(nfe_grad_phi(net, state, l), central_difference(f_phi, state.phi[l], h))))
    for l in range(1, net.depth + 1):

        def f_theta(w, l=l):
            return nfe(net.with_theta(l, w), state.with_phi(state.phi))

        out.append(("theta", l, relative_error(nfe_grad_theta(net, state, l), central_difference(f_theta, net.theta(l), h))))
    for l in range(net.depth + 1):
        cov = net.covs[l]

        def f_sigma(c, l=l):
            return nfe(net.with_cov(l, c), state.with_phi(state.phi))

        if cov.ndim == 1:
            numeric = central_difference(f_sigma, cov, h)
            analytic = nfe_grad_sigma(net, state, l)
        else:
            numeric = symmetric_difference(f_sigma, cov, h)
            g = nfe_grad_sigma(net, state, l)
            analytic = g + g.T - np.diag(np.diag(g))
        out.append(("sigma", l, relative_error(analytic, numeric)))
    return out


def run_gradcheck(cfg: ExperimentConfig) -> list[list[object]]:
    rows = []
    activations = ("identity", "tanh", "logistic", "rectifier")
    for k in range(cfg.gradcheck_nets):
        seed = cfg.seed + k
        act = activations[k % len(activations)]
        net, state = random_gradcheck_case(np.random.default_rng(seed), act)
        for quantity, layer, err in gradcheck_case(net, state):
            rows.append([seed, act, quantity, layer, repr(err)])
    write_csv_atomic(cfg.out, GRADCHECK_COLUMNS, rows)
    return rows


def run_experiment(cfg: ExperimentConfig):
    """Dispatch on ``cfg.task``; each driver writes ``cfg.out`` only on success."""
    start = time.perf_counter()
    if cfg.task in ("classify", "compress"):
        result = run_training(cfg)
    elif cfg.task == "bp-compare":
        result = run_bp_compare(cfg)
    elif cfg.task == "kf-track":
        result = run_kf_track(cfg)
    else:
        result = run_gradcheck(cfg)
    log.info("%s finished in %.1f s, wrote %s", cfg.task, time.perf_counter() - start, cfg.out)
    return result


def write_synthetic_idx(directory, cfg: ExperimentConfig, side: int = 4) -> dict[str, Path]:
    """Write seeded blobs as MNIST-style IDX files (``side x side`` images)."""
    from .data import MNIST_FILES, write_idx

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = synth_blobs(cfg.blob_classes, cfg.blob_per_class, side * side, cfg.blob_spread, cfg.seed)
    parts = dict(zip(("train", "test"), split(data, cfg.test_fraction, cfg.seed)))
    written = {}
    for name, part in parts.items():
        images = np.round(part.inputs * 255.0).astype(np.uint8).reshape(len(part), side, side)
        img_path = directory / MNIST_FILES[name][0]
        lbl_path = directory / MNIST_FILES[name][1]
        write_idx(img_path, images)
        write_idx(lbl_path, part.labels.astype(np.uint8))
        written[name] = img_path
    return written
