"""Linear-Gaussian filtering: closed-form Kalman filter and its recurrent PC counterpart.

The PC step treats the posterior mean as a variational parameter and climbs

    F(mu) = -1/2 [ (y - C mu)^T Sz^-1 (y - C mu) + (mu - A m)^T P^-1 (mu - A m) ]

with error nodes ``eps_y = Sz^-1 (y - C mu)`` and ``eps_x = P^-1 (mu - A m)``,
where ``A m`` and ``P`` come from the Kalman prediction.  Its fixed point is
the Kalman posterior mean.  The control input is omitted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceWarning, NumericError, ShapeError

NOISE_FLOOR = 1e-8


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def floor_cov(cov: np.ndarray, floor: float = NOISE_FLOOR) -> np.ndarray:
    """Symmetrise and lift eigenvalues to at least ``floor``."""
    vals, vecs = np.linalg.eigh(_sym(cov))
    if vals.min() >= floor:
        return _sym(cov)
    return _sym((vecs * np.maximum(vals, floor)) @ vecs.T)


@dataclass(frozen=True, eq=False)
class LinearGaussianSystem:
    """``x' = A x + w``, ``y = C x + z`` with ``w ~ N(0, Sigma_w)``, ``z ~ N(0, Sigma_z)``."""

    A: np.ndarray
    C: np.ndarray
    Sigma_w: np.ndarray
    Sigma_z: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        Sw = np.atleast_2d(np.asarray(self.Sigma_w, dtype=float))
        Sz = np.atleast_2d(np.asarray(self.Sigma_z, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n) or C.shape[1] != n or Sw.shape != (n, n):
            raise ShapeError(f"inconsistent system shapes A{A.shape} C{C.shape} Sigma_w{Sw.shape}")
        m = C.shape[0]
        if Sz.shape != (m, m):
            raise ShapeError(f"Sigma_z of shape {Sz.shape}, expected {(m, m)}")
        for name, cov in (("Sigma_w", Sw), ("Sigma_z", Sz)):
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ShapeError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise NumericError(f"{name} is not positive semi-definite")
        for name, value in (("A", A), ("C", C), ("Sigma_w", Sw), ("Sigma_z", Sz)):
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    def replace(self, **changes) -> "LinearGaussianSystem":
        fields = dict(A=self.A, C=self.C, Sigma_w=self.Sigma_w, Sigma_z=self.Sigma_z)
        fields.update(changes)
        return LinearGaussianSystem(**fields)


@dataclass(frozen=True, eq=False)
class BeliefState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ShapeError(f"covariance of shape {self.cov.shape} for a {n}-D mean")


def kf_predict(sys: LinearGaussianSystem, belief: BeliefState) -> BeliefState:
    if belief.mean.shape != (sys.n,):
        raise ShapeError(f"belief of width {belief.mean.shape[0]} for an {sys.n}-D system")
    return BeliefState(sys.A @ belief.mean, _sym(sys.A @ belief.cov @ sys.A.T + sys.Sigma_w))


def kf_update(sys: LinearGaussianSystem, predicted: BeliefState, y: np.ndarray) -> BeliefState:
    """Exact Gaussian posterior given one measurement (Joseph-form covariance)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (sys.m,):
        raise ShapeError(f"measurement of width {y.shape[0]} for an {sys.m}-D emission")
    P = predicted.cov
    Sz = floor_cov(sys.Sigma_z)
    S = _sym(sys.C @ P @ sys.C.T + Sz)
    try:
        cho = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericError("innovation covariance is singular") from None
    # K = P C^T S^-1, via two triangular solves
    CP = sys.C @ P
    K = np.linalg.solve(cho.T, np.linalg.solve(cho, CP)).T
    mean = predicted.mean + K @ (y - sys.C @ predicted.mean)
    I_KC = np.eye(sys.n) - K @ sys.C
    cov = _sym(I_KC @ P @ I_KC.T + K @ Sz @ K.T)
    return BeliefState(mean, cov)


def pc_nfe(sys: LinearGaussianSystem, prior: BeliefState, mu: np.ndarray, y: np.ndarray) -> float:
    """Negative free energy of a point estimate ``mu``, constants dropped."""
    ry = y - sys.C @ mu
    rx = mu - prior.mean
    return -0.5 * float(ry @ np.linalg.solve(floor_cov(sys.Sigma_z), ry) + rx @ np.linalg.solve(prior.cov, rx))


def error_nodes(sys, prior: BeliefState, mu: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``(eps_y, eps_x)`` at the estimate ``mu``."""
    eps_y = np.linalg.solve(floor_cov(sys.Sigma_z), y - sys.C @ mu)
    eps_x = np.linalg.solve(prior.cov, mu - prior.mean)
    return eps_y, eps_x


def pc_grad(sys, prior: BeliefState, mu: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``C^T eps_y - eps_x``."""
    eps_y, eps_x = error_nodes(sys, prior, mu, y)
    return sys.C.T @ eps_y - eps_x


@dataclass(frozen=True)
class FilterConfig:
    """Gradient-ascent settings for the PC filter step.

    ``step=None`` picks ``2 / (lmax + lmin)`` of the NFE curvature, the
    fastest fixed step for a quadratic objective.
    """

    step: float | None = None
    max_steps: int = 100_000
    grad_tol: float = 1e-10


def pc_filter_step(
    sys: LinearGaussianSystem,
    prior: BeliefState,
    y: np.ndarray,
    cfg: FilterConfig = FilterConfig(),
) -> tuple[np.ndarray, int]:
    """Relax the posterior mean from the predicted mean until the gradient vanishes.

    ``prior`` is the output of :func:`kf_predict`.  Returns the estimate and
    the number of gradient steps taken.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (sys.m,):
        raise ShapeError(f"measurement of width {y.shape[0]} for an {sys.m}-D emission")
    z_prec = np.linalg.inv(floor_cov(sys.Sigma_z))
    x_prec = np.linalg.inv(prior.cov)
    z_prec, x_prec = _sym(z_prec), _sym(x_prec)
    C, Ct = sys.C, sys.C.T
    step = cfg.step
    if step is None:
        curv = np.linalg.eigvalsh(_sym(Ct @ z_prec @ C + x_prec))
        step = 2.0 / (curv[-1] + curv[0])
    mu = prior.mean.copy()
    m = prior.mean
    steps = 0
    while True:
        eps_y = z_prec @ (y - C @ mu)
        eps_x = x_prec @ (mu - m)
        g = Ct @ eps_y - eps_x
        norm = np.abs(g).max()
        if norm < cfg.grad_tol or steps >= cfg.max_steps:
            break
        mu = mu + step * g
        steps += 1
    if not norm < cfg.grad_tol:
        warnings.warn(
            f"PC filter step stopped after {steps} steps with gradient norm {norm:.3g}",
            ConvergenceWarning,
            stacklevel=2,
        )
    return mu, steps


def learn_dynamics_grads(
    sys: LinearGaussianSystem,
    mu_t: np.ndarray,
    mu_next: np.ndarray,
    y: np.ndarray,
    prior_cov: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """NFE gradients w.r.t. the transition and emission matrices.

    ``dA = eps_x mu_t^T`` and ``dC = eps_y mu_next^T`` with the predicted
    mean ``A mu_t`` and its covariance ``prior_cov``.
    """
    mu_t = np.atleast_1d(np.asarray(mu_t, dtype=float))
    mu_next = np.atleast_1d(np.asarray(mu_next, dtype=float))
    if mu_t.shape != (sys.n,) or mu_next.shape != (sys.n,):
        raise ShapeError(f"state estimates must have width {sys.n}")
    prior = BeliefState(sys.A @ mu_t, prior_cov)
    eps_y, eps_x = error_nodes(sys, prior, mu_next, np.atleast_1d(np.asarray(y, dtype=float)))
    return np.outer(eps_x, mu_t), np.outer(eps_y, mu_next)


@dataclass(eq=False)
class FilterResult:
    means: np.ndarray
    covs: np.ndarray
    steps: np.ndarray
    rmse: float | None = None
    mode: str = "kf"


def run_filter(
    sys: LinearGaussianSystem,
    observations: np.ndarray,
    mode: str = "kf",
    init: BeliefState | None = None,
    truth: np.ndarray | None = None,
    cfg: FilterConfig = FilterConfig(),
) -> FilterResult:
    """Filter a whole trajectory; each posterior becomes the next prior.

    In ``pc`` mode the mean comes from :func:`pc_filter_step` while the
    covariance follows the Kalman recursion, which is the regime where the
    two means coincide.
    """
    if mode not in ("kf", "pc"):
        raise ValueError(f"unknown mode {mode!r}")
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    if len(obs) == 0:
        raise ValueError("empty trajectory")
    belief = init or BeliefState(np.zeros(sys.n), np.eye(sys.n))
    means, covs, steps = [], [], []
    for y in obs:
        prior = kf_predict(sys, belief)
        post = kf_update(sys, prior, y)
        if mode == "pc":
            mean, k = pc_filter_step(sys, prior, y, cfg)
            post = BeliefState(mean, post.cov)
            steps.append(k)
        else:
            steps.append(0)
        means.append(post.mean)
        covs.append(post.cov)
        belief = post
    means_arr = np.array(means)
    rmse = None
    if truth is not None:
        rmse = float(np.sqrt(np.mean((means_arr - np.asarray(truth, dtype=float)) ** 2)))
    return FilterResult(means_arr, np.array(covs), np.array(steps), rmse, mode)


def simulate(
    sys: LinearGaussianSystem,
    steps: int,
    rng: np.random.Generator | int,
    x0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``steps`` states ``x_1..x_T`` and their measurements."""
    rng = np.random.default_rng(rng)
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float)
    states, obs = [], []
    for _ in range(steps):
        x = sys.A @ x + rng.multivariate_normal(np.zeros(sys.n), sys.Sigma_w, method="eigh")
        states.append(x)
        obs.append(sys.C @ x + rng.multivariate_normal(np.zeros(sys.m), sys.Sigma_z, method="eigh"))
    return np.array(states), np.array(obs)


def _random_spd(n: int, rng, low: float, high: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return _sym((q * rng.uniform(low, high, n)) @ q.T)


def random_system(
    n: int,
    m: int | None = None,
    rng: np.random.Generator | int = 0,
    radius: tuple[float, float] = (0.5, 0.95),
    noise: tuple[float, float] = (0.1, 1.0),
) -> LinearGaussianSystem:
    """A stable system: transition ``Q diag(r) R^T`` with singular values in ``radius``."""
    rng = np.random.default_rng(rng)
    m = n if m is None else m
    q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
    A = (q1 * rng.uniform(*radius, n)) @ q2.T
    C = rng.uniform(-1.0, 1.0, (m, n)) + np.eye(m, n)
    return LinearGaussianSystem(A, C, _random_spd(n, rng, *noise), _random_spd(m, rng, *noise))


@dataclass(eq=False)
class DynamicsFit:
    system: LinearGaussianSystem
    errors: list[float] = field(default_factory=list)


def learn_dynamics(
    sys: LinearGaussianSystem,
    observations: np.ndarray,
    epochs: int,
    lr: float,
    init: BeliefState | None = None,
    learn_A: bool = True,
    learn_C: bool = False,
    mode: str = "pc",
    reference: np.ndarray | None = None,
    cfg: FilterConfig = FilterConfig(),
) -> DynamicsFit:
    """Fit the transition (and optionally emission) matrix by NFE ascent.

    Each epoch filters the whole trajectory with the current matrices, then
    takes one step along the time-averaged gradients.  When ``reference`` is
    given, the Frobenius distance of ``A`` to it is recorded before every epoch
    and once at the end.
    """
    obs = np.atleast_2d(np.asarray(observations, dtype=float))
    start = init or BeliefState(np.zeros(sys.n), np.eye(sys.n))
    fit = DynamicsFit(sys)
    for _ in range(epochs):
        if reference is not None:
            fit.errors.append(float(np.linalg.norm(sys.A - reference)))
        result = run_filter(sys, obs, mode, start, cfg=cfg)
        dA = np.zeros_like(sys.A)
        dC = np.zeros_like(sys.C)
        belief = start
        for t, y in enumerate(obs):
            prior = kf_predict(sys, belief)
            ga, gc = learn_dynamics_grads(sys, belief.mean, result.means[t], y, prior.cov)
            dA += ga
            dC += gc
            belief = BeliefState(result.means[t], result.covs[t])
        changes = {}
        if learn_A:
            changes["A"] = sys.A + lr * dA / len(obs)
        if learn_C:
            changes["C"] = sys.C + lr * dC / len(obs)
        sys = sys.replace(**changes)
        fit.system = sys
    if reference is not None:
        fit.errors.append(float(np.linalg.norm(sys.A - reference)))
    return fit
