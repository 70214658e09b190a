"""Linear-Gaussian source-reconstruction benchmark with reverse-SDE samplers.

The forward model is x ~ N(A theta, sigma_n^2 I) with a structured Gaussian
prior theta ~ N(mu_0, Sigma_0) over source pixels and a synthetic warp operator
A mapping source to observation pixels. Posterior samples are generated by
integrating the reverse variance-exploding SDE with Euler-Maruyama, driven by
the analytic time-dependent prior score plus one of two likelihood scores:

* "exact": the time-t likelihood is tractable for a Gaussian prior,
  N(x | A m_c(theta), sigma_n^2 I + A Sigma_c A^T) with
  Sigma_c = (Sigma_0^-1 + sigma_t^-2 I)^-1 and
  m_c(theta) = Sigma_c (sigma_t^-2 theta + Sigma_0^-1 mu_0),
  which makes the sampler unbiased (the closed-form conjugate posterior is the
  oracle for this);
* "biased": the convolution-free approximation
  N(x | A theta, sigma_n^2 I + sigma_t^2 A A^T), whose accumulated error is the
  detectable bias the coverage tests are meant to expose.

The noise scale follows the geometric schedule sigma_t = sigma_min
(sigma_max/sigma_min)^t, so g^2(t) = d sigma_t^2/dt = 2 sigma_t^2
ln(sigma_max/sigma_min). All per-step solves reduce to matrix-vector work via a
one-time eigendecomposition of Sigma_0 (and of A^T A for the biased kind); the
per-step small-matrix factorizations are cached per (schedule, kind).
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .coverage import JointSampleSet, PosteriorSampler, PriorDraw
from .numerics import SeededRng, cholesky, DecompositionError, single_thread_blas

SCORE_KINDS = ("exact", "biased")

_OPERATOR_TAG = "operator"
_PRIOR_TAG = "prior"
_SIM_TAG = "lensing-sim"

_WARP_CENTER = (0.42, 0.57)
_WARP_CENTER_JITTER = 0.06
_WARP_POWER = 1.9
_MAX_CONDITION = 1e4

_PRIOR_JITTER = 1e-4
_BUMP_AMPLITUDE = 3.0
_BUMP_WIDTH = 0.25
_BUMP_CENTER = (0.45, 0.45)
_BUMP_CENTER_JITTER = 0.05


class OperatorError(ValueError):
    """The constructed forward operator is unusable (rank/conditioning)."""


class PriorError(ValueError):
    """The constructed prior covariance is not positive definite."""


class DivergenceError(RuntimeError):
    """Reverse-SDE state became non-finite; ``step`` is the failing step index."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class VeSchedule:
    """Geometric variance-exploding noise schedule on t in [0, 1]."""

    sigma_min: float = 0.01
    sigma_max: float = 100.0
    steps: int = 300

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError(f"need 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")

    def sigma(self, t: float) -> float:
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"t must be in [0, 1], got {t}")
        return self.sigma_min * (self.sigma_max / self.sigma_min) ** t

    def g_squared(self, t: float) -> float:
        """d(sigma_t^2)/dt for the geometric schedule."""
        return 2.0 * self.sigma(t) ** 2 * math.log(self.sigma_max / self.sigma_min)


def sigma_t(schedule: VeSchedule, t: float) -> float:
    """Noise scale at time t; monotone from sigma_min at t=0 to sigma_max at t=1."""
    return schedule.sigma(t)


def _square_side(n_pixels: int, what: str) -> int:
    side = int(round(math.sqrt(n_pixels)))
    if side * side != n_pixels or side < 2:
        raise ValueError(f"{what} must be a square pixel count >= 4, got {n_pixels}")
    return side


def _pixel_grid(side: int) -> np.ndarray:
    ax = np.linspace(0.0, 1.0, side)
    return np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)


def _boundary_distance(center, direction):
    # distance from center to the unit-box boundary along a unit direction
    tb = math.inf
    for c, d in zip(center, direction):
        if d > 0:
            tb = min(tb, (1.0 - c) / d)
        elif d < 0:
            tb = min(tb, c / -d)
    return tb


def build_operator(dim_theta: int, dim_x: int, seed: int = 0, identity: bool = False) -> np.ndarray:
    """Forward operator mapping dim_theta source pixels to dim_x observation pixels.

    Each observation pixel is a convex bilinear combination of at most four
    source pixels under a fixed off-center radial warp (per-ray power law,
    mapping the unit box onto itself so every source pixel is covered at any
    grid size); the warp center is jittered from the seed. Full column rank
    and condition number below 1e4 are verified at construction. With
    ``identity=True`` (dims equal) returns the identity, an escape hatch for
    tests.
    """
    if identity:
        if dim_theta != dim_x:
            raise ValueError("identity operator requires dim_theta == dim_x")
        return np.eye(dim_theta)
    if dim_x < dim_theta:
        raise ValueError(f"need dim_x >= dim_theta, got {dim_x} < {dim_theta}")
    s_side = _square_side(dim_theta, "dim_theta")
    o_side = _square_side(dim_x, "dim_x")
    g = SeededRng(seed).substream(_OPERATOR_TAG).generator()
    center = np.asarray(_WARP_CENTER) + g.uniform(-_WARP_CENTER_JITTER, _WARP_CENTER_JITTER, 2)

    A = np.zeros((dim_x, dim_theta))
    for oi in range(o_side):
        for oj in range(o_side):
            u = np.array([oi / (o_side - 1), oj / (o_side - 1)])
            w = u - center
            r = math.hypot(w[0], w[1])
            if r == 0.0:
                src = center.copy()
            else:
                direction = w / r
                tb = _boundary_distance(center, direction)
                rho = min(r / tb, 1.0)
                src = center + direction * tb * rho**_WARP_POWER
            src = np.clip(src, 0.0, 1.0) * (s_side - 1)
            i0 = min(int(src[0]), s_side - 2)
            j0 = min(int(src[1]), s_side - 2)
            fi, fj = src[0] - i0, src[1] - j0
            row = oi * o_side + oj
            A[row, i0 * s_side + j0] += (1 - fi) * (1 - fj)
            A[row, i0 * s_side + j0 + 1] += (1 - fi) * fj
            A[row, (i0 + 1) * s_side + j0] += fi * (1 - fj)
            A[row, (i0 + 1) * s_side + j0 + 1] += fi * fj

    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 0:
        raise OperatorError(f"operator is rank deficient for seed {seed}; re-seed")
    cond = sv[0] / sv[-1]
    if cond >= _MAX_CONDITION:
        raise OperatorError(f"operator condition number {cond:.3g} >= {_MAX_CONDITION:g}; re-seed")
    return A


def build_prior(dim_theta: int, kernel_scale: float = 0.3, seed: int = 0):
    """Structured Gaussian prior over the source pixel grid.

    Mean: a smooth radial bump (center jittered from the seed). Covariance:
    squared-exponential kernel over pixel coordinates plus 1e-4 I jitter, with
    positive definiteness verified by Cholesky.
    """
    if kernel_scale <= 0:
        raise ValueError(f"kernel_scale must be positive, got {kernel_scale}")
    side = _square_side(dim_theta, "dim_theta")
    grid = _pixel_grid(side)
    g = SeededRng(seed).substream(_PRIOR_TAG).generator()
    bump_center = np.asarray(_BUMP_CENTER) + g.uniform(-_BUMP_CENTER_JITTER, _BUMP_CENTER_JITTER, 2)

    mu0 = _BUMP_AMPLITUDE * np.exp(-((grid - bump_center) ** 2).sum(axis=1) / (2.0 * _BUMP_WIDTH**2))
    d2 = ((grid[:, None, :] - grid[None, :, :]) ** 2).sum(axis=-1)
    cov = np.exp(-d2 / (2.0 * kernel_scale**2)) + _PRIOR_JITTER * np.eye(dim_theta)
    try:
        cholesky(cov)
    except DecompositionError as e:
        raise PriorError(f"prior covariance is not positive definite: {e}") from e
    return mu0, cov


class LensingModel:
    """Immutable forward model: operator A, noise sigma_n, Gaussian prior.

    Holds one-time factorizations (Cholesky and eigendecomposition of the
    prior covariance, eigendecomposition of A^T A) and a per-(schedule, kind)
    cache of reverse-SDE step solvers, shared across samples and simulations.
    """

    def __init__(self, operator, sigma_n, prior_mean, prior_cov):
        A = np.asarray(operator, dtype=float)
        mu0 = np.asarray(prior_mean, dtype=float).ravel()
        cov = np.asarray(prior_cov, dtype=float)
        if A.ndim != 2 or A.shape[1] != mu0.size or cov.shape != (mu0.size, mu0.size):
            raise ValueError(
                f"shape mismatch: operator {A.shape}, prior mean {mu0.shape}, prior cov {cov.shape}"
            )
        if sigma_n < 0:
            raise ValueError(f"sigma_n must be nonnegative, got {sigma_n}")
        self.operator = A
        self.sigma_n = float(sigma_n)
        self.prior_mean = mu0
        self.prior_cov = cov
        self.prior_chol = cholesky(cov)  # validates SPD
        lam, U = np.linalg.eigh(cov)
        if lam[0] <= 0:
            raise PriorError(f"prior covariance has non-positive eigenvalue {lam[0]:.3g}")
        # everything downstream works in the prior eigenbasis: theta' = U^T theta,
        # B = A U maps eigen coords to observations, G = B^T B is the Gram matrix
        # through which all per-step solves run (observation-sized intermediates
        # appear only once per x, via x @ B)
        self._lam = lam
        self._U = U
        self._B = A @ U
        self._G = self._B.T @ self._B
        gram_l, gram_v = np.linalg.eigh(self._G)
        self._gram_l = np.maximum(gram_l, 0.0)
        self._gram_v = gram_v
        self._mu0_eig = mu0 @ U
        self._solver_cache = {}
        self._lock = threading.Lock()

    @property
    def dim_theta(self) -> int:
        return self.prior_mean.size

    @property
    def dim_x(self) -> int:
        return self.operator.shape[0]

    def _require_noise(self):
        # score evaluation and conjugacy divide by sigma_n; a noiseless model
        # only supports simulate()
        if self.sigma_n == 0:
            raise ValueError("sigma_n must be positive for score and posterior computations")

    def _prior_score_eig(self, theta_eig, s2):
        return -(theta_eig - self._mu0_eig) / (self._lam + s2)

    def _likelihood_score_eig(self, theta_eig, xb, s2, kind, kchol=None):
        """Likelihood score in eigen coordinates, given xb = x @ B.

        Uses the Woodbury identity on C = sigma_n^2 I + B W B^T and the
        reduction u @ B = (rb - y @ G / sigma_n^2) / sigma_n^2, so every
        per-step product is D x D.
        """
        self._require_noise()
        sn2 = self.sigma_n**2
        lam = self._lam
        if kind == "biased":
            rb = xb - theta_eig @ self._G
            t1 = (rb @ self._gram_v) / (sn2 / s2 + self._gram_l)
            y = t1 @ self._gram_v.T
            return (rb - y @ self._G) / sn2
        # exact: residual against the blended clean-signal mean, then the
        # d m_c / d theta chain factor (diagonal in this basis)
        blend = lam / (lam + s2)
        mc = theta_eig * blend + self._mu0_eig * (s2 / (lam + s2))
        rb = xb - mc @ self._G
        if kchol is None:
            kchol = self._exact_step_chol(s2)
        y = solve_triangular(kchol, rb.T, lower=True, check_finite=False)
        y = solve_triangular(kchol.T, y, lower=False, check_finite=False).T
        return (rb - y @ self._G / sn2) / sn2 * blend

    def _exact_step_chol(self, s2):
        w = self._lam * s2 / (self._lam + s2)
        K = np.diag(1.0 / w) + self._G / self.sigma_n**2
        return cholesky(K)

    def step_solvers(self, schedule: VeSchedule, kind: str):
        """Per-step (s2, g2, exact-K Cholesky or None) for the reverse grid,
        built once per (schedule, kind) and cached."""
        key = (schedule, kind)
        with self._lock:
            if key in self._solver_cache:
                return self._solver_cache[key]
        dt = 1.0 / schedule.steps
        entries = []
        with single_thread_blas():
            for k in range(schedule.steps):
                t = 1.0 - k * dt
                s2 = schedule.sigma(t) ** 2
                kchol = self._exact_step_chol(s2) if kind == "exact" else None
                entries.append((s2, schedule.g_squared(t), kchol))
        with self._lock:
            self._solver_cache[key] = entries
        return entries


def build_model(source_side: int = 8, obs_side: int = 16, sigma_n: float = 1.0,
                kernel_scale: float = 0.3, seed: int = 0, identity_operator: bool = False) -> LensingModel:
    """Convenience constructor from grid sides (defaults: 8x8 source, 16x16 obs)."""
    dim_theta = source_side * source_side
    dim_x = obs_side * obs_side
    A = build_operator(dim_theta, dim_x, seed=seed, identity=identity_operator)
    mu0, cov = build_prior(dim_theta, kernel_scale=kernel_scale, seed=seed)
    return LensingModel(A, sigma_n, mu0, cov)


def simulate(model: LensingModel, rng) -> tuple:
    """One forward draw: theta ~ N(mu_0, Sigma_0), x = A theta + sigma_n eps."""
    g = rng.generator() if isinstance(rng, SeededRng) else rng
    theta = model.prior_mean + model.prior_chol @ g.standard_normal(model.dim_theta)
    x = model.operator @ theta + model.sigma_n * g.standard_normal(model.dim_x)
    return theta, x


def make_dataset(model: LensingModel, n_sims: int, seed: int = 0) -> JointSampleSet:
    """Validation set of n_sims forward draws with sim-keyed substreams."""
    root = SeededRng(seed)
    thetas = np.empty((n_sims, model.dim_theta))
    obs = []
    for i in range(n_sims):
        theta, x = simulate(model, root.substream(_SIM_TAG, i))
        thetas[i] = theta
        obs.append(x)
    return JointSampleSet(theta_true=thetas, observations=tuple(obs), sim_ids=np.arange(n_sims))


def _check_t(t):
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return t


def _check_kind(kind):
    if kind not in SCORE_KINDS:
        raise ValueError(f"kind must be one of {SCORE_KINDS}, got {kind!r}")
    return kind


def prior_score(model: LensingModel, schedule: VeSchedule, theta, t) -> np.ndarray:
    """Score of the time-t prior N(mu_0, Sigma_0 + sigma_t^2 I) at theta."""
    t = _check_t(t)
    theta = np.asarray(theta, dtype=float)
    s2 = schedule.sigma(t) ** 2
    out = model._prior_score_eig(np.atleast_2d(theta) @ model._U, s2) @ model._U.T
    return out[0] if theta.ndim == 1 else out


def likelihood_score(model: LensingModel, schedule: VeSchedule, kind: str, theta, x, t) -> np.ndarray:
    """Gradient in theta of the log time-t likelihood (exact or biased).

    At t = 0 exactly, both kinds are evaluated in the sigma_t -> 0 limit and
    reduce to the score of N(x | A theta, sigma_n^2 I).
    """
    t = _check_t(t)
    _check_kind(kind)
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float).ravel()
    theta2d = np.atleast_2d(theta)
    if theta2d.shape[1] != model.dim_theta or x.size != model.dim_x:
        raise ValueError(
            f"dimension mismatch: theta {theta.shape}, x {x.shape} for model "
            f"({model.dim_theta}, {model.dim_x})"
        )
    if t == 0.0:
        model._require_noise()
        out = (x - theta2d @ model.operator.T) @ model.operator / model.sigma_n**2
    else:
        out = model._likelihood_score_eig(theta2d @ model._U, x @ model._B,
                                          schedule.sigma(t) ** 2, kind) @ model._U.T
    return out[0] if theta.ndim == 1 else out


def rsde_sample_batch(model: LensingModel, schedule: VeSchedule, kind: str, x, n: int, rng) -> np.ndarray:
    """n posterior draws by reverse-SDE integration, as an (n, dim_theta) array.

    Initialization is the exact t=1 prior marginal N(mu_0, Sigma_0 +
    sigma_max^2 I); the posterior score (prior plus likelihood of the requested
    kind) drives `schedule.steps` uniform Euler-Maruyama steps down to t=0.
    """
    _check_kind(kind)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.dim_x:
        raise ValueError(f"observation has dimension {x.size}, model expects {model.dim_x}")
    g = rng.generator() if isinstance(rng, SeededRng) else rng
    solvers = model.step_solvers(schedule, kind)
    dt = 1.0 / schedule.steps
    # integrate in the prior eigenbasis (an isometry: the noise increments are
    # i.i.d. normal in any orthonormal basis) and rotate back once at the end
    with single_thread_blas():
        xb = x @ model._B
        scale = np.sqrt(model._lam + schedule.sigma_max**2)
        theta = model._mu0_eig + g.standard_normal((n, model.dim_theta)) * scale
        for k, (s2, g2, kchol) in enumerate(solvers):
            score = (model._prior_score_eig(theta, s2)
                     + model._likelihood_score_eig(theta, xb, s2, kind, kchol))
            theta = theta + dt * g2 * score + math.sqrt(dt * g2) * g.standard_normal(theta.shape)
            if not np.all(np.isfinite(theta)):
                raise DivergenceError(f"reverse SDE diverged at step {k}", step=k)
        return theta @ model._U.T


def rsde_sample(model: LensingModel, schedule: VeSchedule, kind: str, x, rng) -> np.ndarray:
    """Single posterior draw; see :func:`rsde_sample_batch`."""
    return rsde_sample_batch(model, schedule, kind, x, 1, rng)[0]


def conjugate_posterior(model: LensingModel, x):
    """Closed-form posterior (mean, covariance) for the linear-Gaussian model.

    covariance = (Sigma_0^-1 + A^T A / sigma_n^2)^-1,
    mean = covariance (Sigma_0^-1 mu_0 + A^T x / sigma_n^2).
    """
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.dim_x:
        raise ValueError(f"observation has dimension {x.size}, model expects {model.dim_x}")
    model._require_noise()
    d = model.dim_theta
    prior_prec = cho_solve((model.prior_chol, True), np.eye(d))
    H = prior_prec + model.operator.T @ model.operator / model.sigma_n**2
    Lh = cholesky(H)
    cov = cho_solve((Lh, True), np.eye(d))
    cov = 0.5 * (cov + cov.T)
    rhs = prior_prec @ model.prior_mean + model.operator.T @ x / model.sigma_n**2
    mean = cho_solve((Lh, True), rhs)
    return mean, cov


class DiffusionPosteriorSampler(PosteriorSampler):
    """PosteriorSampler facade over the reverse-SDE sampler (no density)."""

    def __init__(self, model: LensingModel, schedule: VeSchedule, kind: str):
        _check_kind(kind)
        self.model = model
        self.schedule = schedule
        self.kind = kind

    def sample(self, x, n: int, rng: SeededRng) -> np.ndarray:
        return rsde_sample_batch(self.model, self.schedule, self.kind, x, n, rng)


def lensing_prior_policy(model: LensingModel) -> PriorDraw:
    """DRP reference points drawn from the model prior."""
    return PriorDraw(
        draw=lambda g: model.prior_mean + model.prior_chol @ g.standard_normal(model.dim_theta)
    )
