"""Multivariate Gaussian machinery for the patient simulator.

A trained simulator is a weighted mixture of joint Gaussians over the
concatenated (current, next) normalized vital vector. Each simulated
patient gets its own joint Gaussian (a convex blend of two mixture
components); stepping the patient means sampling from the conditional
distribution of the next-step block given the current-step block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import (
    DegenerateFitError,
    DegenerateModelError,
    InsufficientDataError,
    InvalidInputError,
)

DEFAULT_COMPONENTS = 5
BLEND_MAX = 0.15


@dataclass(eq=False)
class Gaussian:
    """Joint Gaussian over (current, next) vectors: mean length 2d,
    covariance 2d x 2d, symmetric PSD."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise InvalidInputError(
                f"mean/cov shape mismatch: {self.mean.shape} vs {self.cov.shape}"
            )
        if not np.allclose(self.cov, self.cov.T, atol=1e-8):
            raise InvalidInputError("covariance must be symmetric")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(eq=False)
class Mixture:
    """Weighted mixture of joint Gaussians; weights sum to 1."""

    components: list[Gaussian]
    weights: np.ndarray
    #: per-iteration total log-likelihood recorded by fit(); not serialized
    em_log_likelihood: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.components) != self.weights.size:
            raise InvalidInputError("one weight per component required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidInputError("weights must be nonnegative and sum to 1")
        dims = {g.dim for g in self.components}
        if len(dims) != 1:
            raise InvalidInputError("all components must share one dimension")

    @property
    def dim(self) -> int:
        return self.components[0].dim


class PatientModel:
    """One arm's joint (current, next) Gaussian, with the conditional-
    sampling matrices factored once and reused every step."""

    def __init__(self, gaussian: Gaussian, reg: float = 1e-6):
        if gaussian.dim % 2 != 0:
            raise InvalidInputError("joint dimension must be even (current|next)")
        self.gaussian = gaussian
        self.reg = reg
        self._joint_chol: np.ndarray | None = None
        self._cond: tuple | None = None

    @property
    def dim(self) -> int:
        """Dimension d of a single vital vector (half the joint)."""
        return self.gaussian.dim // 2

    def _ensure_joint_chol(self) -> np.ndarray:
        if self._joint_chol is None:
            self._joint_chol = _robust_cholesky(self.gaussian.cov, self.reg)
        return self._joint_chol

    def _ensure_conditional(self):
        """Factor mean/cov into the current (1) and next (2) blocks and
        cache K = S21 S11^-1 and chol(S22 - K S12)."""
        if self._cond is None:
            d = self.dim
            mu1 = self.gaussian.mean[:d]
            mu2 = self.gaussian.mean[d:]
            s11 = self.gaussian.cov[:d, :d]
            s21 = self.gaussian.cov[d:, :d]
            s22 = self.gaussian.cov[d:, d:]
            gain = _solve_spd(s11, s21.T, self.reg).T
            cond_cov = s22 - gain @ s21.T
            cond_cov = 0.5 * (cond_cov + cond_cov.T)
            chol = _robust_cholesky(cond_cov, self.reg)
            self._cond = (mu1, mu2, gain, chol)
        return self._cond


def initial_state(model: PatientModel, rng: np.random.Generator) -> np.ndarray:
    """Sample from the joint and keep only the current-step coordinates."""
    chol = model._ensure_joint_chol()
    draw = model.gaussian.mean + chol @ rng.standard_normal(model.gaussian.dim)
    return draw[: model.dim]


def conditional_mean(model: PatientModel, current: np.ndarray) -> np.ndarray:
    """E[next | current] under the model's joint Gaussian."""
    current = np.asarray(current, dtype=float)
    mu1, mu2, gain, _ = model._ensure_conditional()
    if current.shape != mu1.shape:
        raise InvalidInputError(f"current has shape {current.shape}, expected {mu1.shape}")
    return mu2 + gain @ (current - mu1)


def conditional_next(
    model: PatientModel, current: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sample the next-step block given the current one:
    N(mu2 + S21 S11^-1 (x - mu1), S22 - S21 S11^-1 S12)."""
    mean = conditional_mean(model, current)
    chol = model._ensure_conditional()[3]
    return mean + chol @ rng.standard_normal(model.dim)


def choose_blend(
    mixture: Mixture, rng: np.random.Generator, blend_max: float = BLEND_MAX
) -> tuple[int, int, float]:
    """Pick the primary component by weight, the secondary uniformly
    (possibly the same one), and the blend weight w ~ U(0, blend_max)."""
    k = len(mixture.components)
    primary = int(rng.choice(k, p=mixture.weights))
    secondary = int(rng.integers(k))
    w = float(rng.uniform(0.0, blend_max)) if blend_max > 0 else 0.0
    return primary, secondary, w


def sample_patient(
    mixture: Mixture,
    rng: np.random.Generator,
    blend_max: float = BLEND_MAX,
    reg: float = 1e-6,
) -> PatientModel:
    """Draw an arm's transition parameters: a weight-sampled component
    blended with a uniformly chosen second component,
    (1-w)*primary + w*secondary with w ~ U(0, blend_max)."""
    c1, c2, w = choose_blend(mixture, rng, blend_max)
    g1 = mixture.components[c1]
    g2 = mixture.components[c2]
    mean = (1.0 - w) * g1.mean + w * g2.mean
    cov = (1.0 - w) * g1.cov + w * g2.cov
    return PatientModel(Gaussian(mean, cov), reg=reg)


# ---------------------------------------------------------------------------
# EM fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-6          # relative log-likelihood improvement
    max_iter: int = 200
    reg: float = 1e-6          # epsilon added to covariance diagonals


def fit(
    tuples,
    k: int = DEFAULT_COMPONENTS,
    seed: int = 0,
    config: EmConfig = EmConfig(),
) -> Mixture:
    """Fit a k-component Gaussian mixture to (current, next) tuples by EM.

    Initialization: k-means++ style seeding on means, uniform weights,
    pooled sample covariance. Each M-step adds config.reg * I to every
    covariance. Stops when the relative log-likelihood improvement drops
    below config.tol or after config.max_iter iterations. The recorded
    per-iteration log-likelihood is non-decreasing.
    """
    x = tuples_to_array(tuples)
    n, dim = x.shape
    if n < k:
        raise InsufficientDataError(f"{n} tuples cannot support {k} components")
    rng = np.random.default_rng(seed)

    means = _kmeanspp_means(x, k, rng)
    weights = np.full(k, 1.0 / k)
    pooled = _biased_cov(x) + config.reg * np.eye(dim)
    covs = np.repeat(pooled[None, :, :], k, axis=0)

    ll_trace: list[float] = []
    prev_ll = -np.inf
    for _ in range(config.max_iter):
        log_resp, ll = _e_step(x, weights, means, covs)
        ll_trace.append(ll)
        weights, means, covs = _m_step(x, log_resp, config.reg)
        if np.isfinite(prev_ll) and ll - prev_ll < config.tol * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll

    components = [Gaussian(means[j], covs[j]) for j in range(k)]
    return Mixture(components, weights, em_log_likelihood=tuple(ll_trace))


def tuples_to_array(tuples) -> np.ndarray:
    """Stack transition tuples into an (n, 2d) float array."""
    if isinstance(tuples, np.ndarray):
        x = np.asarray(tuples, dtype=float)
    else:
        rows = [
            np.concatenate([np.asarray(t.current, float), np.asarray(t.next, float)])
            if hasattr(t, "current")
            else np.asarray(t, dtype=float).ravel()
            for t in tuples
        ]
        x = np.array(rows, dtype=float) if rows else np.empty((0, 0))
    if x.ndim != 2 or x.shape[0] == 0:
        raise InsufficientDataError("need a non-empty 2-D array of tuples")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("tuples contain non-finite values")
    return x


def _biased_cov(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0)
    return centered.T @ centered / x.shape[0]


def _kmeanspp_means(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[int(rng.integers(n))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - centers[-1]) ** 2).sum(axis=1))
    return np.array(centers)


def _log_gaussian_pdf(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    dim = mean.size
    chol = _robust_cholesky(cov, reg=1e-10, allow_zero=False)
    diff = x - mean
    solved = np.linalg.solve(chol, diff.T)  # chol is lower triangular
    maha = (solved ** 2).sum(axis=0)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (dim * np.log(2.0 * np.pi) + logdet + maha)


def _e_step(x, weights, means, covs):
    k = weights.size
    log_prob = np.empty((x.shape[0], k))
    for j in range(k):
        log_prob[:, j] = np.log(weights[j] + 1e-300) + _log_gaussian_pdf(x, means[j], covs[j])
    norm = logsumexp(log_prob, axis=1)
    return log_prob - norm[:, None], float(norm.sum())


def _m_step(x, log_resp, reg):
    resp = np.exp(log_resp)
    nk = resp.sum(axis=0)
    nk_safe = np.maximum(nk, 1e-12)
    weights = nk / nk.sum()
    means = resp.T @ x / nk_safe[:, None]
    dim = x.shape[1]
    covs = np.empty((weights.size, dim, dim))
    for j in range(weights.size):
        diff = x - means[j]
        covs[j] = (resp[:, j, None] * diff).T @ diff / nk_safe[j] + reg * np.eye(dim)
    return weights, means, covs


def _robust_cholesky(cov: np.ndarray, reg: float, allow_zero: bool = True) -> np.ndarray:
    """Lower Cholesky factor, adding progressively larger diagonal jitter
    if needed. An (effectively) all-zero matrix factors to zeros so that
    deterministic-limit models sample their conditional mean exactly."""
    if allow_zero and np.all(np.abs(cov) < 1e-14):
        return np.zeros_like(cov)
    eye = np.eye(cov.shape[0])
    for jitter in (0.0, reg, 10.0 * reg, 1e3 * reg):
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise DegenerateFitError("covariance is not positive definite even after regularization")


def _solve_spd(a: np.ndarray, b: np.ndarray, reg: float) -> np.ndarray:
    """Solve a @ x = b for symmetric positive (semi-)definite a."""
    eye = np.eye(a.shape[0])
    for jitter in (0.0, reg, 10.0 * reg, 1e3 * reg):
        try:
            chol = np.linalg.cholesky(a + jitter * eye)
        except np.linalg.LinAlgError:
            continue
        y = np.linalg.solve(chol, b)
        return np.linalg.solve(chol.T, y)
    raise DegenerateModelError("current-block covariance not invertible after regularization")


# ---------------------------------------------------------------------------
# Serialization: versioned plain-text format, bit-exact round trip
# ---------------------------------------------------------------------------

_FORMAT_TAG = "vitalloc-mixture-v1"


def mixture_to_text(mixture: Mixture) -> str:
    lines = [_FORMAT_TAG, f"dim {mixture.dim}", f"components {len(mixture.components)}"]
    for j, comp in enumerate(mixture.components):
        lines.append(f"component {j}")
        lines.append(f"weight {float(mixture.weights[j])!r}")
        lines.append("mean " + " ".join(repr(float(v)) for v in comp.mean))
        for row in comp.cov:
            lines.append("cov " + " ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def mixture_from_text(text: str) -> Mixture:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _FORMAT_TAG:
        raise InvalidInputError(f"not a {_FORMAT_TAG} file")
    dim = int(lines[1].split()[1])
    n_comp = int(lines[2].split()[1])
    weights, components = [], []
    pos = 3
    for _ in range(n_comp):
        if not lines[pos].startswith("component"):
            raise InvalidInputError(f"expected 'component', got {lines[pos]!r}")
        weights.append(float(lines[pos + 1].split()[1]))
        mean = np.array([float(v) for v in lines[pos + 2].split()[1:]])
        cov = np.array(
            [[float(v) for v in lines[pos + 3 + r].split()[1:]] for r in range(dim)]
        )
        if mean.size != dim or cov.shape != (dim, dim):
            raise InvalidInputError("mean/cov size does not match declared dim")
        components.append(Gaussian(mean, cov))
        pos += 3 + dim
    return Mixture(components, np.array(weights))


def save_mixture(mixture: Mixture, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(mixture_to_text(mixture))


def load_mixture(path) -> Mixture:
    with open(path, encoding="utf-8") as fh:
        return mixture_from_text(fh.read())
