"""Target distributions: log densities, scores, curvature, reference samplers.

Every model exposes the same surface:

- ``log_density(x)`` / ``log_density_batch(X)``: possibly-unnormalized log p.
- ``grad_log_density(x)`` / ``grad_log_density_batch(X)``: the score.
- ``curvature(x, mode)``: a d x d local curvature matrix, ``-hessian(log p)``
  for ``mode="exact_hessian"`` or the Fisher information for ``mode="fisher"``
  (logistic posterior only).  Raw output; positive-definiteness is the
  caller's problem (see ``psdlin.psd_repair``).
- ``reference_sample(n, seed)``: ground-truth-ish draws where available:
  exact ancestral sampling for Gaussian / mixture targets, a deterministic
  inverse-CDF grid sampler on [-3, 3]^2 for the two irregular 2-D targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .errors import ConfigError, InvalidInputError
from .psdlin import make_bundle, symmetrize

GRID_BOUND = 3.0
GRID_RESOLUTION = 512
_GRID_CHUNK = 16384


class TargetModel:
    """Base class wiring batch implementations to single-point views."""

    kind: str = "abstract"
    dim: int = 0
    supported_curvature: tuple[str, ...] = ("exact_hessian",)

    # --- mandatory batch surface -------------------------------------------------
    def log_density_batch(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_log_density_batch(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _curvature(self, x: np.ndarray, mode: str) -> np.ndarray:
        raise NotImplementedError

    # --- shared plumbing ---------------------------------------------------------
    def _check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.dim:
            raise InvalidInputError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("point has non-finite coordinates")
        return x

    def _check_points(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise InvalidInputError(f"expected points of shape (n, {self.dim}), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidInputError("points have non-finite coordinates")
        return points

    def log_density(self, x) -> float:
        x = self._check_point(x)
        return float(self.log_density_batch(x[None, :])[0])

    def grad_log_density(self, x) -> np.ndarray:
        x = self._check_point(x)
        return self.grad_log_density_batch(x[None, :])[0]

    def curvature(self, x, mode: str = "exact_hessian") -> np.ndarray:
        if mode not in self.supported_curvature:
            raise ConfigError(f"curvature mode '{mode}' is not supported by target '{self.kind}'")
        return self._curvature(self._check_point(x), mode)

    def reference_sample(self, n: int, seed: int) -> np.ndarray:
        raise ConfigError(f"target '{self.kind}' has no reference sampler")

    @staticmethod
    def _check_sample_size(n) -> int:
        n = int(n)
        if n < 1:
            raise InvalidInputError(f"sample size must be >= 1, got {n}")
        return n


class Gaussian(TargetModel):
    """Multivariate normal, parameterized by covariance or by precision."""

    kind = "gaussian"

    def __init__(self, mean, cov=None, precision=None):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        if mean.ndim != 1 or not np.all(np.isfinite(mean)):
            raise InvalidInputError("mean must be a finite vector")
        if (cov is None) == (precision is None):
            raise InvalidInputError("pass exactly one of cov or precision")
        base = symmetrize(cov if cov is not None else precision)
        if base.shape[0] != mean.shape[0]:
            raise InvalidInputError("mean and matrix dimensions disagree")
        bundle = make_bundle(base, floor_ratio=1e-12)
        if cov is not None:
            self.cov, self.precision, self._cov_sqrt = bundle.q, bundle.q_inv, bundle.q_sqrt
            self._log_det_cov = bundle.log_det
        else:
            self.cov, self.precision, self._cov_sqrt = bundle.q_inv, bundle.q, bundle.q_inv_sqrt
            self._log_det_cov = -bundle.log_det
        self.mean = mean
        self.dim = mean.shape[0]
        self._log_norm = -0.5 * (self.dim * np.log(2.0 * np.pi) + self._log_det_cov)

    def log_density_batch(self, points):
        points = self._check_points(points)
        dc = points - self.mean
        return self._log_norm - 0.5 * np.sum((dc @ self.precision) * dc, axis=1)

    def grad_log_density_batch(self, points):
        points = self._check_points(points)
        return -(points - self.mean) @ self.precision

    def _curvature(self, x, mode):
        return self.precision.copy()

    def reference_sample(self, n, seed):
        n = self._check_sample_size(n)
        rng = np.random.default_rng(seed)
        return self.mean + rng.standard_normal((n, self.dim)) @ self._cov_sqrt


class StarMixture(TargetModel):
    """Equal-weight 2-D Gaussian mixture with rotationally copied components.

    Component 1 has mean ``mu1`` and covariance ``sigma1``; component i+1 is
    component i pushed through the fixed rotation by 2*pi/K.  With the default
    five components and sigma1 = diag(1, 0.01) the density looks like a
    five-pointed star: long thin arms meeting at the origin.
    """

    kind = "star_mixture"

    def __init__(self, components: int = 5, mu1=(0.0, 1.5), sigma1=((1.0, 0.0), (0.0, 0.01))):
        components = int(components)
        if components < 1:
            raise InvalidInputError(f"components must be >= 1, got {components}")
        mu1 = np.asarray(mu1, dtype=float)
        sigma1 = symmetrize(sigma1)
        if mu1.shape != (2,) or sigma1.shape != (2, 2):
            raise InvalidInputError("star mixture is 2-D: mu1 has shape (2,), sigma1 shape (2, 2)")
        theta = 2.0 * np.pi / components
        rot = np.array([[np.cos(theta), np.sin(theta)], [-np.sin(theta), np.cos(theta)]])
        means, covs = [mu1], [sigma1]
        for _ in range(components - 1):
            means.append(rot @ means[-1])
            covs.append(symmetrize(rot @ covs[-1] @ rot.T))
        self.dim = 2
        self.n_components = components
        self.means = np.stack(means)
        self.covs = np.stack(covs)
        bundles = [make_bundle(c, floor_ratio=1e-12) for c in covs]
        self.precisions = np.stack([b.q_inv for b in bundles])
        self._chols = np.stack([np.linalg.cholesky(b.q) for b in bundles])
        # exact per-component normalizers; mixture weights are uniform 1/K
        self._log_norms = np.array(
            [-np.log(2.0 * np.pi) - 0.5 * b.log_det for b in bundles]
        )

    def _component_log_pdfs(self, points):
        dc = points[:, None, :] - self.means[None, :, :]  # (n, K, 2)
        quad = np.einsum("nki,kij,nkj->nk", dc, self.precisions, dc)
        return self._log_norms[None, :] - 0.5 * quad

    def log_density_batch(self, points):
        points = self._check_points(points)
        lp = self._component_log_pdfs(points)
        return logsumexp(lp, axis=1) - np.log(self.n_components)

    def _responsibilities(self, points):
        lp = self._component_log_pdfs(points)
        lp = lp - lp.max(axis=1, keepdims=True)
        w = np.exp(lp)
        return w / w.sum(axis=1, keepdims=True)

    def grad_log_density_batch(self, points):
        points = self._check_points(points)
        resp = self._responsibilities(points)
        dc = points[:, None, :] - self.means[None, :, :]
        comp_grads = -np.einsum("kij,nkj->nki", self.precisions, dc)
        return np.einsum("nk,nki->ni", resp, comp_grads)

    def _curvature(self, x, mode):
        resp = self._responsibilities(x[None, :])[0]
        dc = x[None, :] - self.means
        grads = -np.einsum("kij,kj->ki", self.precisions, dc)
        gbar = resp @ grads
        hess = -gbar[:, None] * gbar[None, :]
        for r, g, prec in zip(resp, grads, self.precisions):
            hess += r * (np.outer(g, g) - prec)
        return -hess

    def reference_sample(self, n, seed):
        n = self._check_sample_size(n)
        rng = np.random.default_rng(seed)
        comp = rng.integers(self.n_components, size=n)
        z = rng.standard_normal((n, 2))
        out = np.empty((n, 2))
        for k in range(self.n_components):
            idx = comp == k
            out[idx] = self.means[k] + z[idx] @ self._chols[k].T
        return out


class _Grid2D:
    """Midpoint grid over a 2-D box with a cached inverse-CDF table."""

    def __init__(self, model, bounds, resolution):
        (x_lo, x_hi), (y_lo, y_hi) = bounds
        res = int(resolution)
        ex = np.linspace(x_lo, x_hi, res + 1)
        ey = np.linspace(y_lo, y_hi, res + 1)
        cx = 0.5 * (ex[:-1] + ex[1:])
        cy = 0.5 * (ey[:-1] + ey[1:])
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        self.centers = np.column_stack([gx.ravel(), gy.ravel()])
        self.cell = np.array([ex[1] - ex[0], ey[1] - ey[0]])
        logp = np.empty(self.centers.shape[0])
        for start in range(0, self.centers.shape[0], _GRID_CHUNK):
            block = self.centers[start:start + _GRID_CHUNK]
            logp[start:start + _GRID_CHUNK] = model.log_density_batch(block)
        self.weights = np.exp(logp - logp.max())
        self.total = float(self.weights.sum())
        cdf = np.cumsum(self.weights) / self.total
        cdf[-1] = 1.0
        self.cdf = cdf

    def sample(self, n, seed):
        rng = np.random.default_rng(seed)
        u = (np.arange(n) + rng.random(n)) / n  # stratified uniforms
        idx = np.minimum(np.searchsorted(self.cdf, u, side="left"), len(self.cdf) - 1)
        jitter = rng.random((n, 2)) - 0.5
        return self.centers[idx] + jitter * self.cell

    def moments(self):
        w = self.weights / self.total
        mean = w @ self.centers
        dc = self.centers - mean
        cov = (dc * w[:, None]).T @ dc
        return mean, 0.5 * (cov + cov.T)


class _GridSampledTarget(TargetModel):
    """Shared grid-sampler plumbing for the irregular 2-D targets."""

    def __init__(self):
        self._grid_cache = None

    def _grid(self):
        if self._grid_cache is None:
            bounds = ((-GRID_BOUND, GRID_BOUND), (-GRID_BOUND, GRID_BOUND))
            self._grid_cache = _Grid2D(self, bounds, GRID_RESOLUTION)
        return self._grid_cache

    def reference_sample(self, n, seed):
        n = self._check_sample_size(n)
        return self._grid().sample(n, seed)


class Sine(_GridSampledTarget):
    """Unnormalized density concentrated along the curve x2 = -sin(alpha * x1).

    log p(x) = -(x2 + sin(alpha x1))^2 / (2 sigma1) - (x1^2 + x2^2) / (2 sigma2).
    The default sigma1 = 0.003 makes the ridge very narrow.
    """

    kind = "sine"

    def __init__(self, alpha: float = 1.0, sigma1: float = 0.003, sigma2: float = 1.0):
        super().__init__()
        if sigma1 <= 0 or sigma2 <= 0:
            raise InvalidInputError("sigma1 and sigma2 must be positive")
        self.alpha = float(alpha)
        self.sigma1 = float(sigma1)
        self.sigma2 = float(sigma2)
        self.dim = 2

    def log_density_batch(self, points):
        points = self._check_points(points)
        x1, x2 = points[:, 0], points[:, 1]
        u = x2 + np.sin(self.alpha * x1)
        return -u * u / (2.0 * self.sigma1) - (x1 * x1 + x2 * x2) / (2.0 * self.sigma2)

    def grad_log_density_batch(self, points):
        points = self._check_points(points)
        x1, x2 = points[:, 0], points[:, 1]
        u = x2 + np.sin(self.alpha * x1)
        du1 = self.alpha * np.cos(self.alpha * x1)
        g1 = -u * du1 / self.sigma1 - x1 / self.sigma2
        g2 = -u / self.sigma1 - x2 / self.sigma2
        return np.column_stack([g1, g2])

    def _curvature(self, x, mode):
        x1, x2 = x
        u = x2 + np.sin(self.alpha * x1)
        du1 = self.alpha * np.cos(self.alpha * x1)
        d2u1 = -self.alpha**2 * np.sin(self.alpha * x1)
        h11 = -(du1 * du1 + u * d2u1) / self.sigma1 - 1.0 / self.sigma2
        h12 = -du1 / self.sigma1
        h22 = -1.0 / self.sigma1 - 1.0 / self.sigma2
        return -np.array([[h11, h12], [h12, h22]])


class DoubleBanana(_GridSampledTarget):
    """Two banana-shaped ridges from a log-Rosenbrock observation model.

    log p(x) = -||x||^2 / (2 sigma1) - (y - F(x))^2 / (2 sigma2) with
    F(x) = log((1 - x1)^2 + 100 (x2 - x1^2)^2).  Where the Rosenbrock term
    vanishes F is -inf and the density is zero (log density -inf), which is a
    legal value, not an error; the score is undefined there.
    """

    kind = "double_banana"

    def __init__(self, y_obs: float | None = None, sigma1: float = 1.0, sigma2: float = 0.09):
        super().__init__()
        if sigma1 <= 0 or sigma2 <= 0:
            raise InvalidInputError("sigma1 and sigma2 must be positive")
        self.y_obs = float(np.log(30.0)) if y_obs is None else float(y_obs)
        self.sigma1 = float(sigma1)
        self.sigma2 = float(sigma2)
        self.dim = 2

    @staticmethod
    def _rosenbrock(x1, x2):
        # far-field points may overflow to inf; callers treat non-finite
        # scores as out-of-domain, so the overflow itself is expected
        with np.errstate(over="ignore"):
            return (1.0 - x1) ** 2 + 100.0 * (x2 - x1 * x1) ** 2

    def log_density_batch(self, points):
        points = self._check_points(points)
        x1, x2 = points[:, 0], points[:, 1]
        with np.errstate(divide="ignore"):
            f = np.log(self._rosenbrock(x1, x2))
        resid = self.y_obs - f
        # f = -inf gives resid = +inf; the squared term then forces logp to -inf
        quad = np.where(np.isneginf(f), np.inf, resid * resid)
        return -(x1 * x1 + x2 * x2) / (2.0 * self.sigma1) - quad / (2.0 * self.sigma2)

    def _rosenbrock_parts(self, x1, x2):
        g = self._rosenbrock(x1, x2)
        if np.any(g == 0.0):
            raise InvalidInputError("score undefined where the density vanishes")
        dg1 = -2.0 * (1.0 - x1) - 400.0 * x1 * (x2 - x1 * x1)
        dg2 = 200.0 * (x2 - x1 * x1)
        return g, dg1, dg2

    def grad_log_density_batch(self, points):
        points = self._check_points(points)
        x1, x2 = points[:, 0], points[:, 1]
        g, dg1, dg2 = self._rosenbrock_parts(x1, x2)
        with np.errstate(invalid="ignore", over="ignore"):
            resid = self.y_obs - np.log(g)
            coef = resid / (self.sigma2 * g)
            return np.column_stack([-x1 / self.sigma1 + coef * dg1,
                                    -x2 / self.sigma1 + coef * dg2])

    def _curvature(self, x, mode):
        x1, x2 = x
        g, dg1, dg2 = self._rosenbrock_parts(np.array([x1]), np.array([x2]))
        g, dg1, dg2 = g[0], dg1[0], dg2[0]
        d11 = 2.0 - 400.0 * (x2 - x1 * x1) + 800.0 * x1 * x1
        d12 = -400.0 * x1
        d22 = 200.0
        grad_g = np.array([dg1, dg2])
        hess_g = np.array([[d11, d12], [d12, d22]])
        grad_f = grad_g / g
        hess_f = hess_g / g - np.outer(grad_g, grad_g) / (g * g)
        resid = self.y_obs - np.log(g)
        hess = -np.eye(2) / self.sigma1 + (-np.outer(grad_f, grad_f) + resid * hess_f) / self.sigma2
        return -hess


@dataclass(frozen=True)
class LogisticDataset:
    """Binary classification data: real features plus a trailing 0/1 label."""

    features: np.ndarray
    labels: np.ndarray
    minibatch_size: int = 0  # 0 means full batch

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels)
        if features.ndim != 2 or features.shape[0] < 1:
            raise InvalidInputError(f"features must have shape (N, d), got {features.shape}")
        if not np.all(np.isfinite(features)):
            raise InvalidInputError("features have non-finite entries")
        if labels.shape != (features.shape[0],):
            raise InvalidInputError("labels must be one per data row")
        lab = labels.astype(float)
        if not np.all(np.isin(lab, (0.0, 1.0))):
            raise InvalidInputError("labels must be 0 or 1")
        mb = int(self.minibatch_size)
        if mb < 0 or mb > features.shape[0]:
            raise InvalidInputError(f"minibatch_size must lie in [0, {features.shape[0]}], got {mb}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", lab.astype(int))
        object.__setattr__(self, "minibatch_size", mb)

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @classmethod
    def from_file(cls, path, delimiter: str = ",", minibatch_size: int = 0) -> "LogisticDataset":
        """Load headerless delimited text: d feature columns then a label column."""
        try:
            raw = np.loadtxt(path, delimiter=delimiter, ndmin=2)
        except OSError:
            raise
        except ValueError as exc:
            raise InvalidInputError(f"could not parse dataset file {path}: {exc}") from exc
        if raw.shape[1] < 2:
            raise InvalidInputError("dataset needs at least one feature column and a label column")
        return cls(features=raw[:, :-1], labels=raw[:, -1], minibatch_size=minibatch_size)


class LogisticPosterior(TargetModel):
    """Bayesian logistic regression posterior with a standard normal prior.

    The log likelihood (optionally estimated from a minibatch, rescaled by
    N / |B|) plus the prior log density.  Curvature is the Fisher information
    of the rescaled likelihood plus the prior's identity.
    """

    kind = "logistic_posterior"
    supported_curvature = ("fisher",)

    def __init__(self, dataset: LogisticDataset):
        self.dataset = dataset
        self.dim = dataset.n_features
        self._batch_idx = None  # None means full batch

    # --- minibatch control -------------------------------------------------------
    @property
    def uses_minibatches(self) -> bool:
        return 0 < self.dataset.minibatch_size < self.dataset.n_rows

    def resample_minibatch(self, rng: np.random.Generator) -> None:
        if self.uses_minibatches:
            idx = rng.choice(self.dataset.n_rows, size=self.dataset.minibatch_size, replace=False)
            self._batch_idx = np.sort(idx)

    def _active(self):
        if self._batch_idx is None:
            return self.dataset.features, self.dataset.labels.astype(float), 1.0
        feats = self.dataset.features[self._batch_idx]
        labs = self.dataset.labels[self._batch_idx].astype(float)
        return feats, labs, self.dataset.n_rows / len(self._batch_idx)

    # --- density surface ---------------------------------------------------------
    def log_density_batch(self, points):
        points = self._check_points(points)
        feats, labs, scale = self._active()
        z = points @ feats.T  # (n, |B|)
        sign = 2.0 * labs - 1.0
        loglik = -np.logaddexp(0.0, -sign[None, :] * z).sum(axis=1)
        prior = -0.5 * np.sum(points * points, axis=1) - 0.5 * self.dim * np.log(2.0 * np.pi)
        return scale * loglik + prior

    def grad_log_density_batch(self, points):
        points = self._check_points(points)
        feats, labs, scale = self._active()
        probs = expit(points @ feats.T)
        return scale * (labs[None, :] - probs) @ feats - points

    def _curvature(self, x, mode):
        feats, _, scale = self._active()
        probs = expit(feats @ x)
        w = probs * (1.0 - probs)
        return scale * (feats.T * w) @ feats + np.eye(self.dim)


def grid_moments(model: TargetModel, bounds, resolution: int):
    """Mean and covariance of a 2-D target by midpoint quadrature on a box.

    ``bounds`` is either a single (lo, hi) pair applied to both axes or a pair
    of per-axis (lo, hi) pairs.  Normalization happens implicitly, so the
    model may be unnormalized.
    """
    if model.dim != 2:
        raise InvalidInputError("grid moments require a 2-D target")
    resolution = int(resolution)
    if resolution < 16:
        raise InvalidInputError(f"resolution must be >= 16, got {resolution}")
    bounds = np.asarray(bounds, dtype=float)
    if bounds.shape == (2,):
        bounds = np.stack([bounds, bounds])
    if bounds.shape != (2, 2) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise InvalidInputError("bounds must be (lo, hi) or ((lo0, hi0), (lo1, hi1)) with lo < hi")
    grid = _Grid2D(model, ((bounds[0, 0], bounds[0, 1]), (bounds[1, 0], bounds[1, 1])), resolution)
    return grid.moments()


def map_estimate(model: TargetModel, x0, iterations: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Newton ascent on log density using the model's curvature as the metric."""
    x = np.asarray(x0, dtype=float).copy()
    mode = model.supported_curvature[0]
    for _ in range(iterations):
        step = np.linalg.solve(model.curvature(x, mode), model.grad_log_density(x))
        x = x + step
        if float(np.linalg.norm(step)) < tol:
            break
    return x


_TARGET_KINDS = {
    "gaussian": Gaussian,
    "star_mixture": StarMixture,
    "sine": Sine,
    "double_banana": DoubleBanana,
    "logistic_posterior": LogisticPosterior,
}


def make_target(kind: str, **params) -> TargetModel:
    """Construct a target by kind name; unknown kinds raise ConfigError."""
    if kind not in _TARGET_KINDS:
        raise ConfigError(f"unknown target kind '{kind}' (expected one of {sorted(_TARGET_KINDS)})")
    try:
        return _TARGET_KINDS[kind](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for target '{kind}': {exc}") from exc
