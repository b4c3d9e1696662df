"""Discrete-time diffusion over flat vectors with analytic priors.

The forward process is the usual variance-preserving chain

    x_k = sqrt(abar_k) x_0 + sqrt(1 - abar_k) eps,   eps ~ N(0, I).

For a Gaussian prior ``N(m, S)`` every marginal and every conditional of
this chain is Gaussian, and all the matrices involved are functions of
``S`` alone. Working in the eigenbasis of ``S`` turns them into per-axis
scalars, which is how the reverse kernels and posterior means below are
computed. Gaussian mixtures reduce to per-component Gaussians weighted by
posterior responsibilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp


class NonSPDError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """``beta[k - 1]`` is the step-``k`` variance for ``k = 1..K``."""

    beta: np.ndarray
    alpha: np.ndarray = field(init=False, repr=False)
    alpha_bar: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if beta.size == 0 or np.any(beta <= 0) or np.any(beta >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", 1.0 - beta)
        # alpha_bar[0] = 1 so that alpha_bar[k] indexes directly by step
        object.__setattr__(self, "alpha_bar", np.concatenate([[1.0], np.cumprod(1.0 - beta)]))

    @property
    def K(self) -> int:
        return len(self.beta)

    def check_step(self, k: int, lo: int = 0) -> None:
        if not lo <= k <= self.K:
            raise ValueError(f"step {k} outside [{lo}, {self.K}]")


def default_schedule(K: int = 100) -> NoiseSchedule:
    """Linear betas from 1e-4 to 2e-2; a single step uses the last value."""
    if K < 1:
        raise ValueError("K must be positive")
    if K == 1:
        return NoiseSchedule(np.array([2e-2]))
    return NoiseSchedule(np.linspace(1e-4, 2e-2, K))


def forward_noise(x0, k: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    schedule.check_step(k)
    x0 = np.asarray(x0, dtype=float)
    if k == 0:
        return x0.copy()
    ab = schedule.alpha_bar[k]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.standard_normal(x0.shape)


class Gaussian:
    """``N(mean, cov)``; ``cov`` may be a full matrix or a diagonal vector."""

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        D = mean.shape[0]
        self.diagonal = cov.ndim <= 1
        if self.diagonal:
            lam = np.broadcast_to(cov, (D,)).astype(float)
            if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
                raise NonSPDError("diagonal covariance must be positive")
            self.eigvals, self.eigvecs = lam, None
        else:
            if cov.shape != (D, D):
                raise ValueError("covariance shape does not match the mean")
            cov = 0.5 * (cov + cov.T)
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise NonSPDError("covariance is not symmetric positive definite") from None
            lam, U = np.linalg.eigh(cov)
            if np.any(lam <= 0):
                raise NonSPDError("covariance is not symmetric positive definite")
            self.eigvals, self.eigvecs = lam, U
        self.mean = mean

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def cov(self) -> np.ndarray:
        if self.diagonal:
            return np.diag(self.eigvals)
        U = self.eigvecs
        return (U * self.eigvals) @ U.T

    def _to_eig(self, x):
        return x if self.diagonal else x @ self.eigvecs

    def _from_eig(self, y):
        return y if self.diagonal else y @ self.eigvecs.T

    def sample(self, rng, size=None) -> np.ndarray:
        shape = (() if size is None else np.atleast_1d(size).tolist())
        z = rng.standard_normal(tuple(shape) + (self.dim,))
        return self.mean + self._from_eig(z * np.sqrt(self.eigvals))

    def marginal(self, ab: float) -> "Gaussian":
        """Law of ``x_k`` when ``abar_k = ab``."""
        lam = ab * self.eigvals + (1.0 - ab)
        cov = lam if self.diagonal else (self.eigvecs * lam) @ self.eigvecs.T
        return Gaussian(np.sqrt(ab) * self.mean, cov)

    def logpdf_marginal(self, x, ab: float) -> np.ndarray:
        lam = ab * self.eigvals + (1.0 - ab)
        y = self._to_eig(np.asarray(x, dtype=float) - np.sqrt(ab) * self.mean)
        return -0.5 * (np.sum(y * y / lam, axis=-1) + np.sum(np.log(lam)) + self.dim * np.log(2 * np.pi))

    def posterior_mean(self, x, ab: float) -> np.ndarray:
        if ab >= 1.0:
            return np.array(x, dtype=float)
        lam = self.eigvals
        gain = np.sqrt(ab) * lam / (ab * lam + (1.0 - ab))
        y = self._to_eig(np.asarray(x, dtype=float) - np.sqrt(ab) * self.mean)
        return self.mean + self._from_eig(gain * y)

    def posterior_var_eig(self, ab: float) -> np.ndarray:
        """Per-eigenaxis variance of ``x_0 | x_k``."""
        lam = self.eigvals
        return lam * (1.0 - ab) / (ab * lam + (1.0 - ab))

    def transition(self, x, ab_from: float, ab_to: float):
        """Mean and per-eigenaxis variance of ``x_j | x_k`` with
        ``abar_k = ab_from <= ab_to = abar_j``."""
        a = ab_from / ab_to
        c_to = ab_to * self.eigvals + (1.0 - ab_to)
        c_from = ab_from * self.eigvals + (1.0 - ab_from)
        gain = np.sqrt(a) * c_to / c_from
        var = c_to * (1.0 - a) / c_from
        y = self._to_eig(np.asarray(x, dtype=float) - np.sqrt(ab_from) * self.mean)
        mean = np.sqrt(ab_to) * self.mean + self._from_eig(gain * y)
        return mean, var

    def transition_sample(self, x, ab_from, ab_to, z):
        mean, var = self.transition(x, ab_from, ab_to)
        return mean + self._from_eig(np.sqrt(var) * z)

    def affine(self, shift, scale) -> "Gaussian":
        """Law of ``(x - shift) / scale``."""
        shift = np.asarray(shift, dtype=float)
        scale = np.asarray(scale, dtype=float)
        m = (self.mean - shift) / scale
        if self.diagonal:
            return Gaussian(m, self.eigvals / scale**2)
        return Gaussian(m, self.cov / np.outer(scale, scale))

    def moments(self):
        return self.mean.copy(), self.cov


class DemoFitGaussian(Gaussian):
    def __init__(self, mean, cov, n_demos: int):
        super().__init__(mean, cov)
        self.n_demos = n_demos


class GaussianMixture:
    def __init__(self, weights, components):
        w = np.asarray(weights, dtype=float)
        comps = list(components)
        if len(w) != len(comps) or not comps:
            raise ValueError("one weight per component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise ValueError("components must share a dimension")
        self.weights = w
        self.components = comps

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        draws = np.stack([c.sample(rng, n) for c in self.components])
        out = draws[idx, np.arange(n)]
        return out[0] if size is None else out.reshape(tuple(np.atleast_1d(size)) + (self.dim,))

    def responsibilities(self, x, ab: float) -> np.ndarray:
        """Posterior component probabilities given ``x_k``; last axis indexes components."""
        logp = np.stack([np.log(w) + c.logpdf_marginal(x, ab) if w > 0
                         else np.full(np.shape(x)[:-1], -np.inf)
                         for w, c in zip(self.weights, self.components)], axis=-1)
        return np.exp(logp - logsumexp(logp, axis=-1, keepdims=True))

    def posterior_mean(self, x, ab: float):
        if ab >= 1.0:
            return np.array(x, dtype=float)
        r = self.responsibilities(x, ab)
        means = np.stack([c.posterior_mean(x, ab) for c in self.components], axis=-2)
        return np.sum(r[..., None] * means, axis=-2)

    def transition_sample(self, x, ab_from, ab_to, z, u):
        """``u`` in [0, 1) picks the component, ``z`` drives the Gaussian draw."""
        r = self.responsibilities(x, ab_from)
        pick = (np.cumsum(r, axis=-1) < np.asarray(u)[..., None]).sum(axis=-1)
        pick = np.minimum(pick, len(self.components) - 1)
        draws = np.stack([c.transition_sample(x, ab_from, ab_to, z) for c in self.components], axis=-2)
        return np.take_along_axis(draws, pick[..., None, None], axis=-2)[..., 0, :]

    def moments(self):
        w = self.weights
        means = np.stack([c.mean for c in self.components])
        m = w @ means
        cov = sum(wi * (c.cov + np.outer(mi - m, mi - m)) for wi, c, mi in zip(w, self.components, means))
        return m, cov

    def affine(self, shift, scale) -> "GaussianMixture":
        return GaussianMixture(self.weights, [c.affine(shift, scale) for c in self.components])


AnalyticPrior = Gaussian | GaussianMixture


def standardize(prior):
    """Rescale a prior to zero mean and unit per-dimension variance.

    Returns ``(z_prior, shift, scale)`` with ``x = shift + scale * z``.
    """
    m, cov = prior.moments()
    scale = np.sqrt(np.diag(cov))
    return prior.affine(m, scale), m, scale


def posterior_mean_x0(prior, x_k, k: int, schedule: NoiseSchedule) -> np.ndarray:
    """``E[x_0 | x_k]``; ``k = 0`` returns ``x_k``."""
    schedule.check_step(k)
    return prior.posterior_mean(x_k, schedule.alpha_bar[k])


def reverse_kernel_sample(prior, x_k, k: int, schedule: NoiseSchedule, rng,
                          k_next: int | None = None) -> np.ndarray:
    """Exact draw of ``x_{k_next} | x_k`` (default ``k_next = k - 1``).

    Leading axes of ``x_k`` are treated as a batch.
    """
    schedule.check_step(k, lo=1)
    k_next = k - 1 if k_next is None else k_next
    if not 0 <= k_next < k:
        raise ValueError("k_next must satisfy 0 <= k_next < k")
    x_k = np.asarray(x_k, dtype=float)
    ab_from, ab_to = schedule.alpha_bar[k], schedule.alpha_bar[k_next]
    z = rng.standard_normal(x_k.shape)
    if isinstance(prior, GaussianMixture):
        u = rng.random(x_k.shape[:-1])
        return prior.transition_sample(x_k, ab_from, ab_to, z, u)
    return prior.transition_sample(x_k, ab_from, ab_to, z)


def ddim_step(prior, x_k, k: int, k_next: int, schedule: NoiseSchedule, eta: float = 0.0,
              rng=None) -> np.ndarray:
    """Strided DDIM update with the exact posterior mean as the x_0 predictor."""
    schedule.check_step(k, lo=1)
    if not 0 <= k_next < k:
        raise ValueError("k_next must satisfy 0 <= k_next < k")
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    x_k = np.asarray(x_k, dtype=float)
    ab, ab_n = schedule.alpha_bar[k], schedule.alpha_bar[k_next]
    x0 = prior.posterior_mean(x_k, ab)
    eps = (x_k - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
    sigma = eta * np.sqrt((1.0 - ab_n) / (1.0 - ab) * (1.0 - ab / ab_n))
    out = np.sqrt(ab_n) * x0 + np.sqrt(max(1.0 - ab_n - sigma**2, 0.0)) * eps
    if sigma > 0:
        if rng is None:
            raise ValueError("eta > 0 needs a random generator")
        out = out + sigma * rng.standard_normal(x_k.shape)
    return out


def fit_demo_prior(demos, floor: float = 1e-6, shrinkage: float = 1.0) -> DemoFitGaussian:
    """Gaussian fit to demonstration vectors.

    ``shrinkage = 1`` keeps only the (population) variances; smaller values
    blend in the full sample covariance, ``(1 - s) * S + s * diag(S)``.
    Variances are floored at ``floor``.
    """
    X = np.asarray(demos, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) < 2:
        raise ValueError("need at least two demonstrations")
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError("shrinkage must lie in [0, 1]")
    mu = X.mean(axis=0)
    var = np.maximum(X.var(axis=0), floor)
    if shrinkage >= 1.0:
        return DemoFitGaussian(mu, var, len(X))
    Xc = X - mu
    S = (Xc.T @ Xc) / len(X)
    cov = (1.0 - shrinkage) * S
    cov[np.diag_indices_from(cov)] = var
    return DemoFitGaussian(mu, cov, len(X))


def load_demos_jsonl(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return np.asarray(rows, dtype=float)


def save_demos_jsonl(demos, path) -> None:
    with open(path, "w") as fh:
        for row in np.asarray(demos, dtype=float):
            fh.write(json.dumps([float(v) for v in row]) + "\n")
