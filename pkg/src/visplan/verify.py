"""Statistical checks of the guided sampler against analytic answers.

For a Gaussian prior ``N(mu, S)`` and a linear reward ``r(x) = w . x`` the
tilted density ``p(x) exp(r(x) / alpha)`` is again Gaussian, with mean
``mu + S w / alpha`` and covariance ``S``. The battery compares sampled
moments against that, checks that unguided and ``M = 1`` sampling give back
the prior, and checks that the mean reward grows as ``alpha`` shrinks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .diffusion import Gaussian
from .svdd import SvddConfig, rew_max_diff


class LinearReward:
    def __init__(self, w):
        self.w = np.atleast_1d(np.asarray(w, dtype=float))

    def batch(self, X):
        return X @ self.w

    def __call__(self, x):
        return float(np.asarray(x) @ self.w)


@dataclass
class CheckResult:
    name: str
    status: str  # "pass", "fail" or "skip"
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status != "fail"

    def line(self) -> str:
        vals = " ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.stats.items())
        return f"{self.status.upper():4s} {self.name} {vals}".rstrip()


@dataclass(frozen=True)
class BatteryConfig:
    alphas: tuple = (2.0, 0.5, 0.1)
    tilt_alpha: float = 0.5
    M: int = 64
    K: int = 100
    n_samples: int = 1000
    n_prior: int = 2000
    n_mono: int = 500
    mean_tol: float = 0.2
    var_tol: float = 0.3
    ks_tol: float = 0.05
    seed: int = 0
    corrupt_weights: bool = False


def _sample(prior, cfg: SvddConfig, reward, n):
    return rew_max_diff(prior, cfg, reward, n_samples=n).values


def tilted_mean_check(bc: BatteryConfig) -> CheckResult:
    prior = Gaussian(np.zeros(1), np.ones(1))
    cfg = SvddConfig(alpha=bc.tilt_alpha, M=bc.M, K=bc.K, seed=bc.seed, corrupt_weights=bc.corrupt_weights)
    x = _sample(prior, cfg, LinearReward([1.0]), bc.n_samples)[:, 0]
    target = 1.0 / bc.tilt_alpha
    m, v = float(x.mean()), float(x.var())
    ok = abs(m - target) <= bc.mean_tol and abs(v - 1.0) <= bc.var_tol
    return CheckResult("tilted-mean-1d", "pass" if ok else "fail",
                       {"mean": m, "target": target, "var": v})


def tilted_mean_2d_check(bc: BatteryConfig) -> CheckResult:
    mu = np.array([0.5, -0.5])
    S = np.array([[1.0, 0.4], [0.4, 0.6]])
    w = np.array([0.5, -0.25])
    prior = Gaussian(mu, S)
    cfg = SvddConfig(alpha=bc.tilt_alpha, M=bc.M, K=bc.K, seed=bc.seed + 1, corrupt_weights=bc.corrupt_weights)
    x = _sample(prior, cfg, LinearReward(w), bc.n_samples)
    target = mu + S @ w / bc.tilt_alpha
    err = float(np.abs(x.mean(axis=0) - target).max())
    verr = float(np.abs(np.cov(x.T) - S).max())
    ok = err <= bc.mean_tol and verr <= bc.var_tol
    return CheckResult("tilted-mean-2d", "pass" if ok else "fail", {"max_mean_err": err, "max_cov_err": verr})


def prior_recovery_check(bc: BatteryConfig) -> CheckResult:
    prior = Gaussian(np.zeros(1), np.ones(1))
    direct = np.random.default_rng(bc.seed + 2).standard_normal(bc.n_prior)
    reward = LinearReward([1.0])
    out = {}
    for label, cfg in (("prior_only", SvddConfig(mode="prior_only", K=bc.K, seed=bc.seed + 3)),
                       ("M1", SvddConfig(M=1, K=bc.K, seed=bc.seed + 4))):
        x = _sample(prior, cfg, reward, bc.n_prior)[:, 0]
        out[f"ks_{label}"] = float(stats.ks_2samp(x, direct).statistic)
    ok = max(out.values()) < bc.ks_tol
    return CheckResult("prior-recovery", "pass" if ok else "fail", out)


def monotonicity_check(bc: BatteryConfig) -> CheckResult:
    if len(bc.alphas) < 2:
        return CheckResult("alpha-monotonicity", "skip", {"reason": "need at least two alphas"})
    prior = Gaussian(np.zeros(1), np.ones(1))
    reward = LinearReward([1.0])
    alphas = sorted(bc.alphas, reverse=True)
    means = []
    for a in alphas:
        cfg = SvddConfig(alpha=a, M=bc.M, K=bc.K, seed=bc.seed + 5, corrupt_weights=bc.corrupt_weights)
        means.append(float(_sample(prior, cfg, reward, bc.n_mono)[:, 0].mean()))
    ok = all(b > a for a, b in zip(means, means[1:]))
    return CheckResult("alpha-monotonicity", "pass" if ok else "fail",
                       {f"mean@{a:g}": m for a, m in zip(alphas, means)})


def run_battery(bc: BatteryConfig = BatteryConfig()) -> list[CheckResult]:
    return [tilted_mean_check(bc), tilted_mean_2d_check(bc), prior_recovery_check(bc),
            monotonicity_check(bc)]


def battery_from_section(section: dict | None, **overrides) -> BatteryConfig:
    section = dict(section or {})
    if "alphas" in section:
        section["alphas"] = tuple(section["alphas"])
    section.update({k: v for k, v in overrides.items() if v is not None})
    return replace(BatteryConfig(), **section)
