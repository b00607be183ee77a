"""Variational Bayesian Gaussian mixture with a Dirichlet weight prior.

Components carry a Gaussian-Wishart prior on (mean, precision). Updates are
the standard mean-field coordinate ascent; ``W`` parameterizes the precision
Wishart, so the expected Mahalanobis term is ``nu * (z - m)^T W (z - m)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, multigammaln

log = logging.getLogger(__name__)

_JITTER = 1e-6


@dataclass
class VbgmmPrior:
    alpha0: float
    m0: np.ndarray
    beta0: float
    nu0: float
    W0: np.ndarray

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, dtype=float)
        self.W0 = np.asarray(self.W0, dtype=float)
        d = self.m0.size
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")
        if self.nu0 < d:
            raise ValueError(f"nu0 must be >= {d}")
        if self.W0.shape != (d, d) or not np.allclose(self.W0, self.W0.T):
            raise ValueError("W0 must be a symmetric D x D matrix")
        np.linalg.cholesky(self.W0)

    @property
    def dim(self) -> int:
        return self.m0.size

    @classmethod
    def from_data(cls, z: np.ndarray, alpha0: float = 1e-2, beta0: float = 1.0, nu0: Optional[float] = None):
        """Data-scaled defaults: mean at the sample mean, expected covariance at the sample covariance."""
        z = np.asarray(z, dtype=float)
        d = z.shape[1]
        nu0 = float(d) if nu0 is None else nu0
        cov = np.atleast_2d(np.cov(z, rowvar=False)) if z.shape[0] > 1 else np.eye(d)
        cov = cov + _JITTER * max(1.0, np.trace(cov) / d) * np.eye(d)
        w0 = np.linalg.inv(cov) / nu0
        return cls(alpha0, z.mean(axis=0), beta0, nu0, 0.5 * (w0 + w0.T))


@dataclass
class VbgmmPosterior:
    alpha: np.ndarray
    beta: np.ndarray
    m: np.ndarray
    nu: np.ndarray
    W: np.ndarray
    resp: Optional[np.ndarray] = None
    elbo_trace: list = field(default_factory=list)
    converged: bool = False
    flags: list = field(default_factory=list)

    @property
    def n_components(self) -> int:
        return self.alpha.size

    @property
    def weights(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "means": self.m.tolist(),
            "nu": self.nu.tolist(),
            "W": self.W.tolist(),
            "elbo_trace": [float(v) for v in self.elbo_trace],
            "converged": self.converged,
        }


def _log_det(a: np.ndarray) -> np.ndarray:
    return np.linalg.slogdet(a)[1]


def _expected_log_det(post: VbgmmPosterior) -> np.ndarray:
    d = post.m.shape[1]
    dims = np.arange(1, d + 1)
    psi = digamma(0.5 * (post.nu[:, None] + 1 - dims[None, :])).sum(axis=1)
    return psi + d * np.log(2.0) + _log_det(post.W)


def _expected_log_pi(post: VbgmmPosterior) -> np.ndarray:
    return digamma(post.alpha) - digamma(post.alpha.sum())


def _log_wishart_norm(W: np.ndarray, nu) -> np.ndarray:
    """Log normalizer ``ln B(W, nu)`` of the Wishart density (vectorized over components)."""
    d = W.shape[-1]
    nu = np.asarray(nu, dtype=float)
    return -0.5 * nu * _log_det(W) - 0.5 * nu * d * np.log(2.0) - multigammaln(0.5 * nu, d)


def _mahalanobis(z: np.ndarray, post: VbgmmPosterior) -> np.ndarray:
    diff = z[:, None, :] - post.m[None, :, :]
    return np.einsum("nki,kij,nkj->nk", diff, post.W, diff)


def log_resp_unnormalized(z: np.ndarray, post: VbgmmPosterior) -> np.ndarray:
    d = z.shape[1]
    return (
        _expected_log_pi(post)[None, :]
        + 0.5 * _expected_log_det(post)[None, :]
        - 0.5 * d * np.log(2.0 * np.pi)
        - 0.5 * (d / post.beta[None, :] + post.nu[None, :] * _mahalanobis(z, post))
    )


def e_step(z: np.ndarray, post: VbgmmPosterior) -> np.ndarray:
    """Responsibilities ``r[n, i] = q(c_n = i)``, normalized in log space."""
    log_rho = log_resp_unnormalized(np.asarray(z, dtype=float), post)
    return np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))


def _sufficient_stats(z: np.ndarray, resp: np.ndarray):
    nk = resp.sum(axis=0)
    safe = np.where(nk > 0, nk, 1.0)
    zbar = (resp.T @ z) / safe[:, None]
    zbar[nk <= 0] = 0.0
    diff = z[:, None, :] - zbar[None, :, :]
    scatter = np.einsum("nk,nki,nkj->kij", resp, diff, diff)
    return nk, zbar, scatter


def m_step(z: np.ndarray, resp: np.ndarray, prior: VbgmmPrior) -> VbgmmPosterior:
    """Posterior parameters given responsibilities; ``S_i`` is the unnormalized weighted scatter."""
    z = np.asarray(z, dtype=float)
    nk, zbar, scatter = _sufficient_stats(z, resp)
    alpha = prior.alpha0 + nk
    beta = prior.beta0 + nk
    m = (prior.beta0 * prior.m0[None, :] + nk[:, None] * zbar) / beta[:, None]
    nu = prior.nu0 + nk
    w0_inv = np.linalg.inv(prior.W0)
    dev = zbar - prior.m0[None, :]
    shrink = prior.beta0 * nk / (prior.beta0 + nk)
    w_inv = w0_inv[None] + scatter + shrink[:, None, None] * np.einsum("ki,kj->kij", dev, dev)
    flags = []
    W = np.empty_like(w_inv)
    for k, a in enumerate(w_inv):
        a = 0.5 * (a + a.T)
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            a = a + _JITTER * np.eye(a.shape[0])
            flags.append(f"jitter:{k}")
        wk = np.linalg.inv(a)
        W[k] = 0.5 * (wk + wk.T)
    return VbgmmPosterior(alpha, beta, m, nu, W, resp=resp, flags=flags)


def elbo(z: np.ndarray, resp: np.ndarray, post: VbgmmPosterior, prior: VbgmmPrior) -> float:
    """Variational lower bound on the log evidence for any responsibilities and posterior."""
    z = np.asarray(z, dtype=float)
    d = z.shape[1]
    k = post.n_components
    nk, zbar, scatter = _sufficient_stats(z, resp)
    log_lam = _expected_log_det(post)
    log_pi = _expected_log_pi(post)
    trace_sw = np.einsum("kij,kji->k", scatter, post.W)
    dev = zbar - post.m
    quad = np.einsum("ki,kij,kj->k", dev, post.W, dev)

    e_lik = 0.5 * np.sum(nk * (log_lam - d / post.beta - d * np.log(2 * np.pi) - post.nu * quad) - post.nu * trace_sw)
    e_labels = float(np.sum(resp * log_pi[None, :]))
    e_pi = gammaln(k * prior.alpha0) - k * gammaln(prior.alpha0) + (prior.alpha0 - 1) * log_pi.sum()
    dev0 = post.m - prior.m0[None, :]
    quad0 = np.einsum("ki,kij,kj->k", dev0, post.W, dev0)
    w0_inv = np.linalg.inv(prior.W0)
    trace_w0 = np.einsum("ij,kji->k", w0_inv, post.W)
    e_mu_lam = (
        0.5 * np.sum(d * np.log(prior.beta0 / (2 * np.pi)) + log_lam - d * prior.beta0 / post.beta - prior.beta0 * post.nu * quad0)
        + k * _log_wishart_norm(prior.W0, prior.nu0)
        + 0.5 * (prior.nu0 - d - 1) * log_lam.sum()
        - 0.5 * np.sum(post.nu * trace_w0)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(resp > 0, resp * np.log(resp), 0.0)
    q_labels = float(ent.sum())
    q_pi = np.sum((post.alpha - 1) * log_pi) + gammaln(post.alpha.sum()) - gammaln(post.alpha).sum()
    wishart_entropy = -_log_wishart_norm(post.W, post.nu) - 0.5 * (post.nu - d - 1) * log_lam + 0.5 * post.nu * d
    q_mu_lam = np.sum(0.5 * log_lam + 0.5 * d * np.log(post.beta / (2 * np.pi)) - 0.5 * d - wishart_entropy)
    return float(e_lik + e_labels + e_pi + e_mu_lam - q_labels - q_pi - q_mu_lam)


def _seed_centers(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding over the rows of ``z``."""
    n = z.shape[0]
    centers = [z[rng.integers(n)]]
    d2 = np.sum((z - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(z[idx])
        d2 = np.minimum(d2, np.sum((z - z[idx]) ** 2, axis=1))
    return np.array(centers)


def _initial_resp(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = _seed_centers(z, k, rng)
    dist = np.sum((z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    resp = np.zeros((z.shape[0], k))
    resp[np.arange(z.shape[0]), dist.argmin(axis=1)] = 1.0
    return resp


def _ascend(z, resp, prior, tol, max_iter):
    post = m_step(z, resp, prior)
    trace = [elbo(z, resp, post, prior)]
    converged = False
    for _ in range(max_iter):
        resp = e_step(z, post)
        post = m_step(z, resp, prior)
        trace.append(elbo(z, resp, post, prior))
        if abs(trace[-1] - trace[-2]) < tol:
            converged = True
            break
    post.elbo_trace = trace
    post.converged = converged
    return post


def _try_deletions(z, post, prior, tol, max_iter, mass_floor):
    """Empty small components one at a time and keep the move when the bound improves."""
    improved = True
    while improved:
        improved = False
        keep = effective_components(post, mass_floor)
        if len(keep) < 2:
            break
        for k in sorted(keep, key=lambda i: post.weights[i])[:-1]:
            log_rho = log_resp_unnormalized(z, post)
            log_rho[:, k] = -np.inf
            resp = np.exp(log_rho - logsumexp(log_rho, axis=1, keepdims=True))
            cand = _ascend(z, resp, prior, tol, max_iter)
            if cand.elbo_trace[-1] > post.elbo_trace[-1] + tol:
                cand.flags = post.flags + cand.flags + [f"deleted:{k}"]
                post = cand
                improved = True
                break
    return post


def fit(
    z: np.ndarray,
    prior: Optional[VbgmmPrior] = None,
    max_components: int = 10,
    tol: float = 1e-4,
    max_iter: int = 1000,
    seed=None,
    n_init: int = 1,
    delete_moves: bool = True,
    mass_floor: float = 0.01,
) -> VbgmmPosterior:
    """Coordinate ascent from k-means++ seeding until ``|delta ELBO| < tol``.

    With ``delete_moves`` each converged run also tries emptying its smaller
    components, accepting a move only when the bound increases. The restart
    with the best bound is returned; its ``elbo_trace`` is the ascent of the
    last accepted run.
    """
    z = np.asarray(z, dtype=float)
    if max_components < 1:
        raise ValueError("max_components must be >= 1")
    prior = prior or VbgmmPrior.from_data(z)
    rng = np.random.default_rng(seed)
    k = min(max_components, z.shape[0])
    best = None
    for _ in range(n_init):
        post = _ascend(z, _initial_resp(z, k, rng), prior, tol, max_iter)
        if delete_moves:
            post = _try_deletions(z, post, prior, tol, max_iter, mass_floor)
        if best is None or post.elbo_trace[-1] > best.elbo_trace[-1]:
            best = post
    return best


def hard_assign(resp: np.ndarray) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest component index."""
    return np.argmax(np.asarray(resp), axis=1)


def effective_components(post: VbgmmPosterior, mass_floor: float = 0.01) -> list[int]:
    return [int(i) for i in np.flatnonzero(post.weights >= mass_floor)]
