"""Numerical checks of the backbone-penalty argument and the latent-representation claims.

Edge selection is modelled as thresholding a Gaussian score: an entry is
kept when ``|score| > lambda`` where ``score ~ N(b, sigma^2 / n)``. This gives
closed-form false/true selection probabilities, penalty-averaged ratios and a
matching Monte Carlo simulation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.integrate import quad
from scipy.stats import binomtest, ks_2samp, norm

from hcl.latent import latent_matrix, phi_binary
from hcl.learner import PenaltySpec, fit_structure
from hcl.metrics import ari
from hcl.sem import MixedDataset, ScmSpec, VariableSchema, generate_er_dag, sample_edge_weights, simulate

QUAD_TOL = 1e-8


@dataclass(frozen=True)
class Prop2Params:
    n: int = 100
    sigma: float = 1.0
    lam1: float = 0.1
    lam2: float = 0.3
    lam: Optional[float] = None
    gamma: float = 0.05
    b: float = 0.8
    n_s: Optional[int] = None
    num_vars: int = 10
    num_edges: int = 10

    def __post_init__(self):
        if self.n < 1 or self.sigma <= 0:
            raise ValueError("n must be >= 1 and sigma > 0")
        if not 0 <= self.lam1 <= self.lam2:
            raise ValueError("need 0 <= lam1 <= lam2")
        if self.lam is not None and not self.lam1 <= self.lam <= self.lam2:
            raise ValueError("lam must lie in [lam1, lam2]")
        if not 0 <= self.gamma < 0.5:
            raise ValueError("gamma must lie in [0, 0.5)")

    @property
    def other_n(self) -> int:
        return self.n if self.n_s is None else self.n_s


def false_edge_prob(lam, n, sigma) -> float:
    """Probability that a truly absent entry survives thresholding at ``lam``."""
    if np.any(np.asarray(lam) < 0):
        raise ValueError("lam must be >= 0")
    return 2.0 * norm.cdf(-np.sqrt(n) * np.asarray(lam, dtype=float) / sigma)


def true_edge_prob(lam, n, sigma, b) -> float:
    """Probability that an entry with effect ``b`` survives thresholding at ``lam``."""
    se = sigma / np.sqrt(n)
    return 1.0 - norm.cdf((lam - b) / se) + norm.cdf((-lam - b) / se)


def _specific_prob(lam, p: Prop2Params) -> float:
    # kept in cluster k where the edge exists, dropped in cluster s where it does not
    return true_edge_prob(lam, p.n, p.sigma, p.b) * (1.0 - false_edge_prob(lam, p.other_n, p.sigma))


def _penalty_average(f, lam1: float, lam2: float) -> float:
    value, _ = quad(f, lam1, lam2, epsabs=QUAD_TOL, epsrel=QUAD_TOL)
    return value / (lam2 - lam1)


def _check_gap(p: Prop2Params):
    if p.lam1 == p.lam2:
        raise ValueError("lam1 and lam2 coincide; the penalty average is undefined")


def backbone_fdr_ratio(p: Prop2Params) -> float:
    """Expected false edges with the backbone penalty over the penalty-averaged uniform fit."""
    _check_gap(p)
    rho = lambda lam: false_edge_prob(lam, p.n, p.sigma)  # noqa: E731
    num = p.gamma * rho(p.lam1) + (1 - p.gamma) * rho(p.lam2)
    return float(num / _penalty_average(rho, p.lam1, p.lam2))


def specificity_gain_ratio(p: Prop2Params) -> float:
    """Expected correctly specific edges with the backbone penalty over the uniform fit."""
    if p.lam1 == p.lam2:
        return 1.0
    s = lambda lam: _specific_prob(lam, p)  # noqa: E731
    num = p.gamma * s(p.lam1) + (1 - p.gamma) * s(p.lam2)
    return float(num / _penalty_average(s, p.lam1, p.lam2))


def default_grid() -> list[Prop2Params]:
    """5 x 5 x 5 grid over gamma, lam1 and the penalty gap at n=100, sigma=1."""
    return [
        Prop2Params(gamma=float(g), lam1=float(l1), lam2=float(l1 + gap))
        for g in np.linspace(0.01, 0.1, 5)
        for l1 in np.linspace(0.0, 0.2, 5)
        for gap in np.linspace(0.05, 0.25, 5)
    ]


@dataclass
class MonteCarloResult:
    mean_backbone: float
    mean_uniform: float
    se_backbone: float
    se_uniform: float
    expected_backbone: float
    expected_uniform: float
    sign_test_p: float
    trials: int


def _layout(p: Prop2Params, rng: np.random.Generator):
    d = p.num_vars
    off = ~np.eye(d, dtype=bool)
    truth = np.zeros((d, d), bool)
    cand = np.flatnonzero(off.ravel())
    truth.flat[rng.choice(cand, size=p.num_edges, replace=False)] = True
    # backbone: every true edge plus gamma * D^2 absent entries
    backbone = truth.copy()
    n_extra = int(round(p.gamma * d * d))
    absent = np.flatnonzero((off & ~truth).ravel())
    backbone.flat[rng.choice(absent, size=min(n_extra, absent.size), replace=False)] = True
    return off, truth, backbone


def prop2_monte_carlo(p: Prop2Params, trials: int = 200, seed=None) -> MonteCarloResult:
    """False-edge counts under backbone vs uniform thresholds with common random scores.

    The uniform penalty is ``p.lam`` when given, otherwise drawn uniformly from
    ``[lam1, lam2]`` per trial. The sign test is one-sided (backbone fewer).
    """
    if trials < 50:
        raise ValueError("need at least 50 trials")
    rng = np.random.default_rng(seed)
    off, truth, backbone = _layout(p, rng)
    se = p.sigma / np.sqrt(p.n)
    lam_c = np.where(backbone, p.lam1, p.lam2)
    absent = off & ~truth
    counts_c = np.empty(trials)
    counts_o = np.empty(trials)
    for t in range(trials):
        score = rng.normal(np.where(truth, p.b, 0.0), se)
        lam = p.lam if p.lam is not None else rng.uniform(p.lam1, p.lam2)
        counts_c[t] = np.sum(absent & (np.abs(score) > lam_c))
        counts_o[t] = np.sum(absent & (np.abs(score) > lam))
    expected_c = float(np.sum(false_edge_prob(lam_c[absent], p.n, p.sigma)))
    if p.lam is not None:
        rho_o = false_edge_prob(p.lam, p.n, p.sigma)
    elif p.lam1 == p.lam2:
        rho_o = false_edge_prob(p.lam1, p.n, p.sigma)
    else:
        rho_o = _penalty_average(lambda lam: false_edge_prob(lam, p.n, p.sigma), p.lam1, p.lam2)
    diff = counts_o - counts_c
    wins, losses = int(np.sum(diff > 0)), int(np.sum(diff < 0))
    p_sign = binomtest(wins, wins + losses, 0.5, alternative="greater").pvalue if wins + losses else 1.0
    return MonteCarloResult(
        float(counts_c.mean()),
        float(counts_o.mean()),
        float(counts_c.std(ddof=1) / np.sqrt(trials)),
        float(counts_o.std(ddof=1) / np.sqrt(trials)),
        expected_c,
        float(absent.sum() * rho_o),
        float(p_sign),
        trials,
    )


def prop2_learner_check(p: Prop2Params, trials: int = 10, seed=None) -> tuple[float, float]:
    """Mean false-edge counts from the full learner with backbone vs uniform penalties.

    Behavioural only: the learner's penalties interact through the joint fit,
    so the Gaussian-score closed forms do not apply exactly.
    """
    ss = np.random.SeedSequence(seed)
    lam = p.lam if p.lam is not None else 0.5 * (p.lam1 + p.lam2)
    fc, fo = [], []
    for child in ss.spawn(trials):
        rng = np.random.default_rng(child)
        dag = sample_edge_weights(generate_er_dag(p.num_vars, p.num_edges, rng), rng)
        data = simulate(ScmSpec(dag, VariableSchema.all_continuous(p.num_vars)), p.n, rng)
        truth, backbone = _layout_from(dag.adjacency, p, rng)
        g_c = fit_structure(data, PenaltySpec.with_backbone(backbone, p.lam1, p.lam2, allow_inverted=True)).dag
        g_o = fit_structure(data, PenaltySpec.uniform(lam)).dag
        fc.append(int(np.sum(g_c.adjacency & ~truth)))
        fo.append(int(np.sum(g_o.adjacency & ~truth)))
    return float(np.mean(fc)), float(np.mean(fo))


def _layout_from(truth: np.ndarray, p: Prop2Params, rng):
    d = truth.shape[0]
    off = ~np.eye(d, dtype=bool)
    backbone = truth.copy()
    absent = np.flatnonzero((off & ~truth).ravel())
    n_extra = min(int(round(p.gamma * d * d)), absent.size)
    backbone.flat[rng.choice(absent, size=n_extra, replace=False)] = True
    return truth, backbone


# -- latent representation checks ----------------------------------------

ROOT_MEAN = 3.0


def _two_var(values: np.ndarray, labels: np.ndarray) -> MixedDataset:
    return MixedDataset(values, VariableSchema.all_continuous(2), labels)


def appendix_a_suite(n: int = 2000, seed=None, gap: float = 2.0) -> dict[str, MixedDataset]:
    """Three two-variable datasets: a direct edge, a latent confounder, and a modified edge.

    ``"a"``: X1 -> X2 with coefficient 1. ``"b"``: no edge, a shared latent
    cause of both; only X1 carries the root offset. ``"d"``: X1 -> X2 with coefficient 0.5 or 0.5 + gap in two
    equally likely regimes (labels 0/1). Exogenous variables are standard
    normal; root variables are offset by ``ROOT_MEAN``.
    """
    if n < 100:
        raise ValueError("n must be >= 100")
    rng = np.random.default_rng(seed)
    x1 = ROOT_MEAN + rng.standard_normal(n)
    a = np.column_stack([x1, x1 + rng.standard_normal(n)])
    u = rng.standard_normal(n)
    b = np.column_stack([ROOT_MEAN + u + rng.standard_normal(n), u + rng.standard_normal(n)])
    regime = rng.integers(0, 2, size=n)
    coef = np.where(regime == 1, 0.5 + gap, 0.5)
    x1 = ROOT_MEAN + rng.standard_normal(n)
    d = np.column_stack([x1, coef * x1 + rng.standard_normal(n)])
    zeros = np.zeros(n, dtype=int)
    return {"a": _two_var(a, zeros), "b": _two_var(b, zeros), "d": _two_var(d, regime)}


def _z_under_fit(data: MixedDataset, lam: float = 0.1) -> np.ndarray:
    g = fit_structure(data, PenaltySpec.uniform(lam))
    return latent_matrix(data, g.dag, design=g.transform(data.values)).values


def prop1_report(n: int = 2000, seed=None) -> dict:
    """Separability of the three models in the latent space."""
    suite = appendix_a_suite(n, seed)
    z = {k: _z_under_fit(v) for k, v in suite.items()}
    a = suite["a"].values
    corr_a = float(np.corrcoef(a.T)[0, 1])
    # Bonferroni over the two latent coordinates
    p_ab = min(1.0, 2.0 * min(ks_2samp(z["a"][:, j], z["b"][:, j]).pvalue for j in range(2)))
    rng = np.random.default_rng(seed)
    _, lab_z = kmeans2(z["d"], 2, minit="++", seed=rng)
    _, lab_x = kmeans2(suite["d"].values - suite["d"].values.mean(axis=0), 2, minit="++", seed=rng)
    return {
        "corr_a": corr_a,
        "ks_p_a_vs_b": float(p_ab),
        "ari_d_latent": ari(suite["d"].labels, lab_z),
        "ari_d_raw": ari(suite["d"].labels, lab_x),
    }


def prop1_separation(n: int = 2000, seed=None) -> tuple[float, float]:
    """2-means ARI (latent, raw) for telling pooled model-a samples from model-b samples.

    The latent matrix is computed under one structure fitted to the pooled data.
    """
    suite = appendix_a_suite(n, seed)
    values = np.vstack([suite["a"].values, suite["b"].values])
    labels = np.repeat([0, 1], n)
    pooled = _two_var(values, labels)
    z = _z_under_fit(pooled)
    rng = np.random.default_rng(seed)
    _, lab_z = kmeans2(z, 2, minit="++", seed=rng)
    _, lab_x = kmeans2(values - values.mean(axis=0), 2, minit="++", seed=rng)
    return ari(labels, lab_z), ari(labels, lab_x)


def phi_identity_check(num_inputs: int = 10_000, seed=None) -> float:
    """Worst deviation of ``P(x=1) phi1 + P(x=0) phi0`` from the noise mean over random inputs."""
    rng = np.random.default_rng(seed)
    x_hat = rng.uniform(-6, 6, num_inputs)
    mu = rng.uniform(-3, 3, num_inputs)
    sigma = rng.uniform(0.05, 5, num_inputs)
    p1 = norm.sf((-x_hat - mu) / sigma)
    up = phi_binary(np.ones(num_inputs), x_hat, mu, sigma)
    down = phi_binary(np.zeros(num_inputs), x_hat, mu, sigma)
    return float(np.max(np.abs(p1 * up + (1 - p1) * down - mu)))


def phi_monte_carlo_check(cases: int = 20, draws: int = 1_000_000, seed=None) -> float:
    """Worst gap between the truncated-mean formula and rejection-sampled means."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        x_hat, mu, sigma = rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(0.5, 1.5)
        u = rng.normal(mu, sigma, draws)
        kept = u > -x_hat
        for outcome, mask in ((1.0, kept), (0.0, ~kept)):
            if mask.sum() < draws // 10:
                continue
            formula = float(phi_binary(outcome, x_hat, mu, sigma))
            worst = max(worst, abs(formula - u[mask].mean()))
    return worst


__all__ = [
    "Prop2Params",
    "false_edge_prob",
    "true_edge_prob",
    "backbone_fdr_ratio",
    "specificity_gain_ratio",
    "default_grid",
    "prop2_monte_carlo",
    "prop2_learner_check",
    "appendix_a_suite",
    "prop1_report",
    "prop1_separation",
    "phi_identity_check",
    "phi_monte_carlo_check",
    "MonteCarloResult",
]
