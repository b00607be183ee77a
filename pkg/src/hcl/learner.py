"""Penalized continuous-optimization structure learning.

Least-squares fit of a weighted adjacency matrix with a per-edge L1 penalty,
kept acyclic through the trace-exponential constraint
``h(B) = tr(exp(B * B)) - D`` inside an augmented Lagrangian loop.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from hcl.sem import MixedDataset, WeightedDag, find_cycle

log = logging.getLogger(__name__)

# Penalties at or above this value pin the entry to zero.
LAMBDA_INF = 1e10


@dataclass(frozen=True)
class PenaltySpec:
    """Per-edge L1 penalty layout.

    ``mode`` is ``"uniform"`` (``lam``), ``"backbone"`` (``lam1`` on the
    backbone edges, ``lam2`` elsewhere) or ``"per_edge"`` (``matrix``).
    """

    mode: str
    lam: float = 0.0
    lam1: float = 0.1
    lam2: float = 0.3
    backbone: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    allow_inverted: bool = False

    def __post_init__(self):
        if self.mode == "uniform":
            if self.lam < 0:
                raise ValueError("lam must be >= 0")
        elif self.mode == "backbone":
            if self.lam1 < 0 or self.lam2 < 0:
                raise ValueError("lam1 and lam2 must be >= 0")
            if self.lam1 >= self.lam2 and not self.allow_inverted:
                raise ValueError(
                    f"backbone penalties need lam1 < lam2 (got {self.lam1}, {self.lam2}); "
                    "pass allow_inverted=True to override"
                )
            if self.backbone is None:
                raise ValueError("backbone mode requires a backbone edge mask")
        elif self.mode == "per_edge":
            if self.matrix is None:
                raise ValueError("per_edge mode requires a penalty matrix")
            m = np.asarray(self.matrix, dtype=float)
            if np.any(m < 0):
                raise ValueError("per-edge penalties must be >= 0")
        else:
            raise ValueError(f"unknown penalty mode {self.mode!r}")

    @classmethod
    def uniform(cls, lam: float) -> "PenaltySpec":
        return cls("uniform", lam=lam)

    @classmethod
    def with_backbone(cls, backbone, lam1: float = 0.1, lam2: float = 0.3, allow_inverted: bool = False):
        mask = backbone.adjacency if isinstance(backbone, WeightedDag) else np.asarray(backbone) != 0
        return cls("backbone", lam1=lam1, lam2=lam2, backbone=mask, allow_inverted=allow_inverted)

    @classmethod
    def per_edge(cls, matrix) -> "PenaltySpec":
        return cls("per_edge", matrix=np.asarray(matrix, dtype=float))


def sigmoid_penalty(consensus: np.ndarray, eta: float = 20.0, tau: float = 0.5) -> np.ndarray:
    """Edge penalty ``1 / (1 + exp(eta * (w - tau)))``; strong consensus means a small penalty."""
    z = eta * (np.asarray(consensus, dtype=float) - tau)
    return np.exp(-np.logaddexp(0.0, z))


def penalty_matrix(penalty: PenaltySpec, num_vars: int) -> np.ndarray:
    if penalty.mode == "uniform":
        lam = np.full((num_vars, num_vars), float(penalty.lam))
    elif penalty.mode == "backbone":
        lam = np.where(penalty.backbone, penalty.lam1, penalty.lam2).astype(float)
    else:
        lam = np.array(penalty.matrix, dtype=float)
    if lam.shape != (num_vars, num_vars):
        raise ValueError(f"penalty matrix shape {lam.shape} does not match {num_vars} variables")
    np.fill_diagonal(lam, LAMBDA_INF)
    return lam


@dataclass
class LearnerConfig:
    edge_threshold: float = 0.3
    rho0: float = 1.0
    rho_growth: float = 10.0
    rho_max: float = 1e16
    h_shrink: float = 0.25
    h_tol: float = 1e-8
    max_outer: int = 100
    inner_tol: float = 1e-7
    inner_max_iter: int = 1000
    standardize: bool = False
    debias: bool = True
    support_tol: float = 1e-3
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.edge_threshold <= 0:
            raise ValueError("edge_threshold must be > 0")
        if self.rho0 <= 0 or self.h_tol <= 0:
            raise ValueError("rho0 and h_tol must be > 0")


@dataclass
class LearnedGraph:
    dag: WeightedDag
    loss_value: float
    converged: bool
    raw_weights: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    flags: list[str] = field(default_factory=list)

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Map data into the scale the graph was fitted on."""
        out = np.asarray(values, dtype=float) - self.center
        return out / self.scale


def loss_and_gradient(weights: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Least-squares loss ``||X - XB||_F^2 / 2N`` and its gradient (diagonal zeroed)."""
    n = x.shape[0]
    resid = x - x @ weights
    loss = 0.5 / n * float(np.sum(resid**2))
    grad = -1.0 / n * (x.T @ resid)
    np.fill_diagonal(grad, 0.0)
    return loss, grad


def acyclicity_value(weights: np.ndarray) -> tuple[float, np.ndarray]:
    """``h(B) = tr(exp(B * B)) - D`` (zero iff the support is acyclic) and its gradient."""
    e = sla.expm(weights * weights)
    h = float(np.trace(e)) - weights.shape[0]
    return h, e.T * 2.0 * weights


def threshold_graph(weights: np.ndarray, eps: float) -> WeightedDag:
    """Zero entries with ``|b| < eps``, then break any leftover cycle at its weakest edge."""
    w = np.array(weights, dtype=float)
    w[np.abs(w) < eps] = 0.0
    np.fill_diagonal(w, 0.0)
    while (cycle := find_cycle(w)) is not None:
        pairs = list(zip(cycle, cycle[1:] + cycle[:1]))
        i, j = min(pairs, key=lambda e: abs(w[e]))
        w[i, j] = 0.0
    return WeightedDag(w)


def refit_support(weights: np.ndarray, x: np.ndarray, support_tol: float) -> np.ndarray:
    """Unpenalized least-squares weights on the (acyclic) support of ``weights``.

    Undoes the L1 shrinkage of selected edges so the final magnitude threshold
    acts on effect sizes rather than on penalized estimates.
    """
    support = threshold_graph(weights, support_tol).adjacency
    out = np.zeros_like(weights)
    for j in range(x.shape[1]):
        parents = np.flatnonzero(support[:, j])
        if parents.size:
            out[parents, j] = np.linalg.lstsq(x[:, parents], x[:, j], rcond=None)[0]
    return out


def prepare(values: np.ndarray, schema=None, standardize: bool = False):
    """Center every column; z-score continuous columns when ``standardize``.

    Returns ``(x, center, scale, degenerate)`` where ``degenerate`` marks
    zero-variance columns.
    """
    values = np.asarray(values, dtype=float)
    center = values.mean(axis=0)
    std = values.std(axis=0)
    degenerate = std < 1e-12
    scale = np.ones(values.shape[1])
    if standardize:
        cont = np.ones(values.shape[1], bool) if schema is None else schema.continuous_mask
        use = cont & ~degenerate
        scale[use] = std[use]
    return (values - center) / scale, center, scale, degenerate


def fit_structure(
    data,
    penalty: PenaltySpec,
    config: Optional[LearnerConfig] = None,
    w_init: Optional[np.ndarray] = None,
) -> LearnedGraph:
    """Fit a DAG to ``data`` (``MixedDataset`` or matrix) under the given penalty.

    With ``config.debias`` the penalized fit only selects the support; edge
    weights come from an unpenalized refit on that support before thresholding.
    The returned weights live on the centered (optionally standardized) scale
    recorded in the result.
    """
    config = config or LearnerConfig()
    if isinstance(data, MixedDataset):
        values, schema = data.values, data.schema
    else:
        values, schema = np.asarray(data, dtype=float), None
    n, d = values.shape
    flags = []
    if n < d + 1:
        log.warning("fitting %d variables on only %d samples", d, n)
        flags.append("few_samples")
    x, center, scale, degenerate = prepare(values, schema, config.standardize)
    if degenerate.any():
        flags.append("degenerate_columns:" + ",".join(str(j) for j in np.flatnonzero(degenerate)))

    lam = penalty_matrix(penalty, d)
    pinned = lam >= LAMBDA_INF
    pinned[degenerate, :] = True
    lam = np.where(pinned, 0.0, lam)
    lam_flat = np.concatenate([lam.ravel(), lam.ravel()])
    bounds = [(0, 0) if p else (0, None) for p in np.concatenate([pinned.ravel(), pinned.ravel()])]

    def unpack(w):
        return (w[: d * d] - w[d * d :]).reshape(d, d)

    def objective(w, rho, alpha):
        b = unpack(w)
        loss, g_loss = loss_and_gradient(b, x)
        h, g_h = acyclicity_value(b)
        obj = loss + 0.5 * rho * h * h + alpha * h + float(lam_flat @ w)
        g = (g_loss + (rho * h + alpha) * g_h).ravel()
        return obj, np.concatenate([g, -g]) + lam_flat

    if w_init is None:
        w = np.zeros(2 * d * d)
    else:
        w0 = np.where(pinned, 0.0, np.asarray(w_init, dtype=float))
        w = np.concatenate([np.maximum(w0, 0).ravel(), np.maximum(-w0, 0).ravel()])
    rho, alpha, h = config.rho0, 0.0, np.inf
    trace = []
    converged = False
    for outer in range(config.max_outer):
        while rho < config.rho_max:
            sol = sopt.minimize(
                objective,
                w,
                args=(rho, alpha),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": config.inner_max_iter, "ftol": config.inner_tol},
            )
            h_new, _ = acyclicity_value(unpack(sol.x))
            if h_new > config.h_shrink * h:
                rho *= config.rho_growth
            else:
                break
        w, h = sol.x, h_new
        alpha += rho * h
        trace.append({"iteration": outer, "loss": float(loss_and_gradient(unpack(w), x)[0]), "h": h, "rho": rho})
        if h <= config.h_tol:
            converged = True
            break
        if rho >= config.rho_max:
            break
    if config.trace_path:
        with open(config.trace_path, "a") as fh:
            for row in trace:
                fh.write(json.dumps(row) + "\n")

    raw = unpack(w)
    final = refit_support(raw, x, config.support_tol) if config.debias else raw
    dag = threshold_graph(final, config.edge_threshold)
    loss, _ = loss_and_gradient(dag.weights, x)
    if not converged:
        flags.append("not_converged")
    return LearnedGraph(dag, loss, converged, raw, center, scale, flags)
