"""GEE fitting of the network mean model with communities as clusters.

Solves ``sum_k D_k' V_k^{-1} (y_k - mu_k) = 0`` by Fisher scoring and reports
both the robust (sandwich) and model-based covariances.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from netgee._linalg import (
    SingularSystemError,
    exact_sum,
    spd_inverse_guarded,
    spd_solve_guarded,
    symmetrize,
)
from netgee.graph import DirectedGraph, Partition
from netgee.model import ConvergenceError, Link, ModelParams, jacobian, mean

__all__ = [
    "WorkingCorrelation",
    "ZMode",
    "FitOptions",
    "FitResult",
    "FitError",
    "fit_gee",
    "fit_naive",
    "fit_glm",
    "sandwich_covariance",
    "estimate_correlation",
    "exchangeable_bounds",
]

logger = logging.getLogger(__name__)

#: Distance kept from the edges of the admissible exchangeable-correlation range.
RHO_MARGIN = 1e-6


class FitError(RuntimeError):
    """The solver could not produce an estimate (singular normal matrix, bad mean)."""


class WorkingCorrelation(str, enum.Enum):
    INDEPENDENCE = "indep"
    EXCHANGEABLE = "exch"


class ZMode(str, enum.Enum):
    """Where the network covariate of a cluster comes from.

    ``BLOCK`` uses only the edges inside the cluster (mean solved per block);
    ``FULL`` uses the whole adjacency and lets clusters shape only the
    working covariance.
    """

    BLOCK = "block"
    FULL = "full"


@dataclass(frozen=True)
class FitOptions:
    link: Link = Link.IDENTITY
    z_mode: ZMode = ZMode.BLOCK
    max_iter: int = 100
    tol: float = 1e-9
    fixed_beta: float | None = None
    estimate_phi: bool = True
    mean_tol: float = 1e-12
    max_halvings: int = 10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        object.__setattr__(self, "link", Link(self.link))
        object.__setattr__(self, "z_mode", ZMode(self.z_mode))


def _finite_or_none(values):
    return [float(v) if np.isfinite(v) else None for v in np.ravel(values)]


@dataclass(frozen=True, eq=False)
class FitResult:
    params: ModelParams
    sandwich_cov: np.ndarray
    naive_cov: np.ndarray
    converged: bool
    iterations: int
    cluster_residuals: tuple
    phi_hat: float
    rho_hat: float
    score_norm: float
    link: Link
    z_mode: ZMode
    corr: WorkingCorrelation
    fitted: np.ndarray = field(repr=False)
    n_clusters: int = 0
    fixed_beta: bool = False

    @property
    def estimates(self) -> np.ndarray:
        return self.params.as_vector()

    @property
    def sandwich_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sandwich_cov), 0.0, None))

    @property
    def naive_se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.naive_cov), 0.0, None))

    def z_scores(self, robust: bool = True) -> np.ndarray:
        se = self.sandwich_se if robust else self.naive_se
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.estimates / se

    def p_values(self, robust: bool = True) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.z_scores(robust)))

    @property
    def coef_names(self) -> list[str]:
        return ["beta"] + [f"alpha_{j + 1}" for j in range(self.params.l)]

    def to_dict(self) -> dict:
        return {
            "link": self.link.value,
            "z_mode": self.z_mode.value,
            "working_correlation": self.corr.value,
            "coefficients": self.coef_names,
            "estimates": _finite_or_none(self.estimates),
            "sandwich_se": _finite_or_none(self.sandwich_se),
            "naive_se": _finite_or_none(self.naive_se),
            "z": _finite_or_none(self.z_scores()),
            "p_values": _finite_or_none(self.p_values()),
            "sandwich_cov": [_finite_or_none(row) for row in self.sandwich_cov],
            "naive_cov": [_finite_or_none(row) for row in self.naive_cov],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "score_norm": float(self.score_norm),
            "phi_hat": float(self.phi_hat),
            "rho_hat": float(self.rho_hat),
            "n": int(self.fitted.size),
            "n_clusters": int(self.n_clusters),
            "beta_fixed": bool(self.fixed_beta),
        }

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)


def exchangeable_bounds(max_size: int) -> tuple[float, float]:
    """Closed range of exchangeable correlations keeping every V_k positive definite."""
    lo = -1.0 / (max_size - 1) if max_size > 1 else -1.0
    return lo + RHO_MARGIN, 1.0 - RHO_MARGIN


def estimate_correlation(cluster_residuals, phi: float) -> float:
    """Moment estimate of the exchangeable correlation from Pearson residuals.

    ``sum_k sum_{i != j} r_ki r_kj / (phi * sum_k n_k (n_k - 1))``, clamped to
    the positive-definite range.
    """
    cross = []
    pairs = 0
    max_size = 0
    for r in cluster_residuals:
        r = np.asarray(r, dtype=float)
        nk = r.size
        max_size = max(max_size, nk)
        if nk < 2:
            continue
        cross.append(math.fsum(r) ** 2 - math.fsum(r * r))
        pairs += nk * (nk - 1)
    if pairs == 0:
        raise ValueError("exchangeable correlation needs a cluster with at least two members")
    if not phi > 0:
        raise ValueError("dispersion must be positive")
    rho = math.fsum(cross) / (phi * pairs)
    lo, hi = exchangeable_bounds(max_size)
    return float(min(max(rho, lo), hi))


def sandwich_covariance(cluster_Ds, cluster_Vs, cluster_residuals) -> np.ndarray:
    """``B^{-1} M B^{-1}`` with ``B = sum D'V^{-1}D`` and ``M = sum D'V^{-1}S S'V^{-1}D``."""
    bread_terms, meat_terms = [], []
    for D, V, S in zip(cluster_Ds, cluster_Vs, cluster_residuals):
        D = np.atleast_2d(np.asarray(D, dtype=float))
        V = np.atleast_2d(np.asarray(V, dtype=float))
        S = np.asarray(S, dtype=float).reshape(-1)
        vinv_d = np.linalg.solve(V, D)
        vinv_s = np.linalg.solve(V, S)
        u = D.T @ vinv_s
        bread_terms.append(D.T @ vinv_d)
        meat_terms.append(np.outer(u, u))
    if not bread_terms:
        raise ValueError("no clusters given")
    bread_inv = spd_inverse_guarded(exact_sum(np.stack(bread_terms)))
    meat = exact_sum(np.stack(meat_terms))
    return symmetrize(bread_inv @ meat @ bread_inv)


class _Clusters:
    """Sorted layout of a partition for segment sums."""

    def __init__(self, partition: Partition):
        self.order = np.argsort(partition.labels, kind="stable")
        self.sizes = partition.sizes.astype(float)
        self.starts = np.concatenate([[0], np.cumsum(partition.sizes)[:-1]])
        self.members = partition.clusters()
        self.K = partition.K

    def sums(self, values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(values[self.order], self.starts, axis=0)


@dataclass
class _Terms:
    bread: np.ndarray
    score: np.ndarray
    contributions: np.ndarray  # per-cluster D_k' V_k^{-1} S_k, shape (K, p)


def _terms(D, S, var, rho, clusters: _Clusters) -> _Terms:
    sd = np.sqrt(var)
    Dt = D / sd[:, None]
    St = S / sd
    dsum = clusters.sums(Dt)
    ssum = clusters.sums(St)
    shrink = rho / (1.0 + (clusters.sizes - 1.0) * rho)
    scale = 1.0 / (1.0 - rho)
    bread = scale * (Dt.T @ Dt - (dsum * shrink[:, None]).T @ dsum)
    contrib = scale * (clusters.sums(Dt * St[:, None]) - shrink[:, None] * dsum * ssum[:, None])
    return _Terms(symmetrize(bread), contrib.sum(axis=0), contrib)


def fit_glm(X, y, link: Link, max_iter: int = 50, tol: float = 1e-10) -> np.ndarray:
    """Coefficients of the plain GLM ``g(mu) = X' alpha`` (least squares or logistic IRLS)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    link = Link(link)
    design = X.T
    if link is Link.IDENTITY:
        return np.linalg.lstsq(design, y, rcond=None)[0]
    alpha = np.zeros(X.shape[0])
    for _ in range(max_iter):
        eta = design @ alpha
        mu = link.clamp(link.inverse(eta))
        w = mu * (1.0 - mu)
        working = eta + (y - mu) / w
        sw = np.sqrt(w)
        new = np.linalg.lstsq(design * sw[:, None], working * sw, rcond=None)[0]
        if not np.all(np.isfinite(new)):
            break
        done = np.max(np.abs(new - alpha)) < tol
        alpha = new
        if done:
            break
    return alpha


class _Evaluator:
    """Means and Jacobians for a parameter vector under one z-mode."""

    def __init__(self, weights, partition, X, link, z_mode, mean_tol):
        self.weights = weights
        self.X = X
        self.link = link
        self.z_mode = z_mode
        self.mean_tol = mean_tol
        self.n = weights.shape[0]
        if z_mode is ZMode.BLOCK:
            self.blocks = [
                (idx, weights[np.ix_(idx, idx)], X[:, idx]) for idx in partition.clusters()
            ]

    def __call__(self, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = ModelParams.from_vector(b)
        if self.z_mode is ZMode.FULL:
            mu = mean(self.weights, self.X, params, self.link, self.n, tol=self.mean_tol)
            return mu, jacobian(self.weights, self.X, params, self.link, self.n, mu=mu)
        mu = np.empty(self.n)
        D = np.empty((self.n, b.size))
        for idx, A_k, X_k in self.blocks:
            mu_k = mean(A_k, X_k, params, self.link, self.n, tol=self.mean_tol)
            mu[idx] = mu_k
            D[idx] = jacobian(A_k, X_k, params, self.link, self.n, mu=mu_k)
        return mu, D


def _check_inputs(graph: DirectedGraph, partition: Partition, X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    n = graph.n
    if X.ndim != 2 or X.shape[1] != n:
        raise ValueError(f"design must be l x {n}, got {X.shape}")
    if y.size != n:
        raise ValueError(f"outcome has {y.size} entries for {n} nodes")
    if partition.n != n:
        raise ValueError(f"partition covers {partition.n} nodes, graph has {n}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("design and outcome must be finite")
    return X, y


def fit_gee(
    graph: DirectedGraph,
    partition: Partition,
    X,
    y,
    corr: WorkingCorrelation = WorkingCorrelation.INDEPENDENCE,
    opts: FitOptions | None = None,
) -> FitResult:
    """Fisher-scoring GEE fit with communities of ``partition`` as clusters.

    Parameters
    ----------
    graph : DirectedGraph
        Network whose in-edges drive the network covariate.
    partition : Partition
        Clusters of the working covariance (and of the block mean in BLOCK mode).
    X : array, shape (l, n)
        Covariates, one column per node.
    y : array, shape (n,)
        Outcomes; 0/1 for the logit link.
    corr : WorkingCorrelation
        Independence or exchangeable working correlation.
    opts : FitOptions
        Link, z-mode and iteration control. ``fixed_beta`` pins the network
        coefficient and estimates only ``alpha``.

    Returns
    -------
    FitResult
        ``converged`` is False when ``max_iter`` is exhausted; the iterate with
        the smallest estimating-function norm is returned in that case.

    Raises
    ------
    FitError
        The mean or the normal matrix is singular at the starting point, or
        no finite iterate exists.
    """
    opts = opts or FitOptions()
    corr = WorkingCorrelation(corr)
    link = opts.link
    X, y = _check_inputs(graph, partition, X, y)
    if link is Link.LOGIT and np.any((y != 0) & (y != 1)):
        raise ValueError("logit link needs 0/1 outcomes")
    n, l = y.size, X.shape[0]
    clusters = _Clusters(partition)
    if corr is WorkingCorrelation.EXCHANGEABLE and clusters.sizes.max() < 2:
        raise ValueError("exchangeable working correlation needs a cluster with two or more nodes")
    evaluate = _Evaluator(graph.weights, partition, X, link, opts.z_mode, opts.mean_tol)
    free = slice(1, None) if opts.fixed_beta is not None else slice(None)
    n_free = l if opts.fixed_beta is not None else l + 1
    dof = max(n - n_free, 1)

    def nuisance(S, var):
        r = S / np.sqrt(var)
        phi = float(math.fsum(r * r) / dof) if opts.estimate_phi else 1.0
        if corr is WorkingCorrelation.INDEPENDENCE or not phi > 0:
            return phi, 0.0
        groups = [r[idx] for idx in clusters.members]
        return phi, estimate_correlation(groups, phi)

    b = np.empty(l + 1)
    b[0] = 0.0 if opts.fixed_beta is None else opts.fixed_beta
    b[1:] = fit_glm(X, y, link)
    try:
        mu, D = evaluate(b)
    except (SingularSystemError, ConvergenceError) as exc:
        raise FitError(f"mean model not evaluable at the starting point: {exc}") from exc

    best = (np.inf, b.copy())
    converged = False
    iterations = 0
    for iterations in range(1, opts.max_iter + 1):
        S = y - mu
        var = link.variance(mu)
        phi, rho = nuisance(S, var)
        terms = _terms(D, S, var, rho, clusters)
        norm = float(np.max(np.abs(terms.score[free])))
        if norm < best[0]:
            best = (norm, b.copy())
        try:
            step = np.zeros(l + 1)
            step[free] = spd_solve_guarded(terms.bread[free, free], terms.score[free])
        except SingularSystemError as exc:
            raise FitError(f"singular normal matrix: {exc}") from exc
        if np.max(np.abs(step)) < opts.tol:
            b = b + step
            mu, D = evaluate(b)
            converged = True
            break
        # halve while the estimating-function norm does not drop; if no halving
        # helps, take the full scoring step
        t = 1.0
        accepted = full = None
        for _ in range(opts.max_halvings + 1):
            cand = b + t * step
            t *= 0.5
            try:
                mu_c, D_c = evaluate(cand)
            except (SingularSystemError, ConvergenceError):
                continue
            if full is None:
                full = (cand, mu_c, D_c)
            cand_terms = _terms(D_c, y - mu_c, link.variance(mu_c), rho, clusters)
            if np.max(np.abs(cand_terms.score[free])) < norm:
                accepted = (cand, mu_c, D_c)
                break
        accepted = accepted or full
        if accepted is None:
            logger.debug("no evaluable step from iterate %s", b)
            break
        b, mu, D = accepted

    if not converged:
        b = best[1]
        mu, D = evaluate(b)
        logger.info("GEE did not converge in %d iterations", iterations)

    S = y - mu
    var = link.variance(mu)
    phi, rho = nuisance(S, var)
    terms = _terms(D, S, var, rho, clusters)
    p = l + 1
    sandwich = np.zeros((p, p))
    naive = np.zeros((p, p))
    try:
        bread_inv = spd_inverse_guarded(terms.bread[free, free])
    except SingularSystemError as exc:
        raise FitError(f"singular normal matrix at the estimate: {exc}") from exc
    contrib = terms.contributions[:, free]
    meat = contrib.T @ contrib
    sandwich[free, free] = symmetrize(bread_inv @ meat @ bread_inv)
    naive[free, free] = phi * bread_inv
    return FitResult(
        params=ModelParams.from_vector(b),
        sandwich_cov=sandwich,
        naive_cov=naive,
        converged=converged,
        iterations=iterations,
        cluster_residuals=tuple(S[idx] for idx in clusters.members),
        phi_hat=phi,
        rho_hat=rho,
        score_norm=float(np.max(np.abs(terms.score[free]))),
        link=link,
        z_mode=opts.z_mode,
        corr=corr,
        fitted=mu,
        n_clusters=clusters.K,
        fixed_beta=opts.fixed_beta is not None,
    )


def fit_naive(graph: DirectedGraph, X, y, link: Link = Link.IDENTITY, **option_overrides) -> FitResult:
    """Fit ignoring community structure: every node is its own cluster.

    Uses the whole-network covariate, so the point estimate is the least
    squares (identity) or GLM (logit) solution of the mean equation; the
    dispersion is estimated for least squares and fixed at 1 for the logit GLM.
    """
    link = Link(link)
    option_overrides.setdefault("estimate_phi", link is Link.IDENTITY)
    opts = FitOptions(link=link, z_mode=ZMode.FULL, **option_overrides)
    return fit_gee(graph, Partition.singletons(graph.n), X, y, WorkingCorrelation.INDEPENDENCE, opts)
