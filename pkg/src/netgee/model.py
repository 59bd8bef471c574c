"""Network-autoregressive mean model.

For node ``i`` the mean ``mu_i`` solves::

    g(mu_i) = alpha' x_i + beta * sum_{j != i} A[j, i] * ginv(mu_j) / (n - 1)

so a node aggregates over its *incoming* edges; in matrix form the stored
adjacency enters transposed. ``n`` is always the size of the whole network,
also when the equation is restricted to one community block.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from netgee._linalg import SingularSystemError, lu_solve_guarded

__all__ = [
    "Link",
    "ModelParams",
    "ConvergenceError",
    "SingularSystemError",
    "LOGIT_CLAMP",
    "mean_continuous_block",
    "mean_fixed_point",
    "mean",
    "network_covariate",
    "jacobian",
    "jacobian_Dk",
    "simulate_design",
    "simulate_outcomes",
]

#: Logit-link means are kept inside [LOGIT_CLAMP, 1 - LOGIT_CLAMP].
LOGIT_CLAMP = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class Link(str, enum.Enum):
    IDENTITY = "identity"
    LOGIT = "logit"

    def __call__(self, mu):
        """The link g(mu)."""
        return mu if self is Link.IDENTITY else logit(mu)

    def inverse(self, eta):
        return eta if self is Link.IDENTITY else expit(eta)

    def inverse_deriv(self, eta):
        if self is Link.IDENTITY:
            return np.ones_like(np.asarray(eta, dtype=float))
        s = expit(eta)
        return s * (1.0 - s)

    def deriv(self, mu):
        """g'(mu)."""
        if self is Link.IDENTITY:
            return np.ones_like(np.asarray(mu, dtype=float))
        return 1.0 / (mu * (1.0 - mu))

    def mu_eta(self, mu):
        """``d mu / d eta = 1 / g'(mu)`` expressed through ``mu``."""
        if self is Link.IDENTITY:
            return np.ones_like(np.asarray(mu, dtype=float))
        return mu * (1.0 - mu)

    def variance(self, mu):
        """Variance function used for Pearson residuals."""
        if self is Link.IDENTITY:
            return np.ones_like(np.asarray(mu, dtype=float))
        return mu * (1.0 - mu)

    def clamp(self, mu):
        if self is Link.IDENTITY:
            return mu
        return np.clip(mu, LOGIT_CLAMP, 1.0 - LOGIT_CLAMP)


@dataclass(frozen=True, eq=False)
class ModelParams:
    beta: float
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float, copy=True).reshape(-1)
        if alpha.size < 1:
            raise ValueError("alpha needs at least one coefficient")
        if not (np.isfinite(self.beta) and np.all(np.isfinite(alpha))):
            raise ValueError("model parameters must be finite")
        alpha.setflags(write=False)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "alpha", alpha)

    @property
    def l(self) -> int:
        return self.alpha.size

    def as_vector(self) -> np.ndarray:
        """Stack as ``(beta, alpha_1, ..., alpha_l)``."""
        return np.concatenate([[self.beta], self.alpha])

    @classmethod
    def from_vector(cls, b) -> "ModelParams":
        b = np.asarray(b, dtype=float)
        return cls(b[0], b[1:])


def _check_shapes(A: np.ndarray, X: np.ndarray, params: ModelParams) -> None:
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"adjacency block must be square, got {A.shape}")
    if X.ndim != 2 or X.shape[1] != A.shape[0]:
        raise ValueError(f"design must be l x {A.shape[0]}, got {X.shape}")
    if X.shape[0] != params.l:
        raise ValueError(f"design has {X.shape[0]} covariates, alpha has {params.l}")


def _total_n(A: np.ndarray, n: int | None) -> int:
    n = A.shape[0] if n is None else int(n)
    if n < 2:
        # a lone node has no neighbours; any positive scale gives a zero term
        return 2
    return n


def network_covariate(A: np.ndarray, v: np.ndarray, n: int | None = None) -> np.ndarray:
    """In-edge aggregate ``Z_i = sum_j A[j, i] v_j / (n - 1)``."""
    A = np.asarray(A, dtype=float)
    return A.T @ np.asarray(v, dtype=float) / (_total_n(A, n) - 1)


def mean_continuous_block(A_k, X_k, params: ModelParams, n: int | None = None) -> np.ndarray:
    """Closed-form identity-link mean ``(I - beta A_k' / (n-1))^{-1} X_k' alpha``."""
    A_k = np.asarray(A_k, dtype=float)
    X_k = np.asarray(X_k, dtype=float)
    _check_shapes(A_k, X_k, params)
    eta = X_k.T @ params.alpha
    if params.beta == 0.0:
        return eta
    scale = params.beta / (_total_n(A_k, n) - 1)
    system = np.eye(A_k.shape[0]) - scale * A_k.T
    return lu_solve_guarded(system, eta)


def mean_fixed_point(
    A,
    X,
    params: ModelParams,
    link: Link,
    tol: float = 1e-10,
    max_iter: int = 500,
    *,
    n: int | None = None,
    damping: float = 0.5,
) -> np.ndarray:
    """Solve the mean equation by damped fixed-point iteration.

    Starts from ``ginv(X' alpha)``; each step moves halfway (``damping``) towards
    ``ginv(X' alpha + beta * Z(ginv(mu)))``. Stops once the max-norm gap between
    ``mu`` and its image is below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A = np.asarray(A, dtype=float)
    X = np.asarray(X, dtype=float)
    _check_shapes(A, X, params)
    link = Link(link)
    eta = X.T @ params.alpha
    mu = link.clamp(link.inverse(eta))
    if params.beta == 0.0:
        return mu
    scale = params.beta / (_total_n(A, n) - 1)
    At = A.T
    residual = np.inf
    for _ in range(max_iter):
        image = link.clamp(link.inverse(eta + scale * (At @ link.inverse(mu))))
        residual = float(np.max(np.abs(image - mu)))
        if not np.isfinite(residual):
            break
        if residual < tol:
            return image
        mu = link.clamp((1.0 - damping) * mu + damping * image)
    raise ConvergenceError(
        f"mean fixed point did not converge in {max_iter} iterations (residual {residual:.3g})",
        residual,
    )


def mean(A, X, params: ModelParams, link: Link, n: int | None = None, tol: float = 1e-10) -> np.ndarray:
    """Mean for either link: closed form for identity, fixed point for logit."""
    link = Link(link)
    if link is Link.IDENTITY:
        return mean_continuous_block(A, X, params, n)
    return mean_fixed_point(A, X, params, link, tol=tol, n=n)


def jacobian(A, X, params: ModelParams, link: Link, n: int | None = None, mu=None) -> np.ndarray:
    """``d mu / d (beta, alpha')`` by implicit differentiation of the mean equation.

    Returns an ``n_k x (l+1)`` matrix; column 0 is the beta derivative.
    With ``h = ginv`` applied to ``mu`` in the network term,

        (diag g'(mu) - beta/(n-1) A' diag h'(mu)) dmu = [Z, X'] db

    which for the identity link is ``M [A' mu / (n-1), X']`` with
    ``M = (I - beta A'/(n-1))^{-1}``. Rows are scaled by ``1/g'(mu)`` before
    solving so saturated logit means do not wreck the conditioning.
    """
    A = np.asarray(A, dtype=float)
    X = np.asarray(X, dtype=float)
    link = Link(link)
    _check_shapes(A, X, params)
    if mu is None:
        mu = mean(A, X, params, link, n)
    scale = 1.0 / (_total_n(A, n) - 1)
    z = scale * (A.T @ link.inverse(mu))
    w = link.mu_eta(mu)
    rhs = w[:, None] * np.column_stack([z, X.T])
    system = np.eye(A.shape[0]) - params.beta * scale * (w[:, None] * A.T * link.inverse_deriv(mu)[None, :])
    return lu_solve_guarded(system, rhs)


def jacobian_Dk(A_k, X_k, params: ModelParams, link: Link, n: int | None = None) -> np.ndarray:
    return jacobian(A_k, X_k, params, link, n)


def simulate_design(K: int, m: int, l: int, seed=None) -> np.ndarray:
    """``l x (K*m)`` design; columns of community k are MVN((k/10) 1, 0.01 I)."""
    if l < 1:
        raise ValueError("l must be at least 1")
    rng = np.random.default_rng(seed)
    centers = np.repeat(np.arange(1, K + 1) / 10.0, m)
    noise = rng.standard_normal((K * m, l))
    return (centers[:, None] + 0.1 * noise).T


def simulate_outcomes(mu, link: Link, seed=None, noise_var: float = 0.01) -> np.ndarray:
    """Gaussian (identity) or Bernoulli (logit) draws around ``mu``."""
    mu = np.asarray(mu, dtype=float)
    link = Link(link)
    rng = np.random.default_rng(seed)
    if link is Link.IDENTITY:
        return mu + np.sqrt(noise_var) * rng.standard_normal(mu.shape)
    if np.any(mu <= 0.0) or np.any(mu >= 1.0):
        raise ValueError("Bernoulli means must lie strictly inside (0, 1)")
    return (rng.random(mu.shape) < mu).astype(float)
