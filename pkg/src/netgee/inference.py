"""Wald tests, empirical-null tests and Monte Carlo experiment harnesses.

Replication ``b`` of an experiment draws everything from
``SeedSequence(base_seed, spawn_key=(b,))``, so any replication can be rerun
on its own and results do not depend on worker scheduling.
"""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from netgee.communities import (
    DetectionAlgorithm,
    GreedyModularity,
    LabelPropagation,
    Oracle,
    detect,
    partition_agreement,
)
from netgee.gee import (
    FitError,
    FitOptions,
    FitResult,
    WorkingCorrelation,
    ZMode,
    fit_gee,
    fit_naive,
)
from netgee.graph import SbmConfig, estimate_edge_probs, edge_counts, planted_partition, sample_sbm
from netgee.model import ConvergenceError, Link, ModelParams, SingularSystemError, mean, simulate_design, simulate_outcomes

__all__ = [
    "ALPHA0",
    "Method",
    "SimStudyConfig",
    "RateCheckConfig",
    "ExperimentBudgetError",
    "MethodOutcome",
    "Replication",
    "ExperimentResult",
    "wald_test",
    "exceedance_pvalue",
    "simulate_replication",
    "run_replication",
    "run_experiment",
    "null_distribution",
    "empirical_null_test",
    "type1_error_experiment",
    "bias_variance_experiment",
    "rate_check",
    "resolve_threads",
]

logger = logging.getLogger(__name__)

#: Covariate coefficients of the simulation design (l = 10).
ALPHA0 = (1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, -0.5, -0.5, 2.0)

#: Largest tolerated share of failed fits per method.
FAILURE_BUDGET = 0.05


class ExperimentBudgetError(RuntimeError):
    """More than 5% of the fits of some method failed."""


class Method(str, enum.Enum):
    GEE_INDEP = "gee-indep"
    GEE_EXCH = "gee-exch"
    NAIVE = "naive"


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("NETGEE_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


@dataclass(frozen=True)
class SimStudyConfig:
    K: int = 20
    m: int = 10
    p: float = 0.8
    q: float = 0.0
    beta0: float = 0.5
    alpha0: tuple = ALPHA0
    link: Link = Link.IDENTITY
    B: int = 1000
    base_seed: int = 0
    methods: tuple = (Method.GEE_INDEP, Method.GEE_EXCH, Method.NAIVE)
    detection: DetectionAlgorithm | None = field(default_factory=GreedyModularity)
    z_mode: ZMode = ZMode.FULL

    def __post_init__(self):
        if self.K < 1 or self.m < 1:
            raise ValueError("K and m must be positive")
        if self.B < 1:
            raise ValueError("B must be at least 1")
        for name in ("p", "q"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        object.__setattr__(self, "alpha0", tuple(float(a) for a in self.alpha0))
        object.__setattr__(self, "link", Link(self.link))
        object.__setattr__(self, "z_mode", ZMode(self.z_mode))
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if not self.methods:
            raise ValueError("at least one method is required")

    @classmethod
    def from_n(cls, n: int, K: int, **kwargs) -> "SimStudyConfig":
        if K < 1 or n % K:
            raise ValueError(f"n={n} is not divisible by K={K}")
        return cls(K=K, m=n // K, **kwargs)

    @property
    def n(self) -> int:
        return self.K * self.m

    @property
    def l(self) -> int:
        return len(self.alpha0)

    def describe(self) -> dict:
        det = self.detection
        return {
            "n": self.n,
            "K": self.K,
            "m": self.m,
            "p": self.p,
            "q": self.q,
            "beta0": self.beta0,
            "alpha0": list(self.alpha0),
            "link": self.link.value,
            "B": self.B,
            "base_seed": self.base_seed,
            "methods": [m.value for m in self.methods],
            "detection": "oracle" if det is None or isinstance(det, Oracle) else repr(det),
            "z_mode": self.z_mode.value,
        }


@dataclass(frozen=True)
class MethodOutcome:
    beta: float = float("nan")
    se: float = float("nan")
    converged: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.converged and np.isfinite(self.beta) and self.se > 0


@dataclass(frozen=True)
class Replication:
    index: int
    outcomes: dict
    n_communities: int
    agreement: float
    mean_degree: float


def wald_test(fit: FitResult, coef_index: int = 0, robust: bool = True) -> tuple[float, float]:
    """z statistic and two-sided normal p-value for one coefficient.

    ``robust`` selects the sandwich standard error; otherwise the model-based one.
    """
    se = (fit.sandwich_se if robust else fit.naive_se)[coef_index]
    if not se > 0:
        raise ValueError(f"standard error of coefficient {coef_index} is zero")
    z = float(fit.estimates[coef_index] / se)
    return z, float(2.0 * stats.norm.sf(abs(z)))


def exceedance_pvalue(null_betas, observed: float) -> float:
    """``(1 + #{|b| >= |observed|}) / (1 + B)``."""
    null_betas = np.abs(np.asarray(null_betas, dtype=float))
    if null_betas.size == 0:
        raise ValueError("empty null distribution")
    hits = int(np.sum(null_betas >= abs(observed)))
    return (1 + hits) / (1 + null_betas.size)


def _seeds(config: SimStudyConfig, index: int):
    root = np.random.SeedSequence(config.base_seed, spawn_key=(index,))
    return root.spawn(4)


def simulate_replication(config: SimStudyConfig, index: int):
    """Graph, planted partition, design and outcomes of replication ``index``."""
    s_graph, s_design, s_outcome, _ = _seeds(config, index)
    graph = sample_sbm(SbmConfig(config.K, config.m, config.p, config.q, seed=s_graph))
    planted = planted_partition(config.K, config.m)
    X = simulate_design(config.K, config.m, config.l, seed=s_design)
    mu = mean(graph.weights, X, ModelParams(config.beta0, config.alpha0), config.link)
    y = simulate_outcomes(mu, config.link, seed=s_outcome)
    return graph, planted, X, y


def _detector(config: SimStudyConfig, planted, index: int) -> DetectionAlgorithm:
    det = config.detection
    if det is None or isinstance(det, Oracle):
        return Oracle(planted.labels)
    seed = int(_seeds(config, index)[3].generate_state(1)[0])
    if isinstance(det, (GreedyModularity, LabelPropagation)):
        return replace(det, seed=seed)
    return det


_FIT_ERRORS = (FitError, SingularSystemError, ConvergenceError, ValueError, np.linalg.LinAlgError)


def _fit_method(method: Method, graph, partition, X, y, config: SimStudyConfig) -> MethodOutcome:
    try:
        if method is Method.NAIVE:
            fit = fit_naive(graph, X, y, config.link)
            se = fit.naive_se[0]
        else:
            corr = WorkingCorrelation.INDEPENDENCE if method is Method.GEE_INDEP else WorkingCorrelation.EXCHANGEABLE
            fit = fit_gee(graph, partition, X, y, corr, FitOptions(link=config.link, z_mode=config.z_mode))
            se = fit.sandwich_se[0]
    except _FIT_ERRORS as exc:
        return MethodOutcome(error=f"{type(exc).__name__}: {exc}")
    error = None if fit.converged else "not converged"
    return MethodOutcome(fit.params.beta, float(se), fit.converged, error)


def run_replication(config: SimStudyConfig, index: int) -> Replication:
    graph, planted, X, y = simulate_replication(config, index)
    partition = detect(graph, _detector(config, planted, index))
    outcomes = {m.value: _fit_method(m, graph, partition, X, y, config) for m in config.methods}
    return Replication(
        index=index,
        outcomes=outcomes,
        n_communities=partition.K,
        agreement=partition_agreement(partition, planted),
        mean_degree=float(graph.weights.sum() / graph.n),
    )


def _run_chunk(args):
    config, indices = args
    return [run_replication(config, b) for b in indices]


def _parallel_map(config: SimStudyConfig, indices, threads: int | None):
    threads = resolve_threads(threads)
    indices = list(indices)
    if threads == 1 or len(indices) < 2:
        out = [run_replication(config, b) for b in indices]
    else:
        chunks = [(config, indices[i::threads]) for i in range(threads)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = [rep for chunk in pool.map(_run_chunk, chunks) for rep in chunk]
    return sorted(out, key=lambda r: r.index)


@dataclass(frozen=True)
class ExperimentResult:
    config: SimStudyConfig
    replications: tuple

    def outcomes(self, method) -> list:
        key = Method(method).value
        return [r.outcomes[key] for r in self.replications]

    def failures(self, method) -> int:
        return sum(not o.ok for o in self.outcomes(method))

    def betas(self, method, only_ok: bool = True) -> np.ndarray:
        return np.array([o.beta for o in self.outcomes(method) if o.ok or not only_ok])

    def ses(self, method) -> np.ndarray:
        return np.array([o.se for o in self.outcomes(method) if o.ok])

    def check_budget(self) -> None:
        for method in self.config.methods:
            failed = self.failures(method)
            if failed > FAILURE_BUDGET * len(self.replications):
                errors = sorted({o.error for o in self.outcomes(method) if o.error})
                raise ExperimentBudgetError(
                    f"{method.value}: {failed}/{len(self.replications)} fits failed "
                    f"(budget {FAILURE_BUDGET:.0%}); errors: {errors[:5]}"
                )

    def rejection_rate(self, method, level: float = 0.05) -> float:
        betas = self.betas(method)
        ses = self.ses(method)
        pvals = 2.0 * stats.norm.sf(np.abs((betas - self.config.beta0) / ses))
        return float(np.mean(pvals < level))

    def summary(self) -> dict:
        reps = self.replications
        return {
            "mean_degree": float(np.mean([r.mean_degree for r in reps])),
            "mean_communities": float(np.mean([r.n_communities for r in reps])),
            "mean_agreement": float(np.mean([r.agreement for r in reps])),
        }


def run_experiment(config: SimStudyConfig, threads: int | None = None, check_budget: bool = True) -> ExperimentResult:
    reps = _parallel_map(config, range(config.B), threads)
    result = ExperimentResult(config, tuple(reps))
    for method in config.methods:
        failed = result.failures(method)
        if failed:
            logger.warning("%s: %d of %d fits failed", method.value, failed, config.B)
    if check_budget:
        result.check_budget()
    return result


def _cell(config: SimStudyConfig) -> dict:
    return {"n": config.n, "K": config.K, "p": config.p, "q": config.q, "link": config.link.value}


def type1_error_experiment(
    config: SimStudyConfig, level: float = 0.05, threads: int | None = None, result: ExperimentResult | None = None
) -> list[dict]:
    """Per-method share of null replications whose Wald p-value is below ``level``."""
    if config.beta0 != 0.0:
        raise ValueError("type-I error experiments need beta0 = 0")
    result = result or run_experiment(config, threads)
    rows = []
    for method in config.methods:
        rate = result.rejection_rate(method, level)
        used = len(result.betas(method))
        rows.append(
            {
                **_cell(config),
                "method": method.value,
                "rate": rate,
                "mc_se": float(np.sqrt(rate * (1 - rate) / used)) if used else float("nan"),
                "n_ok": used,
                "n_failed": result.failures(method),
                **result.summary(),
            }
        )
    return rows


def bias_variance_experiment(
    config: SimStudyConfig, threads: int | None = None, result: ExperimentResult | None = None
) -> list[dict]:
    """Squared bias and spread of the network-effect estimate per method.

    ``se`` is the Monte Carlo standard deviation of the estimates;
    ``mean_est_se`` averages the standard errors each method reports
    (sandwich for GEE, model-based for the naive fit).
    """
    result = result or run_experiment(config, threads)
    rows = []
    for method in config.methods:
        betas = result.betas(method)
        rows.append(
            {
                **_cell(config),
                "method": method.value,
                "mean_beta": float(np.mean(betas)),
                "bias_sq": float((np.mean(betas) - config.beta0) ** 2),
                "se": float(np.std(betas, ddof=1)) if betas.size > 1 else float("nan"),
                "mean_est_se": float(np.mean(result.ses(method))),
                "n_ok": int(betas.size),
                "n_failed": result.failures(method),
                **result.summary(),
            }
        )
    return rows


def null_distribution(config: SimStudyConfig, method=Method.GEE_INDEP, threads: int | None = None) -> np.ndarray:
    """Estimates of the network effect over ``B`` replications simulated with beta = 0."""
    if config.beta0 != 0.0:
        raise ValueError("the null distribution is simulated with beta0 = 0")
    method = Method(method)
    config = replace(config, methods=(method,))
    result = run_experiment(config, threads)
    return result.betas(method)


def empirical_null_test(
    config: SimStudyConfig, observed_beta: float, method=Method.GEE_INDEP, threads: int | None = None
) -> float:
    """Exceedance p-value of ``observed_beta`` against a simulated null distribution."""
    if config.B < 100:
        raise ValueError("empirical null test needs B >= 100")
    return exceedance_pvalue(null_distribution(config, method, threads), observed_beta)


@dataclass(frozen=True)
class RateCheckConfig:
    gamma: float = 0.0
    ladder: tuple = ((10, 20), (10, 40), (20, 40))
    p: float = 0.6
    q: float = 0.2
    reps: int = 500
    base_seed: int = 0
    slack: float = 0.2
    follow_regime: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma < 2.0:
            raise ValueError("gamma must lie in [0, 2)")
        if len(self.ladder) < 3:
            raise ValueError("the size ladder needs at least three sizes")
        object.__setattr__(self, "ladder", tuple((int(m), int(k)) for m, k in self.ladder))
        if self.reps < 2:
            raise ValueError("need at least two replications per size")

    def probs_at(self, step: int) -> tuple[float, float]:
        """Edge probabilities at ladder rung ``step``.

        With ``follow_regime`` the probabilities shrink so that ``K m^gamma p``
        and ``K^2 m^gamma q`` stay at their first-rung values.
        """
        if not self.follow_regime:
            return self.p, self.q
        m0, k0 = self.ladder[0]
        m, k = self.ladder[step]
        p = self.p * (k0 * m0**self.gamma) / (k * m**self.gamma)
        q = self.q * (k0**2 * m0**self.gamma) / (k**2 * m**self.gamma)
        return p, q


def rate_check(config: RateCheckConfig) -> dict:
    """Scaled estimation errors of p-hat and q-hat up a ladder of network sizes.

    For every ``(m, K)`` the spread of ``m^{1+g/2} K^{1/2} (p_hat - p)`` and
    ``m^{1+g/2} K (q_hat - q)`` is measured over ``reps`` block-model draws,
    and the standardized within/between edge counts are compared with N(0, 1)
    by a Kolmogorov-Smirnov test.
    """
    rows = []
    g = config.gamma
    with np.errstate(all="ignore"):
        for step, (m, K) in enumerate(config.ladder):
            p, q = config.probs_at(step)
            planted = planted_partition(K, m)
            n_within = K * m * (m - 1)
            n_between = K * (K - 1) * m * m
            err_p, err_q, z_p, z_q = [], [], [], []
            for r in range(config.reps):
                seed = np.random.SeedSequence(config.base_seed, spawn_key=(step, r))
                graph = sample_sbm(SbmConfig(K, m, p, q, seed=seed)) if K > 1 else None
                p_hat, q_hat = estimate_edge_probs(graph, planted)
                within, _, between, _ = edge_counts(graph, planted)
                err_p.append(p_hat - p)
                err_q.append(q_hat - q)
                z_p.append((within - n_within * p) / np.sqrt(n_within * p * (1 - p)))
                z_q.append((between - n_between * q) / np.sqrt(n_between * q * (1 - q)))
            scale = m ** (1 + g / 2)
            sd_p = float(np.std(scale * np.sqrt(K) * np.array(err_p), ddof=1))
            sd_q = float(np.std(scale * K * np.array(err_q), ddof=1))
            ks_p = float(stats.kstest(z_p, "norm").pvalue) if 0 < p < 1 else None
            ks_q = float(stats.kstest(z_q, "norm").pvalue) if 0 < q < 1 else None
            rows.append(
                {
                    "m": m,
                    "K": K,
                    "n": m * K,
                    "p": p,
                    "q": q,
                    "sd_scaled_p": sd_p,
                    "sd_scaled_q": sd_q,
                    "sd_ratio": sd_q / sd_p if sd_p > 0 else None,
                    "ks_p_within": ks_p,
                    "ks_p_between": ks_q,
                }
            )

    def nonincreasing(key):
        vals = [r[key] for r in rows]
        return all(b <= (1 + config.slack) * a for a, b in zip(vals, vals[1:]))

    ratios = [r["sd_ratio"] for r in rows if r["sd_ratio"] is not None]
    return {
        "gamma": g,
        "rows": rows,
        "p_sd_nonincreasing": nonincreasing("sd_scaled_p"),
        "q_sd_nonincreasing": nonincreasing("sd_scaled_q"),
        "max_sd_ratio": max(ratios) if ratios else None,
    }
