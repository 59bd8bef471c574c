"""Simulation grids behind the Type-I tables and the bias/SE panels, plus comparisons
against the published numbers."""

from __future__ import annotations

import math

import numpy as np

from netgee.inference import (
    ExperimentBudgetError,
    Method,
    RateCheckConfig,
    SimStudyConfig,
    bias_variance_experiment,
    rate_check,
    run_experiment,
    type1_error_experiment,
)
from netgee.model import Link

#: (n, K) sizes of the simulation study; communities always hold 10 nodes.
SIZES = ((200, 20), (400, 40))
#: (p, q) from most to least modular.
PQ_GRID = ((0.8, 0.0), (0.7, 0.1), (0.6, 0.2), (0.5, 0.3))

SCALES = {"desk": 200, "full": 1000}

# Published Type-I error rates at level 0.05, keyed by (n, K, p, q).
PUBLISHED_TYPE1 = {
    Link.IDENTITY: {
        (200, 20, 0.8, 0.0): {"gee-indep": 0.049, "gee-exch": 0.055, "naive": 0.062},
        (200, 20, 0.7, 0.1): {"gee-indep": 0.050, "gee-exch": 0.055, "naive": 0.079},
        (200, 20, 0.6, 0.2): {"gee-indep": 0.058, "gee-exch": 0.061, "naive": 0.091},
        (200, 20, 0.5, 0.3): {"gee-indep": 0.072, "gee-exch": 0.075, "naive": 0.095},
        (400, 40, 0.8, 0.0): {"gee-indep": 0.050, "gee-exch": 0.050, "naive": 0.060},
        (400, 40, 0.7, 0.1): {"gee-indep": 0.051, "gee-exch": 0.056, "naive": 0.075},
        (400, 40, 0.6, 0.2): {"gee-indep": 0.059, "gee-exch": 0.062, "naive": 0.090},
        (400, 40, 0.5, 0.3): {"gee-indep": 0.070, "gee-exch": 0.075, "naive": 0.096},
    },
    Link.LOGIT: {
        (200, 20, 0.8, 0.0): {"gee-indep": 0.045, "gee-exch": 0.060, "naive": 0.049},
        (200, 20, 0.7, 0.1): {"gee-indep": 0.055, "gee-exch": 0.055, "naive": 0.056},
        (200, 20, 0.6, 0.2): {"gee-indep": 0.060, "gee-exch": 0.070, "naive": 0.062},
        (200, 20, 0.5, 0.3): {"gee-indep": 0.063, "gee-exch": 0.075, "naive": 0.065},
        (400, 40, 0.8, 0.0): {"gee-indep": 0.050, "gee-exch": 0.055, "naive": 0.050},
        (400, 40, 0.7, 0.1): {"gee-indep": 0.060, "gee-exch": 0.060, "naive": 0.061},
        (400, 40, 0.6, 0.2): {"gee-indep": 0.059, "gee-exch": 0.065, "naive": 0.063},
        (400, 40, 0.5, 0.3): {"gee-indep": 0.065, "gee-exch": 0.078, "naive": 0.068},
    },
}

FIGURE_METHODS = (Method.GEE_INDEP, Method.NAIVE)
TARGET_LINKS = {"table1": Link.IDENTITY, "table2": Link.LOGIT, "fig1": Link.IDENTITY, "fig2": Link.LOGIT}


def cell_seed(seed: int, cell: int) -> int:
    """Independent base seed for grid cell ``cell``."""
    return int(np.random.SeedSequence(seed, spawn_key=(cell,)).generate_state(1)[0])


def grid_configs(link, beta0: float, B: int, seed: int, methods=None, sizes=SIZES, pq_grid=PQ_GRID, **kwargs):
    configs = []
    for (n, K) in sizes:
        for (p, q) in pq_grid:
            extra = dict(kwargs)
            if methods is not None:
                extra["methods"] = tuple(methods)
            configs.append(
                SimStudyConfig.from_n(
                    n, K, p=p, q=q, beta0=beta0, link=link, B=B, base_seed=cell_seed(seed, len(configs)), **extra
                )
            )
    return configs


def run_grid(configs, threads=None, on_cell=None):
    """Run every configuration without enforcing the failure budget.

    Returns the experiment results in grid order. Call
    :func:`check_budgets` afterwards to enforce it.
    """
    results = []
    for config in configs:
        result = run_experiment(config, threads, check_budget=False)
        results.append(result)
        if on_cell is not None:
            on_cell(config, result)
    return results


def check_budgets(results) -> None:
    problems = []
    for result in results:
        try:
            result.check_budget()
        except ExperimentBudgetError as exc:
            c = result.config
            problems.append(f"(n={c.n}, K={c.K}, p={c.p}, q={c.q}) {exc}")
    if problems:
        raise ExperimentBudgetError("; ".join(problems))


def type1_table(results) -> list[dict]:
    rows = []
    for result in results:
        rows.extend(type1_error_experiment(result.config, result=result))
    return rows


def figure_panels(results) -> list[dict]:
    rows = []
    for result in results:
        rows.extend(bias_variance_experiment(result.config, result=result))
    return rows


def _sigma(rate: float, B: int) -> float:
    return math.sqrt(rate * (1.0 - rate) / B)


def compare_type1(rows, link, B: int) -> dict:
    """Per-cell 3-sigma comparison against the published rates plus method orderings.

    Sigma is the binomial Monte Carlo error of the published rate at ``B``
    replications.
    """
    link = Link(link)
    published = PUBLISHED_TYPE1[link]
    cells = []
    by_cell: dict = {}
    for row in rows:
        key = (row["n"], row["K"], row["p"], row["q"])
        by_cell.setdefault(key, {})[row["method"]] = row["rate"]
        ref = published.get(key, {}).get(row["method"])
        if ref is None:
            continue
        band = 3.0 * _sigma(ref, B)
        cells.append(
            {
                "n": key[0],
                "K": key[1],
                "p": key[2],
                "q": key[3],
                "method": row["method"],
                "observed": row["rate"],
                "published": ref,
                "band": band,
                "within_band": abs(row["rate"] - ref) <= band,
            }
        )
    naive_ge_indep = [
        rates["naive"] >= rates["gee-indep"]
        for key, rates in by_cell.items()
        if key[3] >= 0.1 and {"naive", "gee-indep"} <= rates.keys()
    ]
    exch_ge_indep = [
        rates["gee-exch"] >= rates["gee-indep"] for rates in by_cell.values() if {"gee-exch", "gee-indep"} <= rates.keys()
    ]
    return {
        "link": link.value,
        "B": B,
        "cells": cells,
        "cells_within_band": sum(c["within_band"] for c in cells),
        "cells_compared": len(cells),
        "naive_ge_indep_at_q_pos": [sum(naive_ge_indep), len(naive_ge_indep)],
        "exch_ge_indep": [sum(exch_ge_indep), len(exch_ge_indep)],
    }


def compare_figure(rows, results=None) -> dict:
    """Shape checks on the bias/SE panels.

    * squared bias nondecreasing in q per (n, method)
    * naive mean standard error strictly below the GEE one at every point
    * identical point estimates per replication for GEE-indep and naive, over
      replications where both fits converged
    """
    series: dict = {}
    points: dict = {}
    for row in rows:
        series.setdefault((row["n"], row["method"]), []).append((row["q"], row["bias_sq"]))
        points.setdefault((row["n"], row["p"], row["q"]), {})[row["method"]] = row
    monotone = {}
    for (n, method), vals in sorted(series.items()):
        vals.sort()
        bias = [b for _, b in vals]
        monotone[f"{n}/{method}"] = all(b2 >= b1 for b1, b2 in zip(bias, bias[1:]))
    se_order = {}
    for (n, p, q), by_method in sorted(points.items()):
        if {"naive", "gee-indep"} <= by_method.keys():
            se_order[f"{n}/{p}/{q}"] = by_method["naive"]["mean_est_se"] < by_method["gee-indep"]["mean_est_se"]
    max_gap = None
    if results is not None:
        gaps = []
        for result in results:
            pairs = [
                (a.beta, b.beta)
                for a, b in zip(result.outcomes(Method.GEE_INDEP), result.outcomes(Method.NAIVE))
                if a.ok and b.ok
            ]
            if pairs:
                gaps.append(float(np.max(np.abs(np.subtract(*zip(*pairs))))))
        max_gap = max(gaps) if gaps else None
    return {
        "bias_sq_nondecreasing": monotone,
        "naive_se_below_gee": se_order,
        "max_estimate_gap": max_gap,
    }


def type1_grid(link, B: int, seed: int = 0, threads=None, on_cell=None, **kwargs):
    configs = grid_configs(link, 0.0, B, seed, **kwargs)
    results = run_grid(configs, threads, on_cell)
    return results, type1_table(results)


def figure_grid(link, B: int, seed: int = 0, threads=None, on_cell=None, **kwargs):
    configs = grid_configs(link, 0.5, B, seed, methods=FIGURE_METHODS, **kwargs)
    results = run_grid(configs, threads, on_cell)
    return results, figure_panels(results)


def rate_check_grid(reps: int = 500, seed: int = 0, **kwargs) -> dict:
    return rate_check(RateCheckConfig(reps=reps, base_seed=seed, **kwargs))


__all__ = [
    "SIZES",
    "PQ_GRID",
    "SCALES",
    "PUBLISHED_TYPE1",
    "FIGURE_METHODS",
    "TARGET_LINKS",
    "cell_seed",
    "grid_configs",
    "run_grid",
    "check_budgets",
    "type1_table",
    "figure_panels",
    "compare_type1",
    "compare_figure",
    "type1_grid",
    "figure_grid",
    "rate_check_grid",
]
