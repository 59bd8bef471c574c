"""Build analysis-ready networks and designs from flight counts and country indicators.

Inputs
------
flight CSV
    header ``origin_code,dest_code,count`` with an optional ``month`` column.
    Repeated (origin, destination) rows are summed.
covariate CSV
    header ``code,gdp,population,urban_pct`` with optional ``incidence_rate``
    and ``aid`` columns. A blank or ``NA`` cell drops the country.

Countries are kept when they appear in both files with complete covariates,
and are ordered lexicographically by code.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from netgee._csvio import format_number, write_matrix, write_vector
from netgee.graph import DirectedGraph

__all__ = [
    "AdjacencyMode",
    "FlightCountMatrix",
    "CountryCovariates",
    "read_flights",
    "read_covariates",
    "load_and_join",
    "third_quartile",
    "build_adjacency",
    "scale_covariates",
    "dichotomize_aid",
    "build_outcome",
    "write_flights_csv",
    "write_covariates_csv",
    "join_report",
    "run_pipeline",
]

logger = logging.getLogger(__name__)

_MISSING = {"", "na", "nan", "null", "none"}
REQUIRED_COVARIATES = ("gdp", "population", "urban_pct")
OPTIONAL_COVARIATES = ("incidence_rate", "aid")


class AdjacencyMode(str, enum.Enum):
    WEIGHTED = "weighted"
    UNWEIGHTED = "unweighted"


@dataclass(frozen=True, eq=False)
class FlightCountMatrix:
    """``counts[i, j]`` flights from ``countries[i]`` to ``countries[j]``; zero diagonal."""

    countries: tuple
    counts: np.ndarray
    month: str | None = None

    def __post_init__(self):
        countries = tuple(self.countries)
        counts = np.array(self.counts, dtype=float, copy=True)
        if len(set(countries)) != len(countries):
            raise ValueError("country codes must be unique")
        if counts.shape != (len(countries), len(countries)):
            raise ValueError(f"count matrix shape {counts.shape} does not match {len(countries)} countries")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("flight counts must be finite and non-negative")
        np.fill_diagonal(counts, 0.0)
        counts.setflags(write=False)
        object.__setattr__(self, "countries", countries)
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return len(self.countries)

    def subset(self, codes) -> "FlightCountMatrix":
        pos = {c: i for i, c in enumerate(self.countries)}
        idx = [pos[c] for c in codes]
        return FlightCountMatrix(tuple(codes), self.counts[np.ix_(idx, idx)], self.month)


@dataclass(frozen=True, eq=False)
class CountryCovariates:
    """Per-country indicators aligned with ``countries``.

    ``dropped`` maps each excluded code to the reason it was excluded.
    Optional columns absent from the input are ``None``.
    """

    countries: tuple
    gdp: np.ndarray
    population: np.ndarray
    urban_pct: np.ndarray
    incidence_rate: np.ndarray | None = None
    aid: np.ndarray | None = None
    dropped: dict = field(default_factory=dict)

    def subset(self, codes, dropped=None) -> "CountryCovariates":
        pos = {c: i for i, c in enumerate(self.countries)}
        idx = np.array([pos[c] for c in codes], dtype=int)
        pick = lambda v: None if v is None else np.asarray(v)[idx]  # noqa: E731
        return CountryCovariates(
            tuple(codes),
            pick(self.gdp),
            pick(self.population),
            pick(self.urban_pct),
            pick(self.incidence_rate),
            pick(self.aid),
            dict(self.dropped if dropped is None else dropped),
        )


def _open_dict_reader(path: Path, required):
    fh = open(path, newline="")
    reader = csv.DictReader(fh)
    fields = [f.strip() for f in (reader.fieldnames or [])]
    missing = [c for c in required if c not in fields]
    if missing:
        fh.close()
        raise ValueError(f"{path}:1: header lacks column(s) {', '.join(missing)}")
    reader.fieldnames = fields
    return fh, reader


def read_flights(path: str | os.PathLike, month: str | None = None) -> FlightCountMatrix:
    """Sum counts per (origin, destination); keep only rows of ``month`` when given."""
    path = Path(path)
    totals: dict = {}
    codes: set = set()
    fh, reader = _open_dict_reader(path, ("origin_code", "dest_code", "count"))
    with fh:
        if month is not None and "month" not in reader.fieldnames:
            raise ValueError(f"{path}:1: month filter given but file has no month column")
        for lineno, row in enumerate(reader, start=2):
            origin = (row["origin_code"] or "").strip()
            dest = (row["dest_code"] or "").strip()
            if not origin or not dest:
                raise ValueError(f"{path}:{lineno}: missing country code")
            try:
                count = float(row["count"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{lineno}: count {row['count']!r} is not a number") from None
            if count < 0 or not math.isfinite(count) or count != int(count):
                raise ValueError(f"{path}:{lineno}: count must be a non-negative integer, got {row['count']!r}")
            codes.update((origin, dest))
            if month is not None and (row.get("month") or "").strip() != month:
                continue
            totals[origin, dest] = totals.get((origin, dest), 0) + int(count)
    countries = tuple(sorted(codes))
    pos = {c: i for i, c in enumerate(countries)}
    counts = np.zeros((len(countries), len(countries)))
    for (o, d), c in totals.items():
        if o != d:
            counts[pos[o], pos[d]] = c
    return FlightCountMatrix(countries, counts, month)


def _parse_cell(value):
    text = (value or "").strip()
    if text.lower() in _MISSING:
        return None
    return float(text)


def read_covariates(path: str | os.PathLike) -> CountryCovariates:
    """Read indicators; countries with a missing value end up in ``dropped``."""
    path = Path(path)
    fh, reader = _open_dict_reader(path, ("code",) + REQUIRED_COVARIATES)
    present = [c for c in OPTIONAL_COVARIATES if c in reader.fieldnames]
    columns = REQUIRED_COVARIATES + tuple(present)
    records: dict = {}
    dropped: dict = {}
    seen: dict = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            code = (row["code"] or "").strip()
            if not code:
                raise ValueError(f"{path}:{lineno}: missing country code")
            if code in seen:
                raise ValueError(f"{path}:{lineno}: duplicate country code {code!r} (first on line {seen[code]})")
            seen[code] = lineno
            values = {}
            for col in columns:
                try:
                    values[col] = _parse_cell(row.get(col))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: {col} value {row.get(col)!r} is not a number") from None
            missing = [col for col, v in values.items() if v is None or not math.isfinite(v)]
            if missing:
                dropped[code] = "missing " + ", ".join(missing)
                continue
            records[code] = values
    countries = tuple(sorted(records))
    col = lambda name: np.array([records[c][name] for c in countries], dtype=float)  # noqa: E731
    return CountryCovariates(
        countries,
        col("gdp"),
        col("population"),
        col("urban_pct"),
        col("incidence_rate") if "incidence_rate" in present else None,
        col("aid") if "aid" in present else None,
        dropped,
    )


def load_and_join(flight_csv_path, covariates_csv_path, month: str | None = None):
    """Inner join of flights and covariates on the country code.

    Returns
    -------
    (FlightCountMatrix, CountryCovariates)
        Both aligned to the same lexicographic country order. The covariates
        carry every excluded code and its reason in ``dropped``.
    """
    flights = read_flights(flight_csv_path, month)
    covs = read_covariates(covariates_csv_path)
    dropped = dict(covs.dropped)
    have_covs = set(covs.countries)
    have_flights = set(flights.countries)
    for code in sorted(have_flights - have_covs):
        dropped.setdefault(code, "no covariate row")
    for code in sorted(have_covs - have_flights):
        dropped[code] = "no flight records"
    kept = tuple(sorted(have_flights & have_covs))
    if not kept:
        raise ValueError("no country appears in both the flight and covariate files")
    for code, reason in sorted(dropped.items()):
        logger.info("dropped %s: %s", code, reason)
    return flights.subset(kept), covs.subset(kept, dropped)


def third_quartile(counts, include_zeros: bool = True, include_diagonal: bool = False) -> float:
    """Linear-interpolation 75th percentile of the entries of ``counts``."""
    counts = np.asarray(counts, dtype=float)
    if counts.size == 0:
        raise ValueError("empty count matrix")
    if include_diagonal:
        values = counts.ravel()
    else:
        values = counts[~np.eye(counts.shape[0], dtype=bool)]
    if not include_zeros:
        values = values[values != 0]
    if values.size == 0:
        return 0.0
    return float(np.quantile(values, 0.75, method="linear"))


def build_adjacency(
    flights: FlightCountMatrix,
    mode,
    covs: CountryCovariates | None = None,
    include_zeros: bool = True,
    include_diagonal: bool = False,
) -> DirectedGraph:
    """Unweighted: edge iff the count strictly exceeds Q3.
    Weighted: count divided by destination population in millions.
    """
    mode = AdjacencyMode(mode)
    if flights.n == 0:
        raise ValueError("empty flight matrix")
    if mode is AdjacencyMode.UNWEIGHTED:
        q3 = third_quartile(flights.counts, include_zeros, include_diagonal)
        adj = (flights.counts > q3).astype(float)
        np.fill_diagonal(adj, 0.0)
        return DirectedGraph(adj, is_binary=True)
    if covs is None:
        raise ValueError("weighted adjacency needs destination populations")
    if tuple(covs.countries) != tuple(flights.countries):
        raise ValueError("flights and covariates are not aligned; use load_and_join")
    pop = np.asarray(covs.population, dtype=float)
    if np.any(pop <= 0):
        bad = [c for c, p in zip(covs.countries, pop) if p <= 0]
        raise ValueError(f"non-positive population for {', '.join(bad)}")
    return DirectedGraph(flights.counts / (pop / 1e6)[None, :])


def scale_covariates(covs: CountryCovariates) -> np.ndarray:
    """``4 x n`` design: intercept, population/1e6, gdp/1e12, urban_pct/1e2."""
    n = len(covs.countries)
    return np.vstack(
        [
            np.ones(n),
            np.asarray(covs.population, dtype=float) / 1e6,
            np.asarray(covs.gdp, dtype=float) / 1e12,
            np.asarray(covs.urban_pct, dtype=float) / 1e2,
        ]
    )


def dichotomize_aid(aid) -> np.ndarray:
    """1 where aid is strictly above its median; ties map to 0."""
    aid = np.asarray(aid, dtype=float)
    if aid.size == 0:
        raise ValueError("empty aid vector")
    return (aid > np.median(aid)).astype(float)


def build_outcome(covs: CountryCovariates, outcome: str) -> np.ndarray:
    if outcome == "incidence":
        if covs.incidence_rate is None:
            raise ValueError("covariate file has no incidence_rate column")
        return np.asarray(covs.incidence_rate, dtype=float)
    if outcome == "aid":
        if covs.aid is None:
            raise ValueError("covariate file has no aid column")
        return dichotomize_aid(covs.aid)
    raise ValueError(f"unknown outcome {outcome!r}; expected incidence or aid")


def write_flights_csv(flights: FlightCountMatrix, path) -> None:
    """Non-zero counts as ``origin_code,dest_code,count[,month]`` in row-major order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["origin_code", "dest_code", "count"] + (["month"] if flights.month is not None else [])
        writer.writerow(header)
        for i, j in zip(*np.nonzero(flights.counts)):
            row = [flights.countries[i], flights.countries[j], format_number(flights.counts[i, j])]
            writer.writerow(row + ([flights.month] if flights.month is not None else []))


def write_covariates_csv(covs: CountryCovariates, path) -> None:
    optional = [c for c in OPTIONAL_COVARIATES if getattr(covs, c) is not None]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["code", *REQUIRED_COVARIATES, *optional])
        for i, code in enumerate(covs.countries):
            cols = REQUIRED_COVARIATES + tuple(optional)
            writer.writerow([code] + [format_number(getattr(covs, c)[i]) for c in cols])


def join_report(flights, covs, q3=None, median_aid=None, **extra) -> dict:
    return {
        "kept": list(covs.countries),
        "dropped": dict(sorted(covs.dropped.items())),
        "month": flights.month,
        "third_quartile": q3,
        "median_aid": median_aid,
        **extra,
    }


def run_pipeline(
    flight_csv_path,
    covariates_csv_path,
    out_dir,
    mode="unweighted",
    outcome: str = "incidence",
    month: str | None = None,
    include_zeros: bool = True,
    include_diagonal: bool = False,
) -> dict:
    """Write adjacency, design, outcome, country list and join report into ``out_dir``.

    Returns a mapping from artifact name to path.
    """
    mode = AdjacencyMode(mode)
    flights, covs = load_and_join(flight_csv_path, covariates_csv_path, month)
    graph = build_adjacency(flights, mode, covs, include_zeros, include_diagonal)
    X = scale_covariates(covs)
    y = build_outcome(covs, outcome)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "adjacency": out_dir / "adjacency.csv",
        "design": out_dir / "design.csv",
        "outcome": out_dir / "outcome.csv",
        "countries": out_dir / "countries.csv",
        "report": out_dir / "join_report.json",
    }
    write_matrix(paths["adjacency"], graph.weights)
    write_matrix(paths["design"], X.T)
    write_vector(paths["outcome"], y)
    with open(paths["countries"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_id", "code"])
        writer.writerows(enumerate(covs.countries))
    report = join_report(
        flights,
        covs,
        q3=third_quartile(flights.counts, include_zeros, include_diagonal),
        median_aid=float(np.median(covs.aid)) if covs.aid is not None else None,
        mode=mode.value,
        outcome=outcome,
        include_zeros=include_zeros,
        include_diagonal=include_diagonal,
    )
    with open(paths["report"], "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
