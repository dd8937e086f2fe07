"""Panel datasets: CSV loading/saving, train/test split, simulation, forecast export.

File formats (UTF-8, comma separated, header row required)::

    counts.csv       location_id,week,count
    locations.csv    location_id,lon,lat
    population.csv   location_id,population          (static)
                     location_id,week,population     (time-varying)

Weeks absent from ``counts.csv`` for some location (or for every location,
inside the observed range) are kept as masked cells.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as kn
from .diagnostics import quantile_summary
from .gp import cholesky_jitter
from .likelihood import sample_counts


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    location_ids: list
    lon: np.ndarray
    lat: np.ndarray
    weeks: np.ndarray
    counts: np.ndarray  # (L, W) int; value undefined where ~mask
    mask: np.ndarray  # (L, W) bool, True = observed
    population: np.ndarray  # (L, W) float

    def __post_init__(self):
        self.lon = np.asarray(self.lon, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.weeks = np.asarray(self.weeks, dtype=int)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.population = np.asarray(self.population, dtype=float)
        L, W = len(self.location_ids), len(self.weeks)
        for name in ("counts", "mask", "population"):
            if getattr(self, name).shape != (L, W):
                raise DataError(f"{name} has shape {getattr(self, name).shape}, expected {(L, W)}")
        if len(set(self.location_ids)) != L:
            raise DataError("duplicate location ids")
        if np.any(np.diff(self.weeks) <= 0):
            raise DataError("weeks must be strictly increasing")
        if np.any(self.counts[self.mask] < 0):
            raise DataError("negative counts")
        if np.any(~(self.population > 0)):
            raise DataError("populations must be positive")
        self.counts = np.where(self.mask, self.counts, 0)

    @property
    def n_locations(self) -> int:
        return len(self.location_ids)

    @property
    def n_weeks(self) -> int:
        return len(self.weeks)

    @property
    def n_cells(self) -> int:
        return self.n_locations * self.n_weeks

    @property
    def coords(self) -> np.ndarray:
        return np.column_stack([self.lon, self.lat])

    def flat(self):
        """``(X, y, pop, mask)`` over cells, location-major.

        ``X`` columns are (week, lon, lat).
        """
        L, W = self.n_locations, self.n_weeks
        X = np.column_stack(
            [np.tile(self.weeks.astype(float), L), np.repeat(self.lon, W), np.repeat(self.lat, W)]
        )
        return X, self.counts.ravel(), self.population.ravel(), self.mask.ravel()

    def content_hash(self) -> str:
        payload = {
            "ids": list(self.location_ids),
            "lon": [repr(float(v)) for v in self.lon],
            "lat": [repr(float(v)) for v in self.lat],
            "weeks": self.weeks.tolist(),
            "counts": np.where(self.mask, self.counts, -1).tolist(),
            "population": [[repr(float(v)) for v in row] for row in self.population],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def select_weeks(self, idx) -> "Dataset":
        return Dataset(
            list(self.location_ids), self.lon.copy(), self.lat.copy(), self.weeks[idx],
            self.counts[:, idx], self.mask[:, idx], self.population[:, idx],
        )


# ------------------------------------------------------------------- loading

def _read_csv(path, expected_headers):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header not in expected_headers:
            raise DataError(
                f"{path}:1: header {','.join(header)!r}, expected one of "
                + " or ".join(repr(",".join(h)) for h in expected_headers)
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            rows.append((lineno, [c.strip() for c in row]))
    return header, rows


def _num(path, lineno, text, kind=float):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{lineno}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{path}:{lineno}: non-finite value {text!r}")
    if kind is int:
        if value != int(value):
            raise DataError(f"{path}:{lineno}: expected an integer, got {text!r}")
        return int(value)
    return value


def load_dataset(counts_path, locations_path, population_path) -> Dataset:
    """Read, join and validate the three CSV files."""
    _, loc_rows = _read_csv(locations_path, [["location_id", "lon", "lat"]])
    ids, lon, lat = [], [], []
    for lineno, (lid, x, y) in loc_rows:
        if lid in ids:
            raise DataError(f"{locations_path}:{lineno}: duplicate location id {lid!r}")
        ids.append(lid)
        lon.append(_num(locations_path, lineno, x))
        lat.append(_num(locations_path, lineno, y))
    if not ids:
        raise DataError(f"{locations_path}: no locations")
    index = {lid: i for i, lid in enumerate(ids)}

    _, count_rows = _read_csv(counts_path, [["location_id", "week", "count"]])
    unknown = sorted({row[0] for _, row in count_rows if row[0] not in index})
    if unknown:
        raise DataError(f"{counts_path}: unknown location id(s): {', '.join(unknown)}")
    if not count_rows:
        raise DataError(f"{counts_path}: no count rows")
    parsed = []
    for lineno, (lid, wk, cnt) in count_rows:
        week = _num(counts_path, lineno, wk, int)
        count = _num(counts_path, lineno, cnt, int)
        if count < 0:
            raise DataError(f"{counts_path}:{lineno}: negative count {count}")
        parsed.append((lineno, index[lid], week, count))
    w_min = min(p[2] for p in parsed)
    w_max = max(p[2] for p in parsed)
    weeks = np.arange(w_min, w_max + 1)
    L, W = len(ids), len(weeks)
    counts = np.zeros((L, W), dtype=np.int64)
    mask = np.zeros((L, W), dtype=bool)
    for lineno, i, week, count in parsed:
        j = week - w_min
        if mask[i, j]:
            raise DataError(f"{counts_path}:{lineno}: duplicate row for {ids[i]!r} week {week}")
        counts[i, j] = count
        mask[i, j] = True

    header, pop_rows = _read_csv(
        population_path, [["location_id", "population"], ["location_id", "week", "population"]]
    )
    unknown = sorted({row[0] for _, row in pop_rows if row[0] not in index})
    if unknown:
        raise DataError(f"{population_path}: unknown location id(s): {', '.join(unknown)}")
    pop = np.full((L, W), np.nan)
    if len(header) == 2:
        for lineno, (lid, p) in pop_rows:
            value = _num(population_path, lineno, p)
            if value <= 0:
                raise DataError(f"{population_path}:{lineno}: non-positive population {value}")
            pop[index[lid], :] = value
    else:
        for lineno, (lid, wk, p) in pop_rows:
            week = _num(population_path, lineno, wk, int)
            value = _num(population_path, lineno, p)
            if value <= 0:
                raise DataError(f"{population_path}:{lineno}: non-positive population {value}")
            if w_min <= week <= w_max:
                pop[index[lid], week - w_min] = value
    missing = [ids[i] for i in range(L) if np.any(np.isnan(pop[i]))]
    if missing:
        raise DataError(f"{population_path}: missing population for {', '.join(missing)}")
    return Dataset(ids, np.array(lon), np.array(lat), weeks, counts, mask, pop)


def _fmt(x) -> str:
    return repr(float(x))


def save_dataset(data: Dataset, directory) -> dict:
    """Write the three CSV files; returns their paths.

    Population is written in the static form when constant over weeks.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "counts": directory / "counts.csv",
        "locations": directory / "locations.csv",
        "population": directory / "population.csv",
    }
    with open(paths["locations"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location_id", "lon", "lat"])
        for lid, x, y in zip(data.location_ids, data.lon, data.lat):
            w.writerow([lid, _fmt(x), _fmt(y)])
    with open(paths["counts"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["location_id", "week", "count"])
        for i, lid in enumerate(data.location_ids):
            for j, week in enumerate(data.weeks):
                if data.mask[i, j]:
                    w.writerow([lid, int(week), int(data.counts[i, j])])
    static = np.all(data.population == data.population[:, :1])
    with open(paths["population"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if static:
            w.writerow(["location_id", "population"])
            for lid, p in zip(data.location_ids, data.population[:, 0]):
                w.writerow([lid, _fmt(p)])
        else:
            w.writerow(["location_id", "week", "population"])
            for i, lid in enumerate(data.location_ids):
                for j, week in enumerate(data.weeks):
                    w.writerow([lid, int(week), _fmt(data.population[i, j])])
    return paths


def train_test_split(data: Dataset, horizon_weeks: int):
    """Last ``horizon_weeks`` weeks form the test panel (``None`` when 0)."""
    if horizon_weeks < 0:
        raise DataError("horizon must be non-negative")
    if horizon_weeks >= data.n_weeks:
        raise DataError(
            f"horizon {horizon_weeks} leaves no training weeks (dataset has {data.n_weeks})"
        )
    cut = data.n_weeks - horizon_weeks
    train = data.select_weeks(slice(0, cut))
    test = data.select_weeks(slice(cut, None)) if horizon_weeks else None
    return train, test


# ---------------------------------------------------------------- simulation

@dataclass
class SimConfig:
    """Generative settings; ``spec.kernel`` carries the true hyperparameters."""

    spec: object
    n_locations: int = 10
    n_weeks: int = 30
    phi: float = 0.25
    pi: float = 0.2
    base_rate: float = 2e-5
    pop_range: tuple = (5e4, 5e5)
    lon_range: tuple = (-3.0, -0.5)
    lat_range: tuple = (52.0, 53.5)
    first_week: int = 1
    seed: int = 0
    jitter: float = 1e-8

    def __post_init__(self):
        if self.n_locations < 1 or self.n_weeks < 1:
            raise DataError("n_locations and n_weeks must be positive")
        if not (self.pop_range[0] > 0 and self.pop_range[1] >= self.pop_range[0]):
            raise DataError("invalid population range")
        if self.base_rate <= 0:
            raise DataError("base_rate must be positive")

    def truth(self) -> dict:
        spec = self.spec
        out = {}
        if not spec.fix_kernel:
            out.update(zip(spec.kernel_names, kn.constrained_values(spec.kernel)))
        if spec.family in ("negbin", "zinb"):
            out["phi"] = float(self.phi)
        if spec.family == "zinb":
            out["lambda"] = float(math.log(self.pi / (1.0 - self.pi)))
        return out


def simulate(cfg: SimConfig):
    """Draw a dataset from the exact GP prior and the count family.

    Returns ``(dataset, f, truth)`` with ``f`` the ``(L, W)`` latent field.
    """
    rng = np.random.default_rng(cfg.seed)
    L, W = cfg.n_locations, cfg.n_weeks
    lon = rng.uniform(*cfg.lon_range, size=L)
    lat = rng.uniform(*cfg.lat_range, size=L)
    lo, hi = np.log(cfg.pop_range[0]), np.log(cfg.pop_range[1])
    pop_loc = np.round(np.exp(rng.uniform(lo, hi, size=L)))
    weeks = np.arange(cfg.first_week, cfg.first_week + W)
    ids = [f"L{i + 1:02d}" for i in range(L)]
    pop = np.repeat(pop_loc[:, None], W, axis=1)
    proto = Dataset(ids, lon, lat, weeks, np.zeros((L, W)), np.ones((L, W), bool), pop)
    X, _, pop_flat, _ = proto.flat()
    K = kn.eval_gram(cfg.spec.kernel, X)
    chol, _ = cholesky_jitter(K, cfg.jitter)
    f = chol @ rng.standard_normal(X.shape[0])
    mu = pop_flat * cfg.base_rate * np.exp(f)
    family = cfg.spec.family
    y = sample_counts(family, mu, rng, phi=cfg.phi, pi=cfg.pi)
    data = Dataset(ids, lon, lat, weeks, y.reshape(L, W), np.ones((L, W), bool), pop)
    return data, f.reshape(L, W), cfg.truth()


# ------------------------------------------------------------------- export

@dataclass
class ForecastResult:
    """Posterior-predictive count draws, ``samples[s, i, j]`` for location i, week j."""

    location_ids: list
    weeks: np.ndarray
    samples: np.ndarray
    lon: np.ndarray = field(default=None)
    lat: np.ndarray = field(default=None)
    mean_samples: np.ndarray = field(default=None)  # expected counts behind each draw

    def summary(self):
        """Per-cell quantile rows: ``(location_id, week, q02.5, q50, q97.5, mean)``."""
        rows = []
        for i, lid in enumerate(self.location_ids):
            for j, week in enumerate(self.weeks):
                q = quantile_summary(self.samples[:, i, j])
                rows.append((lid, int(week), *q, float(np.mean(self.samples[:, i, j]))))
        return rows


FORECAST_COLUMNS = ["location_id", "week", "q02.5", "q50", "q97.5", "mean"]


def export_forecast(result: ForecastResult, locations, fmt: str, path):
    """Write quantile summaries as ``csv`` or point-feature ``geojson``.

    ``locations`` maps location id to ``(lon, lat)``; it may be a Dataset.
    """
    if fmt not in ("csv", "geojson"):
        raise DataError(f"unknown export format {fmt!r}; expected 'csv' or 'geojson'")
    if result.samples.size == 0:
        raise DataError("empty forecast")
    if isinstance(locations, Dataset):
        locations = {lid: (x, y) for lid, x, y in zip(locations.location_ids, locations.lon, locations.lat)}
    rows = result.summary()
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(FORECAST_COLUMNS)
            for lid, week, *vals in rows:
                w.writerow([lid, week, *(_fmt(v) for v in vals)])
        return path
    features = []
    for lid, week, *vals in rows:
        lon, lat = locations[lid]
        props = {"location_id": lid, "week": week}
        props.update({name: float(v) for name, v in zip(FORECAST_COLUMNS[2:], vals)})
        features.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": [float(lon), float(lat)]},
            "properties": props,
        })
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)
    return path

