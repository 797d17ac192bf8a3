"""Loading, z-scoring, chronological splitting and windowing of multivariate series."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STD_FLOOR = 1e-8


class DataError(ValueError):
    """Raised for unparsable input files."""


class ConfigurationError(ValueError):
    """Raised when a windowing/split request cannot be satisfied."""


@dataclass
class RawSeries:
    values: np.ndarray  # N x L
    variable_names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series must be 2-D (N x L), got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")

    @property
    def n_vars(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None]) / self.std[:, None]

    def invert(self, values: np.ndarray) -> np.ndarray:
        return values * self.std[:, None] + self.mean[:, None]


@dataclass
class WindowSample:
    input: np.ndarray   # N x T_in
    target: np.ndarray  # N x T_out
    origin_t: int


@dataclass
class DatasetSplit:
    train: list[WindowSample]
    validation: list[WindowSample]
    test: list[WindowSample]
    boundaries: tuple[int, int, int]
    stats: NormStats | None = None
    extra: dict = field(default_factory=dict)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_series(path, has_header: bool | None = None, n_vars: int | None = None) -> RawSeries:
    """Read a CSV with one row per timestep and one column per variable.

    ``has_header=None`` treats the first row as a header when none of its
    cells parse as numbers. ``n_vars`` keeps only the first ``n_vars`` columns.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")

    names = None
    if has_header is None:
        has_header = not any(_is_number(c) for c in rows[0])
    if has_header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_row = 2
    else:
        first_row = 1

    width = len(names) if names is not None else len(rows[0]) if rows else 0
    data = []
    for i, row in enumerate(rows):
        lineno = i + first_row
        if len(row) != width:
            raise DataError(f"{path}: row {lineno} has {len(row)} cells, expected {width}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise DataError(f"{path}: non-numeric cell in row {lineno}: {row}") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}: non-finite cell in row {lineno}")
        data.append(vals)
    if not data:
        raise DataError(f"{path}: no data rows")

    values = np.array(data, dtype=np.float64).T
    if n_vars is not None:
        if n_vars > values.shape[0]:
            raise DataError(f"{path}: requested {n_vars} variables, file has {values.shape[0]}")
        values = values[:n_vars]
        names = names[:n_vars] if names else None
    return RawSeries(values, names)


def save_series(raw: RawSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        if raw.variable_names:
            w.writerow(raw.variable_names)
        for row in raw.values.T:
            w.writerow([repr(float(v)) for v in row])


def read_manifest(path) -> dict:
    """Key-value dataset manifest: ``path``, ``has_header``, ``n_vars``."""
    out: dict = {}
    base = Path(path).parent
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "path":
            p = Path(val)
            out["path"] = p if p.is_absolute() else base / p
        elif key == "has_header":
            out["has_header"] = {"true": True, "false": False, "auto": None}[val.lower()]
        elif key == "n_vars":
            out["n_vars"] = int(val)
        else:
            raise DataError(f"{path}: unknown manifest key {key!r}")
    if "path" not in out:
        raise DataError(f"{path}: manifest lacks 'path'")
    return out


def zscore(raw: RawSeries, fit_range: tuple[int, int]) -> tuple[RawSeries, NormStats]:
    """Per-variable z-score with statistics fit on ``values[:, start:stop]`` only."""
    start, stop = fit_range
    if stop <= start:
        raise ConfigurationError(f"empty fit range {fit_range}")
    seg = raw.values[:, start:stop]
    mean = seg.mean(axis=1)
    std = seg.std(axis=1)
    std = np.where(std < STD_FLOOR, 1.0, std)
    stats = NormStats(mean, std)
    return RawSeries(stats.apply(raw.values), raw.variable_names), stats


def split(length: int, fractions=(0.6, 0.2, 0.2)) -> tuple[int, int, int]:
    """Chronological boundaries ``(floor(f0*L), floor((f0+f1)*L), L)``."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be three values summing to 1, got {fractions}")
    # small epsilon guards products like 0.6*10 = 5.999...
    b1 = math.floor(fractions[0] * length + 1e-9)
    b2 = math.floor((fractions[0] + fractions[1]) * length + 1e-9)
    return b1, b2, length


def window_count(length: int, t_in: int, t_out: int) -> int:
    return length - t_in - t_out + 1


def make_windows(values: np.ndarray, t_in: int, t_out: int, rng: tuple[int, int] | None = None) -> list[WindowSample]:
    """Stride-1 windows fully inside ``values[:, start:stop]``."""
    start, stop = rng if rng is not None else (0, values.shape[1])
    n = window_count(stop - start, t_in, t_out)
    if n < 1:
        raise ConfigurationError(
            f"range [{start}, {stop}) of length {stop - start} is shorter than T_in+T_out={t_in + t_out}")
    out = []
    for o in range(start, start + n):
        out.append(WindowSample(values[:, o:o + t_in].copy(),
                                values[:, o + t_in:o + t_in + t_out].copy(), o))
    return out


def prepare(raw: RawSeries, t_in: int, t_out: int, fractions=(0.6, 0.2, 0.2),
            normalize: bool = True) -> DatasetSplit:
    """Split, z-score on the training segment, then window each segment independently."""
    b1, b2, L = split(raw.length, fractions)
    stats = None
    values = raw.values
    if normalize:
        normed, stats = zscore(raw, (0, b1))
        values = normed.values
    return DatasetSplit(
        train=make_windows(values, t_in, t_out, (0, b1)),
        validation=make_windows(values, t_in, t_out, (b1, b2)),
        test=make_windows(values, t_in, t_out, (b2, L)),
        boundaries=(b1, b2, L),
        stats=stats,
    )


def synthetic_series(n_vars: int = 8, length: int = 2000, period: float = 24.0,
                     coupling: float = 0.5, noise: float = 0.1, seed: int = 0) -> RawSeries:
    """Coupled sinusoids: each variable mixes its own phase with its predecessor's.

    x_i(t) = sin(w t + phi_i) + coupling * sin(w t + phi_{i-1}) + noise
    """
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_vars)
    amps = rng.uniform(0.5, 1.5, size=n_vars)
    t = np.arange(length, dtype=np.float64)
    w = 2.0 * np.pi / period
    own = amps[:, None] * np.sin(w * t[None, :] + phases[:, None])
    prev = np.roll(own, 1, axis=0)
    values = own + coupling * prev + noise * rng.standard_normal((n_vars, length))
    return RawSeries(values, [f"v{i}" for i in range(n_vars)])
