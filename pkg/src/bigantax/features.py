"""Per-taxpayer features from monthly GSTR-3B summaries.

Each taxpayer becomes a nine-slot row: six Pearson correlations between
monthly series and three ratios of whole-window sums.  Ratios are z-scored
across the dataset; correlations are already bounded and pass through.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

RETURN_FIELDS = (
    "taxpayer_id", "period", "total_sales", "total_purchases",
    "sgst_liability", "cgst_liability", "igst_liability",
    "sgst_itc", "cgst_itc", "igst_itc", "sgst_cash_paid",
)
MONEY_FIELDS = RETURN_FIELDS[2:]
CORR_NAMES = ("corr1", "corr2", "corr3", "corr4", "corr5", "corr6")
RATIO_NAMES = ("ratio1", "ratio2", "ratio3")
FEATURE_NAMES = CORR_NAMES + RATIO_NAMES
N_FEATURES = len(FEATURE_NAMES)
RATIO_DIMS = (6, 7, 8)
DEFAULT_MIN_MONTHS = 6
MIN_DENOMINATOR = 1.0

_PERIOD_RE = re.compile(r"^(\d{4})-(\d{2})$")


@dataclass(frozen=True)
class MonthlyReturn:
    taxpayer_id: str
    period: str
    total_sales: float
    total_purchases: float
    sgst_liability: float
    cgst_liability: float
    igst_liability: float
    sgst_itc: float
    cgst_itc: float
    igst_itc: float
    sgst_cash_paid: float

    def __post_init__(self):
        parse_period(self.period)
        for name in MONEY_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise DataError(f"{name} must be finite and >= 0, got {value!r}")

    @property
    def total_liability(self) -> float:
        return self.sgst_liability + self.cgst_liability + self.igst_liability

    @property
    def total_itc(self) -> float:
        return self.sgst_itc + self.cgst_itc + self.igst_itc


def parse_period(period: str) -> tuple[int, int]:
    m = _PERIOD_RE.match(period)
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise DataError(f"period must be YYYY-MM, got {period!r}")
    return int(m.group(1)), int(m.group(2))


@dataclass
class TaxpayerSeries:
    taxpayer_id: str
    returns: list[MonthlyReturn]

    def __post_init__(self):
        self.returns = sorted(self.returns, key=lambda r: parse_period(r.period))
        for prev, cur in zip(self.returns, self.returns[1:]):
            if prev.period == cur.period:
                raise DataError(f"duplicate period {cur.period} for taxpayer {self.taxpayer_id}")
        for r in self.returns:
            if r.taxpayer_id != self.taxpayer_id:
                raise DataError(f"return for {r.taxpayer_id} in series of {self.taxpayer_id}")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.returns], dtype=np.float64)


@dataclass(frozen=True)
class FeatureVector:
    taxpayer_id: str
    values: tuple[float, ...]
    months_used: int

    def __getattr__(self, name):
        # corr1..corr6 / ratio1..ratio3 as attributes
        if name in FEATURE_NAMES:
            return self.values[FEATURE_NAMES.index(name)]
        raise AttributeError(name)


@dataclass(frozen=True)
class Exclusion:
    """Marker for a taxpayer with too few months to featurise."""

    taxpayer_id: str
    months_used: int
    reason: str = "too few months"


@dataclass
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray
    scaled_dims: tuple[int, ...] = RATIO_DIMS

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=np.float64, copy=True)
        d = list(self.scaled_dims)
        out[:, d] = (out[:, d] - self.mean[d]) / self.std[d]
        return out

    def invert(self, z: np.ndarray) -> np.ndarray:
        out = np.array(z, dtype=np.float64, copy=True)
        d = list(self.scaled_dims)
        out[:, d] = out[:, d] * self.std[d] + self.mean[d]
        return out

    def to_dict(self) -> dict:
        return {
            "features": list(FEATURE_NAMES),
            "scaled_dims": list(self.scaled_dims),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64),
                   tuple(d["scaled_dims"]))


@dataclass
class FeatureTable:
    """Row-aligned taxpayer ids and feature matrix (raw or normalized)."""

    ids: list[str]
    matrix: np.ndarray
    months_used: list[int] = field(default_factory=list)
    stats: NormalizationStats | None = None

    def __len__(self) -> int:
        return len(self.ids)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation; 0.0 when either series is constant."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DataError(f"pearson needs two 1-D series of equal length, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise DataError("pearson needs at least 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0.0
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def _safe_ratio(num: float, den: float) -> float:
    return num / max(den, MIN_DENOMINATOR)


def derive_features(series: TaxpayerSeries, min_months: int = DEFAULT_MIN_MONTHS
                    ) -> FeatureVector | Exclusion:
    if not series.returns:
        raise DataError(f"empty series for taxpayer {series.taxpayer_id}")
    n = len(series.returns)
    if n < max(min_months, 2):
        return Exclusion(series.taxpayer_id, n)

    sales = series.column("total_sales")
    purchases = series.column("total_purchases")
    sgst_liab = series.column("sgst_liability")
    liability = sgst_liab + series.column("cgst_liability") + series.column("igst_liability")
    igst_itc = series.column("igst_itc")
    itc = series.column("sgst_itc") + series.column("cgst_itc") + igst_itc
    cash = series.column("sgst_cash_paid")

    corrs = (
        pearson(liability, sales),
        pearson(sgst_liab, liability),
        pearson(cash, sgst_liab),
        pearson(cash, sales),
        pearson(itc, liability),
        pearson(igst_itc, itc),
    )
    ratios = (
        _safe_ratio(sales.sum(), purchases.sum()),
        _safe_ratio(igst_itc.sum(), itc.sum()),
        _safe_ratio(liability.sum(), igst_itc.sum()),
    )
    return FeatureVector(series.taxpayer_id, corrs + ratios, n)


def group_series(records: Iterable[MonthlyReturn]) -> list[TaxpayerSeries]:
    """Group records by taxpayer, ordered by taxpayer id."""
    by_id: dict[str, list[MonthlyReturn]] = defaultdict(list)
    for r in records:
        by_id[r.taxpayer_id].append(r)
    return [TaxpayerSeries(tid, by_id[tid]) for tid in sorted(by_id)]


def derive_all(records: Iterable[MonthlyReturn], min_months: int = DEFAULT_MIN_MONTHS
               ) -> tuple[list[FeatureVector], list[Exclusion]]:
    kept, dropped = [], []
    for s in group_series(records):
        out = derive_features(s, min_months)
        (dropped if isinstance(out, Exclusion) else kept).append(out)
    return kept, dropped


def feature_matrix(vectors: Sequence[FeatureVector]) -> np.ndarray:
    if not vectors:
        return np.zeros((0, N_FEATURES))
    return np.array([v.values for v in vectors], dtype=np.float64)


def normalize(vectors: Sequence[FeatureVector] | np.ndarray
              ) -> tuple[np.ndarray, NormalizationStats]:
    """Z-score the ratio columns with population statistics.

    Columns with zero spread are centred and given a recorded std of 1.
    """
    x = vectors if isinstance(vectors, np.ndarray) else feature_matrix(vectors)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot normalize an empty dataset")
    if x.shape[1] != N_FEATURES:
        raise DataError(f"expected {N_FEATURES} feature columns, got {x.shape[1]}")
    mean = np.zeros(N_FEATURES)
    std = np.ones(N_FEATURES)
    for d in RATIO_DIMS:
        col = x[:, d]
        mean[d] = col.mean()
        s = col.std()
        std[d] = s if s > 0 else 1.0
    stats = NormalizationStats(mean, std)
    return stats.apply(x), stats


def denormalize(z: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return stats.invert(z)


# --- files -----------------------------------------------------------------

def load_returns(path: str | Path) -> list[MonthlyReturn]:
    """Read and validate a returns CSV with the exact :data:`RETURN_FIELDS` header."""
    path = Path(path)
    records: list[MonthlyReturn] = []
    seen: set[tuple[str, str]] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RETURN_FIELDS:
            raise DataError(f"{path}: line 1: header must be {','.join(RETURN_FIELDS)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(RETURN_FIELDS):
                raise DataError(f"{path}: line {line}: expected {len(RETURN_FIELDS)} fields, "
                                f"got {len(row)}")
            tid, period = row[0].strip(), row[1].strip()
            if not tid:
                raise DataError(f"{path}: line {line}: empty taxpayer_id")
            money = []
            for name, raw in zip(MONEY_FIELDS, row[2:]):
                try:
                    money.append(float(raw))
                except ValueError:
                    raise DataError(f"{path}: line {line}: {name} is not a number: {raw!r}") from None
            try:
                rec = MonthlyReturn(tid, period, *money)
            except DataError as e:
                raise DataError(f"{path}: line {line}: {e}") from None
            key = (tid, period)
            if key in seen:
                raise DataError(f"{path}: line {line}: duplicate record for taxpayer {tid} "
                                f"period {period}")
            seen.add(key)
            records.append(rec)
    return records


def _fmt(x: float) -> str:
    return repr(float(x))


def write_returns(path: str | Path, records: Iterable[MonthlyReturn]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RETURN_FIELDS)
        for r in records:
            w.writerow([r.taxpayer_id, r.period] + [_fmt(getattr(r, f)) for f in MONEY_FIELDS])


def write_features(path: str | Path, ids: Sequence[str], matrix: np.ndarray,
                   months_used: Sequence[int]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("taxpayer_id",) + FEATURE_NAMES + ("months_used",))
        for tid, row, n in zip(ids, matrix, months_used):
            w.writerow([tid] + [_fmt(v) for v in row] + [int(n)])


def load_features(path: str | Path) -> FeatureTable:
    path = Path(path)
    ids, rows, months = [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ("taxpayer_id",) + FEATURE_NAMES + ("months_used",)
        if header is None or tuple(header) != expected:
            raise DataError(f"{path}: line 1: header must be {','.join(expected)}")
        for row in reader:
            if not row:
                continue
            if len(row) != len(expected):
                raise DataError(f"{path}: line {reader.line_num}: expected {len(expected)} fields")
            try:
                vals = [float(v) for v in row[1:1 + N_FEATURES]]
                n = int(row[-1])
            except ValueError:
                raise DataError(f"{path}: line {reader.line_num}: non-numeric feature value") from None
            if not all(math.isfinite(v) for v in vals):
                raise DataError(f"{path}: line {reader.line_num}: non-finite feature value")
            ids.append(row[0])
            rows.append(vals)
            months.append(n)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)
    return FeatureTable(ids, matrix, months)


def write_stats(path: str | Path, stats: NormalizationStats) -> None:
    Path(path).write_text(json.dumps(stats.to_dict(), indent=2) + "\n")


def load_stats(path: str | Path) -> NormalizationStats:
    return NormalizationStats.from_dict(json.loads(Path(path).read_text()))
