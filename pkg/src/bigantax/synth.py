"""Seeded synthetic GSTR-3B returns with injected fraud signatures.

Genuine dealers have liability that tracks sales, ITC that tracks
purchases, a healthy interstate (IGST) share of ITC and SGST cash payments
proportional to liability.  Fraudulent dealers follow one recipe each:

``intra_state_itc_shift``
    Nearly all ITC claimed as intra-state (IGST ITC share 0.5-4%), which
    pushes ratio2 down and ratio3 up.
``no_cash_settlement``
    SGST is almost never paid in cash however large the turnover; liability
    is set off from ITC.  corr3 and corr4 collapse towards 0.
``decorrelated_liability``
    Reported liability moves independently of reported sales, so corr1
    (and usually corr2/corr5) drop.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features import DEFAULT_MIN_MONTHS, MonthlyReturn, parse_period

RECIPES = ("intra_state_itc_shift", "no_cash_settlement", "decorrelated_liability")
GST_RATE = 0.18


@dataclass
class SynthConfig:
    n_genuine: int = 1000
    n_fraud: int = 60
    months: int = 24
    seed: int = 0
    fraud_mix: dict[str, float] = field(
        default_factory=lambda: {r: 1.0 / len(RECIPES) for r in RECIPES})
    start_period: str = "2019-04"
    min_months: int = DEFAULT_MIN_MONTHS
    # noise model: log-normal turnover per dealer, Gaussian monthly log-jitter
    turnover_log_mean: float = 15.0
    turnover_log_sigma: float = 1.0
    monthly_sigma: float = 0.35
    tax_jitter: float = 0.03

    def validate(self) -> "SynthConfig":
        if self.n_genuine < 0 or self.n_fraud < 0:
            raise ConfigError("n_genuine and n_fraud must be >= 0")
        if self.n_genuine + self.n_fraud == 0:
            raise ConfigError("config generates no taxpayers")
        if self.months < self.min_months:
            raise ConfigError(f"months ({self.months}) must be >= min_months ({self.min_months})")
        unknown = set(self.fraud_mix) - set(RECIPES)
        if unknown:
            raise ConfigError(f"unknown fraud recipes: {sorted(unknown)}")
        weights = list(self.fraud_mix.values())
        if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > 1e-9:
            raise ConfigError("fraud_mix weights must be >= 0 and sum to 1")
        if self.monthly_sigma < 0 or self.tax_jitter < 0 or self.turnover_log_sigma < 0:
            raise ConfigError("noise magnitudes must be >= 0")
        try:
            parse_period(self.start_period)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad synth config: {e}") from None


@dataclass
class SynthDataset:
    records: list[MonthlyReturn]
    labels: dict[str, bool]
    recipes: dict[str, str]

    def fraud_ids(self) -> list[str]:
        return [tid for tid, f in self.labels.items() if f]


def _periods(start: str, months: int) -> list[str]:
    y, m = parse_period(start)
    out = []
    for _ in range(months):
        out.append(f"{y:04d}-{m:02d}")
        m += 1
        if m > 12:
            y, m = y + 1, 1
    return out


def _dealer(tid: str, periods: list[str], recipe: str | None, cfg: SynthConfig,
            rng: np.random.Generator) -> list[MonthlyReturn]:
    t = len(periods)
    base = np.exp(rng.normal(cfg.turnover_log_mean, cfg.turnover_log_sigma))
    season = 1.0 + 0.15 * np.sin(2 * np.pi * np.arange(t) / 12 + rng.uniform(0, 2 * np.pi))
    sales = base * season * np.exp(rng.normal(0, cfg.monthly_sigma, t))

    value_add = rng.uniform(1.05, 1.5)
    purchases = sales / value_add * np.exp(rng.normal(0, 0.08, t))

    liability = GST_RATE * sales * np.exp(rng.normal(0, cfg.tax_jitter, t))
    if recipe == "decorrelated_liability":
        liability = GST_RATE * sales.mean() * np.exp(rng.normal(0, 0.6, t))
    out_share = np.clip(rng.uniform(0.1, 0.5) + rng.normal(0, 0.03, t), 0.0, 1.0)
    igst_liab = liability * out_share
    sgst_liab = cgst_liab = (liability - igst_liab) / 2

    itc = GST_RATE * purchases * np.exp(rng.normal(0, cfg.tax_jitter, t))
    if recipe == "intra_state_itc_shift":
        in_share = rng.uniform(0.005, 0.04) * np.exp(rng.normal(0, 0.2, t))
    else:
        in_share = np.clip(rng.uniform(0.3, 0.8) + rng.normal(0, 0.03, t), 0.0, 1.0)
    igst_itc = itc * in_share
    sgst_itc = cgst_itc = (itc - igst_itc) / 2

    if recipe == "no_cash_settlement":
        paid = rng.random(t) < 0.15
        cash = np.where(paid, rng.uniform(0, 0.01, t) * sgst_liab.mean(), 0.0)
    else:
        cash = rng.uniform(0.2, 0.5) * sgst_liab * np.exp(rng.normal(0, 0.1, t))

    return [
        MonthlyReturn(tid, periods[i], float(sales[i]), float(purchases[i]),
                      float(sgst_liab[i]), float(cgst_liab[i]), float(igst_liab[i]),
                      float(sgst_itc[i]), float(cgst_itc[i]), float(igst_itc[i]),
                      float(cash[i]))
        for i in range(t)
    ]


def generate(config: SynthConfig) -> SynthDataset:
    """Generate returns for ``n_genuine + n_fraud`` dealers.

    Each dealer draws from its own child seed, so the output does not depend
    on generation order.  Fraud dealers are scattered through the id range.
    """
    config.validate()
    n = config.n_genuine + config.n_fraud
    assign_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    children = np.random.SeedSequence([config.seed, 1]).spawn(n)

    fraud_slots = set(assign_rng.permutation(n)[:config.n_fraud].tolist())
    names = [r for r in RECIPES if config.fraud_mix.get(r, 0) > 0]
    weights = np.array([config.fraud_mix[r] for r in names], dtype=np.float64)
    # exact counts per recipe (largest remainder), then shuffled over fraud slots
    raw = weights / weights.sum() * config.n_fraud if names else np.zeros(0)
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[:config.n_fraud - counts.sum()]:
        counts[i] += 1
    recipe_list = [name for name, c in zip(names, counts) for _ in range(c)]
    recipe_list = [recipe_list[i] for i in assign_rng.permutation(len(recipe_list))]

    periods = _periods(config.start_period, config.months)
    width = max(4, len(str(n)))
    records: list[MonthlyReturn] = []
    labels: dict[str, bool] = {}
    recipes: dict[str, str] = {}
    fi = 0
    for k in range(n):
        tid = f"TP{k:0{width}d}"
        recipe = None
        if k in fraud_slots:
            recipe = recipe_list[fi]
            fi += 1
            recipes[tid] = recipe
        labels[tid] = recipe is not None
        records.extend(_dealer(tid, periods, recipe, config, np.random.default_rng(children[k])))
    return SynthDataset(records, labels, recipes)


def write_labels(path: str | Path, labels: dict[str, bool]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("taxpayer_id", "is_fraud"))
        for tid in sorted(labels):
            w.writerow((tid, int(labels[tid])))


def load_labels(path: str | Path) -> dict[str, bool]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != ["taxpayer_id", "is_fraud"]:
            raise DataError(f"{path}: header must be taxpayer_id,is_fraud")
        return {row["taxpayer_id"]: row["is_fraud"].strip().lower() in ("1", "true")
                for row in reader}


def config_json(config: SynthConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)
