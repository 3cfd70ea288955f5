import numpy as np
import pytest

from bigantax.features import derive_all, normalize
from bigantax.synth import SynthConfig, generate

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def synthetic_features(**overrides):
    ds = generate(SynthConfig(**overrides))
    kept, _ = derive_all(ds.records)
    x, stats = normalize(kept)
    ids = [v.taxpayer_id for v in kept]
    y = np.array([ds.labels[i] for i in ids])
    return x, ids, y, ds


@pytest.fixture(scope="session")
def small_data():
    """200 genuine + 12 fraud dealers over 12 months, normalized."""
    return synthetic_features(n_genuine=200, n_fraud=12, months=12, seed=11)


@pytest.fixture(scope="session")
def acceptance_results():
    return ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
