import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")

from mstm.core import WeightVector  # noqa: E402
from mstm.index import BuildParams, build_fused_index  # noqa: E402
from mstm.io import MultiModalDataset, SyntheticSpec, generate_synthetic  # noqa: E402

# criterion number -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def unit_rows(a):
    a = np.asarray(a, dtype=np.float64)
    return (a / np.linalg.norm(a, axis=1, keepdims=True)).astype(np.float32)


def random_dataset(n, dims, seed=0) -> MultiModalDataset:
    rng = np.random.default_rng(seed)
    return MultiModalDataset([unit_rows(rng.standard_normal((n, d))) for d in dims])


@pytest.fixture(scope="session")
def small():
    """2k clustered objects, two signal modalities, 50 queries."""
    spec = SyntheticSpec(n=2000, dims=(24, 12), clusters=20, noise_scale=1.0, nq=50,
                         query_noise=0.3, truth_k=10, reference_weights=(0.7, 0.3), seed=7)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_index(small):
    return build_fused_index(small.dataset, small.reference, BuildParams(gamma=20, eps=3))


# the 10k set used by the acceptance checks: squared weights sum to 1 (C = 1)
BIG_SPEC = SyntheticSpec(n=10000, dims=(64, 32), clusters=50, noise_scale=1.5, nq=1000,
                         query_noise=0.3, truth_k=10, reference_weights=(0.9, 0.1), seed=1)


@pytest.fixture(scope="session")
def big():
    return generate_synthetic(BIG_SPEC)


@pytest.fixture(scope="session")
def big_index(big):
    import time

    t0 = time.perf_counter()
    idx = build_fused_index(big.dataset, big.reference, BuildParams(gamma=30, eps=3))
    idx.build_seconds = time.perf_counter() - t0
    return idx


@pytest.fixture
def w2():
    return WeightVector.from_squared([0.64, 0.36])
