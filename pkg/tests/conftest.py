from __future__ import annotations

import numpy as np
import pytest

from hiercascade.store import GalleryStore, HierSchedule

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def random_store(
    rng: np.random.Generator,
    n: int,
    dims: tuple[int, ...],
    pools: tuple[int, ...] | None = None,
    shuffle_ids: bool = True,
) -> GalleryStore:
    pools = pools if pools is not None else (0,) * len(dims)
    ids = rng.permutation(10 * n + 1)[:n] if shuffle_ids else np.arange(n)
    blocks = [rng.standard_normal((n, d)).astype(np.float32) for d in dims]
    return GalleryStore(HierSchedule(dims, pools), ids, blocks)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
