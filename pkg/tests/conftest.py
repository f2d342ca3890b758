import numpy as np
import pytest

from app.schemas.estimation import OutcomeGrid, SmootherConfig
from app.services.dgp import ILLUSTRATION, PANEL_A, PANEL_B, generate
from app.services.smoother import assemble_table


@pytest.fixture
def panel_a():
    return PANEL_A


@pytest.fixture
def panel_b():
    return PANEL_B


@pytest.fixture
def illustration():
    return ILLUSTRATION


@pytest.fixture(scope="session")
def sample_a():
    return generate(PANEL_A, 20_000, seed=11)


@pytest.fixture
def smoother():
    return SmootherConfig()


@pytest.fixture
def make_table():
    """Таблица из готовых масс бинов: f задаётся напрямую, π0/π1 через α."""
    def build(f1, f0, alpha=0.5, edges=None, p=0.5):
        f1, f0 = np.asarray(f1, dtype=float), np.asarray(f0, dtype=float)
        if edges is None:
            edges = np.arange(len(f1) + 1, dtype=float)
        grid = OutcomeGrid(edges=edges)
        pi1 = 1.0
        return assemble_table(p, alpha * pi1, pi1, f0, f1, grid)
    return build
