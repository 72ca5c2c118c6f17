"""Shared fixtures; puts src/ on the import path like the scripts do."""

import sys
from pathlib import Path

import pytest

# Add src directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from choice_model import ChoiceDataset, ChoiceObservation, PairOutcome  # noqa: E402
from experiments import RISOTTO_PREFERENCES  # noqa: E402

DATA_DIR = Path(__file__).parent / "data"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale runs (deselect with -m 'not slow')")


@pytest.fixture
def risotto_pairs() -> ChoiceDataset:
    """The eight butter preferences, preferred amount first"""
    return ChoiceDataset(observations=tuple(
        ChoiceObservation.pair(w, l, PairOutcome.FIRST) for w, l in RISOTTO_PREFERENCES))


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR
