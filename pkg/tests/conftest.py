import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from swarmdyn import dynamics, synthgen
from swarmdyn.dynamics import LearnConfig
from swarmdyn.features import BinSpec, extract_layout_features

PAPER_BINS = 40
PAPER_WINDOW = 3
PAPER_EPS = 1e-3
PAPER_KMAX = 50
SEED = 20250301


class PaperRun:
    """One generated variant plus everything learned from it."""

    def __init__(self, opposite: bool, bins: int = PAPER_BINS):
        self.config = synthgen.paper_config(opposite=opposite, seed=SEED)
        self.frames, self.layout, self.ground_truth, self.segments = (
            synthgen.generate_sequence(self.config)
        )
        self.bins = bins
        self.features = extract_layout_features(self.frames, self.layout, BinSpec(bins=bins))
        self.model = dynamics.learn(
            self.frames,
            LearnConfig(bins=bins, window=PAPER_WINDOW, eps=PAPER_EPS, k_max=PAPER_KMAX),
            layout=self.layout,
            features_map=self.features,
        )


@pytest.fixture(scope="session")
def paper_same():
    return PaperRun(opposite=False)


@pytest.fixture(scope="session")
def paper_opposite():
    return PaperRun(opposite=True)


@pytest.fixture(scope="session")
def small_same():
    """Reduced-bins variant for cheaper machinery tests."""
    return PaperRun(opposite=False, bins=10)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
