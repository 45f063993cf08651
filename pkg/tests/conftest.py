import os
from pathlib import Path

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def data_dir_or_none():
    d = os.environ.get("WAVPOOL_DATA_DIR")
    return Path(d) if d and Path(d).exists() else None


@pytest.fixture
def toy_digits():
    """sklearn's 8x8 digits upscaled to 28x28 in [0, 1]; a small real-image stand-in."""
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    from wavpool.data import LabeledDataset

    d = load_digits()
    imgs = np.clip(np.stack([zoom(x, 3.5, order=1) for x in d.images]) / 16.0, 0.0, 1.0)
    return LabeledDataset(imgs, d.target.astype(np.int64), "digits")


def relu_margin(model, x) -> float:
    """Smallest |pre-activation| reaching any ReLU during ``model.forward(x, True)``."""
    from wavpool.nn import ReLU

    seen = []
    original = ReLU._forward

    def spy(self, inp, training):
        seen.append(float(np.min(np.abs(inp))))
        return original(self, inp, training)

    ReLU._forward = spy
    try:
        model.forward(x, True)
    finally:
        ReLU._forward = original
    return min(seen, default=np.inf)


def kink_free(model, draw, seed, margin=1e-3, tries=50):
    """Redraw toy inputs until no ReLU sits within ``margin`` of its kink.

    Finite differences with step h are meaningless when a pre-activation lies
    within h of zero, so gradient checks use inputs clear of that region.
    """
    r = np.random.default_rng(seed)
    for _ in range(tries):
        x = draw(r)
        if relu_margin(model, x) > margin:
            return x
    raise RuntimeError("could not draw an input away from ReLU kinks")


# acceptance outcomes, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def record_criterion(number: int, status: str, detail: str = ""):
    ACCEPTANCE[number] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}".rstrip())
