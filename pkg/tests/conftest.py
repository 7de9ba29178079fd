import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on sys.path so `import app` works during tests
ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from app.models.dataset import Annotation, MultimodalFrame  # noqa: E402
from app.models.geometry import BoundingBox  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running experiment, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_box(x_min, y_min, x_max, y_max) -> BoundingBox:
    return BoundingBox(x_min=x_min, y_min=y_min, x_max=x_max, y_max=y_max)


def make_frame(height=64, width=64, annotations=(), frame_index=0, regime="identity", seed=0) -> MultimodalFrame:
    """Random but valid frame with the given annotations."""
    rng = np.random.default_rng(seed)
    return MultimodalFrame(
        rgb=rng.uniform(0, 1, size=(3, height, width)),
        depth=rng.uniform(1, 9, size=(1, height, width)),
        motion=rng.uniform(0, 1, size=(1, height, width)),
        annotations=list(annotations),
        regime=regime,
        frame_index=frame_index,
    )


@pytest.fixture
def frame_with_people():
    annotations = [
        Annotation(box=make_box(4, 4, 20, 36), occluded=False, track_id=0),
        Annotation(box=make_box(36, 20, 56, 60), occluded=False, track_id=1),
    ]
    return make_frame(annotations=annotations)


@pytest.fixture
def small_sequence():
    from app.services.synthdata import generate_sequence

    return generate_sequence(
        frame_count=10,
        regime_script=[(0, "dark-indoor"), (5, "bright-outdoor")],
        size=(64, 64),
        actor_count=2,
        seed=3,
    )
