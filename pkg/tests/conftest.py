import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from geosbi.nre import TrainConfig, load_ensemble, save_models  # noqa: E402
from geosbi.toy import train_toy_ratio  # noqa: E402


def _toy_model(d):
    # Training at full settings takes minutes; GEOSBI_MODEL_CACHE names an optional
    # directory where trained weights are kept between runs while developing.
    cache = os.environ.get("GEOSBI_MODEL_CACHE")
    path = Path(cache) / f"toy_s{d}.txt" if cache else None
    if path is not None and path.exists():
        return load_ensemble(path).members[0]
    model = train_toy_ratio(d, TrainConfig(), seed=0)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        save_models(path, [model])
    return model


@pytest.fixture(scope="session")
def toy_model_s1():
    """Ratio for the S^1 toy problem at full training settings (1e6 pairs, 50 epochs)."""
    return _toy_model(1)


@pytest.fixture(scope="session")
def toy_model_s3():
    return _toy_model(3)


SCENES = Path(__file__).resolve().parent.parent / "scenes"


@pytest.fixture
def scene_path():
    return lambda name: SCENES / f"{name}.scene"


# acceptance summary: one line per criterion, printed after the run

ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    def record(number, passed, detail, status=None):
        ACCEPTANCE_LINES.append((number, status or ("PASS" if passed else "FAIL"), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {number}: {status} | {detail}")


# end-to-end pipeline runs are expensive; identical runs are shared across modules

_PIPELINES = {}


@pytest.fixture(scope="session")
def pipeline_run():
    """``run(key, scene, model)`` -> ``(report, seconds)``, computed once per key."""
    import time

    from geosbi.graspsim import PipelineConfig, end_to_end_pipeline

    def run(key, scene, model, seed=0):
        if key not in _PIPELINES:
            start = time.perf_counter()
            report = end_to_end_pipeline(scene, model, PipelineConfig(seed=seed))
            _PIPELINES[key] = (report, time.perf_counter() - start)
        return _PIPELINES[key]

    return run
