import numpy as np
import pytest

from eodeblur.imagecore import RasterImage
from eodeblur.scenes import render_scene


@pytest.fixture(scope="session")
def scene128():
    return render_scene(128, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_raster(rng, h, w, c=3):
    return RasterImage(rng.uniform(0, 1, (c, h, w)).astype(np.float32))


# acceptance criteria report their verdicts here; printed once at the end of the run
ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    log = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number: int, title: str, ok: bool, detail: str) -> None:
        log[number] = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE_KEY, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        terminalreporter.write_line(log[number])
