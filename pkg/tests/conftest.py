import datetime as dt

import numpy as np
import pytest

from gedicrop.ingest import GediShot, LabelRaster


def make_shot(shot_id="s0", rh=None, *, orbit="o1", lon=10.0, lat=45.0, date=dt.date(2019, 8, 1),
              quality=1, degrade=0, top=2.0):
    """A valid shot; ``rh`` defaults to a linear curve from -1 m to ``top``."""
    if rh is None:
        rh = np.linspace(-1.0, top, 101)
    return GediShot(shot_id, orbit, lon, lat, date, quality, degrade, np.asarray(rh, dtype=float))


@pytest.fixture
def shot_factory():
    return make_shot


@pytest.fixture
def raster_2x2():
    # upper-left corner (0, 2), 1-degree cells
    #   row 0: maize(1)   soy(5)
    #   row 1: non-crop(0) nodata
    cells = np.array([[1, 5], [0, -9999]])
    return LabelRaster.from_origin(0.0, 2.0, 1.0, cells, -9999, {0: "non-crop", 1: "maize", 5: "soybean"})


@pytest.fixture(scope="session")
def small_benchmark():
    """Prepared two-region synthetic benchmark, scaled down for unit tests."""
    from gedicrop.experiments import prepare_region
    from gedicrop.synth import default_regions, gen_region

    out = {}
    for spec in default_regions(n_shots=1500, cell_size=0.01):
        region = gen_region(spec)
        out[spec.name], _ = prepare_region(spec.name, region.shots, region.series, region.truth, spec.maize_code)
    return out


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one acceptance line: ``criterion N PASS|FAIL: title | detail | time``."""
    def record(number, title, checks, detail, elapsed):
        failed = [name for name, ok in checks.items() if not ok]
        status = "PASS" if not failed else "FAIL"
        line = f"criterion {number} {status}: {title} | {detail} | {elapsed:.2f}s"
        if failed:
            line += " | failed: " + ", ".join(failed)
        _ACCEPTANCE.append(line)
        print(line)
        return failed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
