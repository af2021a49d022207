import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from floorloc.floorplan import OccupancyGrid

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def boxed(ny, nx, res=0.1, origin=(0.0, 0.0)):
    """Free interior surrounded by a one-cell wall."""
    occ = np.zeros((ny, nx), dtype=bool)
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    return OccupancyGrid(occ, res, origin)


def random_grid(rng, ny=20, nx=20, p=0.2, res=0.1, origin=(0.0, 0.0)):
    occ = rng.random((ny, nx)) < p
    occ[0, :] = occ[-1, :] = occ[:, 0] = occ[:, -1] = True
    return OccupancyGrid(occ, res, origin)


def march(grid, x, y, angle, max_range, step_frac=1e-3):
    """Fine-step marching reference: range to first occupied sample, None if none.

    Samples every ``step_frac * resolution`` along the ray and reports the
    distance of the first sample that lands in an occupied cell.
    """
    res = grid.resolution
    step = step_frac * res
    dx, dy = math.cos(angle), math.sin(angle)
    n = int(max_range / step) + 2
    start, chunk = 0, 4096
    while start < n:
        t = np.arange(start, min(n, start + chunk)) * step
        start += chunk
        chunk = min(2 * chunk, 262_144)
        i = np.floor((x + t * dx - grid.origin[0]) / res).astype(np.int64)
        j = np.floor((y + t * dy - grid.origin[1]) / res).astype(np.int64)
        out = (i < 0) | (i >= grid.width_cells) | (j < 0) | (j >= grid.height_cells)
        hit = np.zeros(t.size, dtype=bool)
        ok = ~out
        hit[ok] = grid.occupied[j[ok], i[ok]]
        stop = np.flatnonzero(hit | out)
        if stop.size:
            k = stop[0]
            if out[k] or t[k] > max_range:
                return None
            return float(t[k])
    return None


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
