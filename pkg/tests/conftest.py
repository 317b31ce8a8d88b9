"""Independent brute-force oracles shared by the test modules."""

import math
from collections import deque

import numpy as np
import pytest


def lab_oracle(r, g, b):
    """Scalar sRGB -> Lab with the rounded textbook constants (D65, 2 deg)."""

    def lin(v):
        v /= 255.0
        return ((v + 0.055) / 1.055) ** 2.4 if v > 0.04045 else v / 12.92

    r, g, b = lin(float(r)) * 100, lin(float(g)) * 100, lin(float(b)) * 100
    x = (r * 0.4124 + g * 0.3576 + b * 0.1805) / 95.047
    y = (r * 0.2126 + g * 0.7152 + b * 0.0722) / 100.0
    z = (r * 0.0193 + g * 0.1192 + b * 0.9505) / 108.883

    def f(t):
        return t ** (1 / 3) if t > 0.008856 else 7.787 * t + 16 / 116

    fx, fy, fz = f(x), f(y), f(z)
    return 116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)


def delta_e_oracle(c1, c2):
    return math.dist(lab_oracle(*c1), lab_oracle(*c2))


def flood_fill_components(bits, connectivity):
    """BFS connected components of True pixels, as a list of frozensets of (row, col)."""
    h, w = bits.shape
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
    seen = np.zeros_like(bits, dtype=bool)
    comps = []
    for r in range(h):
        for c in range(w):
            if bits[r, c] and not seen[r, c]:
                comp = set()
                q = deque([(r, c)])
                seen[r, c] = True
                while q:
                    a, b = q.popleft()
                    comp.add((a, b))
                    for dr, dc in steps:
                        na, nb = a + dr, b + dc
                        if 0 <= na < h and 0 <= nb < w and bits[na, nb] and not seen[na, nb]:
                            seen[na, nb] = True
                            q.append((na, nb))
                comps.append(frozenset(comp))
    return comps


def brute_iou(s1, s2):
    return len(s1 & s2) / len(s1 | s2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
