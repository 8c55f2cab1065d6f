import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from elasticnet.curve import DiscreteCurve

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def segment(p0, p1, N):
    x = np.linspace(0.0, 1.0, N + 1)[:, None]
    return DiscreteCurve((1 - x) * np.asarray(p0, float) + x * np.asarray(p1, float))


def arc(R, theta0, theta1, N, center=(0.0, 0.0)):
    th = np.linspace(theta0, theta1, N + 1)
    c = np.asarray(center, float)
    return DiscreteCurve(np.stack([c[0] + R * np.cos(th), c[1] + R * np.sin(th)], axis=1))


def semicircle(N):
    return arc(1.0, 0.0, np.pi, N)


def parabola(N, a=-1.0, b=1.0):
    x = np.linspace(a, b, N + 1)
    return DiscreteCurve(np.stack([x, x**2], axis=1))


def wavy(N, seed=0, amp=0.15, n=2):
    """Smooth non-uniformly parametrized curve with a few random Fourier modes."""
    rng = np.random.default_rng(seed)
    x = np.linspace(0.0, 1.0, N + 1)
    xs = x + 0.1 * np.sin(np.pi * x) * rng.uniform(-1, 1)
    base = np.zeros((N + 1, n))
    base[:, 0] = np.cos(2.0 * xs) * 1.3
    base[:, 1] = np.sin(2.0 * xs) * 1.3
    for k in range(1, 4):
        c = rng.normal(size=n) * amp / k**2
        base += np.sin(k * np.pi * xs + rng.uniform(0, np.pi))[:, None] * c
    return DiscreteCurve(base)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
