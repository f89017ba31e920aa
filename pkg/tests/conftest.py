import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from contactregen.graphical import EventLog, SimConfig

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_config(M=1, lo=-3, hi=3, T=1.0, mu=1.0):
    return SimConfig(mu=mu, range_M=M, x_min=lo, x_max=hi, horizon=T)


def random_log(rng, M=1, lo=-6, hi=6, T=3.0, n_deaths=12, n_arrows=30):
    """Hand-style log with random event placement (times distinct)."""
    cfg = small_config(M, lo, hi, T)
    times = np.sort(rng.uniform(0, T, n_deaths + n_arrows))
    times = np.unique(times)
    rng.shuffle(times)
    deaths, arrows = {}, {}
    k = 0
    for _ in range(n_deaths):
        if k >= times.size:
            break
        deaths.setdefault(int(rng.integers(lo, hi + 1)), []).append(times[k])
        k += 1
    while k < times.size:
        x = int(rng.integers(lo, hi + 1))
        d = int(rng.integers(1, M + 1)) * int(rng.choice([-1, 1]))
        if lo <= x + d <= hi:
            arrows.setdefault((x, x + d), []).append(times[k])
        k += 1
    deaths = {x: sorted(v) for x, v in deaths.items()}
    arrows = {e: sorted(v) for e, v in arrows.items()}
    return EventLog.from_events(cfg, deaths, arrows)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
