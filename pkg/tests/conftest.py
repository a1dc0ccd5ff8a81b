from __future__ import annotations

import functools
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from hybriddiv.model import ModelParams, make_params
from hybriddiv.smoothfit import classify_and_solve

ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = ROOT / "configs"
CURATED = (
    "nested_case1",
    "nested_case2",
    "nested_case3",
    "interleaved_case1",
    "interleaved_case2",
    "symmetric",
)

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def reference_params() -> ModelParams:
    return make_params((2.0, 1.0), (1.0, 1.5), (0.5, 0.8), 0.1, 0.5, 1.0)


def load_config(name: str) -> dict:
    return json.loads((CONFIG_DIR / f"{name}.json").read_text())


def load_params(name: str) -> ModelParams:
    return ModelParams.from_dict(load_config(name)["model"])


@functools.lru_cache(maxsize=None)
def solved(name: str):
    return classify_and_solve(load_params(name))


@pytest.fixture(params=CURATED)
def curated(request):
    return request.param, solved(request.param)


@st.composite
def valid_params(draw, sigma_min: float = 0.5):
    """Two-regime parameter sets on a moderate box satisfying assumption (H)."""
    fl = lambda lo, hi: st.floats(lo, hi, allow_nan=False, allow_infinity=False)  # noqa: E731
    mu = (draw(fl(0.5, 5.0)), draw(fl(0.5, 5.0)))
    sigma = (draw(fl(sigma_min, 5.0)), draw(fl(sigma_min, 5.0)))
    lam = (draw(fl(0.1, 3.0)), draw(fl(0.1, 3.0)))
    delta = draw(fl(0.05, 3.0))
    cap = draw(fl(0.0, 0.95)) * min(mu)
    cost = draw(fl(0.05, 3.0))
    return make_params(mu, sigma, lam, delta, cap, cost)


def random_params(rng: np.random.Generator, n: int) -> list[ModelParams]:
    out = []
    for _ in range(n):
        mu = rng.uniform(0.5, 5.0, 2)
        out.append(
            make_params(
                mu,
                rng.uniform(0.5, 5.0, 2),
                rng.uniform(0.1, 3.0, 2),
                rng.uniform(0.05, 3.0),
                rng.uniform(0.0, 0.95) * mu.min(),
                rng.uniform(0.05, 3.0),
            )
        )
    return out
