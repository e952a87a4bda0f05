import random

import pytest

from app.pipeline.anomaly import train
from app.pipeline.events import trace_digest
from app.pipeline.rules import parse_ruleset
from app.services.simulator import ScenarioConfig, default_ruleset, default_scenario, generate


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(scope="session")
def normal_trace():
    """600 s of background only, seed 42."""
    return generate(ScenarioConfig(seed=42, duration_s=600))


@pytest.fixture(scope="session")
def attack_trace():
    """Same background as normal_trace plus one attack of each kind."""
    return generate(default_scenario(seed=42, duration_s=600))


@pytest.fixture(scope="session")
def normal_profile(normal_trace):
    return train(normal_trace, 10.0, trace_digest=trace_digest(normal_trace))


@pytest.fixture(scope="session")
def known_rules():
    return parse_ruleset(default_ruleset())
