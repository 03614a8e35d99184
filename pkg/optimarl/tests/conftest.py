import os

import django
import numpy as np
import pytest
from django.conf import settings

# Configure Django settings for testing
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'optimarl.settings')
django.setup()

if not settings.configured:
    settings.configure(
        INSTALLED_APPS=['optimarl'],
        SECRET_KEY='test-secret-key',
        USE_TZ=True,
        TIME_ZONE='UTC',
    )
    django.setup()

from optimarl.tabular.envs import build_gridworld  # noqa: E402
from optimarl.tabular.mdp import FactoredPolicy, random_game  # noqa: E402


@pytest.fixture
def np_rng():
    """Fixed numpy generator for building random test inputs"""
    return np.random.default_rng(12345)


@pytest.fixture
def gridworld():
    return build_gridworld()


@pytest.fixture
def make_random_game():
    """Factory for small random games keyed by an integer seed"""
    def _make(seed, n_states=3, action_counts=(2, 2), gamma=0.9, deterministic=False):
        rng = np.random.default_rng(seed)
        return random_game(rng, n_states, action_counts, gamma, deterministic=deterministic)
    return _make


@pytest.fixture
def make_interior_policy():
    def _make(game, seed):
        return FactoredPolicy.random_interior(game.action_counts, game.n_states, np.random.default_rng(seed))
    return _make
