import json

import numpy as np
import pytest

from maskedit.diffusion import SamplerConfig, config_from_json, config_to_json
from maskedit.errors import ConfigurationError
from maskedit.schedule import make_schedule


def test_single_step_constant_beta():
    sched = make_schedule(1, 0.5, 0.5)
    assert np.allclose(sched.alpha_bar, [1.0, 0.5])


def test_two_step_constant_beta():
    sched = make_schedule(2, 0.5, 0.5)
    assert np.allclose(sched.alpha_bar, [1.0, 0.5, 0.25])


def test_long_schedule_matches_extended_precision_product():
    sched = make_schedule(1000, 1e-4, 2e-2)
    betas = np.linspace(np.longdouble("1e-4"), np.longdouble("2e-2"), 1000)
    oracle = np.cumprod(np.longdouble(1.0) - betas)[-1]
    rel = abs(sched.alpha_bar[1000] - float(oracle)) / float(oracle)
    assert rel < 1e-10


def test_monotonic_and_positive_over_random_configs():
    rng = np.random.default_rng(0)
    for _ in range(50):
        total = int(rng.integers(1, 400))
        beta_min = float(rng.uniform(1e-5, 0.02))
        beta_max = float(rng.uniform(beta_min, 0.2))
        sched = make_schedule(total, beta_min, beta_max)
        assert sched.alpha_bar[0] == 1.0
        assert np.all(np.diff(sched.alpha_bar) < 0)
        assert np.all(sched.alpha_bar > 0)
        assert np.all(np.isfinite(sched.alpha_bar))


@pytest.mark.parametrize("args", [
    (0, 0.1, 0.2),
    (10, 0.0, 0.2),
    (10, -0.1, 0.2),
    (10, 0.3, 0.2),
    (10, 0.1, 1.0),
])
def test_invalid_ranges_rejected(args):
    with pytest.raises(ConfigurationError):
        make_schedule(*args)


def test_alpha_bar_is_read_only():
    sched = make_schedule(10, 0.01, 0.02)
    with pytest.raises(ValueError):
        sched.alpha_bar[3] = 0.5


def test_json_config_block_round_trip():
    sched = make_schedule(500, 2e-4, 1e-2)
    cfg = SamplerConfig(steps=25, guidance_scale=3.0, seed=11)
    block = config_to_json(sched, cfg)
    keys = set(json.loads(block))
    assert keys == {"T", "beta_min", "beta_max", "steps", "guidance_scale", "seed"}
    sched2, cfg2 = config_from_json(block)
    assert sched2.total_steps == 500
    assert np.array_equal(sched2.alpha_bar, sched.alpha_bar)
    assert cfg2 == cfg
