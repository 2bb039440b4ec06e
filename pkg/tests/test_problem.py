import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from almor.problem import (ConfigError, affine_decomposition, eval_coefficients,
                           load_problem, preset_config)

from conftest import make_config


def test_paper_channels_preset():
    p = load_problem("paper-channels")
    assert p.q == 7
    assert p.reaction == 1.0e6
    assert p.source == 0.0
    assert p.boundary["right"].kind == "neumann"
    for side in ("left", "top", "bottom"):
        assert p.boundary[side].kind == "dirichlet"
    assert p.nx == p.ny == 8 and p.m == 32
    assert p.parameter_box == tuple([(4.0, 6.0)] * 7)
    assert list(p.mu_star) == [6.0] * 7


def test_preset_coefficient_values():
    p = load_problem("paper-channels")
    mu = np.full(7, 5.0)
    # background point
    k, r, f = eval_coefficients(p, mu, (0.5, 0.99))
    assert k == 1.0 and r == 1.0e6 and f == 0.0
    # inside channel 3 (centered at y = 4/8 - 1/16)
    k, _, _ = eval_coefficients(p, mu, (0.5, 4 / 8 - 1 / 16))
    assert k == pytest.approx(1.0e5)
    mu[3] = 4.0
    k, _, _ = eval_coefficients(p, mu, (0.5, 4 / 8 - 1 / 16))
    assert k == pytest.approx(1.0e4)


def test_minimal_config_q0():
    cfg = make_config(nx=2, ny=2, m=2, channels=[], reaction=1.0, source=1.0,
                      boundary={s: {"type": "dirichlet", "g": 0.0}
                                for s in ("left", "right", "top", "bottom")})
    p = load_problem(cfg)
    assert p.q == 0
    k, r, f = eval_coefficients(p, np.array([]), (0.3, 0.4))
    assert (k, r, f) == (1.0, 1.0, 1.0)


def test_load_from_json_file(tmp_path):
    path = tmp_path / "prob.json"
    path.write_text(json.dumps(make_config()))
    p = load_problem(path)
    assert p.nx == 3


def test_preset_with_overrides():
    p = load_problem({"preset": "paper-channels", "fine": {"m": 8}})
    assert p.m == 8 and p.q == 7


def test_schema_violations():
    bad = make_config()
    del bad["coarse"]
    with pytest.raises(ConfigError):
        load_problem(bad)
    bad = make_config()
    bad["kappa"]["background"] = -1.0
    with pytest.raises(ConfigError):
        load_problem(bad)
    bad = make_config()
    bad["reaction"] = 0.0
    with pytest.raises(ConfigError):
        load_problem(bad)


def test_channel_outside_domain_rejected():
    cfg = make_config(channels=[((0.5, 1.5, 0.4, 0.5), 0)])
    with pytest.raises(ConfigError, match="outside"):
        load_problem(cfg)


def test_overlapping_channels_rejected():
    cfg = make_config(channels=[((0.1, 0.6, 0.4, 0.5), 0),
                                ((0.5, 0.9, 0.45, 0.55), 1)])
    with pytest.raises(ConfigError, match="disjoint"):
        load_problem(cfg)


def test_mu_validation():
    p = load_problem(make_config(channels=[((0.1, 0.9, 0.4, 0.5), 0)]))
    with pytest.raises(ConfigError):
        p.validate_mu([7.0])
    with pytest.raises(ConfigError):
        p.validate_mu([4.0, 5.0])


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset_config("no-such-preset")


def test_affine_component_counts():
    p = load_problem("paper-channels")
    ad = affine_decomposition(p)
    assert ad.n_kappa == 8  # background + 7 channels
    p0 = load_problem(make_config(channels=[]))
    assert affine_decomposition(p0).n_kappa == 1


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_affine_reassembly_matches_direct(seed):
    p = load_problem("paper-channels")
    ad = affine_decomposition(p)
    rng = np.random.default_rng(seed)
    mu = rng.uniform(4.0, 6.0, size=7)
    pts = rng.uniform(0.0, 1.0, size=(10, 2))
    direct = p.kappa(mu, pts[:, 0], pts[:, 1])
    assembled = ad.kappa_value(mu, pts[:, 0], pts[:, 1])
    assert np.abs(assembled - direct).max() <= 1e-12 * np.abs(direct).max()


def test_positivity_over_samples():
    p = load_problem("paper-channels")
    rng = np.random.default_rng(123)
    pts = rng.uniform(0.0, 1.0, size=(10_000, 2))
    for _ in range(20):
        mu = rng.uniform(4.0, 6.0, size=7)
        assert p.kappa(mu, pts[:, 0], pts[:, 1]).min() > 0.0
    assert p.reaction > 0.0


def test_coefficients_clamped_outside_domain():
    p = load_problem("paper-channels")
    mu = np.full(7, 5.0)
    k, _, _ = eval_coefficients(p, mu, (-0.5, 0.5))
    k2, _, _ = eval_coefficients(p, mu, (0.0, 0.5))
    assert k == k2
