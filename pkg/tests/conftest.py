import numpy as np
import pytest

from almor.fom import Discretization
from almor.problem import load_problem


def make_config(nx=3, ny=3, m=4, channels=(), background=1.0, reaction=100.0,
                source=0.0, box=None, mu_star=None, mu_train=None,
                boundary=None, domain=(0.0, 1.0, 0.0, 1.0)):
    """Small problem configs for tests; channels are (rect, param_index)."""
    q = max((pi for _, pi in channels), default=-1) + 1
    box = box if box is not None else [[4.0, 6.0]] * q
    cfg = {
        "domain": list(domain),
        "coarse": {"nx": nx, "ny": ny},
        "fine": {"m": m},
        "kappa": {"background": background,
                  "channels": [{"rect": list(r), "param_index": pi}
                               for r, pi in channels]},
        "reaction": reaction,
        "source": source,
        "boundary": boundary or {
            "left": {"type": "dirichlet", "g": 1.0},
            "right": {"type": "neumann"},
            "top": {"type": "dirichlet", "g": {"a": 1.0, "b": -1.0, "c": 0.0}},
            "bottom": {"type": "dirichlet", "g": {"a": 1.0, "b": -1.0, "c": 0.0}},
        },
        "parameter_box": box,
        "mu_star": mu_star if mu_star is not None else [hi for _, hi in box],
        "mu_train": mu_train if mu_train is not None else
            [(lo + hi) / 2 for lo, hi in box],
    }
    return cfg


def all_dirichlet(value=0.0):
    return {s: {"type": "dirichlet", "g": value}
            for s in ("left", "right", "top", "bottom")}


def all_neumann():
    return {s: {"type": "neumann"} for s in ("left", "right", "top", "bottom")}


def channel_row_rect(ny, m, row, x0=0.05, x1=0.95, cells=2):
    """Rect of a channel spanning ``cells`` fine-cell rows centered in a
    subdomain row, kept strictly away from horizontal coarse faces."""
    H = 1.0 / ny
    h = H / m
    lo = row * H + (m - cells) // 2 * h
    return (x0, x1, lo + 1e-12, lo + cells * h - 1e-12)


@pytest.fixture(scope="session")
def channel3_cfg():
    """3x3 subdomains, m=4, one resolved interior channel in the middle row."""
    return make_config(nx=3, ny=3, m=4,
                       channels=[(channel_row_rect(3, 4, 1), 0)])


@pytest.fixture(scope="session")
def channel3_disc(channel3_cfg):
    return Discretization(load_problem(channel3_cfg))


@pytest.fixture(scope="session")
def rf_cfg():
    """3x3 subdomains, m=8: smallest layout whose oversampling patches have a
    nonempty artificial boundary, for range-finder/SVD oracle tests."""
    return make_config(nx=3, ny=3, m=8,
                       channels=[(channel_row_rect(3, 8, 1), 0)],
                       reaction=1.0e4)


@pytest.fixture(scope="session")
def rf_disc(rf_cfg):
    return Discretization(load_problem(rf_cfg))


@pytest.fixture(scope="session")
def mini_channels_cfg():
    """Scaled-down analogue of the channel preset: 4x4 subdomains, m=8,
    two channels with independent parameters."""
    return make_config(
        nx=4, ny=4, m=8, reaction=1.0e4,
        channels=[(channel_row_rect(4, 8, 1), 0), (channel_row_rect(4, 8, 2), 1)],
        mu_train=[5.0, 5.0])


@pytest.fixture(scope="session")
def mini_channels_disc(mini_channels_cfg):
    return Discretization(load_problem(mini_channels_cfg))


@pytest.fixture(scope="session")
def mini_trained(mini_channels_disc):
    from almor.training import build_initial_rb

    rb, reports = build_initial_rb(
        mini_channels_disc, [mini_channels_disc.problem.mu_train],
        tol=1e-2, eps_fail=1e-15, n_test=10, seed=2024)
    return rb, reports
