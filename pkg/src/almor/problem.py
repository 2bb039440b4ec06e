"""Parametric problem definition: coefficients, boundary data, parameter space.

The diffusion field is a positive background plus axis-aligned rectangular
channels; channel ``i`` has conductivity ``10**mu[i]`` so the field is affine
in the transformed parameters ``10**mu``.  Reaction and source are constant
fields.  Each side of the domain boundary is either Dirichlet (with constant
or affine data) or homogeneous Neumann.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigError",
    "Channel",
    "BoundarySide",
    "ProblemDef",
    "load_problem",
    "preset_config",
    "eval_coefficients",
    "affine_decomposition",
    "AffineDecomposition",
]

SIDES = ("left", "right", "bottom", "top")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent problem configurations."""


@dataclass(frozen=True)
class Channel:
    rect: tuple[float, float, float, float]  # x0, x1, y0, y1
    param_index: int

    def contains(self, x, y):
        x0, x1, y0, y1 = self.rect
        return (x0 <= x) & (x <= x1) & (y0 <= y) & (y <= y1)


@dataclass(frozen=True)
class BoundarySide:
    """Either homogeneous Neumann or Dirichlet with data a + b*x + c*y."""

    kind: str  # "dirichlet" | "neumann"
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0

    def value(self, x, y):
        return self.a + self.b * np.asarray(x) + self.c * np.asarray(y)


@dataclass(frozen=True)
class ProblemDef:
    domain: tuple[float, float, float, float]
    nx: int
    ny: int
    m: int
    kappa_background: float
    channels: tuple[Channel, ...]
    reaction: float
    source: float
    boundary: dict[str, BoundarySide]
    parameter_box: tuple[tuple[float, float], ...]
    mu_star: np.ndarray
    mu_train: np.ndarray
    config: dict  # canonical config this problem was built from

    @property
    def q(self) -> int:
        return len(self.parameter_box)

    def validate_mu(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.q,):
            raise ConfigError(f"parameter must have length {self.q}, got shape {mu.shape}")
        for i, (lo, hi) in enumerate(self.parameter_box):
            if not (lo <= mu[i] <= hi):
                raise ConfigError(f"parameter component {i}={mu[i]} outside [{lo}, {hi}]")
        return mu

    def dirichlet_sides(self) -> list[str]:
        return [s for s in SIDES if self.boundary[s].kind == "dirichlet"]

    def kappa(self, mu, x, y):
        """Diffusion value(s) at points, clamped to the closed domain."""
        x, y = self._clamp(x, y)
        out = np.full(np.broadcast(x, y).shape, self.kappa_background, dtype=float)
        for ch in self.channels:
            out = np.where(ch.contains(x, y), 10.0 ** mu[ch.param_index], out)
        return out

    def _clamp(self, x, y):
        x0, x1, y0, y1 = self.domain
        return np.clip(np.asarray(x, dtype=float), x0, x1), np.clip(np.asarray(y, dtype=float), y0, y1)


def eval_coefficients(problem: ProblemDef, mu, x) -> tuple[float, float, float]:
    """Pointwise (kappa, reaction, source) at ``x = (x, y)``."""
    mu = problem.validate_mu(mu)
    k = problem.kappa(mu, x[0], x[1])
    return float(k), float(problem.reaction), float(problem.source)


@dataclass(frozen=True)
class AffineDecomposition:
    """Separable coefficient fields: field(x) values paired with theta(mu).

    ``kappa_fields[k]`` evaluates the parameter-independent field of component
    ``k`` at arrays of points; ``kappa_thetas[k](mu)`` is its scalar
    coefficient.  The background component is first, channels follow in
    declaration order.  Reaction and source are single constant components.
    """

    kappa_thetas: tuple
    kappa_fields: tuple
    kappa_labels: tuple[str, ...]
    reaction_theta: object
    source_theta: object

    @property
    def n_kappa(self) -> int:
        return len(self.kappa_fields)

    def kappa_value(self, mu, x, y):
        out = 0.0
        for theta, f in zip(self.kappa_thetas, self.kappa_fields):
            out = out + theta(mu) * f(x, y)
        return out


def affine_decomposition(problem: ProblemDef) -> AffineDecomposition:
    """Affine split of the coefficient fields.

    Channels must be pairwise disjoint (validated at load time), so the
    background indicator plus the channel indicators reproduce the diffusion
    field exactly.
    """
    channels = problem.channels

    def background(x, y):
        inside = np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape, dtype=bool)
        for ch in channels:
            inside |= ch.contains(np.asarray(x), np.asarray(y))
        return np.where(inside, 0.0, 1.0)

    def channel_field(ch):
        return lambda x, y: ch.contains(np.asarray(x), np.asarray(y)).astype(float)

    kb = problem.kappa_background
    thetas = [lambda mu, kb=kb: kb]
    fields = [background]
    labels = ["background"]
    for ci, ch in enumerate(channels):
        thetas.append(lambda mu, i=ch.param_index: 10.0 ** mu[i])
        fields.append(channel_field(ch))
        labels.append(f"channel{ci}")
    return AffineDecomposition(
        kappa_thetas=tuple(thetas),
        kappa_fields=tuple(fields),
        kappa_labels=tuple(labels),
        reaction_theta=lambda mu, r=problem.reaction: r,
        source_theta=lambda mu, f=problem.source: f,
    )


# -- configuration ------------------------------------------------------------

def paper_channels_config() -> dict:
    """Built-in channel problem: seven horizontal high-conductivity channels.

    Unit square, 8x8 subdomains with 32x32 cells each, channels of height
    1/32 centered in the lower seven subdomain rows, conductivity exponents
    in [4, 6], reaction 1e6, zero source, Dirichlet data 1 on the left
    decaying linearly to 0 along top and bottom, homogeneous Neumann on the
    right.
    """
    channels = []
    for k in range(1, 8):
        yc = k / 8.0 - 1.0 / 16.0
        channels.append({"rect": [0.05, 0.95, yc - 1.0 / 64.0, yc + 1.0 / 64.0],
                         "param_index": k - 1})
    return {
        "domain": [0.0, 1.0, 0.0, 1.0],
        "coarse": {"nx": 8, "ny": 8},
        "fine": {"m": 32},
        "kappa": {"background": 1.0, "channels": channels},
        "reaction": 1.0e6,
        "source": 0.0,
        "boundary": {
            "left": {"type": "dirichlet", "g": 1.0},
            "right": {"type": "neumann"},
            "bottom": {"type": "dirichlet", "g": {"a": 1.0, "b": -1.0, "c": 0.0}},
            "top": {"type": "dirichlet", "g": {"a": 1.0, "b": -1.0, "c": 0.0}},
        },
        "parameter_box": [[4.0, 6.0]] * 7,
        "mu_star": [6.0] * 7,
        "mu_train": [5.0] * 7,
    }


_PRESETS = {"paper-channels": paper_channels_config}


def preset_config(name: str, **overrides) -> dict:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {sorted(_PRESETS)}")
    cfg = _PRESETS[name]()
    cfg.update(overrides)
    return cfg


def _schema():
    with resources.files("almor").joinpath("schema/problem.schema.json").open("rb") as fh:
        return json.load(fh)


def _parse_side(spec) -> BoundarySide:
    if spec["type"] == "neumann":
        return BoundarySide("neumann")
    g = spec.get("g", 0.0)
    if isinstance(g, (int, float)):
        return BoundarySide("dirichlet", a=float(g))
    return BoundarySide("dirichlet", a=float(g.get("a", 0.0)),
                        b=float(g.get("b", 0.0)), c=float(g.get("c", 0.0)))


def load_problem(config) -> ProblemDef:
    """Build a validated ProblemDef from a config dict, JSON path, or preset name.

    A dict config may carry ``{"preset": name, ...overrides}``.  Validation
    covers the JSON schema, positivity of coefficients, channel placement and
    disjointness, and admissibility of ``mu_star`` / ``mu_train``.
    """
    if isinstance(config, (str, Path)):
        p = Path(config)
        if p.suffix == ".json" or p.exists():
            config = json.loads(p.read_text())
        else:
            config = preset_config(str(config))
    if not isinstance(config, dict):
        raise ConfigError("config must be a dict, a JSON file path, or a preset name")
    config = copy.deepcopy(config)
    if "preset" in config:
        base = preset_config(config.pop("preset"))
        base.update(config)
        config = base

    import jsonschema

    try:
        jsonschema.validate(config, _schema())
    except jsonschema.ValidationError as err:
        raise ConfigError(f"config does not match schema: {err.message}") from err

    domain = tuple(float(v) for v in config["domain"])
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise ConfigError("domain extents must be increasing")
    channels = tuple(Channel(tuple(float(v) for v in ch["rect"]), int(ch["param_index"]))
                     for ch in config["kappa"].get("channels", []))
    box = tuple((float(lo), float(hi)) for lo, hi in config.get("parameter_box", []))
    q = len(box)

    for ch in channels:
        cx0, cx1, cy0, cy1 = ch.rect
        if not (cx1 > cx0 and cy1 > cy0):
            raise ConfigError(f"channel rect {ch.rect} is degenerate")
        if cx0 < x0 or cx1 > x1 or cy0 < y0 or cy1 > y1:
            raise ConfigError(f"channel rect {ch.rect} extends outside the domain")
        if not 0 <= ch.param_index < q:
            raise ConfigError(f"channel parameter index {ch.param_index} outside 0..{q - 1}")
    for i, a in enumerate(channels):
        for b in channels[i + 1:]:
            if (a.rect[0] < b.rect[1] and b.rect[0] < a.rect[1]
                    and a.rect[2] < b.rect[3] and b.rect[2] < a.rect[3]):
                raise ConfigError("channels must be pairwise disjoint")

    kb = float(config["kappa"]["background"])
    reaction = float(config["reaction"])
    source = float(config.get("source", 0.0))
    if kb <= 0 or reaction <= 0:
        raise ConfigError("background diffusion and reaction must be positive")
    for lo, hi in box:
        if hi < lo:
            raise ConfigError("parameter box bounds must be ordered")

    boundary = {s: _parse_side(config["boundary"][s]) for s in SIDES}

    prob = ProblemDef(
        domain=domain,
        nx=int(config["coarse"]["nx"]),
        ny=int(config["coarse"]["ny"]),
        m=int(config["fine"]["m"]),
        kappa_background=kb,
        channels=channels,
        reaction=reaction,
        source=source,
        boundary=boundary,
        parameter_box=box,
        mu_star=np.asarray(config.get("mu_star", [hi for _, hi in box]), dtype=float),
        mu_train=np.asarray(config.get("mu_train",
                                       [(lo + hi) / 2 for lo, hi in box]), dtype=float),
        config=config,
    )
    prob.validate_mu(prob.mu_star)
    prob.validate_mu(prob.mu_train)
    return prob
