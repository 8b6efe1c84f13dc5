"""Random scenario generation: clustered users, fading, path loss.

Users are dropped uniformly in a square cluster away from the base station
at the origin.  Links to the base station see Rayleigh fading, inter-user
links Rician fading (strong line of sight between closely packed devices),
both with power-law path loss floored at a minimum distance.  Users are
indexed by decreasing direct-link gain, matching the SIC order assumed by
the rate model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .model import SystemInstance


@dataclass(frozen=True)
class ScenarioConfig:
    num_users: int = 2
    cluster_side: float = 5.0  # r_u, metres
    cluster_center: float = 15.0  # r_c; cluster centred at (r_c, r_c)
    noise_power: float = 1e-8
    target_rate: float = 1.0  # nats per channel use
    pathloss_exponent: float = 3.0
    rician_k: float = 10.0  # linear LOS-to-scatter power ratio
    min_distance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.cluster_side <= 0 or self.cluster_center <= 0:
            raise ValueError("cluster geometry must be positive")
        if self.noise_power <= 0:
            raise ValueError("noise_power must be positive")
        if self.target_rate < 0:
            raise ValueError("target_rate must be non-negative")
        if self.pathloss_exponent < 2:
            raise ValueError("pathloss_exponent must be >= 2")
        if self.rician_k < 0:
            raise ValueError("rician_k must be >= 0")
        if self.min_distance <= 0:
            raise ValueError("min_distance must be positive")

    def to_text(self) -> str:
        return "".join(f"{f.name} {getattr(self, f.name)!r}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition(" ")
            if key not in known:
                raise ValueError(f"unknown scenario key {key!r}")
            kwargs[key] = int(val) if key in ("num_users", "seed") else float(val)
        return cls(**kwargs)


def _rician_power(rng: np.random.Generator, k: float, size=None) -> np.ndarray | float:
    """Unit-mean squared envelope of Rician fading; k=0 reduces to Rayleigh."""
    los = math.sqrt(k / (k + 1.0))
    sigma = math.sqrt(0.5 / (k + 1.0))
    re = rng.normal(los, sigma, size)
    im = rng.normal(0.0, sigma, size)
    return re**2 + im**2


def sample_instance(cfg: ScenarioConfig, rng: np.random.Generator) -> SystemInstance:
    """Draw one system instance; pure function of the supplied random stream.

    Draw order is fixed (positions, base-station fades, then inter-user
    fades on the sorted users) so identical streams give bit-identical
    instances regardless of worker count.
    """
    m = cfg.num_users
    half = cfg.cluster_side / 2.0
    pos = rng.uniform(cfg.cluster_center - half, cfg.cluster_center + half, size=(m, 2))
    d_bs = np.maximum(np.hypot(pos[:, 0], pos[:, 1]), cfg.min_distance)
    fade = rng.exponential(1.0, m)  # |CN(0,1)|^2
    h2 = fade * d_bs ** (-cfg.pathloss_exponent)

    order = np.argsort(-h2, kind="stable")
    h2 = h2[order]
    pos = pos[order]

    gamma = np.zeros((m, m))
    np.fill_diagonal(gamma, h2 / cfg.noise_power)
    for r in range(1, m):
        for i in range(r):
            d = max(float(np.hypot(*(pos[r] - pos[i]))), cfg.min_distance)
            g2 = _rician_power(rng, cfg.rician_k) * d ** (-cfg.pathloss_exponent)
            gamma[r, i] = h2[r] * g2 / cfg.noise_power
    return SystemInstance(gamma, cfg.target_rate)
