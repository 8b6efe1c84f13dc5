import numpy as np

from bacnoma import SystemInstance, TwoUserInstance


def sample_two_user(rng) -> TwoUserInstance:
    """Log-uniform gains over [1e-2, 1e3] with the strong user first, R in [0.5, 5].

    The direct gains are ordered (gamma1 > gamma2): the model indexes users
    by decreasing channel strength, and the OMA-suboptimality result only
    holds under that ordering.
    """
    g = 10.0 ** rng.uniform(-2, 3, size=3)
    g1, g2 = max(g[1], g[2]), min(g[1], g[2])
    return TwoUserInstance(float(g[0]), float(g1), float(g2), float(rng.uniform(0.5, 5.0)))


def system_from_two_user(two: TwoUserInstance) -> SystemInstance:
    return SystemInstance(
        np.array([[two.gamma1, 0.0], [two.gamma0, two.gamma2]]), two.target_rate
    )
