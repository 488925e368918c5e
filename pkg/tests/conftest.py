import numpy as np
import pytest

from minmax_bounds.model import (
    BoxInput,
    DisturbanceEllipsoid,
    ProblemInstance,
)

# System and cost data of the built-in benchmark example (box input, unit-ball
# disturbance, alpha = 0.95).  Symmetric entries of Q0/R0 filled by symmetry.
DEMO_A = np.array([
    [0.434, 0.050, 0.212, 0.007],
    [0.264, 0.001, 0.092, 0.419],
    [0.307, 0.255, 0.371, 0.359],
    [0.364, 0.003, 0.291, 0.427],
])
DEMO_B = np.array([
    [0.739, 0.550],
    [0.371, 0.748],
    [0.323, 0.760],
    [0.491, 0.472],
])
DEMO_G = np.array([
    [0.802, 0.666, 0.737, 0.629],
    [0.471, 0.677, 0.866, 0.793],
    [0.203, 0.9425, 0.991, 0.449],
    [0.576, 0.7701, 0.504, 0.524],
])
DEMO_R0 = np.array([
    [0.262, 0.560],
    [0.560, 1.33],
])
DEMO_Q0 = np.array([
    [0.105, 0.286, 0.221, 0.271],
    [0.286, 0.929, 0.618, 0.687],
    [0.221, 0.618, 1.22, 0.854],
    [0.271, 0.687, 0.854, 0.873],
])
DEMO_ALPHA = 0.95


def demo_instance(gamma0=4.614085637069591, u_max=1.0):
    return ProblemInstance(
        A=DEMO_A,
        B=DEMO_B,
        G=DEMO_G,
        Q0=DEMO_Q0,
        R0=DEMO_R0,
        gamma0=gamma0,
        alpha=DEMO_ALPHA,
        U=BoxInput(u_max=np.full(2, u_max)),
        W=DisturbanceEllipsoid.unit_ball(4),
    )


@pytest.fixture(scope="session")
def demo():
    """Benchmark instance with gamma0 = 1.1 x (precomputed optimal gain)."""
    return demo_instance()
