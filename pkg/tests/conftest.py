import numpy as np
import pytest

from dotsim.device import reference_device, true_frame


def hand_built_hamiltonian(u, tc, delta):
    """Independent construction of the singlet block for oracle eigensolves."""
    return np.array([[u + delta, tc, 0.0], [tc, 0.0, tc], [0.0, tc, u - delta]])


def oracle_exchange(u, tc, delta):
    return -np.linalg.eigvalsh(hand_built_hamiltonian(u, tc, delta))[0]


@pytest.fixture(scope="session")
def ref_device():
    return reference_device()


@pytest.fixture(scope="session")
def ref_frame(ref_device):
    return true_frame(ref_device)


def random_device(rng, max_cross=0.2):
    """Seven-gate device with random cross-capacitances up to ``max_cross`` of the diagonal terms."""
    from dotsim.barrier import WkbBarrier
    from dotsim.device import DEFAULT_GATES, DeviceModel

    g = {k: i for i, k in enumerate(DEFAULT_GATES)}
    alpha = 0.1

    def c():
        return max_cross * rng.uniform(-1, 1)

    l_delta = np.array([alpha * c() for _ in DEFAULT_GATES])
    l_delta[g["P1"]] = alpha * (1 + c())
    l_delta[g["P2"]] = -alpha * (1 + c())
    l_barrier = np.array([0.1 * c() for _ in DEFAULT_GATES])
    l_barrier[g["X1"]] = 0.1
    l_common = np.array([c() / 2 for _ in DEFAULT_GATES])
    l_common[g["P1"]] = (1 + c()) / np.sqrt(2)
    l_common[g["P2"]] = (1 + c()) / np.sqrt(2)
    l_common[g["X1"]] = c()
    return DeviceModel(DEFAULT_GATES, l_delta, l_barrier, WkbBarrier(5.0, 3.0, 0.05), 20.0,
                       cell_size=200.0, l_common=l_common)


def ideal_device(alpha=0.1, tc0=1.0):
    """Cross-talk-free device whose tunnel coupling at v0 equals ``tc0``."""
    from dotsim.barrier import WkbBarrier
    from dotsim.device import DEFAULT_GATES, DeviceModel

    l_delta = np.zeros(7)
    l_delta[0], l_delta[1] = alpha, -alpha
    l_barrier = np.zeros(7)
    l_barrier[3] = 1.0
    # t_c(phi = 0) = t0 (sqrt 2 - 1)
    barrier = WkbBarrier(t0=tc0 / (np.sqrt(2) - 1), a=0.0, b=0.05)
    return DeviceModel(DEFAULT_GATES, l_delta, l_barrier, barrier, 20.0)
