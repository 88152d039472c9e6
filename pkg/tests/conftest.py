import numpy as np
import pytest

from rvvtune import MachineConfig, Registry


@pytest.fixture(scope="session")
def machine1024():
    return MachineConfig(1024)


@pytest.fixture(scope="session")
def registry1024(machine1024):
    return Registry(machine1024)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_matmul(A, B, D):
    """Triple loop over Python ints; ``B`` is stored n x k."""
    m, k = A.shape
    n = B.shape[0]
    C = [[int(D[i, j]) for j in range(n)] for i in range(m)]
    for i in range(m):
        for j in range(n):
            for kk in range(k):
                C[i][j] += int(A[i, kk]) * int(B[j, kk])
    return np.array(C, dtype=np.int64)
