import pytest

from hslab.halfspace import solve_entire
from hslab.model import ProblemSpec


@pytest.fixture(scope="session")
def entire_small():
    """Least-energy entire solution (N=3, s1=1.5, s2=0.5, lam=0.5) truncated at Rmax=6."""
    return solve_entire(ProblemSpec.two_pole(3, 1.5, 0.5, 0.5), Rmax=6.0, verify=False)
