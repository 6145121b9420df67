import sympy as sp
import pytest

from decouple.model import FbsdeProblem, make_symbols


def general_problem() -> FbsdeProblem:
    """Smooth fully coupled problem with n = m = d = 2 (no closed form)."""
    sym = make_symbols(2, 2, 2)
    t, x, y, z = sym
    return FbsdeProblem.from_sympy(
        "general",
        2, 2, 2, 1.0,
        mu=[sp.sin(x[0]) + y[0] * z[0][1] / 10, sp.cos(y[1]) / 5 + z[1][0] ** 2 / 10],
        sigma=[
            [1 + z[0][0] / 10, x[1] / 20],
            [y[0] / 10, 1 + z[1][1] / 10 + sp.sin(x[0]) / 20],
        ],
        f=[x[0] * y[1] / 10 + z[0][0] * z[1][0] / 20, sp.sin(y[0]) / 10 + z[0][1] * x[1] / 10],
        xi=[sp.sin(x[0]), sp.cos(x[1])],
        symbols=sym,
        L_sigma_z=0.1,
    )


@pytest.fixture(scope="session")
def general():
    return general_problem()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for cid in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[cid])
