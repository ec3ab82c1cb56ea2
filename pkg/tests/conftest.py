import numpy as np
import pytest

from pbrigidity.field_core import ScalarField, make_grid


def bump(x, y, cx=0.5, cy=0.5, r=0.4):
    s = ((x - cx) ** 2 + (y - cy) ** 2) / r**2
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1 - 1 / (1 - s[inside]))
    return out


def gaussian(x, y):
    return np.exp(-20 * ((x - 0.5) ** 2 + (y - 0.5) ** 2))


def identity_pair(n=129):
    g = make_grid(0, 1, 0, 1, n, n)
    return (ScalarField.from_function(g, lambda x, y: x),
            ScalarField.from_function(g, lambda x, y: y + 0 * x))


def cos_pair(n=257):
    g = make_grid(0, np.pi, 0, 1, n, n)
    return (ScalarField.from_function(g, lambda x, y: np.cos(2 * x)),
            ScalarField.from_function(g, lambda x, y: y + 0 * x))


def bump_pair(n=257, margin=2):
    g = make_grid(0, 1, 0, 1, n, n)
    return (ScalarField.from_function(g, lambda x, y: 2 * x * bump(x, y), margin),
            ScalarField.from_function(g, lambda x, y: y * bump(x, y), margin))


def gaussian_field(n=513, margin=4):
    g = make_grid(0, 1, 0, 1, n, n)
    return ScalarField.from_function(g, gaussian, margin)


@pytest.fixture(scope="session")
def ident():
    return identity_pair()


@pytest.fixture(scope="session")
def cospair():
    return cos_pair()


@pytest.fixture(scope="session")
def bumppair():
    return bump_pair()


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(num: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[num] = (bool(ok), detail)
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
