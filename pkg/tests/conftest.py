import numpy as np
import pytest

from recruitsim.demographics import AttributeSchema, load_table

TOY_2X2 = AttributeSchema((("a", ("a0", "a1")), ("b", ("b0", "b1"))))
TOY_4BIN = AttributeSchema(tuple((f"x{k}", ("0", "1")) for k in range(4)))


@pytest.fixture(scope="session")
def table():
    return load_table()


@pytest.fixture(scope="session")
def sites(table):
    return table.sites()


@pytest.fixture(scope="session")
def target(table):
    return table.target()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.REPORT, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
