import numpy as np
import pytest

from chain_fixture import fit_chain, make_chain


@pytest.fixture(scope="session")
def chain():
    return make_chain(0)


@pytest.fixture(scope="session")
def chain_model(chain):
    """Chain model with its binned variant (about 20 s to train)."""
    return fit_chain(chain, variant=True)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def full_model(chain):
    """Same fixture trained against the complete graph (no structure constraint)."""
    from dataclasses import replace

    from chain_fixture import CHAIN_CFG, complete_mask
    from ngm.learning import fit_ngm

    return fit_ngm(chain.x, complete_mask(chain.names), replace(CHAIN_CFG, seed=chain.seed),
                   chain.schema, graph=chain.graph)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
