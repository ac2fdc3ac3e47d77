import pytest

from helpers import two_agent_economy


@pytest.fixture
def economy6():
    return two_agent_economy()
