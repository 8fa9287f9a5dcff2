import pytest

from swiptctl.scenario import compile_scenario, desk_scenario


@pytest.fixture(scope="session")
def desk_cfg():
    return desk_scenario()


@pytest.fixture(scope="session")
def desk_compiled(desk_cfg):
    return compile_scenario(desk_cfg)
