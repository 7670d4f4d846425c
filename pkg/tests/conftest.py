import pytest

from emoblind.data import generate_dataset
from emoblind.experiment import ExperimentConfig, make_splits
from emoblind.suppression import train_sensitivenets


@pytest.fixture(scope="session")
def default_splits():
    """Seed-0 evaluation splits of the default synthetic dataset."""
    cfg = ExperimentConfig()
    return make_splits(generate_dataset(cfg.gen_config()), cfg)


@pytest.fixture(scope="session")
def trained_sn(default_splits):
    cfg = ExperimentConfig()
    return train_sensitivenets(default_splits.train, default_splits.train, cfg.suppression, seed=0)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Lines of the acceptance summary, printed at the end of the run."""
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
