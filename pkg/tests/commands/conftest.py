import pytest

from posr.config import write_config_echo


@pytest.fixture
def config_file(tmp_path, fast_run_config):
    """The fast run config written as a config file the CLI can load."""
    return write_config_echo(fast_run_config, tmp_path / "fast.conf")
