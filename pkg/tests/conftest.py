import pytest

_AMBIENT = ('KEYBENCH_EXPERIMENT_ID', 'KEYBENCH_COLLECTOR', 'KEYBENCH_CONFIG_FILE', 'KEYBENCH_PORT',
            'KEYBENCH_COM', 'KEYBENCH_OUT_DIR', 'KEYBENCH_LOGLEVEL')


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Tests start from a known environment whatever the developer's shell has set."""
    for key in _AMBIENT:
        monkeypatch.delenv(key, raising=False)
