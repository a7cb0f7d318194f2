from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from streetscope.mock_endpoint import MockEndpoint

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def mock_server():
    """Factory for scripted mock endpoints; servers stop at teardown."""
    servers: list[MockEndpoint] = []

    def _start(script: dict) -> MockEndpoint:
        server = MockEndpoint(script)
        server.base_url = server.start()
        servers.append(server)
        return server

    yield _start
    for server in servers:
        server.stop()
