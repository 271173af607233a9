import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from icsbi.backends import ReferenceBackend


@pytest.fixture(scope="session")
def backend():
    return ReferenceBackend()
