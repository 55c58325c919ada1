import os
import shutil
from pathlib import Path

import numpy as np
import pytest


def read_pfm(path):
    """Float image as an H x W x C array, top row first."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        width, height = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4")
    channels = 3 if header == b"PF" else 1
    return data.reshape(height, width, channels)[::-1].astype(np.float64)


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("AVATARFORGE_CLI") or shutil.which("avatarforge")
    if not path or not Path(path).exists():
        pytest.skip("avatarforge executable not available")
    return path
