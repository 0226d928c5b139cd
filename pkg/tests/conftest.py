import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import LEVELS, SHAPES, write_dataset  # noqa: E402

TINY = {
    "clustering": {"k": 6},
    "model": {"gaf_heads": 2, "gaf_dk": 2, "d_out": 8, "gat_hidden": 4, "gat_heads": [2, 2]},
    "training": {"epochs": 3, "batch_size": 2, "lr": 1e-3},
}


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    """Six small clouds over three references."""
    return write_dataset(tmp_path_factory.mktemp("tiny"), shapes=SHAPES[:3], levels=LEVELS[:2], n=300)


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory):
    import tomli_w

    path = tmp_path_factory.mktemp("cfg") / "tiny.toml"
    path.write_text(tomli_w.dumps(TINY))
    return path
