import numpy as np
import pytest
import torch

from frontalize.dataset import build_protocol, load_manifest
from frontalize.toy import ToySpec, generate_toy_dataset
from frontalize.trainer import TrainConfig, build_models, build_pair_dataset

TINY = dict(image_size=32, align=False, batch_size=4, gen_base=4, disc_base=4, local_base=2, epochs=1)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Six identities, three yaws, rendered once per session."""
    out = tmp_path_factory.mktemp("toy")
    spec = ToySpec(n_identities=6, poses=[(0, 0), (45, 0), (-45, 0)], size=32, seed=3)
    manifest = generate_toy_dataset(spec, out)
    return spec, out, manifest


@pytest.fixture(scope="session")
def toy_pairs(toy_corpus):
    _, root, manifest = toy_corpus
    recs = load_manifest(manifest)
    split = build_protocol(recs, 4, seed=0)
    return split, build_pair_dataset(split.train, root, 32, align=False)


@pytest.fixture
def tiny_config():
    return TrainConfig(**TINY)


@pytest.fixture
def tiny_models(tiny_config):
    torch.manual_seed(0)
    return build_models(tiny_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = ACCEPTANCE_LINES
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


ACCEPTANCE_LINES: list[str] = []
