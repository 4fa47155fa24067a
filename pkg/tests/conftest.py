import numpy as np
import pytest
import torch

from sentiembed.encoder import build_encoder
from sentiembed.lexicon import Lexicon
from sentiembed.masking import Tokenizer
from sentiembed.synthetic import make_toy_dataset, toy_lexicon

torch.set_num_threads(1)

# (criterion, passed, detail) lines collected by tests/test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def lexicon() -> Lexicon:
    return toy_lexicon()


@pytest.fixture(scope="session")
def toy_small():
    return make_toy_dataset(n_train=200, n_valid=60, n_test=60, seed=3)


@pytest.fixture(scope="session")
def tokenizer(toy_small, lexicon) -> Tokenizer:
    return Tokenizer.train([e.text for e in toy_small.train], lexicon=lexicon)


@pytest.fixture
def tiny_encoder(tokenizer):
    return build_encoder(tokenizer, seed=0, num_layers=2, hidden_dim=16, num_heads=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
