import pytest

from avdiff.data import make_corpus


@pytest.fixture(scope="session")
def corpus64():
    return make_corpus(64, "train")


@pytest.fixture(scope="session")
def eval_corpus():
    return make_corpus(32, "eval")
