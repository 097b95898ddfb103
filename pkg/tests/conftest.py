import os

import pytest
from hypothesis import HealthCheck, settings

from nsss.corpus import CodeSnippet
from nsss.modules import Vocab, init_params
from nsss.parser import default_parser

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def parser():
    return default_parser()


@pytest.fixture
def snippet():
    return CodeSnippet.from_source("s1", "def load_tables(dataset):\n    return [t for t in dataset.tables]\n")


@pytest.fixture
def small_params():
    words = ["load", "tables", "dataset", "return", "for", "in", "read", "points", "stream",
             "construct", "point", "record", "file", "remove", "t", "def", "all"]
    return init_params(Vocab(words), d=8, h=6, n_max=64, seed=3)
