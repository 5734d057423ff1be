import sys
from pathlib import Path

import pytest
import torch

from percsim.codec.models import Codec
from percsim.codec.spec import toy_spec

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


def make_toy_codec(seed=0, **kw):
    torch.manual_seed(seed)
    return Codec(toy_spec(**kw)).eval()


@pytest.fixture
def toy_codec():
    return make_toy_codec()


@pytest.fixture
def small_codec():
    # narrow variant for double-precision gradient checks
    return make_toy_codec(channels=4, latent_channels=6, hyper_channels=4)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, seconds, detail in results:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name:<48} {seconds:8.1f}s  {detail}")
