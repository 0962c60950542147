import os
import sys
from pathlib import Path

os.environ.setdefault("TAKEOVER_ENV", "test")  # no log files during tests
os.environ.setdefault("TAKEOVER_LOG_TO_FILE", "false")

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from takeover.domain.cf_models import default_hl_spec
from takeover.domain.particles import default_ea_posterior
from takeover.domain.posteriors import default_av_posterior, default_hdv_posterior
from takeover.services.intervention import EaParams, default_ea_template


@pytest.fixture(scope="session")
def hdv_posterior():
    return default_hdv_posterior()


@pytest.fixture(scope="session")
def av_posterior():
    return default_av_posterior()


@pytest.fixture(scope="session")
def ea_posterior():
    return default_ea_posterior()


@pytest.fixture
def hl_spec():
    return default_hl_spec()


@pytest.fixture
def ea_template() -> EaParams:
    return default_ea_template()


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path
