import json
from pathlib import Path

import pytest

from case_study import CASE_STUDY_SCRIPT

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def episode_path():
    return FIXTURES / "case_study_episode.json"


@pytest.fixture
def teacher_traces_path():
    return FIXTURES / "teacher_traces.txt"


@pytest.fixture
def script_path(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps(CASE_STUDY_SCRIPT), encoding="utf-8")
    return path
