from pathlib import Path

import pytest

from memreader.config import (
    ENDPOINT_TIMEOUT_ENV,
    JUDGE_ENDPOINT_ENV,
    POLICY_ENDPOINT_ENV,
    RewardWeights,
    Settings,
    load_settings,
    load_weights,
    resolve_endpoints,
    weights_from_document,
    with_weights,
)
from memreader.errors import ConfigError

DEFAULT_DOCUMENT = Path(__file__).resolve().parents[1] / "memreader.yaml"


def _write(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_shipped_document_matches_defaults():
    assert load_settings(DEFAULT_DOCUMENT) == Settings()
    assert load_settings(None) == Settings()


def test_partial_document_keeps_other_defaults(tmp_path):
    settings = load_settings(_write(tmp_path, "search_k: 3\nchain:\n  max_chain_len: 4\n"))
    assert settings.search_k == 3
    assert settings.chain.max_chain_len == 4
    assert settings.weights == RewardWeights()


def test_empty_document_is_defaults(tmp_path):
    assert load_settings(_write(tmp_path, "")) == Settings()


@pytest.mark.parametrize(
    "text",
    [
        "unknown_key: 1\n",
        "search_k: 0\n",
        "weights:\n  alpha_cor: 0.9\n",
        "- a list\n",
        "weights: [unclosed\n",
    ],
)
def test_invalid_documents(tmp_path, text):
    with pytest.raises(ConfigError):
        load_settings(_write(tmp_path, text))


def test_missing_document(tmp_path):
    with pytest.raises(ConfigError):
        load_settings(tmp_path / "absent.yaml")


def test_weights_documents(tmp_path):
    bare = load_weights(_write(tmp_path, "L_max: 512\ndelta: 0.25\n", "bare.yaml"))
    assert bare.l_max == 512
    assert bare.delta == 0.25
    sectioned = load_weights(_write(tmp_path, "weights:\n  lambda_fmt: 0.5\n", "sectioned.yaml"))
    assert sectioned.lambda_fmt == 0.5
    assert load_weights(DEFAULT_DOCUMENT) == RewardWeights()


@pytest.mark.parametrize("document", [[1, 2], {"weights": [1]}, {"gamma": 0}, {"l_max": 0}])
def test_invalid_weights(document):
    with pytest.raises(ConfigError):
        weights_from_document(document)


def test_with_weights():
    settings = Settings()
    assert with_weights(settings, None) is settings
    assert with_weights(settings, RewardWeights(delta=1.0)).weights.delta == 1.0


def test_endpoint_precedence():
    base = Settings.model_validate({"endpoints": {"policy_endpoint": "lambda:from-file", "timeout": 10}})
    environ = {POLICY_ENDPOINT_ENV: "lambda:from-env", JUDGE_ENDPOINT_ENV: "https://judge.env", ENDPOINT_TIMEOUT_ENV: "5"}

    assert resolve_endpoints(base, environ={}).endpoints.policy_endpoint == "lambda:from-file"
    from_env = resolve_endpoints(base, environ=environ).endpoints
    assert from_env.policy_endpoint == "lambda:from-env"
    assert from_env.judge_endpoint == "https://judge.env"
    assert from_env.timeout == 5.0
    from_flag = resolve_endpoints(base, policy_endpoint="lambda:from-flag", timeout=2.0, environ=environ).endpoints
    assert from_flag.policy_endpoint == "lambda:from-flag"
    assert from_flag.timeout == 2.0


@pytest.mark.parametrize("value", ["soon", "-1"])
def test_bad_timeout_from_environment(value):
    with pytest.raises(ConfigError):
        resolve_endpoints(Settings(), environ={ENDPOINT_TIMEOUT_ENV: value})
