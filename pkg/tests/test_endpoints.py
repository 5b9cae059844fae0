import io
import json

import httpx
import pytest
from botocore.exceptions import ClientError

from memreader.endpoints import EndpointClient, Locator, parse_locator
from memreader.errors import ConfigError, EndpointError


@pytest.mark.parametrize(
    ("locator", "expected"),
    [
        ("https://judge.test/score", Locator("http", "https://judge.test/score")),
        (" lambda:memreader-policy ", Locator("lambda", "memreader-policy")),
        ("sagemaker:judge-endpoint", Locator("sagemaker", "judge-endpoint")),
    ],
)
def test_parse_locator(locator, expected):
    assert parse_locator(locator) == expected


@pytest.mark.parametrize("locator", ["", "ftp://x", "lambda:", "sagemaker:  "])
def test_parse_locator_rejects_unknown_forms(locator):
    with pytest.raises(ConfigError):
        parse_locator(locator)


def test_client_rejects_non_positive_timeout():
    with pytest.raises(ConfigError):
        EndpointClient("http://x.test", 0)


def test_http_post_round_trip():
    def handler(request):
        assert request.headers["content-type"] == "application/json"
        body = json.loads(request.content)
        return httpx.Response(200, json={"echo": body["context"]})

    with EndpointClient("http://x.test/step", transport=httpx.MockTransport(handler)) as client:
        assert client.post({"context": "日本語も通る"}) == {"echo": "日本語も通る"}


def test_http_timeout_becomes_endpoint_error():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = EndpointClient("http://x.test/step", 1.5, transport=httpx.MockTransport(handler))
    with pytest.raises(EndpointError, match="timed out after 1.5s"):
        client.post({})


def test_http_non_object_body_is_rejected():
    client = EndpointClient("http://x.test", transport=httpx.MockTransport(lambda r: httpx.Response(200, json=[1])))
    with pytest.raises(EndpointError, match="expected an object"):
        client.post({})


class FakeLambda:
    def __init__(self, payload, function_error=None):
        self.payload = payload
        self.function_error = function_error
        self.calls = []

    def invoke(self, **kwargs):
        self.calls.append(kwargs)
        response = {"Payload": io.BytesIO(self.payload)}
        if self.function_error:
            response["FunctionError"] = self.function_error
        return response


def test_lambda_invoke():
    fake = FakeLambda(b'{"output": "ok"}')
    client = EndpointClient("lambda:policy-fn", boto_client=fake)

    assert client.post({"context": "c"}) == {"output": "ok"}
    (call,) = fake.calls
    assert call["FunctionName"] == "policy-fn"
    assert call["InvocationType"] == "RequestResponse"
    assert json.loads(call["Payload"]) == {"context": "c"}


def test_lambda_function_error():
    client = EndpointClient("lambda:policy-fn", boto_client=FakeLambda(b'{"errorMessage": "x"}', "Unhandled"))
    with pytest.raises(EndpointError, match="raised Unhandled"):
        client.post({})


class FakeSageMaker:
    def __init__(self, error=None):
        self.error = error

    def invoke_endpoint(self, **kwargs):
        if self.error:
            raise self.error
        assert kwargs["ContentType"] == "application/json"
        return {"Body": io.BytesIO(b'{"correctness": 1}')}


def test_sagemaker_invoke():
    client = EndpointClient("sagemaker:judge", boto_client=FakeSageMaker())
    assert client.post({"dialogue": "d"}) == {"correctness": 1}


def test_sagemaker_client_error():
    error = ClientError({"Error": {"Code": "ValidationError", "Message": "no such endpoint"}}, "InvokeEndpoint")
    client = EndpointClient("sagemaker:judge", boto_client=FakeSageMaker(error))
    with pytest.raises(EndpointError, match="no such endpoint"):
        client.post({})
