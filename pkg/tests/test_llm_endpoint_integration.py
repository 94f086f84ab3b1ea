import pytest

from qgnn.core.config import settings
from qgnn.services.llm_client import ChatCompletionsTransport
from qgnn.services.prompts import render_suggest_features
from qgnn.services.template_service import parse_numbered_list


@pytest.fixture
def live_llm():
    llm = ChatCompletionsTransport(timeout=30)
    if not llm.ping():
        pytest.skip(f"⚠️ LLM endpoint {settings.llm_endpoint} is not reachable")
    return llm


@pytest.mark.integration
def test_ping_reachable(exp):
    ok = ChatCompletionsTransport(timeout=5).ping()
    exp.expect("ping returns bool; test skipped if False (no server running)")
    exp.actual(f"ok={ok}")
    assert isinstance(ok, bool)
    if not ok:
        pytest.skip(f"⚠️ LLM endpoint {settings.llm_endpoint} is not reachable")


@pytest.mark.integration
def test_live_model_returns_a_numbered_list(live_llm, exp):
    answer = live_llm.send(render_suggest_features("predict the venue a publication appears in"))
    features = parse_numbered_list(answer)
    exp.expect(f"model '{settings.llm_model}' answers the feature prompt with a numbered list")
    exp.actual(f"features={features[:5]}")
    assert isinstance(answer, str) and answer.strip()
    assert features
