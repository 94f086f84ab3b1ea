"""
Quick integration check for the live LLM endpoint.
Sends the feature-suggestion prompt of a small task and prints the parsed list,
optionally recording the exchange as a replay fixture.

Usage:
    python scripts/check_llm_endpoint.py [--record tests/fixtures/recorded]
"""
import argparse
import sys
from pathlib import Path

from qgnn.core.config import settings
from qgnn.services.llm_client import ChatCompletionsTransport, LlmTransportError, RecordingTransport
from qgnn.services.prompts import render_suggest_features
from qgnn.services.template_service import parse_numbered_list

parser = argparse.ArgumentParser(description=__doc__.splitlines()[1])
parser.add_argument("--record", help="Directory to write replayable fixtures to")
parser.add_argument("--instruction", default="Predict the venue a publication appears in.")
args = parser.parse_args()

print(f"🔍 Checking chat-completions endpoint {settings.llm_endpoint} (model={settings.llm_model})")

llm = ChatCompletionsTransport()
if args.record:
    llm = RecordingTransport(llm, Path(args.record))

try:
    answer = llm.send(render_suggest_features(args.instruction))
    features = parse_numbered_list(answer)
    print(f"✅ SUCCESS: {len(features)} feature(s) suggested")
    for feature in features:
        print(f"   - {feature}")
    if not features:
        print("⚠️ The answer held no numbered list; template generation would retry this stage.")
except LlmTransportError as e:
    print("❌ LLM endpoint check failed:", e)
    sys.exit(1)
