"""
LLM Transports - Infrastructure Layer

Thin transports for the template generation pipeline. Every transport
exposes `send(prompt) -> str` and counts its calls, so callers can assert
that no LLM traffic happens outside template generation.

- ChatCompletionsTransport: live JSON-over-HTTP chat-completions endpoint
- FixtureTransport: replays canned responses from a fixture directory
- RecordingTransport: wraps a live transport and writes fixtures
"""

from pathlib import Path
from typing import Optional, Protocol
import hashlib
import logging
import threading

import requests

from qgnn.core.config import settings
from qgnn.core.errors import ConfigurationError, StorageIOError
from qgnn.services.prompts import prompt_stage

logger = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.0


class LlmTransportError(StorageIOError):
    """Raised on any network/HTTP/shape error talking to the live endpoint."""


class FixtureMissingError(ConfigurationError):
    """Raised when the fixture directory has no response for a prompt."""

    def __init__(self, digest: str, stage: Optional[str]):
        self.digest = digest
        self.stage = stage
        super().__init__(
            f"No fixture for prompt {digest} (stage: {stage or 'unknown'}); "
            f"add {digest}.txt or {stage or '<stage>'}.txt"
        )


def prompt_hash(prompt: str) -> str:
    """Stable fixture key of a prompt."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class LlmTransport(Protocol):
    calls: int

    def send(self, prompt: str) -> str:
        ...


class _CountingTransport:
    def __init__(self):
        self.calls = 0
        self._lock = threading.Lock()

    def _count(self) -> None:
        with self._lock:
            self.calls += 1


class FixtureTransport(_CountingTransport):
    """
    Deterministic transport replaying fixture files.

    Lookup order for a prompt:
    1. `<prompt-hash>.txt`
    2. `<stage>.txt`, where stage is the pipeline stage the prompt belongs to

    Attributes:
        root: Fixture directory
        calls: Number of send() calls so far
    """

    def __init__(self, root: Path):
        super().__init__()
        self.root = Path(root)
        if not self.root.is_dir():
            raise ConfigurationError(f"Mock LLM fixture directory not found: {self.root}")

    def send(self, prompt: str) -> str:
        self._count()
        digest = prompt_hash(prompt)
        stage = prompt_stage(prompt)
        candidates = [self.root / f"{digest}.txt"]
        if stage is not None:
            candidates.append(self.root / f"{stage}.txt")
        for path in candidates:
            if path.is_file():
                logger.debug(f"Replaying fixture {path.name} for prompt {digest}")
                try:
                    return path.read_text(encoding="utf-8")
                except OSError as e:
                    raise StorageIOError(f"Cannot read fixture {path}: {e}") from e
        raise FixtureMissingError(digest, stage)


class RecordingTransport(_CountingTransport):
    """Forwards prompts to another transport and saves each response as `<prompt-hash>.txt`."""

    def __init__(self, inner: LlmTransport, root: Path):
        super().__init__()
        self.inner = inner
        self.root = Path(root)

    def send(self, prompt: str) -> str:
        self._count()
        response = self.inner.send(prompt)
        path = self.root / f"{prompt_hash(prompt)}.txt"
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            path.write_text(response, encoding="utf-8")
        except OSError as e:
            raise StorageIOError(f"Cannot write fixture {path}: {e}") from e
        logger.info(f"Recorded fixture {path.name} ({prompt_stage(prompt) or 'unknown stage'})")
        return response


class ChatCompletionsTransport(_CountingTransport):
    """
    Live transport for a chat-completions style endpoint.

    The request body is `{"model", "messages": [{"role": "user", ...}],
    "temperature", "stream": false}`; the answer is read from
    `choices[0].message.content` (or `message.content` for servers that
    answer in the single-message shape).
    """

    def __init__(
            self,
            endpoint: Optional[str] = None,
            model: Optional[str] = None,
            api_key: Optional[str] = None,
            timeout: Optional[float] = None,
            temperature: float = DEFAULT_TEMPERATURE
    ):
        super().__init__()
        self.endpoint = endpoint or settings.llm_endpoint
        self.model = model or settings.llm_model
        self.api_key = api_key if api_key is not None else settings.llm_api_key
        self.timeout = timeout or settings.llm_timeout
        self.temperature = temperature

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def ping(self) -> bool:
        """True when a one-word prompt round-trips successfully."""
        try:
            self.send("Reply with the single word: ok")
            return True
        except LlmTransportError as e:
            logger.warning(f"LLM endpoint ping failed: {e}")
            return False

    def send(self, prompt: str) -> str:
        self._count()
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "stream": False,
        }
        logger.debug(f"Sending prompt to {self.endpoint}: model={self.model}, chars={len(prompt)}")

        try:
            response = requests.post(self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout)
            response.raise_for_status()
        except requests.HTTPError as e:
            status = getattr(getattr(e, "response", None), "status_code", None)
            logger.error(f"LLM HTTP error: {status} ({e})")
            raise LlmTransportError(f"LLM HTTP error: {status}") from e
        except (requests.Timeout, requests.ConnectionError, OSError) as e:
            logger.error(f"LLM request failed (network/timeout): {e}")
            raise LlmTransportError(f"LLM request failed: {e}") from e
        except Exception as e:
            logger.exception("Unexpected error in LLM request")
            raise LlmTransportError("Unexpected error communicating with the LLM endpoint") from e

        try:
            data = response.json()
            if "choices" in data:
                content = data["choices"][0]["message"]["content"]
            else:
                content = data.get("message", {}).get("content")
            if not isinstance(content, str):
                raise KeyError("message content missing or not a string")
        except Exception as e:
            logger.error(f"Unexpected LLM response shape: {e}")
            raise LlmTransportError("Unexpected LLM response shape") from e

        logger.info(f"Received response: {len(content)} characters")
        return content
