"""Word-level translation of Dutch/German tokens into English.

Two paths implement the translation operator: a bilingual-dictionary lookup
(medical-term dictionary consulted before any general dictionary) and a
translation-service query using the bundled prompt. Service results are
cached in an append-only JSON-lines file keyed by (token, language,
context-hash); rejected responses are cached too so the service is asked at
most once per key.
"""

from __future__ import annotations

import hashlib
import json
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from ..errors import ConfigurationError, MalformedResponse, ServiceUnavailable
from .langid import TokenSpan, with_translation
from .lexicons import BilingualDictionary

REJECTED = "REJECTED"
# "a single, unambiguous English term": one whitespace-free alphabetic word,
# hyphenated compounds allowed
ACCEPT_RE = re.compile(r"^[a-zA-Z]+(-[a-zA-Z]+)*$")


def load_prompt() -> str:
    return resources.files("ehrtext.data").joinpath("translate_prompt.txt").read_text("utf-8")


def _context_hash(context: str) -> str:
    return hashlib.sha256(context.encode("utf-8")).hexdigest()[:16]


class TranslationCache:
    """Append-only (token, language, context-hash) -> term | REJECTED store."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str, str], str] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                key = (rec["token"], rec["language"], rec["context_hash"])
                self._entries[key] = rec["result"]

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, token: str, language: str, context: str) -> str | None:
        return self._entries.get((token, language, _context_hash(context)))

    def put(self, token: str, language: str, context: str, result: str) -> None:
        key = (token, language, _context_hash(context))
        if self._entries.get(key) == result:
            return
        self._entries[key] = result
        if self.path is not None:
            rec = {
                "token": token,
                "language": language,
                "context_hash": key[2],
                "result": result,
            }
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


@dataclass
class MockTranslationClient:
    """Deterministic stand-in for tests: answers from a fixed table."""

    responses: dict[str, str]
    available: bool = True
    calls: int = 0

    def complete(self, prompt: str, token: str, context: str) -> str:
        if not self.available:
            raise ServiceUnavailable("mock service marked unavailable")
        self.calls += 1
        try:
            return self.responses[token]
        except KeyError:
            raise MalformedResponse(f"mock has no response for {token!r}")

    def vote_language(self, token: str) -> str | None:
        return None


class HttpTranslationClient:
    """JSON-over-HTTP completion client configured via the environment."""

    def __init__(self, endpoint: str | None = None, auth_token: str | None = None, timeout: float = 10.0):
        import os

        self.endpoint = endpoint or os.environ.get("TRANSLATE_ENDPOINT")
        self.auth_token = auth_token or os.environ.get("TRANSLATE_TOKEN")
        self.timeout = timeout
        if not self.endpoint:
            raise ConfigurationError("TRANSLATE_ENDPOINT is not set")

    def complete(self, prompt: str, token: str, context: str) -> str:
        payload = json.dumps({"prompt": prompt, "token": token, "context": context}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        request = urllib.request.Request(self.endpoint, data=payload, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError) as exc:
            raise ServiceUnavailable(str(exc)) from exc
        except json.JSONDecodeError as exc:
            raise MalformedResponse(str(exc)) from exc
        if not isinstance(body, dict) or "completion" not in body:
            raise MalformedResponse("response missing 'completion' field")
        return str(body["completion"])

    def vote_language(self, token: str) -> str | None:
        return None


def _as_sequence(dictionaries) -> Sequence[BilingualDictionary]:
    if isinstance(dictionaries, BilingualDictionary):
        return (dictionaries,)
    return tuple(dictionaries)


def translate_token_dict(
    span: TokenSpan, dictionaries: dict[str, BilingualDictionary | Sequence[BilingualDictionary]]
) -> TokenSpan:
    """Dictionary lookup; dictionaries for a language are consulted in order."""
    if span.language not in ("nl", "de"):
        raise ValueError(f"dictionary translation needs nl/de span, got {span.language!r}")
    for dictionary in _as_sequence(dictionaries.get(span.language, ())):
        hit = dictionary.lookup(span.token)
        if hit is not None:
            return with_translation(span, hit)
    return span


def translate_token_service(
    span: TokenSpan,
    context: str,
    client,
    cache: TranslationCache | None = None,
    dictionaries: dict[str, BilingualDictionary | Sequence[BilingualDictionary]] | None = None,
) -> TokenSpan:
    """Service translation with caching; falls back to the dictionary path
    when the service is unavailable."""
    if span.language not in ("nl", "de"):
        raise ValueError(f"service translation needs nl/de span, got {span.language!r}")
    cache = cache if cache is not None else TranslationCache()

    cached = cache.get(span.token, span.language, context)
    if cached is not None:
        return span if cached == REJECTED else with_translation(span, cached)

    try:
        response = client.complete(load_prompt(), span.token, context).strip()
    except ServiceUnavailable:
        if dictionaries is not None:
            return translate_token_dict(span, dictionaries)
        return span
    except MalformedResponse:
        cache.put(span.token, span.language, context, REJECTED)
        return span

    if ACCEPT_RE.match(response):
        accepted = response.lower()
        cache.put(span.token, span.language, context, accepted)
        return with_translation(span, accepted)
    cache.put(span.token, span.language, context, REJECTED)
    return span
