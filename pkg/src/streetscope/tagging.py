"""Place-entity tagging behind a small pluggable interface.

Two backends: an offline substring matcher over the gazetteer's place
names (cities, countries, aliases), and a client for an external tagging
endpoint.  Both answer the same question — which place names appear in a
clue text — so corpora can be filtered with or without network access.
"""

from __future__ import annotations

import re
import time
from typing import Protocol

import requests

from .errors import TaggerUnavailableError
from .gazetteer import Gazetteer, default_aliases


class PlaceTagger(Protocol):
    def tag(self, text: str) -> list[str]:
        """Place-entity spans found in the text, in order of appearance."""
        ...


class GazetteerTagger:
    """Word-boundary matcher over every known place surface form.

    Longer names are tried first so "New York" wins over "York"; matches
    are returned verbatim as they appear in the text.
    """

    def __init__(self, gazetteer: Gazetteer, extra_names: list[str] | None = None):
        names = {entry.city for entry in gazetteer.entries}
        names.update(entry.country for entry in gazetteer.entries)
        for entry in gazetteer.entries:
            names.update(entry.aliases)
        names.update(default_aliases().keys())
        names.update(extra_names or [])
        ordered = sorted((n for n in names if n), key=len, reverse=True)
        alternation = "|".join(re.escape(name) for name in ordered)
        # Lookarounds instead of \b: dotted forms like "U.S." have no word
        # boundary after the final period.
        self._pattern = re.compile(rf"(?<!\w)(?:{alternation})(?!\w)", re.IGNORECASE)

    def tag(self, text: str) -> list[str]:
        spans = []
        seen = set()
        for match in self._pattern.finditer(text):
            span = match.group(0)
            if span.casefold() not in seen:
                seen.add(span.casefold())
                spans.append(span)
        return spans


class EndpointTagger:
    """Client for a remote tagging service.

    Wire shape: POST {base_url}/tag with {"text": "..."} returning
    {"entities": ["Chile", ...]}.  Transport errors raise
    TaggerUnavailableError after retries.
    """

    def __init__(
        self,
        base_url: str,
        timeout_s: float = 10.0,
        max_retries: int = 2,
        backoff_base_s: float = 0.2,
        sleep=time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self._sleep = sleep
        self._session = requests.Session()

    def tag(self, text: str) -> list[str]:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_base_s * 2 ** (attempt - 1))
            try:
                response = self._session.post(
                    f"{self.base_url}/tag", json={"text": text}, timeout=self.timeout_s
                )
                if response.status_code >= 500:
                    last_error = TaggerUnavailableError(
                        f"tagger returned {response.status_code}"
                    )
                    continue
                response.raise_for_status()
                entities = response.json().get("entities", [])
                return [str(e) for e in entities]
            except requests.RequestException as exc:
                last_error = exc
        raise TaggerUnavailableError(
            f"tagging endpoint {self.base_url} unavailable after "
            f"{self.max_retries + 1} attempts: {last_error}"
        )
