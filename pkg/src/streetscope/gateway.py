"""Clients for chat-style vision-language endpoints and answer parsing.

The wire format is the common chat-completion shape: POST
``{base_url}/v1/chat/completions`` with a message carrying one image
(URL or base64 data URL) plus the prompt text, answered by
``choices[0].message.content``.  Embeddings use POST
``{base_url}/v1/embeddings`` with ``{"input": [texts]}`` answered by
``data[i].embedding``.  See the README for full request/response
examples and the scriptable mock server in ``mock_endpoint``.

parse_prediction is total: any byte sequence comes back classified, with
failures encoded in ``failure_cause`` instead of exceptions.
"""

from __future__ import annotations

import ast
import base64
import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import CheckpointError, EndpointError, ParseError, ValidationError

GEOLOC_PROMPT = (
    "According to the content of the image, please think step by step and deduce "
    "in which country and city the image is most likely located and offer possible "
    "explanations. Output in JSON format, e.g., "
    "{'country': '', 'city': '', 'reasons':''}"
)

# Tuning-corpus questions reuse the evaluation prompt wording, restricted
# to the fields each stage answers.
REASONING_TUNING_PROMPT = (
    "According to the content of the image, please think step by step and deduce "
    "in which country the image is most likely located and offer possible "
    "explanations. Output in JSON format, e.g., {'country': '', 'reasons':''}"
)
LOCATION_TUNING_PROMPT = (
    "According to the content of the image, please deduce in which country and "
    "city the image is most likely located. Output in JSON format, e.g., "
    "{'country': '', 'city': ''}"
)

DEFAULT_REFUSAL_PATTERNS = (
    "I'm sorry, I can't provide assistance with that request.",
    "I'm sorry, but I am unable to provide the exact location, such as the country "
    "and city, for the image you have provided. My capabilities do not include "
    "analyzing specific details to determine the geographical location of the "
    "image content.",
)

FAILURE_REFUSAL = "refusal"
FAILURE_UNPARSEABLE = "unparseable"
FAILURE_TRANSPORT = "transport"
FAILURE_EMPTY = "empty"
FAILURE_CAUSES = (FAILURE_REFUSAL, FAILURE_UNPARSEABLE, FAILURE_TRANSPORT, FAILURE_EMPTY)


def build_geoloc_prompt() -> str:
    """The evaluation prompt, byte-for-byte constant."""
    return GEOLOC_PROMPT


@dataclass
class EndpointConfig:
    base_url: str
    model: str = ""
    token_env: str = ""
    timeout_s: float = 30.0
    max_retries: int = 3
    max_parallel: int = 4
    rpm: int = 0  # requests per minute; 0 disables the cap
    backoff_base_s: float = 0.25

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValidationError("timeout_s must be > 0")
        if self.max_parallel < 1:
            raise ValidationError("max_parallel must be >= 1")


@dataclass
class PredictionRecord:
    """One model answer with its effectiveness classification.

    effective is true exactly when both a country and a city were parsed;
    otherwise failure_cause says why not.
    """

    image_id: str
    country: str | None = None
    city: str | None = None
    reasons: str | None = None
    effective: bool = False
    failure_cause: str | None = None
    raw_text: str = ""
    latency_ms: float = 0.0

    def to_json(self, include_latency: bool = True) -> str:
        payload = {
            "image_id": self.image_id,
            "country": self.country,
            "city": self.city,
            "reasons": self.reasons,
            "effective": self.effective,
            "failure_cause": self.failure_cause,
            "raw_text": self.raw_text,
        }
        if include_latency:
            payload["latency_ms"] = self.latency_ms
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "PredictionRecord":
        obj = json.loads(line)
        return cls(
            image_id=str(obj["image_id"]),
            country=obj.get("country"),
            city=obj.get("city"),
            reasons=obj.get("reasons"),
            effective=bool(obj.get("effective", False)),
            failure_cause=obj.get("failure_cause"),
            raw_text=obj.get("raw_text", ""),
            latency_ms=float(obj.get("latency_ms", 0.0)),
        )


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*|```", re.MULTILINE)


def _strip_fences(text: str) -> str:
    return _FENCE_RE.sub("", text).strip()


def _balanced_object(text: str) -> str | None:
    """First balanced {...} span, tracking quotes so inner braces don't count."""
    start = text.find("{")
    if start < 0:
        return None
    depth = 0
    quote: str | None = None
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if quote is not None:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == quote:
                quote = None
            continue
        if ch in ("'", '"'):
            quote = ch
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _try_parse_object(candidate: str) -> dict | None:
    import warnings

    for parser in (json.loads, ast.literal_eval):
        try:
            # literal_eval warns about invalid escape sequences in garbage
            # input; a tolerant parser should stay silent.
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                obj = parser(candidate)
        except Exception:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _clean_value(value) -> str | None:
    if isinstance(value, bool) or value is None:
        return None
    if isinstance(value, (str, int, float)):
        text = str(value).strip()
        return text or None
    return None


def parse_prediction(
    raw: str, refusal_patterns: tuple[str, ...] = DEFAULT_REFUSAL_PATTERNS
) -> PredictionRecord:
    """Classify a raw model response; never raises.

    Refusal patterns are checked first (a refusal stays a refusal even if
    a JSON object appears later in the text), then code fences are
    stripped, the first balanced object is located, and single- or
    double-quoted keys/strings are accepted with case-insensitive key
    matching.
    """
    record = PredictionRecord(image_id="", raw_text=raw if isinstance(raw, str) else "")
    if not isinstance(raw, str) or not raw.strip():
        record.failure_cause = FAILURE_EMPTY
        return record

    lowered = raw.casefold()
    for pattern in refusal_patterns:
        if pattern.casefold() in lowered:
            record.failure_cause = FAILURE_REFUSAL
            return record

    stripped = _strip_fences(raw)
    obj = None
    candidate = _balanced_object(stripped)
    if candidate is not None:
        obj = _try_parse_object(candidate)
    if obj is None:
        # Fall back to the widest brace span; quote-aware scanning can be
        # defeated by stray quotes in prose.
        first, last = stripped.find("{"), stripped.rfind("}")
        if 0 <= first < last:
            obj = _try_parse_object(stripped[first : last + 1])
    if obj is None:
        record.failure_cause = FAILURE_UNPARSEABLE
        return record

    fields = {}
    for key, value in obj.items():
        if isinstance(key, str):
            fields[key.strip().casefold()] = value
    record.country = _clean_value(fields.get("country"))
    record.city = _clean_value(fields.get("city"))
    record.reasons = _clean_value(fields.get("reasons"))
    if record.country and record.city:
        record.effective = True
    else:
        record.failure_cause = FAILURE_UNPARSEABLE
    return record


class _RateLimiter:
    """Serialize request starts to at most rpm per minute across threads."""

    def __init__(self, rpm: int):
        self._interval = 60.0 / rpm if rpm > 0 else 0.0
        self._lock = threading.Lock()
        self._next_start = 0.0

    def wait(self, sleep=time.sleep) -> None:
        if self._interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next_start - now
            self._next_start = max(now, self._next_start) + self._interval
        if delay > 0:
            sleep(delay)


@dataclass
class QueryResult:
    raw_text: str
    latency_ms: float
    retry_count: int


def _image_content(image: str | bytes) -> dict:
    if isinstance(image, bytes):
        encoded = base64.b64encode(image).decode("ascii")
        url = f"data:image/jpeg;base64,{encoded}"
    else:
        url = image
    return {"type": "image_url", "image_url": {"url": url}}


def _auth_headers(endpoint: EndpointConfig) -> dict[str, str]:
    import os

    if endpoint.token_env:
        token = os.environ.get(endpoint.token_env, "")
        if token:
            return {"Authorization": f"Bearer {token}"}
    return {}


def query_model(
    endpoint: EndpointConfig,
    image: str | bytes,
    prompt: str,
    session: requests.Session | None = None,
    limiter: _RateLimiter | None = None,
    sleep=time.sleep,
) -> QueryResult:
    """One chat-completion request, retried on transport errors and 5xx.

    Raises EndpointError once max_retries extra attempts are exhausted.
    """
    session = session or requests.Session()
    limiter = limiter or _RateLimiter(endpoint.rpm)
    body = {
        "model": endpoint.model,
        "messages": [
            {
                "role": "user",
                "content": [_image_content(image), {"type": "text", "text": prompt}],
            }
        ],
    }
    url = f"{endpoint.base_url.rstrip('/')}/v1/chat/completions"
    last_error: str = ""
    start = time.perf_counter()
    for attempt in range(endpoint.max_retries + 1):
        if attempt:
            sleep(endpoint.backoff_base_s * 2 ** (attempt - 1))
        limiter.wait(sleep)
        try:
            response = session.post(
                url, json=body, timeout=endpoint.timeout_s, headers=_auth_headers(endpoint)
            )
        except requests.RequestException as exc:
            last_error = str(exc)
            continue
        if response.status_code >= 500:
            last_error = f"HTTP {response.status_code}"
            continue
        if response.status_code >= 400:
            raise EndpointError(f"{url}: HTTP {response.status_code}: {response.text[:200]}")
        try:
            content = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"{url}: malformed completion response: {exc}") from None
        latency_ms = (time.perf_counter() - start) * 1000.0
        return QueryResult(raw_text=str(content), latency_ms=latency_ms, retry_count=attempt)
    raise EndpointError(
        f"{url}: transport failure after {endpoint.max_retries + 1} attempts: {last_error}"
    )


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    image_ref: str


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read an image manifest (CSV with image_id,image_ref or JSONL).

    Duplicate image ids are a hard error: a batch must bill each image
    exactly once.
    """
    path = Path(path)
    entries: list[ManifestEntry] = []
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in {".jsonl", ".json"}:
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                entries.append(ManifestEntry(str(obj["image_id"]), str(obj["image_ref"])))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
    else:
        import csv as _csv
        import io

        reader = _csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or not {"image_id", "image_ref"}.issubset(reader.fieldnames):
            raise ParseError(f"{path}: expected columns image_id,image_ref")
        for row in reader:
            entries.append(ManifestEntry(row["image_id"], row["image_ref"]))
    seen: set[str] = set()
    for entry in entries:
        if entry.image_id in seen:
            raise ValidationError(f"{path}: duplicate image_id {entry.image_id!r}")
        seen.add(entry.image_id)
    return entries


def _load_checkpoint(path: Path) -> dict[str, PredictionRecord]:
    done: dict[str, PredictionRecord] = {}
    if not path.exists():
        return done
    try:
        with open(path, encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                record = PredictionRecord.from_json(line)
                done[record.image_id] = record
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise CheckpointError(
            f"{path}: unreadable checkpoint (line {line_no}): {exc}; refusing to start "
            "— move the file aside to re-run from scratch"
        ) from None
    return done


def batch_infer(
    manifest: list[ManifestEntry],
    endpoint: EndpointConfig,
    checkpoint_path: str | Path,
    prompt: str = GEOLOC_PROMPT,
    refusal_patterns: tuple[str, ...] = DEFAULT_REFUSAL_PATTERNS,
    sleep=time.sleep,
) -> list[PredictionRecord]:
    """Run the prompt over every manifest image with checkpointed resume.

    Already-checkpointed image ids are skipped, each fresh result is
    appended to the checkpoint as it completes (single serialized
    writer), and the returned list follows manifest order.  Transport
    failures become ineffective records, not batch failures.
    """
    seen: set[str] = set()
    for entry in manifest:
        if entry.image_id in seen:
            raise ValidationError(f"duplicate image_id {entry.image_id!r} in manifest")
        seen.add(entry.image_id)

    checkpoint_path = Path(checkpoint_path)
    done = _load_checkpoint(checkpoint_path)
    pending = [e for e in manifest if e.image_id not in done]

    write_lock = threading.Lock()
    limiter = _RateLimiter(endpoint.rpm)

    def _one(entry: ManifestEntry) -> PredictionRecord:
        session = requests.Session()
        try:
            result = query_model(
                endpoint, entry.image_ref, prompt, session=session, limiter=limiter, sleep=sleep
            )
            record = parse_prediction(result.raw_text, refusal_patterns)
            record.image_id = entry.image_id
            record.latency_ms = result.latency_ms
        except EndpointError as exc:
            record = PredictionRecord(
                image_id=entry.image_id,
                effective=False,
                failure_cause=FAILURE_TRANSPORT,
                raw_text=f"[transport] {exc}",
            )
        finally:
            session.close()
        with write_lock:
            with open(checkpoint_path, "a", encoding="utf-8") as handle:
                handle.write(record.to_json() + "\n")
                handle.flush()
        return record

    if pending:
        with ThreadPoolExecutor(max_workers=endpoint.max_parallel) as pool:
            for record in pool.map(_one, pending):
                done[record.image_id] = record

    return [done[e.image_id] for e in manifest]


def fetch_embeddings(
    items: list[tuple[str, str, str]],
    endpoint: EndpointConfig,
    out_path: str | Path | None = None,
) -> list[dict]:
    """Embed (id, text, kind) items and unit-normalize the vectors.

    kind is "clue" or "label".  Returns records in the embeddings JSONL
    schema and optionally writes them; inconsistent dimensions across the
    batch are an error.
    """
    import math

    for _, _, kind in items:
        if kind not in ("clue", "label"):
            raise ValidationError(f"embedding kind must be clue|label, got {kind!r}")
    records: list[dict] = []
    if items:
        session = requests.Session()
        url = f"{endpoint.base_url.rstrip('/')}/v1/embeddings"
        body = {"model": endpoint.model, "input": [text for _, text, _ in items]}
        try:
            response = session.post(
                url, json=body, timeout=endpoint.timeout_s, headers=_auth_headers(endpoint)
            )
            response.raise_for_status()
            data = response.json()["data"]
        except (requests.RequestException, KeyError, ValueError) as exc:
            raise EndpointError(f"{url}: embeddings request failed: {exc}") from None
        finally:
            session.close()
        if len(data) != len(items):
            raise EndpointError(
                f"{url}: expected {len(items)} embeddings, got {len(data)}"
            )
        dim: int | None = None
        for (item_id, _, kind), row in zip(items, data):
            vector = [float(v) for v in row["embedding"]]
            if dim is None:
                dim = len(vector)
            elif len(vector) != dim:
                raise EndpointError(
                    f"inconsistent embedding dimensions: {len(vector)} != {dim}"
                )
            norm = math.sqrt(sum(v * v for v in vector))
            if norm == 0:
                raise EndpointError(f"zero embedding vector for id {item_id!r}")
            records.append(
                {"id": item_id, "kind": kind, "vector": [v / norm for v in vector]}
            )
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record) + "\n")
    return records


def write_predictions_jsonl(
    records: list[PredictionRecord], path: str | Path, include_latency: bool = True
) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(record.to_json(include_latency=include_latency) + "\n")


def read_predictions_jsonl(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(PredictionRecord.from_json(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
    return records
