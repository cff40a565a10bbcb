"""Uniform interface to the three verification agent roles.

Covers prompt rendering, backend invocation (scripted fixtures or an
OpenAI-compatible chat endpoint) and response parsing. Prompt rendering is a
pure function: equal inputs produce byte-identical prompts.
"""
from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import requests

from .errors import (
    BackendTimeout,
    BackendUnavailable,
    DuplicateId,
    FixtureMiss,
    MissingInput,
    ParseError,
    UnparseableVerdict,
)

CHECKLIST_SIZE = 15

DEFAULT_CHECKLIST_KEYS = (
    "gender",
    "age_group",
    "upper_clothing",
    "lower_clothing",
    "footwear",
    "accessories",
    "action",
    "body_pose",
    "object_interaction",
    "scene",
    "weather",
    "lighting",
    "person_count",
    "motion_state",
    "anomaly_indicator",
)


class AgentRole(str, Enum):
    DETECTIVE = "detective"
    ANALYST = "analyst"
    WRITER = "writer"


class VerdictLabel(str, Enum):
    MATCH = "match"
    DISCARD = "discard"


@dataclass(frozen=True)
class Verdict:
    label: VerdictLabel
    raw_text: str

    @property
    def is_match(self) -> bool:
        return self.label is VerdictLabel.MATCH


@dataclass(frozen=True)
class Checklist:
    """Ordered set of exactly 15 unique attribute keys."""

    keys: tuple[str, ...] = DEFAULT_CHECKLIST_KEYS

    def __post_init__(self):
        keys = tuple(str(k) for k in self.keys)
        if len(keys) != CHECKLIST_SIZE:
            raise ValueError(f"checklist must have exactly {CHECKLIST_SIZE} keys, got {len(keys)}")
        if len(set(keys)) != len(keys):
            raise ValueError("checklist keys must be unique")
        object.__setattr__(self, "keys", keys)


# Answers are a subset of the active checklist's keys mapped to short values.
ChecklistAnswers = dict[str, str]


_DETECTIVE_TEMPLATE = (
    "You are the Detective, a strict visual match filter for person search.\n"
    "Query: \"{query}\"\n"
    "Inspect the attached image and decide whether it matches the query in "
    "appearance, action and scene.\n"
    "Answer with a single word first. Is it a match? Yes or No!"
)

_ANALYST_TEMPLATE = (
    "You are the Analyst. Perform a physical examination of the attached image "
    "and answer every checklist attribute you can observe.\n"
    "Query under investigation: \"{query}\"\n"
    "{prior}"
    "Respond with one line per attribute, formatted exactly as \"key: value\".\n"
    "Checklist:\n{checklist}"
)

_WRITER_TEMPLATE = (
    "You are the Writer. Synthesize the verified evidence below into one "
    "precise, continuous caption describing the person, their action and the "
    "scene. Respond with the caption only.\n"
    "{query_block}"
    "Evidence:\n{evidence}"
)


def render_prompt(
    role: AgentRole,
    query_text: str,
    checklist: Checklist | None = None,
    evidence: ChecklistAnswers | None = None,
    prior_caption: str | None = None,
) -> str:
    """Render the deterministic prompt for one role.

    The Analyst requires a checklist and the Writer requires evidence;
    a missing role-required argument raises MissingInput. For the Writer the
    original query is included only when query_text is non-empty (the caller
    controls whether the Writer may see it).
    """
    if role is AgentRole.DETECTIVE:
        return _DETECTIVE_TEMPLATE.format(query=query_text)

    if role is AgentRole.ANALYST:
        if checklist is None:
            raise MissingInput("Analyst prompt requires a checklist")
        prior = ""
        if prior_caption:
            prior = f"Caption from the previous round: \"{prior_caption}\"\n"
        listed = "\n".join(f"{i}. {key}" for i, key in enumerate(checklist.keys, start=1))
        return _ANALYST_TEMPLATE.format(query=query_text, prior=prior, checklist=listed)

    if role is AgentRole.WRITER:
        if evidence is None:
            raise MissingInput("Writer prompt requires evidence")
        query_block = f"Original query: \"{query_text}\"\n" if query_text else ""
        lines = "\n".join(f"- {key}: {value}" for key, value in evidence.items())
        return _WRITER_TEMPLATE.format(query_block=query_block, evidence=lines)

    raise ValueError(f"unknown role: {role!r}")


_VERDICT_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def parse_verdict(raw: str) -> Verdict:
    """Scan for a yes/no token, case-insensitively.

    The first standalone occurrence wins, which also covers the leading-token
    case ("No, the clothing differs." parses as Discard). Real model outputs
    are verbose; strict equality would reject valid answers.
    """
    match = _VERDICT_RE.search(raw or "")
    if match is None:
        raise UnparseableVerdict(f"no yes/no token in response: {raw!r}")
    label = VerdictLabel.MATCH if match.group(1).lower() == "yes" else VerdictLabel.DISCARD
    return Verdict(label=label, raw_text=raw)


_LINE_PREFIX_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])?\s*")


def parse_checklist(raw: str, checklist: Checklist) -> ChecklistAnswers:
    """Parse "key: value" lines into answers for the active checklist.

    Keys match case-insensitively; unmatched lines are ignored. Empty answers
    are allowed - the squad layer decides the consequences.
    """
    canonical = {key.lower(): key for key in checklist.keys}
    answers: ChecklistAnswers = {}
    for line in (raw or "").splitlines():
        line = _LINE_PREFIX_RE.sub("", line)
        if ":" not in line:
            continue
        key, value = line.split(":", 1)
        key = key.strip().lower()
        if key in canonical:
            answers[canonical[key]] = value.strip()
    return answers


@dataclass
class AgentBackendConfig:
    """Backend selection and transport knobs.

    kind "scripted" replays a fixture file; kind "http" talks to an
    OpenAI-compatible chat-completions endpoint with temperature 0. The auth
    token is read from the environment variable named by token_env. A request
    is attempted once plus max_retries more times on transport errors.
    """

    kind: str = "scripted"
    fixture_path: str | None = None
    endpoint: str | None = None
    model_name: str | None = None
    timeout_ms: int = 30_000
    max_retries: int = 3
    concurrency: int = 8
    backoff_s: float = 0.5
    token_env: str = "OPENAI_API_KEY"

    def validate(self) -> "AgentBackendConfig":
        if self.kind == "scripted":
            if not self.fixture_path:
                raise ValueError("scripted backend requires fixture_path")
        elif self.kind == "http":
            if not self.endpoint or not self.model_name:
                raise ValueError("http backend requires endpoint and model_name")
        else:
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        return self


class AgentBackend:
    """Base backend: records every invocation (thread-safe) for cost
    accounting, then delegates to _respond."""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls: list[tuple[str, str]] = []

    def invoke(self, role: AgentRole, image_ref: str, prompt: str) -> str:
        with self._lock:
            self.calls.append((role.value, image_ref))
        return self._respond(role, image_ref, prompt)

    def _respond(self, role: AgentRole, image_ref: str, prompt: str) -> str:
        raise NotImplementedError

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self.calls)

    def calls_for(self, role: AgentRole) -> int:
        with self._lock:
            return sum(1 for r, _ in self.calls if r == role.value)

    def reset_calls(self) -> None:
        with self._lock:
            self.calls.clear()


class ScriptedBackend(AgentBackend):
    """Deterministic backend replaying (role, image_ref) -> response from a
    JSONL fixture. Immutable after load; safe for concurrent invocation."""

    def __init__(self, responses: dict[tuple[str, str], str]):
        super().__init__()
        self._responses = dict(responses)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        responses: dict[tuple[str, str], str] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
                try:
                    role = AgentRole(str(obj["role"]).lower())
                    key = (role.value, str(obj["image_ref"]))
                    response = str(obj["response"])
                except (KeyError, ValueError) as exc:
                    raise ParseError(f"{path}:{line_no}: bad fixture entry: {exc}") from exc
                if key in responses:
                    raise DuplicateId(f"{path}:{line_no}: duplicate fixture key {key!r}")
                responses[key] = response
        return cls(responses)

    def _respond(self, role: AgentRole, image_ref: str, prompt: str) -> str:
        key = (role.value, image_ref)
        try:
            return self._responses[key]
        except KeyError:
            raise FixtureMiss(f"no scripted response for {key!r}") from None


class HttpBackend(AgentBackend):
    """OpenAI-compatible chat-completions client.

    Sends one user message carrying the prompt text plus the image reference
    in the vision message format, temperature 0. Retries transport errors with
    exponential backoff up to max_retries; in-flight requests are bounded by
    the configured concurrency limit.
    """

    def __init__(self, config: AgentBackendConfig, session: requests.Session | None = None):
        super().__init__()
        self.config = config.validate()
        self._session = session or requests.Session()
        self._slots = threading.Semaphore(max(1, config.concurrency))

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _payload(self, image_ref: str, prompt: str) -> dict:
        return {
            "model": self.config.model_name,
            "temperature": 0,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": prompt},
                        {"type": "image_url", "image_url": {"url": image_ref}},
                    ],
                }
            ],
        }

    def _respond(self, role: AgentRole, image_ref: str, prompt: str) -> str:
        timeout_s = self.config.timeout_ms / 1000.0
        attempts = 1 + max(0, self.config.max_retries)
        last_error: Exception | None = None
        timed_out = False
        for attempt in range(attempts):
            if attempt > 0:
                time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
            try:
                with self._slots:
                    resp = self._session.post(
                        self.config.endpoint,
                        json=self._payload(image_ref, prompt),
                        headers=self._headers(),
                        timeout=timeout_s,
                    )
            except requests.Timeout as exc:
                last_error, timed_out = exc, True
                continue
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = BackendUnavailable(f"server returned {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendUnavailable(
                    f"server rejected request: {resp.status_code} {resp.text[:200]}"
                )
            try:
                return str(resp.json()["choices"][0]["message"]["content"])
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendUnavailable(f"malformed completion response: {exc}") from exc
        if timed_out:
            raise BackendTimeout(
                f"no response within {self.config.timeout_ms} ms after {attempts} attempts"
            ) from last_error
        raise BackendUnavailable(
            f"backend unreachable after {attempts} attempts: {last_error}"
        ) from last_error


def build_backend(config: AgentBackendConfig) -> AgentBackend:
    config.validate()
    if config.kind == "scripted":
        return ScriptedBackend.from_file(config.fixture_path)
    return HttpBackend(config)
