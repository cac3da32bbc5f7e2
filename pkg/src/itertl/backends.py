"""Generation backends: the in-process toy model and a remote HTTP service.

The remote protocol (JSON bodies):

    POST /generate  {"instruction", "temperature", "top_p", "max_tokens", "n"}
                    -> {"samples": [{"code": str, "token_logprobs": [float]?}]}
    POST /score     {"instruction", "code"} -> {"token_logprobs": [float]}
    GET  /checkpoint -> {"digest": str}

Transient failures (connection errors, 5xx) are retried with bounded
exponential backoff; exhausted retries raise BackendError.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import requests

from .losses import RankingConfig
from .model import (
    DecodingParams,
    StopRule,
    ToyModel,
    TrainingGroup,
    TrainingTrace,
    model_digest,
    sample,
    score_sequence,
    train_to_convergence,
)

SeedLike = Union[int, Sequence[int], None]


class BackendError(RuntimeError):
    """A generation backend failed after exhausting its retries."""


@dataclass(frozen=True)
class GeneratedSample:
    code: str
    token_logprobs: Optional[List[float]] = None


class ToyBackend:
    """Wraps a ToyModel as a text-in/text-out backend.

    Instructions and code are whitespace-tokenized against the model vocab;
    responses are scored and trained over their token ids with the
    end-of-sequence marker appended, so generation learns to terminate.
    """

    trainable = True

    def __init__(self, model: ToyModel):
        self.model = model

    def encode_response(self, code: str) -> Tuple[int, ...]:
        return tuple(self.model.vocab.encode(code)) + (self.model.vocab.eos_id,)

    def generate(self, instruction: str, params: DecodingParams, n: int,
                 seed: SeedLike = None) -> List[GeneratedSample]:
        prompt = self.model.vocab.encode(instruction)
        streams = np.random.SeedSequence(seed).spawn(n)
        out: List[GeneratedSample] = []
        for i in range(n):
            rng = np.random.default_rng(streams[i])
            ids, _ = sample(self.model, prompt, params, rng)
            code = self.model.vocab.decode(ids)
            out.append(GeneratedSample(code=code, token_logprobs=self.score(instruction, code)))
        return out

    def score(self, instruction: str, code: str) -> List[float]:
        prompt = self.model.vocab.encode(instruction)
        lps = score_sequence(self.model, prompt, self.encode_response(code))
        return list(lps.token_logprobs)

    def checkpoint_digest(self) -> str:
        return model_digest(self.model)

    def train(self, dataset: Sequence[TrainingGroup], ranking: RankingConfig,
              stop: StopRule, step_size: float, batch_size: int) -> TrainingTrace:
        return train_to_convergence(self.model, dataset, ranking, stop=stop,
                                    step_size=step_size, batch_size=batch_size)


@dataclass(frozen=True)
class HttpBackendConfig:
    base_url: str
    timeout: float = 30.0
    retries: int = 3
    backoff_base: float = 0.5
    backoff_max: float = 8.0
    checkpoint_poll_interval: float = 2.0
    checkpoint_wait_timeout: float = 3600.0


class _Retryable(Exception):
    pass


class HttpBackend:
    """Remote generation service client; not trainable in-process."""

    trainable = False

    def __init__(self, config: HttpBackendConfig, session: Optional[requests.Session] = None):
        self.config = config
        self.session = session or requests.Session()

    def _request(self, method: str, path: str, json_body: Optional[dict] = None,
                 none_on_missing: bool = False):
        url = self.config.base_url.rstrip("/") + path
        delay = self.config.backoff_base
        last_error = "no attempt made"
        for attempt in range(self.config.retries + 1):
            try:
                resp = self.session.request(method, url, json=json_body,
                                            timeout=self.config.timeout)
                if resp.status_code >= 500:
                    raise _Retryable(f"HTTP {resp.status_code}")
                if none_on_missing and resp.status_code in (404, 405, 501):
                    return None
                if resp.status_code >= 400:
                    raise BackendError(f"{method} {url}: HTTP {resp.status_code}")
                return resp.json()
            except (_Retryable, requests.RequestException, ValueError) as exc:
                last_error = str(exc)
            if attempt < self.config.retries:
                time.sleep(delay)
                delay = min(delay * 2, self.config.backoff_max)
        raise BackendError(f"{method} {url} failed after "
                           f"{self.config.retries + 1} attempts: {last_error}")

    def generate(self, instruction: str, params: DecodingParams, n: int,
                 seed: SeedLike = None) -> List[GeneratedSample]:
        # The wire protocol carries no seed; remote reproducibility is the
        # serving stack's concern.
        body = {
            "instruction": instruction,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "n": n,
        }
        data = self._request("POST", "/generate", body)
        try:
            samples = data["samples"]
            out = [GeneratedSample(code=s["code"], token_logprobs=s.get("token_logprobs"))
                   for s in samples]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed /generate response: {exc}") from exc
        if len(out) != n:
            raise BackendError(f"/generate returned {len(out)} samples, requested {n}")
        return out

    def score(self, instruction: str, code: str) -> Optional[List[float]]:
        data = self._request("POST", "/score",
                             {"instruction": instruction, "code": code},
                             none_on_missing=True)
        if data is None:
            return None
        try:
            return [float(x) for x in data["token_logprobs"]]
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed /score response: {exc}") from exc

    def checkpoint_digest(self) -> str:
        data = self._request("GET", "/checkpoint")
        try:
            return str(data["digest"])
        except (KeyError, TypeError) as exc:
            raise BackendError(f"malformed /checkpoint response: {exc}") from exc

    def wait_for_new_checkpoint(self, previous_digest: str) -> str:
        """Poll until the service registers a checkpoint different from
        previous_digest; BackendError on timeout."""
        deadline = time.monotonic() + self.config.checkpoint_wait_timeout
        while True:
            digest = self.checkpoint_digest()
            if digest != previous_digest:
                return digest
            if time.monotonic() >= deadline:
                raise BackendError(
                    f"no new checkpoint registered within "
                    f"{self.config.checkpoint_wait_timeout}s (still {digest})"
                )
            time.sleep(self.config.checkpoint_poll_interval)
