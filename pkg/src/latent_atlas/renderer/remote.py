"""HTTP client for the remote inpainting protocol.

POST {endpoint}/v1/inpaint with base64-PNG image and mask, prompt/weight
pairs, and sampler knobs.  Timeouts, non-success statuses, malformed payloads,
and dimension mismatches are all retryable up to the policy's attempt budget
with exponential backoff (base 1s, doubling, jittered); the final failure is
surfaced with the request's identity and attempt count.
"""

from __future__ import annotations

import base64
import json
import logging
import random
import time
from dataclasses import dataclass

import requests

from ..errors import BackendError, ProtocolError
from ..imgio import decode_png, encode_gray_png, encode_png
from .types import PatchImage, RenderRequest

log = logging.getLogger("latent_atlas.renderer.remote")

DEFAULT_STEPS = 30
DEFAULT_GUIDANCE = 7.5
BACKOFF_BASE = 1.0
BACKOFF_JITTER = 0.1


@dataclass(frozen=True)
class RetryPolicy:
    """timeout per attempt in seconds; retries is the total attempt budget."""

    timeout: float = 30.0
    retries: int = 3


def encode_request(request: RenderRequest, steps: int, guidance: float) -> dict:
    mask_bytes = (request.mask.mask.astype("u1") * 255)
    return {
        "image": base64.b64encode(encode_png(request.patch.pixels)).decode("ascii"),
        "mask": base64.b64encode(encode_gray_png(mask_bytes)).decode("ascii"),
        "prompts": [
            {"text": text, "weight": float(w)}
            for text, w in zip(request.prompts, request.weights.weights.tolist())
        ],
        "seed": int(request.seed),
        "steps": int(steps),
        "guidance": float(guidance),
    }


class RemoteBackend:
    """Stateless client for one inpainting endpoint."""

    name = "remote"

    def __init__(
        self,
        endpoint: str,
        policy: RetryPolicy = RetryPolicy(),
        steps: int = DEFAULT_STEPS,
        guidance: float = DEFAULT_GUIDANCE,
        sleeper=time.sleep,
        rng: random.Random | None = None,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.policy = policy
        self.steps = steps
        self.guidance = guidance
        self._sleep = sleeper
        self._rng = rng if rng is not None else random.Random()
        self._session = session if session is not None else requests.Session()
        self.last_attempts: list[dict] = []

    def _decode_response(self, request: RenderRequest, body: bytes) -> PatchImage:
        try:
            doc = json.loads(body)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"response is not JSON: {exc}", tag=request.tag) from exc
        if "image" not in doc:
            raise ProtocolError("response JSON lacks 'image'", tag=request.tag)
        try:
            png = base64.b64decode(doc["image"], validate=True)
        except Exception as exc:
            raise ProtocolError(f"image field is not base64: {exc}", tag=request.tag) from exc
        pixels = decode_png(png)
        if pixels.shape[:2] != (request.patch.height, request.patch.width):
            raise ProtocolError(
                f"response image is {pixels.shape[1]}x{pixels.shape[0]}, expected "
                f"{request.patch.width}x{request.patch.height}",
                tag=request.tag,
            )
        return PatchImage(pixels=pixels)

    def render(self, request: RenderRequest) -> PatchImage:
        payload = encode_request(request, self.steps, self.guidance)
        url = f"{self.endpoint}/v1/inpaint"
        self.last_attempts = attempts = []
        failure = "no attempts made"
        for attempt in range(1, self.policy.retries + 1):
            if attempt > 1:
                delay = BACKOFF_BASE * 2 ** (attempt - 2)
                delay *= 1.0 + BACKOFF_JITTER * self._rng.random()
                self._sleep(delay)
            try:
                resp = self._session.post(url, json=payload, timeout=self.policy.timeout)
            except requests.RequestException as exc:
                failure = f"transport failure: {exc}"
                attempts.append({"attempt": attempt, "outcome": "transport-error"})
                log.warning("%s attempt %d/%d: %s", request.tag or url, attempt,
                            self.policy.retries, failure)
                continue
            if resp.status_code != 200:
                detail = ""
                try:
                    detail = json.loads(resp.content).get("error", "")
                except (json.JSONDecodeError, AttributeError):
                    pass
                failure = f"status {resp.status_code}: {detail or resp.reason}"
                attempts.append({"attempt": attempt, "outcome": f"status-{resp.status_code}"})
                log.warning("%s attempt %d/%d: %s", request.tag or url, attempt,
                            self.policy.retries, failure)
                continue
            try:
                out = self._decode_response(request, resp.content)
            except ProtocolError as exc:
                failure = str(exc)
                attempts.append({"attempt": attempt, "outcome": "protocol-error"})
                log.warning("%s attempt %d/%d: %s", request.tag or url, attempt,
                            self.policy.retries, failure)
                continue
            attempts.append({"attempt": attempt, "outcome": "ok"})
            log.info("%s attempt %d/%d: ok", request.tag or url, attempt, self.policy.retries)
            return out
        raise BackendError(
            f"remote render failed after {len(attempts)} attempts: {failure}",
            tag=request.tag,
            attempts=len(attempts),
        )
