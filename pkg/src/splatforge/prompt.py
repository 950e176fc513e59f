"""Prompt self-optimization: candidate generation, scoring, reflection.

A round asks the language client for N prompt variants, images each via
the text-to-image client, scores the images with the evaluator, keeps
the best, and feeds the critiques back into the next round.  Mock
clients make the whole loop runnable offline; HTTP variants speak the
same JSON wire style as the guidance service.
"""

from __future__ import annotations

import base64
import hashlib
import io
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import requests
from PIL import Image

from .buffers import ImageBuffer

logger = logging.getLogger(__name__)

CONDITION_KINDS = ("style", "edge", "scribble", "pose")
DEFAULT_ROUNDS = 3
DEFAULT_CANDIDATES = 4
EARLY_STOP_SCORE = 9.5


class PromptStudioError(Exception):
    """A client failed permanently or broke its contract."""


@dataclass
class UserRequest:
    text: str
    conditions: list = field(default_factory=list)  # (kind, ImageBuffer)
    rounds: int = DEFAULT_ROUNDS
    candidates_per_round: int = DEFAULT_CANDIDATES

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("request text must be non-empty")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.candidates_per_round < 1:
            raise ValueError("candidates_per_round must be >= 1")
        for kind, _ in self.conditions:
            if kind not in CONDITION_KINDS:
                raise ValueError(f"unknown condition kind {kind!r}")


@dataclass
class CandidateRecord:
    round_index: int
    prompt: str
    image: ImageBuffer
    score: float
    critique: str
    selected: bool = False


@dataclass
class OptimizationTranscript:
    records: list = field(default_factory=list)
    reflections: list = field(default_factory=list)
    best_prompt: str = ""
    best_image: ImageBuffer | None = None
    best_score: float = float("-inf")
    failure: str | None = None

    def validate(self) -> None:
        rounds = sorted({r.round_index for r in self.records})
        for idx in rounds:
            chosen = [r for r in self.records if r.round_index == idx and r.selected]
            if len(chosen) != 1:
                raise ValueError(f"round {idx} has {len(chosen)} selected candidates")
        if self.records:
            top = max(r.score for r in self.records if r.selected)
            if self.best_score != top:
                raise ValueError("best score does not match the selected records")
        for r in self.records:
            if not (0.0 <= r.score <= 10.0):
                raise ValueError(f"score {r.score} outside [0, 10]")


def _call_with_retry(what: str, fn, *args):
    """One retry, then give up; per-round client contract."""
    try:
        return fn(*args)
    except Exception as first:
        logger.warning("%s failed (%s); retrying once", what, first)
        try:
            return fn(*args)
        except Exception as second:
            raise PromptStudioError(f"{what} failed twice: {second}") from second


def generate_prompts(request: UserRequest, critiques, llm, n: int) -> list:
    """Ask the language client for n distinct prompts that contain the
    raw user text; duplicates or off-contract outputs trigger one
    re-query for the shortfall."""
    if n < 1:
        raise ValueError("n must be >= 1")
    critiques = list(critiques)

    def usable(candidate, seen):
        return request.text in candidate and candidate not in seen

    prompts = []
    raw = _call_with_retry("prompt generation", llm, request.text, critiques, n)
    for cand in raw:
        if usable(cand, prompts):
            prompts.append(cand)
    if len(prompts) < n:
        missing = n - len(prompts)
        extra = _call_with_retry(
            "prompt generation (shortfall)", llm, request.text, critiques, missing
        )
        for cand in extra:
            if usable(cand, prompts) and len(prompts) < n:
                prompts.append(cand)
    if len(prompts) < n:
        raise PromptStudioError(
            f"client produced {len(prompts)} usable prompts, needed {n}"
        )
    return prompts[:n]


def score_candidates(request: UserRequest, images, evaluator):
    """Score each candidate image in [0, 10] with a critique; client
    scores outside the range are clamped with a warning."""
    images = list(images)
    scores, critiques = _call_with_retry("scoring", evaluator, request.text, images)
    scores = [float(s) for s in scores]
    critiques = [str(c) for c in critiques]
    if len(scores) != len(images) or len(critiques) != len(images):
        raise PromptStudioError(
            f"evaluator returned {len(scores)} scores / {len(critiques)} critiques "
            f"for {len(images)} images"
        )
    clamped = []
    for s in scores:
        if not (0.0 <= s <= 10.0) or not np.isfinite(s):
            warnings.warn(f"evaluator score {s} clamped to [0, 10]")
            s = min(max(0.0 if not np.isfinite(s) else s, 0.0), 10.0)
        clamped.append(s)
    return clamped, critiques


@dataclass
class PromptClients:
    llm: object
    t2i: object
    evaluator: object


def optimize(
    request: UserRequest,
    clients: PromptClients,
    early_stop: float = EARLY_STOP_SCORE,
    seed: int = 0,
) -> OptimizationTranscript:
    """Run up to request.rounds improvement rounds and return the full
    transcript.  A permanently failing client ends the loop early with
    the best result so far and a failure note."""
    transcript = OptimizationTranscript()
    critiques = []
    n = request.candidates_per_round
    for round_index in range(request.rounds):
        try:
            prompts = generate_prompts(request, critiques, clients.llm, n)
            images = [
                _call_with_retry(
                    "image generation",
                    clients.t2i,
                    prompt,
                    request.conditions,
                    seed + round_index * n + i,
                )
                for i, prompt in enumerate(prompts)
            ]
            scores, notes = score_candidates(request, images, clients.evaluator)
        except PromptStudioError as exc:
            transcript.failure = str(exc)
            logger.warning("round %d aborted: %s", round_index, exc)
            break

        pick = int(np.argmax(scores))  # ties resolve to the lowest index
        for i, (prompt, image, score, note) in enumerate(zip(prompts, images, scores, notes)):
            transcript.records.append(
                CandidateRecord(
                    round_index=round_index,
                    prompt=prompt,
                    image=image,
                    score=score,
                    critique=note,
                    selected=i == pick,
                )
            )
        transcript.reflections.append(
            f"round {round_index}: kept {scores[pick]:.2f}/10; {notes[pick]}"
        )
        critiques.append(notes[pick])
        if scores[pick] > transcript.best_score:
            transcript.best_score = scores[pick]
            transcript.best_prompt = prompts[pick]
            transcript.best_image = images[pick]
        if scores[pick] >= early_stop:
            break

    if transcript.records:
        transcript.validate()
    return transcript


# --- offline mock clients ---------------------------------------------------

FLAVORS = (
    "highly detailed, studio lighting",
    "soft rim light, octane render style",
    "vivid colors, centered composition",
    "clean background, sharp focus",
    "dramatic side lighting, 4k",
    "matte finish, physically plausible materials",
)


class TemplateLLM:
    """Deterministic prompt writer: user text plus cycled flavor
    phrases, shifted by how much feedback has accumulated."""

    def __call__(self, text: str, critiques, n: int) -> list:
        offset = len(critiques)
        out = []
        for i in range(n):
            flavor = FLAVORS[(offset + i) % len(FLAVORS)]
            if critiques:
                out.append(f"{text}, {flavor}, addressing: {critiques[-1]}")
            else:
                out.append(f"{text}, {flavor}")
        return out


class ProceduralT2I:
    """Hash the prompt into a seeded canvas of colored disks; a cheap
    deterministic stand-in for a diffusion model."""

    def __init__(self, size: int = 64):
        self.size = size
        self.calls = 0
        self.seen_conditions = []

    def __call__(self, prompt: str, conditions, seed: int) -> ImageBuffer:
        self.calls += 1
        self.seen_conditions.append(list(conditions))
        digest = hashlib.sha256(f"{prompt}|{seed}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        img = np.full((self.size, self.size, 3), rng.uniform(0.0, 0.3, size=3))
        yy, xx = np.mgrid[0 : self.size, 0 : self.size]
        # longer prompts draw more shapes, nudging coverage up
        for _ in range(3 + min(len(prompt) // 24, 8)):
            cy, cx = rng.uniform(0, self.size, size=2)
            rad = rng.uniform(self.size * 0.08, self.size * 0.25)
            color = rng.uniform(0.3, 1.0, size=3)
            disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= rad**2
            img[disk] = color
        return ImageBuffer(img)


class CoverageEvaluator:
    """Scores by how much of the canvas is brighter than a floor;
    critiques name the measured coverage."""

    def __init__(self, floor: float = 0.3):
        self.floor = floor

    def __call__(self, text: str, images):
        scores = []
        critiques = []
        for buf in images:
            data = buf.data if isinstance(buf, ImageBuffer) else np.asarray(buf)
            coverage = float((data.mean(axis=2) > self.floor).mean())
            scores.append(round(10.0 * coverage, 4))
            critiques.append(f"bright coverage {coverage:.2f}; add larger central shapes")
        return scores, critiques


# --- HTTP clients (same wire family as the guidance service) ----------------


def encode_png_base64(image) -> str:
    data = image.data if isinstance(image, ImageBuffer) else np.asarray(image)
    as_u8 = np.clip(np.round(data * 255.0), 0, 255).astype(np.uint8)
    if as_u8.ndim == 3 and as_u8.shape[2] == 1:
        as_u8 = as_u8[:, :, 0]
    buf = io.BytesIO()
    Image.fromarray(as_u8).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_png_base64(payload: str) -> np.ndarray:
    raw = base64.b64decode(payload)
    img = Image.open(io.BytesIO(raw)).convert("RGB")
    return np.asarray(img, dtype=np.float64) / 255.0


def _post_json(endpoint: str, payload: dict, deadline: float, token, session):
    headers = {"Authorization": f"Bearer {token}"} if token else None
    http = session or requests
    try:
        reply = http.post(endpoint, json=payload, timeout=deadline, headers=headers)
    except (requests.exceptions.Timeout, requests.exceptions.ConnectionError) as exc:
        raise PromptStudioError(f"endpoint did not answer: {exc}") from exc
    if reply.status_code != 200:
        raise PromptStudioError(f"endpoint returned {reply.status_code}")
    try:
        return reply.json()
    except ValueError as exc:
        raise PromptStudioError(f"endpoint returned invalid JSON: {exc}") from exc


@dataclass
class HttpLLMClient:
    endpoint: str
    deadline: float = 30.0
    role: str = "prompt engineer for 3D asset generation"
    token: str | None = None
    session: object = None

    def __call__(self, text: str, critiques, n: int) -> list:
        body = _post_json(
            self.endpoint,
            {"role": self.role, "instruction": text, "history": list(critiques), "N": n},
            self.deadline,
            self.token,
            self.session,
        )
        prompts = body.get("prompts")
        if not isinstance(prompts, list):
            raise PromptStudioError("response missing 'prompts' list")
        return [str(p) for p in prompts]


@dataclass
class HttpT2IClient:
    endpoint: str
    deadline: float = 60.0
    token: str | None = None
    session: object = None

    def __call__(self, prompt: str, conditions, seed: int) -> ImageBuffer:
        body = _post_json(
            self.endpoint,
            {
                "prompt": prompt,
                "conditions": [
                    {"kind": kind, "image": encode_png_base64(img)} for kind, img in conditions
                ],
                "seed": int(seed),
            },
            self.deadline,
            self.token,
            self.session,
        )
        if "image" not in body:
            raise PromptStudioError("response missing 'image'")
        return ImageBuffer(decode_png_base64(body["image"]))


@dataclass
class HttpEvaluatorClient:
    endpoint: str
    deadline: float = 30.0
    token: str | None = None
    session: object = None

    def __call__(self, text: str, images):
        body = _post_json(
            self.endpoint,
            {"request": text, "images": [encode_png_base64(img) for img in images]},
            self.deadline,
            self.token,
            self.session,
        )
        scores = body.get("scores")
        critiques = body.get("critiques")
        if not isinstance(scores, list) or not isinstance(critiques, list):
            raise PromptStudioError("response missing 'scores'/'critiques' lists")
        return scores, critiques
