"""Backend implementations.

A generator backend exposes ``generate(conditioning, n, temperature, mode)``
returning a list of ``(text, log_prob_or_None)``; a measurer backend exposes
``measure(text)`` returning the reply fields (``kind`` plus ``value`` or
``label``/``confidence``). Heavy dependencies are imported lazily so the
echo backend stays dependency-free.
"""

from __future__ import annotations

import json
import os
import urllib.request
from pathlib import Path

from .config import AdapterConfig


class BackendLoadError(RuntimeError):
    """The backend's model could not be loaded; the server must not start."""


class EchoBackend:
    """Deterministic test double for both roles.

    Matches the engine's documented echo contract: candidate k is
    ``"echo {k}: {conditioning}"`` with log_prob -k, and the measured value
    is ``(sum of UTF-8 bytes) % 1000 / 999``.
    """

    def generate(self, conditioning: str, n: int, temperature: float, mode: str):
        return [(f"echo {k}: {conditioning}", -float(k)) for k in range(n)]

    def measure(self, text: str) -> dict:
        value = (sum(text.encode("utf-8")) % 1000) / 999.0
        return {"kind": "continuous", "value": value, "confidence": 1.0}


class TransformersGenerator:
    """Seq2seq summarization models from the transformers hub."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise BackendLoadError(f"transformers is not installed: {exc}") from exc
        try:
            self._pipe = pipeline("summarization", model=config.model)
        except Exception as exc:
            raise BackendLoadError(f"cannot load model {config.model!r}: {exc}") from exc

    def generate(self, conditioning: str, n: int, temperature: float, mode: str):
        kwargs = {"max_new_tokens": self.config.max_tokens, "num_return_sequences": n}
        if mode == "sample":
            kwargs.update(do_sample=True, temperature=temperature)
        else:
            # Diverse beam search: one beam per group.
            kwargs.update(num_beams=n, num_beam_groups=n, diversity_penalty=0.5)
        outputs = self._pipe(conditioning, **kwargs)
        # Sequence log-probabilities are not reported by the pipeline API.
        return [(out["summary_text"], None) for out in outputs]


class TransformersMeasurer:
    """Text-classification models mapped onto the measurement schema."""

    def __init__(self, config: AdapterConfig):
        self.config = config
        try:
            from transformers import pipeline
        except ImportError as exc:
            raise BackendLoadError(f"transformers is not installed: {exc}") from exc
        try:
            self._pipe = pipeline("text-classification", model=config.model)
        except Exception as exc:
            raise BackendLoadError(f"cannot load model {config.model!r}: {exc}") from exc

    def measure(self, text: str) -> dict:
        out = self._pipe(text[: 4 * self.config.max_tokens], truncation=True)[0]
        label, score = out["label"], float(out["score"])
        if self.config.task == "continuous":
            # Positive-class probability as the [0,1] value.
            positive = label.upper() in ("POSITIVE", "LABEL_1")
            value = score if positive else 1.0 - score
            return {"kind": "continuous", "value": value, "confidence": score}
        significant = label in self.config.significant_labels
        return {
            "kind": "binary",
            "label": "significant" if significant else "not_significant",
            "confidence": score,
        }


def render_prompt(template_path: str | Path, conditioning: str) -> dict:
    """Load a prompt template file and fill its placeholders.

    The file is JSON with ``system`` and ``user`` strings; ``{conditioning}``
    marks where the linearized inputs go.
    """
    spec = json.loads(Path(template_path).read_text(encoding="utf-8"))
    return {
        "system": spec["system"],
        "user": spec["user"].replace("{conditioning}", conditioning),
    }


class ChatCompletionBackend:
    """OpenAI-compatible chat endpoints behind the generator protocol.

    Credentials come from the environment variable named by
    ``api_key_env``. ``post_fn(url, payload, headers) -> dict`` is
    injectable for tests.
    """

    def __init__(self, config: AdapterConfig, post_fn=None):
        self.config = config
        self._post = post_fn or self._http_post

    def _http_post(self, url: str, payload: dict, headers: dict) -> dict:
        data = json.dumps(payload).encode("utf-8")
        request = urllib.request.Request(url, data=data, headers=headers)
        with urllib.request.urlopen(request, timeout=120) as resp:
            return json.loads(resp.read().decode("utf-8"))

    def build_payload(self, conditioning: str, n: int, temperature: float) -> dict:
        prompt = render_prompt(self.config.prompt_template, conditioning)
        return {
            "model": self.config.model or "default",
            "messages": [
                {"role": "system", "content": prompt["system"]},
                {"role": "user", "content": prompt["user"]},
            ],
            "n": n,
            "temperature": temperature,
            "max_tokens": self.config.max_tokens,
        }

    def generate(self, conditioning: str, n: int, temperature: float, mode: str):
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        url = self.config.api_base.rstrip("/") + "/chat/completions"
        reply = self._post(url, self.build_payload(conditioning, n, temperature), headers)
        choices = reply.get("choices", [])
        if len(choices) != n:
            raise RuntimeError(f"backend returned {len(choices)} choices, requested {n}")
        # Chat APIs do not report sequence probabilities; log_prob stays absent.
        return [(c["message"]["content"], None) for c in choices]


def build_backend(config: AdapterConfig):
    if config.backend == "echo":
        return EchoBackend()
    if config.backend == "hf_generator":
        return TransformersGenerator(config)
    if config.backend == "hf_measurer":
        return TransformersMeasurer(config)
    return ChatCompletionBackend(config)
