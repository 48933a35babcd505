"""Adapter configuration."""

from __future__ import annotations

from dataclasses import dataclass

BACKENDS = ("echo", "hf_generator", "hf_measurer", "chat")
ROLES = ("generator", "measurer")
TASKS = ("continuous", "binary")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AdapterConfig:
    role: str
    backend: str = "echo"
    task: str = "continuous"
    model: str | None = None
    api_base: str | None = None
    api_key_env: str = "SIDECAR_API_KEY"
    prompt_template: str | None = None
    n: int = 5
    temperature: float = 0.6
    max_tokens: int = 128
    # hf_measurer (binary task): model output labels that count as significant
    significant_labels: tuple[str, ...] = ("significant", "SIGNIFICANT", "LABEL_1")

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.backend == "hf_generator" and self.role != "generator":
            raise ConfigurationError("hf_generator backend serves the generator role")
        if self.backend == "hf_measurer" and self.role != "measurer":
            raise ConfigurationError("hf_measurer backend serves the measurer role")
        if self.backend == "chat" and self.role != "generator":
            raise ConfigurationError("chat backend serves the generator role")
        if self.backend in ("hf_generator", "hf_measurer") and not self.model:
            raise ConfigurationError(f"{self.backend} requires a model identifier")
        if self.backend == "chat" and not (self.api_base and self.prompt_template):
            raise ConfigurationError("chat backend requires api_base and prompt_template")
        if self.n < 1 or self.max_tokens < 1:
            raise ConfigurationError("n and max_tokens must be >= 1")
