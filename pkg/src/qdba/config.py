"""Flat session configuration, loadable from JSON and overridable field by
field from the command line."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from qdba.agreement import ConsistencyParams
from qdba.channels import Party, config_hash
from qdba.list_distribution import DistributionConfig
from qdba.quantum_source import NoiseModel


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class Config:
    seed: int = 2006
    n_windows: int = 48184
    p_corrupt: float = 0.0875
    p_detect: float = 0.25
    n_tests: int | None = None
    qer_threshold: float = 0.10
    min_length: int = 300
    test_mode: str = "shared"
    subset_size: int = 1000
    delta: float = 0.05
    epsilon: float = 0.15
    length_sigmas: float = 4.0
    plan: int = 1
    traitor: str | None = None
    strategy: str = "honest"
    strategy_params: dict = field(default_factory=dict)
    outside_model: bool = False
    transcript_path: str | None = None
    lists_path: str | None = None
    stats_path: str | None = None

    def __post_init__(self):
        for name in ("p_corrupt", "p_detect", "qer_threshold"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ConfigError(name, f"must be a probability in [0, 1], got {v!r}")
        for name in ("n_windows", "subset_size"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
                raise ConfigError(name, f"must be a positive integer, got {v!r}")
        if self.n_tests is not None and (not isinstance(self.n_tests, int) or self.n_tests <= 0):
            raise ConfigError("n_tests", f"must be a positive integer, got {self.n_tests!r}")
        if not isinstance(self.min_length, int) or self.min_length < 0:
            raise ConfigError("min_length", f"must be a non-negative integer, got {self.min_length!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed!r}")
        if self.plan not in (0, 1) or isinstance(self.plan, bool):
            raise ConfigError("plan", f"must be 0 or 1, got {self.plan!r}")
        if self.test_mode not in ("shared", "subsets"):
            raise ConfigError("test_mode", f"must be 'shared' or 'subsets', got {self.test_mode!r}")
        try:
            ConsistencyParams(self.delta, self.epsilon, self.length_sigmas)
        except (ValueError, TypeError) as exc:
            name = next((n for n in ("delta", "epsilon", "length_sigmas") if n in str(exc)), "epsilon")
            raise ConfigError(name, str(exc)) from None
        try:
            traitors = self.traitors
        except ValueError:
            raise ConfigError("traitor", f"unknown role in {self.traitor!r}") from None
        if len(traitors) > 1 and not self.outside_model:
            raise ConfigError("traitor", "more than one traitor needs outside_model = true")
        from qdba.adversary import REGISTRY

        if self.strategy not in REGISTRY:
            raise ConfigError("strategy", f"unknown strategy {self.strategy!r}")
        if not isinstance(self.strategy_params, dict):
            raise ConfigError("strategy_params", "must be a JSON object")

    @property
    def traitors(self) -> tuple[Party, ...]:
        if not self.traitor:
            return ()
        roles = [r.strip() for r in self.traitor.replace(",", " ").split() if r.strip()]
        if len(roles) == 1 and len(roles[0]) > 1:
            roles = list(roles[0])
        return tuple(dict.fromkeys(Party(r.upper()) for r in roles))

    def noise(self) -> NoiseModel:
        return NoiseModel(self.p_corrupt, self.p_detect)

    def distribution(self) -> DistributionConfig:
        return DistributionConfig(
            n_windows=self.n_windows, n_tests=self.n_tests, qer_threshold=self.qer_threshold,
            min_length=self.min_length, test_mode=self.test_mode, subset_size=self.subset_size,
        )

    def consistency(self) -> ConsistencyParams:
        return ConsistencyParams(self.delta, self.epsilon, self.length_sigmas)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    # --- serialisation ---

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def protocol_dict(self) -> dict[str, Any]:
        """Fields that influence a run; output paths are left out."""
        d = self.to_dict()
        for k in ("transcript_path", "lists_path", "stats_path"):
            d.pop(k)
        return d

    def hash(self) -> str:
        return config_hash(self.protocol_dict())

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Config":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration field")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Config":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("<file>", "configuration must be a JSON object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
