"""Run settings and their resolution chain.

Settings arrive from up to four places; later layers win field by field:
built-in defaults, then the scenario file's appraisal defaults, then a
config file, then command-line flags. equity_weights is replaced whole by
the last layer that sets it, never merged per group.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .classify import DEFAULT_LIKELIHOOD_THRESHOLD, DEFAULT_VOTE_THRESHOLD
from .cover import DEFAULT_EPSILON
from .model import ModelError
from .portfolio import APPRAISAL_MODES, AppraisalConfig

#: Every key a config layer may set, with its built-in default.
CONFIG_DEFAULTS: dict = {
    "mode": "economic",
    "equity_weights": {},
    "hardship_multiplier": 1.5,
    "discount_rate": 0.05,
    "epsilon": DEFAULT_EPSILON,
    "likelihood_threshold": DEFAULT_LIKELIHOOD_THRESHOLD,
    "vote_threshold": DEFAULT_VOTE_THRESHOLD,
    "seed": 0,
}


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one cycle run."""

    mode: str = "economic"
    equity_weights: Mapping[str, float] = field(default_factory=dict)
    hardship_multiplier: float = 1.5
    discount_rate: float = 0.05
    epsilon: float = DEFAULT_EPSILON
    likelihood_threshold: float = DEFAULT_LIKELIHOOD_THRESHOLD
    vote_threshold: float = DEFAULT_VOTE_THRESHOLD
    seed: int = 0

    def __post_init__(self):
        # AppraisalConfig re-checks mode/hardship/weights/rate; do it eagerly
        # so a bad config fails at construction, not mid-cycle.
        self.appraisal()
        if not (0.0 <= self.epsilon < 1.0):
            raise ModelError(f"epsilon must be in [0,1), got {self.epsilon}")
        if not (0.0 <= self.likelihood_threshold < 1.0):
            raise ModelError(
                f"likelihood_threshold must be in [0,1), got {self.likelihood_threshold}"
            )
        if not (0.0 < self.vote_threshold <= 1.0):
            raise ModelError(
                f"vote_threshold must be in (0,1], got {self.vote_threshold}"
            )
        if not isinstance(self.seed, int):
            raise ModelError(f"seed must be an integer, got {self.seed!r}")
        object.__setattr__(self, "equity_weights", dict(self.equity_weights))

    def appraisal(self) -> AppraisalConfig:
        return AppraisalConfig(
            mode=self.mode,
            equity_weights=self.equity_weights,
            hardship_multiplier=self.hardship_multiplier,
            discount_rate=self.discount_rate,
        )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "equity_weights": dict(sorted(self.equity_weights.items())),
            "hardship_multiplier": self.hardship_multiplier,
            "discount_rate": self.discount_rate,
            "epsilon": self.epsilon,
            "likelihood_threshold": self.likelihood_threshold,
            "vote_threshold": self.vote_threshold,
            "seed": self.seed,
        }


def resolve_config(
    scenario_defaults: Optional[Mapping] = None,
    file_overrides: Optional[Mapping] = None,
    flag_overrides: Optional[Mapping] = None,
) -> RunConfig:
    """Merge the setting layers in precedence order and validate the result.

    A key set to None in a layer is treated as unset. Unknown keys raise so
    misspelled settings never pass silently.
    """
    merged = dict(CONFIG_DEFAULTS)
    for layer_name, layer in (
        ("scenario appraisal_defaults", scenario_defaults),
        ("config file", file_overrides),
        ("flags", flag_overrides),
    ):
        if not layer:
            continue
        unknown = set(layer) - set(CONFIG_DEFAULTS)
        if unknown:
            raise ModelError(f"unknown config key(s) in {layer_name}: {sorted(unknown)}")
        for key, value in layer.items():
            if value is not None:
                merged[key] = value
    if merged["mode"] not in APPRAISAL_MODES:
        raise ModelError(f"mode must be one of {APPRAISAL_MODES}, got {merged['mode']!r}")
    return RunConfig(**merged)
