"""Configuration grids over (neu, gen, alpha2) and run splitting across workers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .evolution import EAParams

# dataset -> (neu, gen, alpha2); alpha2 is None where it is not distributed
BASE_CONFIGS = {
    "balance": (5, 150, 1.0),
    "cancer": (2, 100, 1.0),
    "pima": (3, 120, 1.0),
    "hypothyroid": (3, 500, None),
    "waveform": (3, 500, None),
}

# best grid cell per dataset, by mean generalization CCR
BEST_CONFIGS = {"balance": "4", "cancer": "2", "pima": "2", "hypothyroid": "3*", "waveform": "4*"}


@dataclass
class BaseConfig:
    dataset: str
    neu: int
    gen: int
    alpha2: float | None = None
    common: EAParams = field(default_factory=EAParams)

    def __post_init__(self):
        if self.neu < 1 or self.gen < 0:
            raise ValueError("base config needs neu >= 1 and gen >= 0")


@dataclass
class ExperimentConfig:
    dataset: str
    label: str
    params: EAParams

    @property
    def neu(self) -> int:
        return self.params.max_hidden

    @property
    def gen(self) -> int:
        return self.params.max_generations

    @property
    def alpha2(self) -> float:
        return self.params.alpha2_init

    def to_dict(self) -> dict:
        return {"dataset": self.dataset, "label": self.label, "params": self.params.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        return cls(d["dataset"], str(d["label"]), EAParams(**d["params"]))


@dataclass
class RunAssignment:
    worker: int
    runs: list[tuple[int, int]]  # (run index, seed)


def base_config_for(dataset: str, base: BaseConfig | None = None, common: EAParams | None = None) -> BaseConfig:
    if base is not None:
        return base
    key = dataset.lower()
    if key not in BASE_CONFIGS:
        raise KeyError(f"no base configuration known for {dataset!r}; supply one explicitly")
    neu, gen, alpha2 = BASE_CONFIGS[key]
    return BaseConfig(dataset, neu, gen, alpha2, common or EAParams())


def scale_generations(gen: int, factor: float = 0.8) -> int:
    return int(math.floor(gen * factor + 0.5))


def _config(base: BaseConfig, label: str, neu: int, gen: int, alpha2: float | None) -> ExperimentConfig:
    overrides = {"max_hidden": neu, "max_generations": gen}
    if alpha2 is not None:
        overrides["alpha2_init"] = alpha2
    return ExperimentConfig(base.dataset, label, replace(base.common, **overrides))


def expand_grid_3param(base: BaseConfig) -> list[ExperimentConfig]:
    """Cells 1-8: neu alternates fastest, then alpha2, then generations."""
    if base.alpha2 is None:
        raise ValueError(f"{base.dataset} has no base alpha2; use the 2-parameter grid")
    configs = []
    for i in range(8):
        neu = base.neu + (i & 1)
        alpha2 = base.alpha2 * (1.5 if i & 2 else 1.0)
        gen = scale_generations(base.gen) if i & 4 else base.gen
        configs.append(_config(base, str(i + 1), neu, gen, alpha2))
    return configs


def expand_grid_2param(base: BaseConfig) -> list[ExperimentConfig]:
    """Cells 1*-8*: neu + 0..3, first at full then at 0.8 generations."""
    configs = []
    for i in range(8):
        gen = scale_generations(base.gen) if i >= 4 else base.gen
        configs.append(_config(base, f"{i + 1}*", base.neu + i % 4, gen, base.alpha2))
    return configs


def expand_grid(base: BaseConfig, mode: int) -> list[ExperimentConfig]:
    if mode == 3:
        return expand_grid_3param(base)
    if mode == 2:
        return expand_grid_2param(base)
    raise ValueError(f"grid mode must be 2 or 3, got {mode}")


def best_config_for(dataset: str, common: EAParams | None = None) -> ExperimentConfig:
    label = BEST_CONFIGS[dataset.lower()]
    base = base_config_for(dataset, common=common)
    grid = expand_grid_2param(base) if label.endswith("*") else expand_grid_3param(base)
    return next(c for c in grid if c.label == label)


def split_runs(total_runs: int, workers: int, master_seed: int) -> list[RunAssignment]:
    """Contiguous balanced blocks; run ``i`` always gets seed ``master_seed + i``."""
    if total_runs < 1 or workers < 1:
        raise ValueError("need at least one run and one worker")
    size, extra = divmod(total_runs, workers)
    out, start = [], 0
    for w in range(workers):
        n = size + (1 if w < extra else 0)
        out.append(RunAssignment(w, [(i, master_seed + i) for i in range(start, start + n)]))
        start += n
    return out
