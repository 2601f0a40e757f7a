"""Random search over a hyperparameter grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np

from ..errors import ConfigError, FitError

log = logging.getLogger(__name__)

DEFAULT_TRIALS = 30


@dataclass(frozen=True)
class IntRange:
    """Inclusive integer range."""

    min: int
    max: int

    def __post_init__(self):
        if self.max < self.min:
            raise ConfigError(f"empty range [{self.min}, {self.max}]")

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.min, self.max + 1))

    def to_json(self):
        return {"min": self.min, "max": self.max}


@dataclass(frozen=True)
class Choice:
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ConfigError("empty choice set")

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]

    def to_json(self):
        return list(self.values)


@dataclass(frozen=True)
class SearchSpace:
    ranges: Mapping[str, IntRange | Choice]
    n_trials: int = DEFAULT_TRIALS
    seed: int = 0

    def __post_init__(self):
        if self.n_trials < 1:
            raise ConfigError(f"n_trials must be >= 1, got {self.n_trials}")

    def sample(self, rng: np.random.Generator) -> dict[str, Any]:
        # parameters drawn in sorted-name order so the sequence is key-order independent
        return {name: self.ranges[name].sample(rng) for name in sorted(self.ranges)}

    def to_json(self) -> dict:
        out: dict[str, Any] = {name: r.to_json() for name, r in sorted(self.ranges.items())}
        out["n_trials"] = self.n_trials
        out["seed"] = self.seed
        return out

    @classmethod
    def from_json(cls, obj: Mapping) -> "SearchSpace":
        obj = dict(obj)
        n_trials = int(obj.pop("n_trials", DEFAULT_TRIALS))
        seed = int(obj.pop("seed", 0))
        ranges: dict[str, IntRange | Choice] = {}
        for name, spec in obj.items():
            if isinstance(spec, Mapping):
                if set(spec) != {"min", "max"}:
                    raise ConfigError(f"range for {name!r} needs exactly min and max")
                ranges[name] = IntRange(int(spec["min"]), int(spec["max"]))
            elif isinstance(spec, (list, tuple)):
                ranges[name] = Choice(tuple(spec))
            else:
                raise ConfigError(f"search entry {name!r} must be {{min,max}} or a list")
        return cls(ranges, n_trials, seed)


@dataclass
class Trial:
    index: int
    params: dict
    score: float | None
    error: str | None = None

    def to_json(self) -> dict:
        return {"index": self.index, "params": self.params, "score": self.score,
                "error": self.error}


@dataclass
class SearchResult:
    best_params: dict
    best_score: float
    trials: list[Trial] = field(default_factory=list)


def random_grid_search(space: SearchSpace, objective: Callable[[dict], float]) -> SearchResult:
    """Evaluate ``space.n_trials`` random points; the highest score wins.

    Ties go to the earlier trial. A trial whose objective raises is logged as
    failed and the search moves on.
    """
    rng = np.random.default_rng(space.seed)
    trials: list[Trial] = []
    best: Trial | None = None
    for i in range(space.n_trials):
        params = space.sample(rng)
        try:
            score = float(objective(params))
        except Exception as exc:  # noqa: BLE001 - failures are data here
            log.warning("trial %d failed: %s", i, exc)
            trials.append(Trial(i, params, None, f"{type(exc).__name__}: {exc}"))
            continue
        trials.append(Trial(i, params, score))
        if best is None or score > best.score:
            best = trials[-1]
    if best is None:
        raise FitError(f"all {space.n_trials} search trials failed; first error: {trials[0].error}")
    return SearchResult(best.params, best.score, trials)
