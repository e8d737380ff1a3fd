"""Target CoM-height profiles, the common range of motion and the trial schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RangeOfMotion:
    z_min: float
    z_max: float

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ConfigurationError(f"empty range of motion [{self.z_min}, {self.z_max}]")

    @property
    def mid(self) -> float:
        return 0.5 * (self.z_min + self.z_max)

    @property
    def amp(self) -> float:
        return 0.5 * (self.z_max - self.z_min)


def common_rom(a: RangeOfMotion, b: RangeOfMotion) -> RangeOfMotion:
    """Shared range: the larger of the minima up to the smaller of the maxima."""
    lo, hi = max(a.z_min, b.z_min), min(a.z_max, b.z_max)
    if not lo < hi:
        raise ConfigurationError(f"ranges of motion do not overlap: [{a.z_min}, {a.z_max}] vs [{b.z_min}, {b.z_max}]")
    return RangeOfMotion(lo, hi)


class ProfileKind(str, Enum):
    SIMPLE_SINE = "simple_sine"
    MULTI_SINE = "multi_sine"
    DISCRETE_STEPS = "discrete_steps"


MULTI_SINE_TERMS = ((0.33, 0.50), (0.33, 0.20), (0.33, 0.16))


@dataclass(frozen=True)
class ReferenceProfile:
    kind: ProfileKind = ProfileKind.SIMPLE_SINE
    rom: RangeOfMotion = field(default_factory=lambda: RangeOfMotion(0.80, 0.92))
    phase: float = 0.0
    onset_shift: float = 0.0
    dwell: float = 3.0
    n_levels: int = 5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if self.dwell <= 0:
            raise ConfigurationError("dwell must be > 0")
        if self.n_levels < 2:
            raise ConfigurationError("need at least 2 step levels")

    @property
    def levels(self) -> np.ndarray:
        return np.linspace(self.rom.z_min, self.rom.z_max, self.n_levels)

    def _level_index(self, k: int) -> int:
        # seeded shuffle of the level set, repeated block by block
        block, pos = divmod(k, self.n_levels)
        order = np.random.default_rng([self.seed, block]).permutation(self.n_levels)
        return int(order[pos])


def raw_shape(t: float, profile: ReferenceProfile) -> float:
    """Unit-amplitude shape in [-1, 1] before mapping into the ROM."""
    if profile.kind is ProfileKind.SIMPLE_SINE:
        return math.sin(0.5 * 2 * math.pi * (t + profile.onset_shift) + profile.phase)
    if profile.kind is ProfileKind.MULTI_SINE:
        return sum(w * math.sin(f * 2 * math.pi * t) for w, f in MULTI_SINE_TERMS)
    k = int(math.floor(t / profile.dwell))
    lev = profile.levels[profile._level_index(k)]
    return (lev - profile.rom.mid) / profile.rom.amp


def target(t: float, profile: ReferenceProfile) -> float:
    if t < 0:
        raise ValueError("t must be >= 0")
    rom = profile.rom
    z = rom.mid + rom.amp * raw_shape(t, profile)
    return min(max(z, rom.z_min), rom.z_max)


def period(profile: ReferenceProfile) -> float:
    """Length of one repetition of the target, used to align trials."""
    if profile.kind is ProfileKind.SIMPLE_SINE:
        return 2.0
    if profile.kind is ProfileKind.MULTI_SINE:
        return 50.0  # common period of 0.5, 0.2 and 0.16 Hz
    return profile.dwell * profile.n_levels


class Phase(str, Enum):
    SOLO = "solo"
    COUPLED = "coupled"
    REST = "rest"
    DONE = "done"


@dataclass(frozen=True)
class TrialSchedule:
    """Trial = solo, rest, coupled (order configurable); trials separated by a rest."""

    solo: float = 30.0
    rest: float = 30.0
    coupled: float = 30.0
    trials: int = 8
    inter_trial_rest: float = 30.0
    order: tuple = ("solo", "rest", "coupled")

    def __post_init__(self):
        if min(self.solo, self.rest, self.coupled, self.inter_trial_rest) < 0:
            raise ConfigurationError("phase durations must be >= 0")
        if self.solo + self.rest + self.coupled <= 0:
            raise ConfigurationError("a trial needs a phase of nonzero length")
        if self.trials < 1:
            raise ConfigurationError("need at least one trial")
        order = tuple(Phase(o) for o in self.order)
        if Phase.DONE in order or not order:
            raise ConfigurationError("order may only contain solo, rest and coupled")
        object.__setattr__(self, "order", tuple(o.value for o in order))

    def _duration(self, ph: str) -> float:
        return {"solo": self.solo, "rest": self.rest, "coupled": self.coupled}[ph]

    @property
    def trial_length(self) -> float:
        return sum(self._duration(o) for o in self.order)

    @property
    def total(self) -> float:
        return self.trials * self.trial_length + (self.trials - 1) * self.inter_trial_rest

    @cached_property
    def _segments(self):
        return tuple(self.segments())

    def segments(self):
        """(start, end, phase, trial) for every period, in time order."""
        out = []
        t = 0.0
        for k in range(self.trials):
            for o in self.order:
                d = self._duration(o)
                if d == 0:
                    continue
                out.append((t, t + d, Phase(o), k))
                t += d
            if k < self.trials - 1 and self.inter_trial_rest > 0:
                out.append((t, t + self.inter_trial_rest, Phase.REST, k))
                t += self.inter_trial_rest
        return out


def trial_phase(t: float, schedule: TrialSchedule) -> tuple[Phase, int, float]:
    """Phase, trial index and time since the phase started."""
    if t < 0:
        raise ValueError("t must be >= 0")
    for start, end, ph, k in schedule._segments:
        if start <= t < end:
            return ph, k, t - start
    return Phase.DONE, schedule.trials, t - schedule.total
