"""Seeded EM-emission simulator standing in for the target board and capture rig."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .isa import OP_CLASSES, ExecutionPath, Instruction

ORIGINS = ("simulated", "synthetic", "ingested")

DEFAULT_AMPLITUDES = {
    "sbi": 1.60, "clr": 0.90, "ldi": 1.20, "mov": 0.85, "cp": 0.70,
    "breq": 1.00, "rjmp": 1.10, "lsl": 0.75, "lsr": 0.80, "ses": 0.55,
    "cls": 0.62, "sev": 0.50, "clv": 0.66, "and": 1.30, "add": 0.95,
    "eor": 1.40, "sub": 0.88, "asr": 1.50, "com": 0.45, "adc": 1.35,
    "sbc": 0.40, "ser": 1.05, "nop": 0.30,
}

# multiplicative effect of the predecessor's class on the current instruction
_PREV_CLASS_EFFECT = {
    "arithmetic": 1.00, "logic": 1.22, "flag": 0.90, "branch": 1.08,
    "transfer": 1.05, "io": 1.28, "nop": 0.96,
}
_CUR_CLASS_SENSITIVITY = {
    "arithmetic": 1.0, "logic": 0.9, "flag": 1.0, "branch": 1.2,
    "transfer": 0.8, "io": 0.7, "nop": 0.5,
}


def _default_influence() -> dict[str, float]:
    table = {}
    for prev in OP_CLASSES:
        for cur in OP_CLASSES:
            eff = 1.0 + (_PREV_CLASS_EFFECT[prev] - 1.0) * _CUR_CLASS_SENSITIVITY[cur]
            table[f"{prev}>{cur}"] = round(eff, 4)
    return table


def _default_spread() -> dict[str, float]:
    # small deterministic per-mnemonic perturbation, |x| <= 0.02
    out = {}
    for mn in sorted(DEFAULT_AMPLITUDES):
        h = int(hashlib.sha256(mn.encode()).hexdigest()[:8], 16)
        out[mn] = round((h / 0xFFFFFFFF - 0.5) * 0.04, 4)
    return out


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EmissionConfig:
    """Parameters of the simulated device and capture chain.

    ``influence`` is keyed ``"<prev_class>><cur_class>"``; missing entries mean 1.
    ``overrun_samples`` extends each capture window past the end of the loop
    iteration into the start of the next one.
    """

    samples_per_cycle: int = 31
    base_amplitude: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_AMPLITUDES))
    pulse_shape: str = "clock_spike"
    influence: Mapping[str, float] = field(default_factory=_default_influence)
    influence_spread: Mapping[str, float] = field(default_factory=_default_spread)
    noise_sigma: float = 0.04
    jitter_sigma: float = 0.02
    drift_max: int = 0
    overrun_samples: int = 0
    seed: int = 2023

    def __post_init__(self):
        if self.samples_per_cycle < 2:
            raise ConfigError("samples_per_cycle must be >= 2")
        if any(a <= 0 for a in self.base_amplitude.values()):
            raise ConfigError("amplitudes must be positive")
        if self.noise_sigma < 0 or self.jitter_sigma < 0:
            raise ConfigError("noise_sigma and jitter_sigma must be >= 0")
        if not 0 <= self.drift_max < self.samples_per_cycle:
            raise ConfigError("drift_max must be in [0, samples_per_cycle)")
        if self.overrun_samples < 0:
            raise ConfigError("overrun_samples must be >= 0")
        if self.pulse_shape not in PULSE_SHAPES:
            raise ConfigError(f"unknown pulse shape {self.pulse_shape!r}")
        for key in self.influence:
            prev, _, cur = key.partition(">")
            if prev not in OP_CLASSES or cur not in OP_CLASSES:
                raise ConfigError(f"bad influence key {key!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def calibration(cls) -> EmissionConfig:
        """Config that, with the calibration catalog, reproduces the reference capture lengths."""
        return cls(samples_per_cycle=25, overrun_samples=11)

    def with_(self, **changes) -> EmissionConfig:
        data = self.to_dict()
        data.update(changes)
        return EmissionConfig(**data)

    def noiseless(self) -> EmissionConfig:
        return self.with_(noise_sigma=0.0, jitter_sigma=0.0, drift_max=0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["base_amplitude"] = dict(self.base_amplitude)
        d["influence"] = dict(self.influence)
        d["influence_spread"] = dict(self.influence_spread)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: Mapping) -> EmissionConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> EmissionConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def amplitude(self, prev: Instruction, cur: Instruction) -> float:
        try:
            base = self.base_amplitude.get(cur.signal_key, self.base_amplitude[cur.mnemonic])
        except KeyError:
            raise ConfigError(f"no base amplitude for {cur.mnemonic!r}") from None
        factor = self.influence.get(f"{prev.op_class}>{cur.op_class}", 1.0)
        return base * factor * (1.0 + self.influence_spread.get(prev.mnemonic, 0.0))


def _half_sine(n: int) -> np.ndarray:
    return np.sin(np.pi * (np.arange(n) + 0.5) / n)


def _gaussian(n: int, width: float = 8.0) -> np.ndarray:
    x = np.arange(n) + 0.5 - n / 2
    return np.exp(-0.5 * (x / (n / width)) ** 2)


def _clock_spike(n: int) -> np.ndarray:
    # narrow current spike mid-cycle; neighbours stay low even under half-cycle drift
    return _gaussian(n, 16.0)


PULSE_SHAPES = {"clock_spike": _clock_spike, "half_sine": _half_sine, "gaussian": _gaussian}


@dataclass
class Trace:
    samples: np.ndarray
    samples_per_cycle: int
    origin: str = "simulated"
    path_id: int | None = None
    alignment: int | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.origin not in ORIGINS:
            raise ValueError(f"unknown trace origin {self.origin!r}")
        if self.alignment is not None and not 0 <= self.alignment < max(len(self.samples), 1):
            raise ValueError(f"alignment {self.alignment} outside trace")

    def __len__(self) -> int:
        return len(self.samples)


def noiseless_waveform(path: ExecutionPath, config: EmissionConfig) -> np.ndarray:
    """Deterministic emission of one steady-state loop iteration (no overrun)."""
    ins = path.instructions
    if not ins:
        raise ValueError("empty execution path")
    pulse = PULSE_SHAPES[config.pulse_shape](config.samples_per_cycle)
    blocks = []
    for i, cur in enumerate(ins):
        amp = config.amplitude(ins[i - 1], cur)
        blocks.append(np.tile(amp * pulse, cur.cycles))
    return np.concatenate(blocks)


def _path_seed(path: ExecutionPath) -> int:
    return int(path.digest()[:16], 16)


def emit(path: ExecutionPath, config: EmissionConfig, capture_index: int = 0) -> Trace:
    """Simulate one capture of ``path``.

    The first instruction takes the last one as its predecessor (the loop
    runs continuously). Jitter is one multiplicative draw per capture, noise
    is per sample, drift is a circular shift of at most ``drift_max`` samples.
    """
    wave = noiseless_waveform(path, config)
    if config.overrun_samples:
        wave = np.resize(wave, len(wave) + config.overrun_samples)
    rng = np.random.default_rng([config.seed, capture_index, _path_seed(path)])
    jitter = rng.standard_normal()
    noise = rng.standard_normal(len(wave))
    shift = int(rng.integers(-config.drift_max, config.drift_max + 1))
    if config.jitter_sigma:
        wave = wave * (1.0 + config.jitter_sigma * jitter)
    if config.noise_sigma:
        wave = wave + config.noise_sigma * noise
    if shift:
        wave = np.roll(wave, shift)
    return Trace(wave, config.samples_per_cycle, "simulated", path.path_id, shift % len(wave))


def capture_set(path: ExecutionPath, config: EmissionConfig, n: int, start: int = 0) -> list[Trace]:
    if n < 1:
        raise ValueError("n must be >= 1")
    return [emit(path, config, k) for k in range(start, start + n)]


def nominal_length(path: ExecutionPath, config: EmissionConfig) -> int:
    return path.cycles * config.samples_per_cycle + config.overrun_samples
