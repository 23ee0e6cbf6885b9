"""Pipeline configuration: one JSON document, versioned.

Presets reproduce the two applications: handle-bar braking states from IMU
data and hand postures/gestures from tracked hand poses.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .ingest import (BRAKING_STATES, POSTURE_CHANNELS, POSTURE_CLASSES, POSTURE_NAMES,
                     gesture_label)
from .signal_fusion import DEFAULT_KI, DEFAULT_KP
from .subspace_trainer import ClusterPass, OscParams

SCHEMA_VERSION = 1

IMU_FEATURES = ("roll", "pitch", "roll_rate", "pitch_rate", "yaw_rate",
                "accel_x", "accel_y", "accel_z")


@dataclass
class PipelineConfig:
    fs: float = 20.0
    w: int = 20
    train_stride: int = 1
    feature_mode: str = "imu"
    channels: tuple[str, ...] = ("pitch", "pitch_rate")
    Kp: float = DEFAULT_KP
    Ki: float = DEFAULT_KI
    butterworth_cutoff: float = 3.0
    osc: OscParams = field(default_factory=OscParams)
    crc_lambda: float = 0.01
    per_class: int = 30
    class_names: tuple[str, ...] = BRAKING_STATES
    seed: int = 0
    kmeans_restarts: int = 20
    boundary: int | None = None
    training: list = field(default_factory=list)
    evaluation: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.class_names = tuple(self.class_names)
        if isinstance(self.osc, dict):
            try:
                self.osc = OscParams(**self.osc)
            except TypeError as exc:
                raise ConfigError(f"osc: {exc}") from None
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"config schema version {self.schema_version}, "
                              f"this build reads {SCHEMA_VERSION}")
        if not self.fs > 0:
            raise ConfigError("fs must be positive")
        if self.w < 2 or self.train_stride < 1 or self.per_class < 1:
            raise ConfigError("w >= 2, train_stride >= 1 and per_class >= 1 required")
        if self.feature_mode not in ("imu", "direct"):
            raise ConfigError(f"unknown feature_mode {self.feature_mode!r}")
        if self.feature_mode == "imu":
            unknown = set(self.channels) - set(IMU_FEATURES)
            if unknown:
                raise ConfigError(f"unknown IMU feature channels {sorted(unknown)}")
        if not self.channels:
            raise ConfigError("no feature channels")
        if not (self.Kp > 0 and self.Ki > 0):
            raise ConfigError("filter gains must be positive")
        if not 0 < self.butterworth_cutoff < self.fs / 2:
            raise ConfigError("butterworth_cutoff must lie in (0, fs/2)")
        if not self.crc_lambda >= 0:
            raise ConfigError("crc_lambda must be >= 0")
        if len(self.class_names) < 2:
            raise ConfigError("at least two classes required")
        for i, run in enumerate(self.training):
            if not isinstance(run, dict) or "schedule" not in run:
                raise ConfigError(f"training[{i}] needs a schedule")
            ClusterPass.from_dict(run["schedule"])
        for i, run in enumerate(self.evaluation):
            if not isinstance(run, dict) or not ({"path", "scenario", "script"} & set(run)):
                raise ConfigError(f"evaluation[{i}] needs a path, scenario or script")

    @property
    def boundary_samples(self) -> int:
        return self.w // 2 if self.boundary is None else int(self.boundary)

    def schedules(self) -> list[ClusterPass]:
        return [ClusterPass.from_dict(run["schedule"]) for run in self.training]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = list(self.channels)
        d["class_names"] = list(self.class_names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        d = self.to_dict()
        for key, value in overrides.items():
            target = d
            parts = key.split(".")
            for p in parts[:-1]:
                if p not in target or not isinstance(target[p], dict):
                    raise ConfigError(f"unknown config key {key!r}")
                target = target[p]
            if parts[-1] not in target:
                raise ConfigError(f"unknown config key {key!r}")
            target[parts[-1]] = value
        return PipelineConfig.from_dict(d)


def braking_experiment(kind: str, seed: int, n_maneuvers: int = 7) -> list[dict]:
    """Scenario of one recorded ride: accelerate, cruise, brake, repeated.

    ``kind`` is ``"normal"`` or ``"sudden"``. Segment durations vary with
    ``seed`` so that repeated experiments differ.
    """
    if kind not in ("normal", "sudden"):
        raise ConfigError(f"unknown experiment kind {kind!r}")
    rng = np.random.default_rng(seed)

    def seg(state, lo, hi):
        return {"state": state, "duration_s": round(float(rng.uniform(lo, hi)), 2)}

    out = []
    for _ in range(n_maneuvers):
        out.append(seg("cruise", 5.5, 8.5))
        if kind == "normal":
            out.append(seg("normal", 3.0, 4.0))
        else:
            # a sudden stop is entered and left through a short normal brake
            out += [seg("normal", 0.8, 1.0), seg("sudden", 2.0, 2.6), seg("normal", 0.8, 1.0)]
    out.append(seg("cruise", 4.0, 6.0))
    return out


def braking_config(train_seed: int = 1) -> PipelineConfig:
    """Braking states trained as in the nested two-run procedure.

    Run 1 alternates cruising and normal stops and is clustered once. Run 2
    repeats sudden stops; its braking cluster is clustered again and only
    the dominant (pure sudden) part is kept, discarding the normal braking
    around each sudden stop.
    """
    training = [
        {"name": "cruise_normal", "kind": "braking", "seed": train_seed,
         "scenario": braking_experiment("normal", train_seed),
         "schedule": {"k": 2, "order": "duration", "assign": ["cruise", "normal"]}},
        {"name": "sudden", "kind": "braking", "seed": train_seed + 1000,
         "scenario": braking_experiment("sudden", train_seed + 1000),
         "schedule": {"k": 2, "order": "duration", "assign": [
             "cruise", {"k": 2, "order": "duration", "assign": ["sudden", None]}]}},
    ]
    evaluation = [
        {"name": f"{kind}_{seed}", "kind": "braking", "seed": seed,
         "scenario": braking_experiment(kind, seed)}
        for kind, base in (("normal", 100), ("sudden", 200)) for seed in range(base, base + 6)]
    return PipelineConfig(training=training, evaluation=evaluation, crc_lambda=1.0)


def random_posture_script(seed: int, length: int = 16) -> list[int]:
    """Random posture sequence without consecutive repeats."""
    rng = np.random.default_rng(seed)
    script = [int(rng.integers(5))]
    while len(script) < length:
        nxt = int(rng.integers(5))
        if nxt != script[-1]:
            script.append(nxt)
    return script


def posture_training_scripts() -> list[tuple[int, int]]:
    return [(a, b) for a in range(5) for b in range(a + 1, 5)]


def posture_config(train_seed: int = 1) -> PipelineConfig:
    """Hand postures and gestures.

    One short training run per posture pair ``a, b, a, b, a``, split into
    four clusters mapped by order of first appearance: posture ``a``, the
    gesture ``a -> b``, posture ``b``, the gesture ``b -> a``.
    """
    training = []
    for i, (a, b) in enumerate(posture_training_scripts()):
        schedule = {"k": 4, "order": "time", "assign": [
            POSTURE_NAMES[a], POSTURE_CLASSES[gesture_label(a, b)],
            POSTURE_NAMES[b], POSTURE_CLASSES[gesture_label(b, a)]]}
        training.append({"name": f"posture_{a}{b}", "kind": "posture", "seed": train_seed + i,
                         "script": [a, b, a, b, a], "schedule": schedule})
    evaluation = [{"name": f"postures_{seed}", "kind": "posture", "seed": seed,
                   "script": random_posture_script(seed)} for seed in range(500, 506)]
    return PipelineConfig(w=10, feature_mode="direct", channels=POSTURE_CHANNELS,
                          class_names=POSTURE_CLASSES, training=training,
                          evaluation=evaluation, crc_lambda=1.0)


PRESETS = {"braking": braking_config, "posture": posture_config}


def preset(name: str) -> PipelineConfig:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
