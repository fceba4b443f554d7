"""Shipped per-scene gate presets for the public relocalization benchmarks.

Keys pair a scene with the pose predictor the thresholds were tuned for.
Indoor scenes (7Scenes) want position thresholds of 0.1-0.3 m, outdoor
scenes (Cambridge Landmarks) 1-2 m. The match-count thresholds sit near the
maximum far-pair match count of each training set; re-run the tuner when
using a different feature extractor. Old Hospital uses a stricter 0.5 ratio
test because the facade is full of repetitive, symmetric structure.
"""

from __future__ import annotations

from dataclasses import dataclass

from .features import MatcherConfig
from .gate import GateConfig


@dataclass(frozen=True)
class GatePreset:
    scene: str
    predictor: str
    d_th: float
    gamma: int
    ratio: float = 0.7

    def gate_config(self) -> GateConfig:
        return GateConfig(self.d_th, self.gamma, matcher=MatcherConfig(ratio=self.ratio))


PRESETS: tuple[GatePreset, ...] = (
    GatePreset("7scenes/chess", "dfnet", 0.15, 30),
    GatePreset("7scenes/chess", "dfnet_dm", 0.15, 30),
    GatePreset("7scenes/fire", "dfnet", 0.30, 40),
    GatePreset("7scenes/fire", "dfnet_dm", 0.30, 40),
    GatePreset("7scenes/heads", "dfnet", 0.20, 30),
    GatePreset("7scenes/heads", "dfnet_dm", 0.20, 30),
    GatePreset("7scenes/office", "dfnet", 0.20, 30),
    GatePreset("7scenes/office", "dfnet_dm", 0.25, 20),
    GatePreset("7scenes/pumpkin", "dfnet", 0.20, 40),
    GatePreset("7scenes/pumpkin", "dfnet_dm", 0.20, 20),
    GatePreset("7scenes/stairs", "dfnet", 0.20, 20),
    GatePreset("7scenes/stairs", "dfnet_dm", 0.25, 20),
    GatePreset("cambridge/kings", "ms_transformer", 1.5, 25),
    GatePreset("cambridge/kings", "dfnet_dm", 2.0, 30),
    GatePreset("cambridge/hospital", "ms_transformer", 1.5, 15, ratio=0.5),
    GatePreset("cambridge/hospital", "dfnet_dm", 2.0, 15, ratio=0.5),
    GatePreset("cambridge/shop", "ms_transformer", 1.5, 20),
    GatePreset("cambridge/shop", "dfnet_dm", 1.5, 20),
    GatePreset("cambridge/church", "ms_transformer", 1.5, 30),
    GatePreset("cambridge/church", "dfnet_dm", 1.5, 30),
)

_BY_KEY = {(preset.scene, preset.predictor): preset for preset in PRESETS}


def find_preset(scene: str, predictor: str) -> GatePreset:
    """Look up a shipped preset; raises KeyError for unknown combinations."""
    try:
        return _BY_KEY[(scene, predictor)]
    except KeyError:
        raise KeyError(f"no preset for scene={scene!r} predictor={predictor!r}") from None
