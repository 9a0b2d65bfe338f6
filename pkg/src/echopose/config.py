"""Run configuration: one flat namespace for every tunable.

Values come from (lowest to highest precedence) dataclass defaults, a flat
`key = value` config file, and CLI flags. Lists are comma-separated in both
the file and on the command line.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .features import DEFAULT_BANDS, DEFAULT_HOP, DEFAULT_N_FFT


@dataclass
class RunConfig:
    # excitation
    sample_rate: int = 16000
    period_len: int = 600
    f_lo: float = 100.0
    f_hi: float = 7600.0
    # features
    n_fft: int = DEFAULT_N_FFT
    hop: int = DEFAULT_HOP
    bands: int = DEFAULT_BANDS
    mel_lo: float = 100.0
    mel_hi: float = 7600.0
    # model window and losses
    n: int = 8
    k: int = 16
    w_alpha: float = 1.0
    w_beta: float = 10.0
    w_gamma: float = 1.0
    # training
    lr: float = 1e-3
    disc_lr: float = 1e-3
    batch_size: int = 48
    epochs: int = 3
    clip_norm: float = 5.0
    seed: int = 0
    alphas: tuple[float, ...] = (1.0 / 3.0, 2.0 / 3.0)
    # scene
    room: tuple[float, ...] = (7.0, 9.0, 3.0)
    speaker: tuple[float, ...] = (2.0, 4.5, 1.2)
    mic: tuple[float, ...] = (5.0, 4.5, 1.2)
    wall_reflectance: float = 0.3
    scatter_gain: float = 0.5
    occlusion_radius: float = 0.15
    occlusion_strength: float = 2.0
    noise_snr_db: float = 20.0
    # corpus
    subjects: int = 5
    distances: tuple[float, ...] = (0.0, 25.0, 50.0, 75.0, 100.0)
    duration: float = 60.0
    script: tuple[str, ...] = ("walking", "squatting", "bowing", "standing", "t_pose")

    @property
    def fps(self) -> float:
        return self.sample_rate / self.period_len

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(field_obj, raw: str):
    text = raw.strip()
    if field_obj.type.startswith("tuple"):
        if "str" in field_obj.type:
            return tuple(s.strip() for s in text.split(",") if s.strip())
        return tuple(float(s) for s in text.split(",") if s.strip())
    if field_obj.type == "int":
        return int(text)
    if field_obj.type == "float":
        return float(text)
    return text


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional file plus explicit overrides."""
    cfg = RunConfig()
    by_name = {f.name: f for f in fields(RunConfig)}
    if path is not None:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in by_name:
                    raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
                setattr(cfg, key, _coerce(by_name[key], value))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _coerce(by_name[key], value)
        setattr(cfg, key, value)
    return cfg
