"""Run configuration: flat ``key = value`` text files with desk and paper presets."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .channel_sim import ArrayConfig, Scenario
from .denoiser.config import PRESETS, NetConfig


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    out_dir: str = "apeg_out"
    # scenario
    alice_jack_distance: float = 0.2
    eve_radius: float = 10.0
    num_eves: int = 5
    attack_ratio: float = 0.5
    num_paths: int = 5
    velocity: tuple[float, ...] = (0.5, 0.0, 0.0)
    noise_shared: bool = True
    eve_shares_scatterers: bool = False
    # array
    tx_antennas: int = 8
    rx_antennas: int = 8
    subcarriers: int = 32
    carrier_freq: float = 28e9
    # data
    num_samples: int = 12000
    train_fraction: float = 0.9
    shuffle_split: bool = False
    snr_db: float = 20.0
    # normalisation
    norm_joint: bool = True
    norm_clip: bool = True
    # diffusion
    T: int = 200
    # linear 1e-4..0.02 rescaled by 1000/T so that alpha_bar_T is ~0 at T=200
    beta_start: float = 5e-4
    beta_end: float = 0.1
    strict_paper: bool = False
    # training
    train_limit: int = 2000  # use the first N training pairs; 0 = all
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    dropout: float = 0.1
    sample_batch: int = 512
    # authentication / evaluation
    metrics: tuple[str, ...] = ("ssim", "psnr", "cosine", "nmse", "euclidean")
    auth_window: int = 0  # s; 0 = the whole test stream
    snr_list: tuple[float, ...] = (5.0, 10.0, 15.0, 20.0)
    eval_variants: tuple[str, ...] = ("ccmdm", "cadm", "ca", "oracle")

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.num_samples < 2:
            raise ConfigError("num_samples must be >= 2")
        if self.epochs < 0 or self.batch_size < 1 or self.T < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1 and T >= 1 required")
        if self.auth_window < 0 or self.train_limit < 0:
            raise ConfigError("auth_window and train_limit must be >= 0")
        from .auth import MetricKind
        try:
            for m in self.metrics:
                MetricKind.parse(m)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for v in self.eval_variants:
            if v not in ("ccmdm", "cadm", "ca", "oracle"):
                raise ConfigError(f"unknown variant {v!r}")
        try:
            self.scenario()
            self.array()
            self.net_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # derived objects ---------------------------------------------------------
    def scenario(self) -> Scenario:
        return Scenario(alice_jack_distance=self.alice_jack_distance, eve_radius=self.eve_radius,
                        num_eves=self.num_eves, attack_ratio=self.attack_ratio, num_paths=self.num_paths,
                        velocity=self.velocity, noise_shared=self.noise_shared,
                        eve_shares_scatterers=self.eve_shares_scatterers, rng_seed=self.seed)

    def array(self) -> ArrayConfig:
        return ArrayConfig(tx_antennas=self.tx_antennas, rx_antennas=self.rx_antennas,
                           subcarriers=self.subcarriers, carrier_freq=self.carrier_freq)

    def net_config(self) -> NetConfig:
        return PRESETS[self.preset](dropout=self.dropout)

    @property
    def num_train(self) -> int:
        return int(round(self.train_fraction * self.num_samples))

    @property
    def num_test(self) -> int:
        return self.num_samples - self.num_train

    # text form ---------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        pairs = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            pairs[key] = value
        return cls.from_pairs(pairs, base)

    @classmethod
    def from_pairs(cls, pairs: dict, base: "RunConfig | None" = None) -> "RunConfig":
        preset = pairs.get("preset", base.preset if base else "desk")
        start = base if base is not None and base.preset == preset else preset_config(preset)
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for key, text in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            default = getattr(start, key)
            try:
                if isinstance(default, bool):
                    values[key] = _bool(text)
                elif isinstance(default, int):
                    values[key] = int(text)
                elif isinstance(default, float):
                    values[key] = float(text)
                elif key in ("velocity", "snr_list"):
                    values[key] = _floats(text)
                elif isinstance(default, tuple):
                    values[key] = _strs(text)
                else:
                    values[key] = text
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        return dataclasses.replace(start, **values)

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path, base: "RunConfig | None" = None) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, base)


def preset_config(name: str) -> RunConfig:
    if name == "desk":
        return RunConfig()
    if name == "paper":
        return RunConfig(preset="paper", train_limit=0, T=1000, beta_start=1e-4, beta_end=0.02, epochs=1600, batch_size=128, lr=1e-4)
    if name == "tiny":
        return RunConfig(preset="tiny", num_samples=200, T=20, epochs=2, batch_size=16, dropout=0.0)
    raise ConfigError(f"unknown preset {name!r}")
