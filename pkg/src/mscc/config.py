"""Run configuration: defaults, plain-text ``key = value`` files, flag
overrides, and the MSCC_SEED environment fallback."""

import os
from dataclasses import dataclass, fields

from .crf import CrfParams


@dataclass
class Config:
    image_size: int = 256
    patch_size: int = 8
    pixel_lr: float = 1.5e-4
    pixel_epochs: int = 50
    pixel_batch: int = 4
    patch_lr: float = 1.0e-4
    patch_epochs: int = 15
    patch_batch: int = 32
    width_scale: float = 1.0
    threshold: float = 0.5
    criterion: float = 0.5
    crf_w1: float = 10.0
    crf_w2: float = 3.0
    crf_sigma_alpha: float = 60.0
    crf_sigma_beta: float = 0.078
    crf_sigma_gamma: float = 3.0
    crf_iterations: int = 10
    crf_confidence: float = 0.9
    crf_method: str = "auto"
    buffer_radius: int = 26
    sweep_lo: int = 2
    sweep_hi: int = 40
    sweep_step: int = 2
    synth_area_lo: float = 0.05
    synth_area_hi: float = 0.60
    seed: int = 0

    def __post_init__(self):
        if self.image_size % 16:
            raise ValueError(f"image_size must be divisible by 16, got {self.image_size}")
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image_size {self.image_size} must be divisible by "
                f"patch_size {self.patch_size}")

    def crf_params(self):
        return CrfParams(
            w1=self.crf_w1, w2=self.crf_w2,
            sigma_alpha=self.crf_sigma_alpha, sigma_beta=self.crf_sigma_beta,
            sigma_gamma=self.crf_sigma_gamma,
            num_iterations=self.crf_iterations)

    def sweep_radii(self):
        return tuple(range(self.sweep_lo, self.sweep_hi + 1, self.sweep_step))


def _coerce(name, kind, raw):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(f"config key {name}: cannot parse {raw!r} as {kind.__name__}")


def parse_config_file(path):
    """``key = value`` lines; '#' starts a comment; unknown keys rejected."""
    by_name = {"int": int, "float": float, "str": str}
    known = {}
    for f in fields(Config):
        known[f.name] = by_name[f.type] if isinstance(f.type, str) else f.type
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = _coerce(key, known[key], val)
    return out


def resolve_seed(flag_seed=None, file_values=None):
    """Priority: --seed flag, then the config file, then MSCC_SEED, then 0."""
    if flag_seed is not None:
        return int(flag_seed)
    if file_values and "seed" in file_values:
        return int(file_values["seed"])
    env = os.environ.get("MSCC_SEED")
    if env is not None:
        return int(env)
    return 0


def load_config(path=None, overrides=None, flag_seed=None):
    values = parse_config_file(path) if path else {}
    seed = resolve_seed(flag_seed, values)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    values["seed"] = seed
    return Config(**values)
