"""Line-oriented ``key = value`` configuration with sections.

Every numeric default of the toolkit lives in DEFAULTS, so a dumped config
file fully declares an experiment.  Unknown sections or keys are rejected;
values are coerced to the type of the default they override.
"""

from __future__ import annotations

import configparser
import copy

from .errors import ParameterError

DEFAULTS = {
    "audio": {
        "sample_rate": 16000,
        "synth_peak": 0.9,
        "synth_min_snr_db": 40.0,
    },
    "stft": {
        "frame_ms": 25.0,
        "hop_ms": 10.0,
        "n_fft": 1024,
        "window": "hamming",
        "log_eps": 1e-10,
    },
    "mgd": {
        "rho": 0.2,
        "lambda": 0.7,
        "lifter_len": 30,
    },
    "cqt": {
        "hop": 128,
        "n_octaves": 9,
        "bins_per_octave": 96,
    },
    "shaping": {
        "n_frames": 500,
    },
    "replay_distance_a": {"gain": 0.85, "decay_s": 0.09, "drr_db": 20.0},
    "replay_distance_b": {"gain": 0.60, "decay_s": 0.18, "drr_db": 11.0},
    "replay_distance_c": {"gain": 0.40, "decay_s": 0.35, "drr_db": 4.0},
    "replay_quality_a": {"low_hz": 50.0, "high_hz": 7800.0, "drive": 0.02, "noise_rms": 2.5e-3},
    "replay_quality_b": {"low_hz": 150.0, "high_hz": 5500.0, "drive": 0.8, "noise_rms": 5e-3},
    "replay_quality_c": {"low_hz": 300.0, "high_hz": 3400.0, "drive": 2.5, "noise_rms": 1.2e-2},
    "model": {
        "block_counts": "3,4,6,3",
        "base_channels": 16,
        "fc_width": 32,
        "scale": 4,
    },
    "train": {
        "lr": 3e-4,
        "beta1": 0.9,
        "beta2": 0.999,
        "weight_decay": 5e-5,
        "plateau_patience": 3,
        "plateau_factor": 0.1,
        "batch_size": 16,
        "max_epochs": 10,
        "seed": 0,
        "gamma": 2.0,
        "alpha": "auto",
    },
    "tdcf": {
        "pi_tar": 0.9405,
        "pi_non": 0.0095,
        "pi_spoof": 0.05,
        "c_miss_cm": 1.0,
        "c_fa_cm": 10.0,
        "c_miss_asv": 1.0,
        "c_fa_asv": 10.0,
        "p_miss_asv": 0.01,
        "p_fa_asv": 0.01,
        "p_miss_spoof_asv": 0.05,
    },
}


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def load_config(path=None) -> dict:
    """Defaults overridden by an INI-style file (if given)."""
    cfg = default_config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(str(path))
    if not read:
        raise ParameterError(f"config file {path} not found or unreadable")
    for section in parser.sections():
        if section not in cfg:
            raise ParameterError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in cfg[section]:
                raise ParameterError(f"unknown config key {key!r} in [{section}]")
            default = cfg[section][key]
            try:
                if isinstance(default, bool):
                    cfg[section][key] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    cfg[section][key] = int(raw)
                elif isinstance(default, float):
                    cfg[section][key] = float(raw)
                else:
                    cfg[section][key] = raw.strip()
            except ValueError as exc:
                raise ParameterError(f"bad value for {section}.{key}: {raw!r}") from exc
    return cfg


def dump_config(cfg: dict) -> str:
    lines = []
    for section, values in cfg.items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
