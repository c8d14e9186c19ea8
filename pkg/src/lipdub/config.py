"""Pipeline configuration: one JSON file, every tunable constant under a named key.

Defaults live in ``lipdub/data/default_config.json``. A user config is merged
over the defaults section by section; unknown keys are errors rather than
silently ignored typos.
"""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

from .core import ALIGNMENT_LANDMARKS, CROP_SIZE, FPS_RANGE, SAMPLE_RATE
from .audio import FEATURE_RATE, N_MELS
from .errors import BundleError, ValidationError
from .masking import RectMask
from .metrics import LossWeights

# Values the feature extractor and bundle format hard-wire; a config may restate them but not change them.
FIXED = {
    ("geometry", "crop_size"): CROP_SIZE,
    ("audio", "sample_rate"): SAMPLE_RATE,
    ("audio", "n_mels"): N_MELS,
    ("audio", "feature_rate"): FEATURE_RATE,
    ("quality", "min_fps"): FPS_RANGE[0],
    ("quality", "max_fps"): FPS_RANGE[1],
}


def default_config() -> dict:
    text = resources.files("lipdub").joinpath("data", "default_config.json").read_text()
    return json.loads(text)


def _merge(base: dict, update: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ValidationError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def _check(cfg: dict) -> None:
    for (section, key), value in FIXED.items():
        if cfg[section][key] != value:
            raise ValidationError(f"{section}.{key} is fixed at {value}, got {cfg[section][key]!r}")
    RectMask(*cfg["mask"]["rect"])
    LossWeights(**cfg["losses"])
    if cfg["audio"]["feature_kind"] not in ("logmel", "mfcc"):
        raise ValidationError(f"audio.feature_kind must be logmel or mfcc, got {cfg['audio']['feature_kind']!r}")
    if cfg["audio"]["window_frames"] < 2 or cfg["audio"]["window_frames"] % 2:
        raise ValidationError("audio.window_frames must be a positive even number")
    if cfg["references"]["k"] < 1:
        raise ValidationError("references.k must be >= 1")
    ch = cfg["chunking"]
    if ch["max_chunk"] < 1 or ch["buffer"] < 0 or ch["request_block"] < 1:
        raise ValidationError("chunking.max_chunk and request_block must be >= 1, buffer >= 0")
    if cfg["jobs"] < 1:
        raise ValidationError("jobs must be >= 1")
    names = cfg["geometry"]["alignment_landmarks"]
    if not set(names) <= set(ALIGNMENT_LANDMARKS) or len(set(names)) < 3:
        raise ValidationError(f"geometry.alignment_landmarks must name at least 3 of {list(ALIGNMENT_LANDMARKS)}")


def make_config(overrides: dict | None = None) -> dict:
    cfg = _merge(default_config(), overrides or {})
    _check(cfg)
    return cfg


def load_config(path) -> dict:
    """Read a JSON config and merge it over the defaults. Relative paths resolve against the file."""
    p = Path(path)
    try:
        raw = json.loads(p.read_text())
    except OSError as exc:
        raise BundleError(f"cannot read config {p}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {p} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"config {p} must hold a JSON object")
    cfg = make_config(raw)
    for key in ("input", "output", "report"):
        if cfg[key] is not None and not Path(cfg[key]).is_absolute():
            cfg[key] = str(p.parent / cfg[key])
    return cfg
