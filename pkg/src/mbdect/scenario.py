"""JSON scenario files describing a dual-energy scan.

Schema (``schemas/scenario.schema.json``)::

    {"geometry": {"n_angles": 96, "n_det": 96, "det_spacing_cm": 0.1,
                  "n_x": 64, "n_y": 64, "pixel_size_cm": 0.1},
     "spectra": {"low": "spectrum_90kVp.csv", "high": "spectrum_140kVp.csv"},
     "materials": ["water.csv", "bone.csv"],
     "fluence_scale": 1.0}

Table paths are resolved against the scenario file's directory first, then the
data directory (``DECT_DATA_DIR`` or the shipped tables).
"""
import json
from pathlib import Path

from .forward_model import ScanModel
from .physics import data_dir, load_material, load_spectrum
from .projector import Geometry
from .schemas import ConfigError
from .schemas import validate as validate_config

DEFAULT_SCENARIO = {
    "geometry": Geometry().to_json(),
    "spectra": {"low": "spectrum_90kVp.csv", "high": "spectrum_140kVp.csv"},
    "materials": ["water.csv", "bone.csv"],
    "fluence_scale": 1.0,
}


ScenarioError = ConfigError


def _resolve(name, base):
    p = Path(name)
    if p.is_absolute():
        return p
    if base is not None and (base / p).exists():
        return base / p
    return data_dir() / p


def validate(obj):
    return validate_config(obj, "scenario")


def scan_model_from_dict(obj, base_dir=None):
    validate(obj)
    base = Path(base_dir) if base_dir is not None else None
    geom = Geometry.from_json(obj["geometry"])
    scale = float(obj.get("fluence_scale", 1.0))
    low = load_spectrum(_resolve(obj["spectra"]["low"], base), "L").scaled(scale)
    high = load_spectrum(_resolve(obj["spectra"]["high"], base), "H").scaled(scale)
    mats = tuple(load_material(_resolve(p, base)) for p in obj["materials"])
    return ScanModel(geom, (low, high), mats)


def load_scenario(path):
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError("$", f"invalid JSON: {exc}") from None
    return scan_model_from_dict(obj, path.parent), obj


def default_model(geometry=None, fluence_scale=1.0):
    obj = dict(DEFAULT_SCENARIO)
    if geometry is not None:
        obj["geometry"] = geometry.to_json()
    obj["fluence_scale"] = fluence_scale
    return scan_model_from_dict(obj)
