"""JSON schemas for every config file (also copied to docs/)."""
import json
from functools import lru_cache
from pathlib import Path

import jsonschema

NAMES = ("scenario", "phantom", "roi", "train")


class ConfigError(ValueError):
    """Schema violation; ``field`` is a dotted path to the offending entry ("$" for the root)."""

    def __init__(self, field, detail):
        self.field = field
        super().__init__(f"{field}: {detail}")


@lru_cache(maxsize=None)
def load_schema(name):
    return json.loads((Path(__file__).parent / f"{name}.schema.json").read_text())


def _path(err):
    parts = [str(p) for p in err.absolute_path]
    return ".".join(parts) if parts else "$"


def validate(obj, name):
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(obj), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        err = errors[0]
        raise ConfigError(_path(err), err.message)
    return obj
