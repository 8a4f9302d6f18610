"""Model-based dual-energy CT: physics, reconstruction baselines and an unrolled network."""
from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
