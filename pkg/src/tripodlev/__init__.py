"""Tripod optical levitation of a mirror on three Fabry-Perot optical springs."""

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
