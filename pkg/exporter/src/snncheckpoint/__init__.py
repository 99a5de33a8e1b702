"""Torch-to-portable checkpoint exporter.

Writes the manifest.json + weights.bin directory format consumed by the
spikeforge conversion toolkit, without importing it: the file format is
the only contract between the two packages.
"""

from .export import (ExportError, ExportPlan, UnsupportedLayerError,
                     build_arch, export, plan_from_module)

__all__ = [
    "ExportError",
    "ExportPlan",
    "UnsupportedLayerError",
    "build_arch",
    "export",
    "plan_from_module",
]

__version__ = "0.1.0"
