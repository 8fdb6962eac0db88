from .build import build_dataset, convert, draw_rotations, load_source
from .cache import CacheError, DatasetCache, read_cache, read_header, write_cache
from .signals import (FULL_SPHERE_ERP, TANGENT_FOV, SphericalSignal, sample_batch,
                      sample_sequence, signal_from_image_fov, signal_from_image_full_sphere)
from .sources import IngestionError

__all__ = [
    "CacheError", "DatasetCache", "FULL_SPHERE_ERP", "IngestionError", "SphericalSignal",
    "TANGENT_FOV", "build_dataset", "convert", "draw_rotations", "load_source", "read_cache",
    "read_header", "sample_batch", "sample_sequence", "signal_from_image_fov",
    "signal_from_image_full_sphere", "write_cache",
]
