"""Dataset ingestion, preprocessing, formats and the synthetic scan generator."""

from .core import (
    DEFAULT_FRAME_RATE,
    DEFAULT_STRIDE,
    DEFAULT_WINDOW,
    FRAME_POINTS,
    DatasetError,
    MotionSample,
    PointSequence,
    RawFrame,
    RawRecording,
    center_frame,
    load_dataset,
    read_raw_recording,
    recording_to_sample,
    resample_frame,
    window_sequences,
    write_dataset,
)
from .formats import DataFormatError, read_mot, read_ptc, write_mot, write_ptc
from .raycast import RaycastError, angular_grid, cast_first_hits, numba_enabled, scan_mesh
from .synth import (
    SynthConfig,
    SynthError,
    distance_sweep_config,
    gait_theta,
    random_theta,
    synth_generate,
    synth_generate_raw,
)

__all__ = [
    "DEFAULT_FRAME_RATE",
    "DEFAULT_STRIDE",
    "DEFAULT_WINDOW",
    "FRAME_POINTS",
    "DataFormatError",
    "DatasetError",
    "MotionSample",
    "PointSequence",
    "RawFrame",
    "RawRecording",
    "RaycastError",
    "SynthConfig",
    "SynthError",
    "angular_grid",
    "cast_first_hits",
    "center_frame",
    "gait_theta",
    "load_dataset",
    "numba_enabled",
    "read_mot",
    "read_ptc",
    "random_theta",
    "read_raw_recording",
    "recording_to_sample",
    "resample_frame",
    "scan_mesh",
    "distance_sweep_config",
    "synth_generate",
    "synth_generate_raw",
    "window_sequences",
    "write_dataset",
    "write_ptc",
    "write_mot",
]
