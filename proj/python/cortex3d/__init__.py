"""Python bindings for the cortex3d C++ core."""

from ._core import (
    ArgumentError,
    ConfigError,
    FormatError,
    IoError,
    ShapeError,
    conv3d,
    generate_phantom,
    read_report,
    read_vol,
    run,
    stack_output_shapes,
    stratified_kfold,
    write_vol,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "FormatError",
    "IoError",
    "ShapeError",
    "conv3d",
    "generate_phantom",
    "read_report",
    "read_vol",
    "run",
    "stack_output_shapes",
    "stratified_kfold",
    "write_vol",
]
