"""Power side-channel extraction of DNN architectures from in-memory computing tiles.

Configuration is passed as ``key=value`` override strings, the same keys the
``imcsca`` command line accepts.
"""

from ._imcsca import (
    AttackError,
    ConfigError,
    Error,
    MappingError,
    ShapeError,
    SimulationError,
    TraceFormatError,
    attack,
    compare,
    config_keys,
    format_config,
    inject,
    lenet,
    normalize_network,
    read_trace,
    sar_energy_by_code,
    simulate,
    tiles_per_layer,
)

__all__ = [
    "AttackError",
    "ConfigError",
    "Error",
    "MappingError",
    "ShapeError",
    "SimulationError",
    "TraceFormatError",
    "attack",
    "compare",
    "config_keys",
    "format_config",
    "inject",
    "lenet",
    "normalize_network",
    "read_trace",
    "sar_energy_by_code",
    "simulate",
    "tiles_per_layer",
]
