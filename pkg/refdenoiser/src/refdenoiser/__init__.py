from .service import (
    PROTOCOL_VERSION,
    ServiceConfig,
    Session,
    Target,
    load_targets,
    main,
    parse_mixture,
)

__version__ = "0.1.0"

__all__ = [
    "PROTOCOL_VERSION",
    "ServiceConfig",
    "Session",
    "Target",
    "load_targets",
    "main",
    "parse_mixture",
    "__version__",
]
