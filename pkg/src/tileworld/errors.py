"""Exception types shared across the engine."""


class TileWorldError(Exception):
    """Base class for engine errors."""


class BoundsError(TileWorldError):
    """A tile or coordinate falls outside the world lattice."""


class ShapeError(TileWorldError):
    """Array shapes disagree with the declared contract."""


class CoverageError(TileWorldError):
    """A layout leaves at least one voxel uncovered."""


class CapabilityError(TileWorldError):
    """A denoiser was asked for something its capabilities rule out."""


class ConditionError(TileWorldError):
    """A condition string has no configured target."""


class NonFiniteError(TileWorldError):
    """A denoiser produced NaN or infinity."""


class ProtocolError(TileWorldError):
    """Remote denoiser spoke the wire protocol incorrectly."""


class TransportError(TileWorldError):
    """Remote denoiser connection failed mid-run."""


class FormatError(TileWorldError):
    """A container or point-cloud file is malformed."""
