"""Construction, filtering, compression and analysis of sequence-similarity graphs."""
from .graph import CscGraph, PartitionScheme, RenumberMap, block_of

__version__ = "0.1.0"

__all__ = ["CscGraph", "PartitionScheme", "RenumberMap", "block_of", "__version__"]
