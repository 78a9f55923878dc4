"""Graph compression: gamma-coded streams with Elias-Fano offset indexes."""
from .container import CompressedGraph, chunk_bounds, compress, decompress_stream, neighbors
from .eliasfano import EliasFanoIndex, ef_access, ef_build, ef_select_scan_check

__all__ = [
    "CompressedGraph", "EliasFanoIndex", "chunk_bounds", "compress", "decompress_stream",
    "ef_access", "ef_build", "ef_select_scan_check", "neighbors",
]
