"""File formats: PMAP pointmaps, ALN alignment results and PLY exports."""

from .aln import decode_aln, encode_aln, read_aln, write_aln
from .common import ParseError, atomic_write
from .pmap import PmapData, decode_pmap, encode_pmap, read_pair, read_pmap, write_pair, write_pmap
from .ply import collect_points, encode_ply, export_ply, read_ply

__all__ = [
    "ParseError",
    "PmapData",
    "atomic_write",
    "collect_points",
    "decode_aln",
    "decode_pmap",
    "encode_aln",
    "encode_pmap",
    "encode_ply",
    "export_ply",
    "read_aln",
    "read_pair",
    "read_ply",
    "read_pmap",
    "write_aln",
    "write_pair",
    "write_pmap",
]
