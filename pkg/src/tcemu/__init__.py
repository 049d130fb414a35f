"""Software model of warp-level Tensor-Core fragments, an fp16 MMA engine,
error-corrected single-precision GEMM on top of it, and the shared-memory
roofline that motivates loading split fragments directly."""

from .mma_engine import Instruction, MmaPolicy, gemm_oracle_f64, gemm_ref_f32, mma_sync
from .numerics import Half, RoundingMode, SplitPair, add_f32, f16_to_f32, f32_to_f16, reconstruct, split_f32
from .tcec import (
    LoadPath,
    TcecPair,
    TcecPolicy,
    blocked_batched_gemm,
    max_relative_error,
    normalized_max_error,
    tcec_gemm,
    tcec_load,
    tcec_mma,
    tcec_store,
)
from .warp_model import (
    Duplication,
    ElementType,
    Fragment,
    FragmentKind,
    Layout,
    SharedTile,
    Use,
    canonical_mapping,
    dump_mapping,
    fill_fragment,
    foreach_ij,
    load_matrix_sync,
    map_ij,
    mapping_scheme,
    store_matrix_sync,
)

__version__ = "0.1.0"

__all__ = [
    "Instruction",
    "MmaPolicy",
    "gemm_oracle_f64",
    "gemm_ref_f32",
    "mma_sync",
    "Half",
    "RoundingMode",
    "SplitPair",
    "add_f32",
    "f16_to_f32",
    "f32_to_f16",
    "reconstruct",
    "split_f32",
    "LoadPath",
    "TcecPair",
    "TcecPolicy",
    "blocked_batched_gemm",
    "max_relative_error",
    "normalized_max_error",
    "tcec_gemm",
    "tcec_load",
    "tcec_mma",
    "tcec_store",
    "Duplication",
    "ElementType",
    "Fragment",
    "FragmentKind",
    "Layout",
    "SharedTile",
    "Use",
    "canonical_mapping",
    "dump_mapping",
    "fill_fragment",
    "foreach_ij",
    "load_matrix_sync",
    "map_ij",
    "mapping_scheme",
    "store_matrix_sync",
]
