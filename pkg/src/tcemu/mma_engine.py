"""Emulated Tensor-Core ``D = A*B + C`` and the two reference GEMMs.

Model assumptions: fp16 operands, binary32 accumulator with no wider hidden
register, one rounding per accumulation step under the policy's mode, and
products folded into the accumulator in ascending ``k`` order.  A product of
two binary16 values is exact in binary32 so only the additions round.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .numerics import RoundingMode, _add_f32_raw, widen_f16
from .warp_model import Duplication, ElementType, Fragment, MappingError, Use


class Instruction(enum.Enum):
    WMMA = "wmma"
    MMA = "mma"


@dataclass(frozen=True)
class MmaPolicy:
    instruction: Instruction = Instruction.MMA
    accumulator_rounding: RoundingMode = RoundingMode.TOWARD_ZERO

    @property
    def duplication(self) -> Duplication:
        return Duplication.DUAL if self.instruction is Instruction.WMMA else Duplication.SINGLE


def mma_matrices(a16: np.ndarray, b16: np.ndarray, c32: np.ndarray, rounding: RoundingMode) -> np.ndarray:
    """Matrix-level MMA on float16 storage arrays; leading batch axes broadcast."""
    a = widen_f16(a16)
    b = widen_f16(b16)
    acc = np.array(c32, dtype=np.float32, copy=True)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(a.shape[-1]):
            prod = a[..., :, t, None] * b[..., None, t, :]
            acc = _add_f32_raw(acc, prod, rounding)
    return acc


def mma_sync(a: Fragment, b: Fragment, c: Fragment, policy: MmaPolicy | None = None) -> Fragment:
    policy = policy or MmaPolicy()
    ka, kb, kc = a.kind, b.kind, c.kind
    if (ka.use, kb.use, kc.use) != (Use.MATRIX_A, Use.MATRIX_B, Use.ACCUMULATOR):
        raise MappingError("mma_sync expects (matrix_a, matrix_b, accumulator) fragments")
    if kc.element_type is not ElementType.FP32:
        raise MappingError("only the fp32 accumulator path is modelled")
    (m, k), (k2, n), (m2, n2) = ka.shape, kb.shape, kc.shape
    if k != k2 or m != m2 or n != n2:
        raise MappingError(f"shape mismatch: A {ka.shape}, B {kb.shape}, C {kc.shape}")
    dup = policy.duplication
    for kind in (ka, kb, kc):
        if kind.duplication is not dup:
            raise MappingError(
                f"{policy.instruction.value} policy needs {dup.name.lower()} fragments"
            )
    d = mma_matrices(a.to_matrix(), b.to_matrix(), c.to_matrix(), policy.accumulator_rounding)
    return Fragment.from_matrix(kc, d)


def _check_gemm_shapes(A, B, C):
    if A.shape[-1] != B.shape[-2]:
        raise ValueError(f"inner dimensions differ: {A.shape} x {B.shape}")
    out = A.shape[:-1] + B.shape[-1:]
    if C is not None and np.shape(C) != out:
        raise ValueError(f"C has shape {np.shape(C)}, expected {out}")
    return out


def gemm_ref_f32(A, B, C=None) -> np.ndarray:
    """Plain binary32 GEMM: round each product, then each addition, ascending k."""
    A = np.asarray(A, dtype=np.float32)
    B = np.asarray(B, dtype=np.float32)
    out = _check_gemm_shapes(A, B, C)
    acc = np.zeros(out, np.float32) if C is None else np.array(C, dtype=np.float32)
    for t in range(A.shape[-1]):
        acc = acc + A[..., :, t, None] * B[..., None, t, :]
    return acc


def gemm_oracle_f64(A, B, C=None) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    out = _check_gemm_shapes(A, B, C)
    D = A @ B
    if C is not None:
        D = D + np.asarray(C, dtype=np.float64)
    return D.reshape(out)
