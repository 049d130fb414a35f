"""Benchmark kernels that build an operand fragment from a rule instead of memory.

Each kernel has a baseline path, which writes the generated matrix to a
shared tile and loads it back, and a direct path, which writes registers
straight from the rule (``foreach_ij``) or via ``map_ij`` point writes.
Both produce identical fragments; only shared-memory traffic differs.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .mma_engine import MmaPolicy, mma_sync
from .numerics import to_f16, widen_f16
from .warp_model import (
    ElementType,
    Fragment,
    FragmentKind,
    SharedTile,
    Use,
    fill_fragment,
    foreach_ij,
    load_matrix_sync,
    map_ij,
    parallel_map,
)

FRAG = 16
# |1 - ||v||| beyond this counts as a non-unit input
UNIT_TOLERANCE = 2.0**-8


class GenPath(enum.Enum):
    BASELINE = "baseline"
    DIRECT = "direct"
    DIRECT_MAP = "direct"


def _f16(x) -> np.ndarray:
    return to_f16(np.asarray(x, dtype=np.float64))


def _wide(h) -> np.ndarray:
    return widen_f16(h).astype(np.float64)


@dataclass
class HouseholderInput:
    v: np.ndarray
    A: np.ndarray
    index: int = 0
    renormalized: bool = field(init=False, default=False)

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise ValueError("Householder vector is zero")
        self.renormalized = abs(norm - 1.0) > UNIT_TOLERANCE
        self.v = _f16(v / norm)
        self.A = _f16(self.A) if np.asarray(self.A).dtype != np.float16 else np.asarray(self.A)
        if self.A.shape[0] != self.v.shape[0]:
            raise ValueError(f"A has {self.A.shape[0]} rows, v has {self.v.shape[0]} entries")


@dataclass(frozen=True)
class GivensParams:
    i: int
    j: int
    theta: float

    def __post_init__(self):
        if self.i == self.j or self.i < 0 or self.j < 0:
            raise ValueError(f"invalid rotation plane ({self.i}, {self.j})")


def _kind(use: Use, policy: MmaPolicy) -> FragmentKind:
    return FragmentKind(use, duplication=policy.duplication)


def _grid(m: int) -> int:
    if m not in (16, 32):
        raise ValueError(f"unsupported size {m}; expected 16 or 32")
    return m // FRAG


def householder_element(vi, vj, diagonal):
    """``v_i * v_j * (-2) (+1 on the diagonal)`` with fp16 rounding per operation."""
    prod = _wide(_f16(_wide(vi) * _wide(vj)))
    elm = _wide(_f16(prod * -2.0))
    return _f16(np.where(diagonal, elm + 1.0, elm))


def householder_matrix(v) -> np.ndarray:
    """fp16 ``H = I - 2 v v^T`` evaluated with the same element rule."""
    v = np.asarray(v, dtype=np.float16)
    m = v.shape[0]
    ii, jj = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    return householder_element(v[ii], v[jj], ii == jj)


def householder_fragment(
    v, path: GenPath = GenPath.DIRECT, policy: MmaPolicy | None = None, scratch: SharedTile | None = None
) -> list[Fragment]:
    """Fragments of ``H`` as matrix_a operands, ordered ``bi + 2*bj``."""
    policy = policy or MmaPolicy()
    v = np.asarray(v, dtype=np.float16)
    g = _grid(v.shape[0])
    kind = _kind(Use.MATRIX_A, policy)
    if path is GenPath.BASELINE:
        m = v.shape[0]
        tile = scratch if scratch is not None else SharedTile(ElementType.FP16, m, m)
        tile.write_window((0, 0), householder_matrix(v))
        return [load_matrix_sync(kind, tile, (bi * FRAG, bj * FRAG)) for bj in range(g) for bi in range(g)]

    frags = [Fragment(kind) for _ in range(g * g)]

    # one traversal serves every fragment of the array
    def body(slots, i, j):
        for bj in range(g):
            for bi in range(g):
                elm = householder_element(v[i + bi * FRAG], v[j + bj * FRAG], i == j and bi == bj)
                for lane, fid in slots:
                    frags[bi + bj * g].x[lane, fid] = elm

    foreach_ij(kind, body)
    return frags


def _fragment_gemm(a_frags, b_tile: SharedTile, g: int, policy: MmaPolicy) -> np.ndarray:
    """``sum_k a[bi, bk] * B[bk, bj]`` with B loaded tile by tile; fp32 result."""
    cols = b_tile.cols
    kind_b = _kind(Use.MATRIX_B, policy)
    kind_c = _kind(Use.ACCUMULATOR, policy)
    out = np.zeros((g * FRAG, cols), np.float32)
    for bj in range(cols // FRAG):
        b_col = [load_matrix_sync(kind_b, b_tile, (bk * FRAG, bj * FRAG)) for bk in range(g)]
        for bi in range(g):
            acc = fill_fragment(kind_c, 0.0)
            for bk in range(g):
                acc = mma_sync(a_frags[bi + bk * g], b_col[bk], acc, policy)
            out[bi * FRAG : (bi + 1) * FRAG, bj * FRAG : (bj + 1) * FRAG] = acc.to_matrix()
    return out


@dataclass
class KernelRun:
    outputs: list[np.ndarray]
    generated_bytes: list[int]
    operand_bytes: list[int]


def batched_householder(
    inputs: list[HouseholderInput],
    path: GenPath = GenPath.DIRECT,
    policy: MmaPolicy | None = None,
    workers: int = 1,
) -> KernelRun:
    policy = policy or MmaPolicy()
    if not inputs:
        return KernelRun([], [], [])
    m, k = inputs[0].A.shape
    for item in inputs:
        if item.A.shape != (m, k):
            raise ValueError("all batch items must share the same (m, k)")
    if k % FRAG:
        raise ValueError(f"k = {k} is not a multiple of {FRAG}")

    def one(item: HouseholderInput):
        scratch = SharedTile(ElementType.FP16, m, m)
        frags = householder_fragment(item.v, path, policy, scratch)
        a_tile = SharedTile.from_array(item.A, ElementType.FP16)
        out = _fragment_gemm(frags, a_tile, _grid(m), policy)
        return out, scratch.traffic, a_tile.traffic

    res = parallel_map(one, inputs, workers)
    return KernelRun([r[0] for r in res], [r[1] for r in res], [r[2] for r in res])


def givens_matrix(p: GivensParams, dim: int) -> np.ndarray:
    c, s = _f16(math.cos(p.theta)), _f16(math.sin(p.theta))
    G = _f16(np.eye(dim))
    G[p.i, p.i] = c
    G[p.j, p.j] = c
    G[p.i, p.j] = -s
    G[p.j, p.i] = s
    return G


def givens_fragment(
    p: GivensParams,
    dim: int,
    path: GenPath = GenPath.DIRECT_MAP,
    policy: MmaPolicy | None = None,
    scratch: SharedTile | None = None,
) -> list[Fragment]:
    """Fragments of ``G(i, j, theta)`` as matrix_a operands, ordered ``bi + 2*bj``."""
    policy = policy or MmaPolicy()
    g = _grid(dim)
    if not (p.i < dim and p.j < dim):
        raise ValueError(f"rotation plane ({p.i}, {p.j}) outside a {dim}x{dim} matrix")
    kind = _kind(Use.MATRIX_A, policy)
    if path is GenPath.BASELINE:
        tile = scratch if scratch is not None else SharedTile(ElementType.FP16, dim, dim)
        tile.write_window((0, 0), givens_matrix(p, dim))
        return [load_matrix_sync(kind, tile, (bi * FRAG, bj * FRAG)) for bj in range(g) for bi in range(g)]

    frags = [fill_fragment(kind, 0.0) for _ in range(g * g)]
    c, s = _f16(math.cos(p.theta)), _f16(math.sin(p.theta))

    def put(r, col, value):
        frag = frags[r // FRAG + (col // FRAG) * g]
        for lane, fid in map_ij(kind, r % FRAG, col % FRAG):
            frag.x[lane, fid] = value

    one = _f16(1.0)
    for d in range(dim):
        put(d, d, c if d in (p.i, p.j) else one)
    put(p.i, p.j, -s)
    put(p.j, p.i, s)
    return frags


def batched_givens(
    As: list,
    params: list[GivensParams],
    path: GenPath = GenPath.DIRECT_MAP,
    policy: MmaPolicy | None = None,
    workers: int = 1,
) -> KernelRun:
    """``G(i, j, theta_b) A_b`` per item; the plane is shared, the angle is not."""
    policy = policy or MmaPolicy()
    if len(As) != len(params):
        raise ValueError("need one GivensParams per matrix")
    if not As:
        return KernelRun([], [], [])
    if len({(p.i, p.j) for p in params}) != 1:
        raise ValueError("the rotation plane (i, j) must be fixed across the batch")
    mats = [np.asarray(a) if np.asarray(a).dtype == np.float16 else _f16(a) for a in As]
    dim, k = mats[0].shape
    for a in mats:
        if a.shape != (dim, k):
            raise ValueError("all batch items must share the same shape")
    if k % FRAG:
        raise ValueError(f"k = {k} is not a multiple of {FRAG}")

    def one(idx):
        scratch = SharedTile(ElementType.FP16, dim, dim)
        frags = givens_fragment(params[idx], dim, path, policy, scratch)
        a_tile = SharedTile.from_array(mats[idx], ElementType.FP16)
        out = _fragment_gemm(frags, a_tile, _grid(dim), policy)
        return out, scratch.traffic, a_tile.traffic

    res = parallel_map(one, range(len(mats)), workers)
    return KernelRun([r[0] for r in res], [r[1] for r in res], [r[2] for r in res])


def upper_ones_rule(i, j):
    return 1.0 if i <= j else 0.0


@dataclass
class ScanResult:
    prefix: np.ndarray
    generated_bytes: int


def scan_via_matmul(
    a, path: GenPath = GenPath.DIRECT, policy: MmaPolicy | None = None
) -> ScanResult:
    """Inclusive prefix sum of 16 fp16 values as ``[a] * U`` on the MMA engine."""
    policy = policy or MmaPolicy()
    a = np.asarray(a) if np.asarray(a).dtype == np.float16 else _f16(a)
    if a.shape != (FRAG,):
        raise ValueError(f"scan_via_matmul takes {FRAG} values, got shape {a.shape}")
    kind_a = _kind(Use.MATRIX_A, policy)
    kind_b = _kind(Use.MATRIX_B, policy)
    kind_c = _kind(Use.ACCUMULATOR, policy)

    rows = np.zeros((FRAG, FRAG), np.float16)
    rows[0] = a
    frag_a = Fragment.from_matrix(kind_a, rows)
    generated = 0
    if path is GenPath.BASELINE:
        ii, jj = np.meshgrid(np.arange(FRAG), np.arange(FRAG), indexing="ij")
        tile = SharedTile(ElementType.FP16, FRAG, FRAG)
        tile.write_window((0, 0), (ii <= jj).astype(np.float64))
        frag_u = load_matrix_sync(kind_b, tile)
        generated = tile.traffic
    else:
        frag_u = foreach_ij(kind_b, lambda slots, i, j: upper_ones_rule(i, j))
    d = mma_sync(frag_a, frag_u, fill_fragment(kind_c, 0.0), policy)
    return ScanResult(d.to_matrix()[0].copy(), generated)


def givens_roundtrip_residual(A, p: GivensParams) -> float:
    """max |G(theta) G(-theta) A - A| in binary64 on the fp16-rounded rotations."""
    A64 = _wide(np.asarray(A, dtype=np.float16))
    dim = A64.shape[0]
    G = _wide(givens_matrix(p, dim))
    G_inv = _wide(givens_matrix(GivensParams(p.i, p.j, -p.theta), dim))
    return float(np.max(np.abs(G @ (G_inv @ A64) - A64)))


def householder_orthogonality(v) -> float:
    """max |H H - I| in binary64 for the fp16 ``H`` built from ``v``."""
    H = _wide(householder_matrix(v))
    return float(np.max(np.abs(H @ H - np.eye(H.shape[0]))))

