"""Single-precision GEMM emulated on the fp16 MMA engine with error correction.

Each fp32 operand ``X`` is carried as a pair of fp16 fragments: ``hi =
fp16(X)`` and ``delta = fp16((X - hi) * 2**11)``.  One corrected step is

    D = C + (A_hi B_hi + (dA B_hi + A_hi dB) / 2**11)

with the three products taken on the MMA engine from a zero accumulator and
the combination done in binary32 round-to-nearest outside it, so the
engine's truncating accumulator only ever sees one k-slice.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .mma_engine import MmaPolicy, mma_matrices, mma_sync
from .numerics import SPLIT_SCALE, split_f32_array
from .warp_model import (
    ElementType,
    Fragment,
    FragmentKind,
    MappingError,
    SharedTile,
    Use,
    fill_fragment,
    fragment_from_rule,
    load_matrix_sync,
    parallel_map,
    store_matrix_sync,
)

MMA_K = 16
_INV_SCALE = np.float32(1.0 / SPLIT_SCALE)


class LoadPath(enum.Enum):
    DIRECT = "direct"
    STAGED = "staged"


@dataclass
class TcecPair:
    hi: Fragment
    delta: Fragment
    overflow: bool = False

    def __post_init__(self):
        if self.hi.kind != self.delta.kind:
            raise MappingError("hi and delta fragments must share a kind")

    @property
    def kind(self) -> FragmentKind:
        return self.hi.kind


@dataclass(frozen=True)
class TcecPolicy:
    correction: bool = True
    mma: MmaPolicy = field(default_factory=MmaPolicy)


def tcec_load(
    kind: FragmentKind,
    tile: SharedTile,
    origin: tuple[int, int] = (0, 0),
    ld: int | None = None,
    via: LoadPath = LoadPath.DIRECT,
    scratch: SharedTile | None = None,
) -> TcecPair:
    """Load an fp32 window as a (hi, delta) fragment pair.

    ``DIRECT`` reads each fp32 element once and builds both fragments from
    the split values without touching shared memory again.  ``STAGED`` is
    what plain WMMA forces: write hi and delta as fp16 tiles to ``scratch``
    (``rows x 2*cols`` fp16, allocated when omitted) and load them back.
    """
    if ld is not None and ld != tile.ld:
        raise ValueError(f"ld {ld} does not match the tile's leading dimension {tile.ld}")
    if tile.element_type is not ElementType.FP32:
        raise TypeError("tcec_load reads fp32 memory")
    if kind.element_type is not ElementType.FP16:
        raise TypeError("tcec fragments are fp16")
    rows, cols = kind.shape
    window = tile.read_window(origin, (rows, cols))
    hi, delta, overflow = split_f32_array(window)

    if via is LoadPath.DIRECT:
        hi_frag = fragment_from_rule(kind, lambda i, j: hi[i, j])
        delta_frag = fragment_from_rule(kind, lambda i, j: delta[i, j])
    else:
        if scratch is None:
            scratch = SharedTile(ElementType.FP16, rows, 2 * cols)
        scratch.write_window((0, 0), hi)
        scratch.write_window((0, cols), delta)
        hi_frag = load_matrix_sync(kind, scratch, (0, 0))
        delta_frag = load_matrix_sync(kind, scratch, (0, cols))
    return TcecPair(hi_frag, delta_frag, bool(np.any(overflow)))


def combine(c: np.ndarray, p1: np.ndarray, p2: np.ndarray, p3: np.ndarray) -> np.ndarray:
    """``c + (p1 + (p2 + p3) / 2**11)`` in binary32 nearest-even, fixed order."""
    corr = (p2 + p3) * _INV_SCALE
    return (c + (p1 + corr)).astype(np.float32)


def tcec_mma(a: TcecPair, b: TcecPair, c: Fragment, policy: TcecPolicy | None = None) -> Fragment:
    policy = policy or TcecPolicy()
    if not policy.correction:
        return mma_sync(a.hi, b.hi, c, policy.mma)
    zero = fill_fragment(c.kind, 0.0)
    p1 = mma_sync(a.hi, b.hi, zero, policy.mma).to_matrix()
    p2 = mma_sync(a.delta, b.hi, zero, policy.mma).to_matrix()
    p3 = mma_sync(a.hi, b.delta, zero, policy.mma).to_matrix()
    return Fragment.from_matrix(c.kind, combine(c.to_matrix(), p1, p2, p3))


def tcec_store(tile: SharedTile, frag: Fragment, origin: tuple[int, int] = (0, 0), ld: int | None = None) -> None:
    if frag.kind.element_type is not ElementType.FP32:
        raise TypeError("tcec_store writes fp32 accumulators")
    store_matrix_sync(tile, frag, origin, ld)


def tcec_gemm(A, B, C=None, policy: TcecPolicy | None = None) -> np.ndarray:
    """Whole-matrix form of the corrected GEMM, no tiling.

    ``k`` is consumed in MMA-instruction slices of 16 in ascending order,
    the same per-element operation sequence the blocked driver performs.
    Leading batch axes are allowed.
    """
    policy = policy or TcecPolicy()
    A = np.asarray(A, dtype=np.float32)
    B = np.asarray(B, dtype=np.float32)
    K = A.shape[-1]
    if B.shape[-2] != K:
        raise ValueError(f"inner dimensions differ: {A.shape} x {B.shape}")
    if K % MMA_K:
        raise ValueError(f"k = {K} is not a multiple of {MMA_K}")
    out = np.broadcast_shapes(A.shape[:-2], B.shape[:-2]) + (A.shape[-2], B.shape[-1])
    acc = np.zeros(out, np.float32) if C is None else np.array(C, dtype=np.float32)
    a_hi, a_lo, _ = split_f32_array(A)
    b_hi, b_lo, _ = split_f32_array(B)
    rnd = policy.mma.accumulator_rounding
    zero = np.zeros(out, np.float32)
    for t in range(0, K, MMA_K):
        s = slice(t, t + MMA_K)
        ah, bh = a_hi[..., :, s], b_hi[..., s, :]
        if not policy.correction:
            acc = mma_matrices(ah, bh, acc, rnd)
            continue
        p1 = mma_matrices(ah, bh, zero, rnd)
        p2 = mma_matrices(a_lo[..., :, s], bh, zero, rnd)
        p3 = mma_matrices(ah, b_lo[..., s, :], zero, rnd)
        acc = combine(acc, p1, p2, p3)
    return acc


# ---------------------------------------------------------------------------
# blocked batched driver


@dataclass
class TrafficTally:
    """Bytes moved per memory tier during one blocked GEMM."""

    global_to_shared: int = 0
    shared_to_register: int = 0
    register_to_global: int = 0

    def __add__(self, other: "TrafficTally") -> "TrafficTally":
        return TrafficTally(
            self.global_to_shared + other.global_to_shared,
            self.shared_to_register + other.shared_to_register,
            self.register_to_global + other.register_to_global,
        )

    def as_dict(self) -> dict[str, int]:
        return {
            "global_to_shared": self.global_to_shared,
            "shared_to_register": self.shared_to_register,
            "register_to_global": self.register_to_global,
        }


@dataclass
class BlockedGemmResult:
    matrices: list[np.ndarray]
    traffic: TrafficTally
    per_item_traffic: list[TrafficTally]
    overflow: bool = False


def _check_blocking(M, N, K, blocking, reg_blocking):
    mb, nb, kb = blocking
    mr, nr, kr = reg_blocking
    for name, dim, blk in (("m", M, mb), ("n", N, nb), ("k", K, kb)):
        if blk <= 0 or dim % blk:
            raise ValueError(f"{name} = {dim} is not divisible by shared blocking {blk}")
    for name, blk, reg in (("m", mb, mr), ("n", nb, nr), ("k", kb, kr)):
        if reg <= 0 or blk % reg:
            raise ValueError(f"register blocking {reg} does not divide shared blocking {blk} ({name})")
        if reg % MMA_K:
            raise ValueError(f"register blocking {reg} is not a multiple of the fragment size {MMA_K}")


def _blocked_one(A, B, C, blocking, reg_blocking, policy: TcecPolicy, via: LoadPath):
    M, K = A.shape
    N = B.shape[1]
    mb, nb, kb = blocking
    mr, nr, kr = reg_blocking
    f = MMA_K
    dup = policy.mma.duplication
    kind_a = FragmentKind(Use.MATRIX_A, duplication=dup)
    kind_b = FragmentKind(Use.MATRIX_B, duplication=dup)
    kind_c = FragmentKind(Use.ACCUMULATOR, duplication=dup)

    D = np.zeros((M, N), np.float32)
    tally = TrafficTally()
    overflow = False
    for bm in range(0, M, mb):
        for bn in range(0, N, nb):
            acc = {}
            for fi in range(mb // f):
                for fj in range(nb // f):
                    if C is None:
                        acc[fi, fj] = fill_fragment(kind_c, 0.0)
                    else:
                        block = C[bm + fi * f : bm + (fi + 1) * f, bn + fj * f : bn + (fj + 1) * f]
                        acc[fi, fj] = Fragment.from_matrix(kind_c, block)
            a_tile = SharedTile(ElementType.FP32, mb, kb)
            b_tile = SharedTile(ElementType.FP32, kb, nb)
            a_scratch = SharedTile(ElementType.FP16, f, 2 * f)
            b_scratch = SharedTile(ElementType.FP16, f, 2 * f)
            for bk in range(0, K, kb):
                a_tile.write_window((0, 0), A[bm : bm + mb, bk : bk + kb])
                b_tile.write_window((0, 0), B[bk : bk + kb, bn : bn + nb])
                for rm in range(0, mb, mr):
                    for rn in range(0, nb, nr):
                        for rk in range(0, kb, kr):
                            a_regs = {
                                (fi, fk): tcec_load(kind_a, a_tile, (rm + fi * f, rk + fk * f), via=via, scratch=a_scratch)
                                for fi in range(mr // f)
                                for fk in range(kr // f)
                            }
                            b_regs = {
                                (fk, fj): tcec_load(kind_b, b_tile, (rk + fk * f, rn + fj * f), via=via, scratch=b_scratch)
                                for fk in range(kr // f)
                                for fj in range(nr // f)
                            }
                            overflow |= any(p.overflow for p in a_regs.values())
                            overflow |= any(p.overflow for p in b_regs.values())
                            for fk in range(kr // f):
                                for fi in range(mr // f):
                                    for fj in range(nr // f):
                                        key = ((rm // f) + fi, (rn // f) + fj)
                                        acc[key] = tcec_mma(a_regs[fi, fk], b_regs[fk, fj], acc[key], policy)
            for (fi, fj), frag in acc.items():
                D[bm + fi * f : bm + (fi + 1) * f, bn + fj * f : bn + (fj + 1) * f] = frag.to_matrix()
                tally.register_to_global += f * f * 4
            tally.global_to_shared += a_tile.bytes_written + b_tile.bytes_written
            tally.shared_to_register += (
                a_tile.bytes_read + b_tile.bytes_read + a_scratch.traffic + b_scratch.traffic
            )
    return D, tally, overflow


def blocked_batched_gemm(
    batch_a,
    batch_b,
    blocking: tuple[int, int, int] = (128, 128, 32),
    reg_blocking: tuple[int, int, int] = (32, 32, 32),
    policy: TcecPolicy | None = None,
    via: LoadPath = LoadPath.DIRECT,
    batch_c=None,
    workers: int = 1,
) -> BlockedGemmResult:
    """Three-tier blocked GEMM over a batch of independent problems.

    Global memory is the input arrays, each ``blocking`` block is copied into
    a :class:`SharedTile`, and each ``reg_blocking`` step loads fragment
    pairs from it.  Accumulator fragments for the whole shared block stay
    resident across the k loop.
    """
    policy = policy or TcecPolicy()
    items_a = [np.asarray(a, dtype=np.float32) for a in batch_a]
    items_b = [np.asarray(b, dtype=np.float32) for b in batch_b]
    if len(items_a) != len(items_b):
        raise ValueError("batch sizes of A and B differ")
    items_c = [None] * len(items_a) if batch_c is None else [np.asarray(c, np.float32) for c in batch_c]
    for a, b, c in zip(items_a, items_b, items_c):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ValueError(f"shape mismatch: {a.shape} x {b.shape}")
        if c is not None and c.shape != (a.shape[0], b.shape[1]):
            raise ValueError(f"C has shape {c.shape}")
        _check_blocking(a.shape[0], b.shape[1], a.shape[1], blocking, reg_blocking)

    def run(idx):
        return _blocked_one(items_a[idx], items_b[idx], items_c[idx], blocking, reg_blocking, policy, via)

    results = parallel_map(run, range(len(items_a)), workers)
    total = TrafficTally()
    for _, t, _ in results:
        total = total + t
    return BlockedGemmResult(
        matrices=[d for d, _, _ in results],
        traffic=total,
        per_item_traffic=[t for _, t, _ in results],
        overflow=any(o for _, _, o in results),
    )


# ---------------------------------------------------------------------------
# accuracy metrics


@dataclass(frozen=True)
class ErrorReport:
    max_relative: float
    normalized_max: float
    zero_reference_entries: int
    max_abs_at_zero_reference: float


def _prepare(C, C_ref):
    C = np.asarray(C, dtype=np.float64)
    C_ref = np.asarray(C_ref, dtype=np.float64)
    if C.shape != C_ref.shape:
        raise ValueError(f"shape mismatch: {C.shape} vs {C_ref.shape}")
    if C_ref.size == 0:
        raise ValueError("empty reference")
    if not np.any(C_ref):
        raise ValueError("reference is identically zero")
    return C, C_ref


def error_report(C, C_ref) -> ErrorReport:
    C, C_ref = _prepare(C, C_ref)
    diff = np.abs(C - C_ref)
    nz = C_ref != 0
    return ErrorReport(
        max_relative=float(np.max(diff[nz] / np.abs(C_ref[nz]))),
        normalized_max=float(np.max(diff) / np.max(np.abs(C_ref))),
        zero_reference_entries=int(np.count_nonzero(~nz)),
        max_abs_at_zero_reference=float(np.max(diff[~nz])) if np.any(~nz) else 0.0,
    )


def max_relative_error(C, C_ref) -> float:
    """max |c - ref| / |ref| over entries with a nonzero reference."""
    return error_report(C, C_ref).max_relative


def normalized_max_error(C, C_ref) -> float:
    return error_report(C, C_ref).normalized_max
