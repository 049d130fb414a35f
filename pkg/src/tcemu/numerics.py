"""Binary16 conversions, rounding-controlled binary32 addition, and the
hi/delta split used by the error-corrected GEMM.

Every conversion into binary16 is done by this module's own rounding code on
bit patterns and exact binary64 intermediates.  numpy's ``float16`` dtype is
only used as a storage container (``.view``), never for arithmetic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

F16_MAX = 65504.0
F16_MIN_NORMAL = 2.0**-14
F16_MIN_SUBNORMAL = 2.0**-24
F32_MAX = float(np.finfo(np.float32).max)

# scale applied to the residual before it is rounded to binary16
SPLIT_SCALE = 2.0**11


class RoundingMode(enum.Enum):
    NEAREST_EVEN = "rn"
    TOWARD_ZERO = "rz"

    @classmethod
    def parse(cls, text: str) -> "RoundingMode":
        key = text.strip().lower().replace("-", "_")
        aliases = {
            "rn": cls.NEAREST_EVEN,
            "rne": cls.NEAREST_EVEN,
            "nearest": cls.NEAREST_EVEN,
            "nearest_even": cls.NEAREST_EVEN,
            "rz": cls.TOWARD_ZERO,
            "rtz": cls.TOWARD_ZERO,
            "toward_zero": cls.TOWARD_ZERO,
        }
        if key not in aliases:
            raise ValueError(f"unknown rounding mode {text!r}")
        return aliases[key]


# ---------------------------------------------------------------------------
# array kernels


def round_to_f16_bits(x, mode: RoundingMode = RoundingMode.NEAREST_EVEN) -> np.ndarray:
    """Round binary64 values to binary16 and return the uint16 bit patterns.

    Binary32 inputs are widened exactly first.  NaN inputs map to the
    canonical quiet NaN; use :func:`f32_to_f16_bits` to keep binary32 NaN
    payloads.
    """
    x = np.asarray(x, dtype=np.float64)
    sign = np.signbit(x).astype(np.uint16) << np.uint16(15)
    a = np.abs(x)
    finite = np.isfinite(a)
    a_fin = np.where(finite, a, 0.0)

    # quantum of the binary16 grid at each magnitude
    _, e = np.frexp(a_fin)
    q_exp = np.maximum(e - 11, -24)
    s = np.ldexp(a_fin, -q_exp)
    n = np.floor(s)
    frac = s - n
    if mode is RoundingMode.NEAREST_EVEN:
        up = (frac > 0.5) | ((frac == 0.5) & (np.fmod(n, 2.0) == 1.0))
        n = n + up
    r = np.ldexp(n, q_exp)

    overflow = r > F16_MAX
    if mode is RoundingMode.TOWARD_ZERO:
        r = np.where(overflow, F16_MAX, r)
        overflow = np.zeros_like(overflow)

    bits = _encode_exact_f16(np.where(overflow, 0.0, r))
    bits = np.where(overflow, np.uint16(0x7C00), bits)
    bits = np.where(np.isinf(a), np.uint16(0x7C00), bits)
    bits = np.where(np.isnan(a), np.uint16(0x7E00), bits)
    return (bits.astype(np.uint16) | sign).astype(np.uint16)


def _encode_exact_f16(r: np.ndarray) -> np.ndarray:
    # r: non-negative, finite, exactly representable in binary16
    subnormal = r < F16_MIN_NORMAL
    mant_sub = np.ldexp(r, 24).astype(np.int64)
    m, e = np.frexp(np.where(subnormal, 1.0, r))
    exp_field = (e - 1 + 15).astype(np.int64)
    mant = ((m * 2.0 - 1.0) * 1024.0).astype(np.int64)
    bits = np.where(subnormal, mant_sub, (exp_field << 10) | mant)
    return bits.astype(np.uint16)


def f32_to_f16_bits(x, mode: RoundingMode = RoundingMode.NEAREST_EVEN) -> np.ndarray:
    """Convert binary32 values to binary16 bit patterns under ``mode``."""
    x32 = np.asarray(x, dtype=np.float32)
    with np.errstate(invalid="ignore"):
        wide = x32.astype(np.float64)
    bits = round_to_f16_bits(wide, mode)
    nan = np.isnan(x32)
    if np.any(nan):
        u = x32.view(np.uint32)
        payload = ((u >> np.uint32(13)) & np.uint32(0x3FF)).astype(np.uint16)
        payload = np.where(payload == 0, np.uint16(0x200), payload)
        nan_bits = ((u >> np.uint32(16)) & np.uint32(0x8000)).astype(np.uint16)
        nan_bits = nan_bits | np.uint16(0x7C00) | payload
        bits = np.where(nan, nan_bits, bits).astype(np.uint16)
    return bits


def f16_bits_to_f32(bits) -> np.ndarray:
    """Exact widening of binary16 bit patterns to binary32."""
    b = np.asarray(bits, dtype=np.uint16).astype(np.uint32)
    sign = (b & 0x8000) << 16
    exp = (b >> 10) & 0x1F
    mant = b & 0x3FF

    normal_bits = sign | ((exp + (127 - 15)) << 23) | (mant << 13)
    special_bits = sign | np.uint32(0x7F800000) | (mant << 13)
    out = np.where(exp == 0x1F, special_bits, normal_bits).astype(np.uint32).view(np.float32)

    sub_val = np.ldexp(mant.astype(np.float64), -24)
    sub_val = np.where(sign != 0, -sub_val, sub_val).astype(np.float32)
    return np.where(exp == 0, sub_val, out).astype(np.float32)


def to_f16(x, mode: RoundingMode = RoundingMode.NEAREST_EVEN) -> np.ndarray:
    """Round to binary16 and return a ``float16`` storage array."""
    return round_to_f16_bits(x, mode).view(np.float16)


def widen_f16(h) -> np.ndarray:
    """``float16`` storage array -> exact ``float32`` values."""
    h = np.asarray(h, dtype=np.float16)
    return f16_bits_to_f32(h.view(np.uint16))


def add_f32_array(a, b, mode: RoundingMode) -> np.ndarray:
    """Elementwise binary32 ``a + b`` rounded under ``mode``.

    Round-toward-zero is derived from the nearest-even sum and its exact
    error term (two-sum): when the nearest-even result overshot the exact sum
    in magnitude it is stepped one ulp back toward zero.
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    with np.errstate(over="ignore", invalid="ignore"):
        return _add_f32_raw(a, b, mode)


def _add_f32_raw(a: np.ndarray, b: np.ndarray, mode: RoundingMode) -> np.ndarray:
    # float32 operands; caller owns the errstate
    s = a + b
    if mode is RoundingMode.NEAREST_EVEN:
        return s
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    overshoot = (err != 0) & ((err < 0) != (s < 0))
    if overshoot.any():
        s = np.where(overshoot & np.isfinite(s), np.nextafter(s, np.float32(0)), s)
    inf = np.isinf(s)
    if inf.any():
        # a finite sum never truncates to infinity
        blown = inf & np.isfinite(a) & np.isfinite(b)
        s = np.where(blown, np.copysign(np.float32(F32_MAX), s), s)
    return s


def split_f32_array(x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split binary32 values into (hi, delta) binary16 storage arrays.

    ``hi = fp16(x)`` and ``delta = fp16((x - fp32(hi)) * 2**11)``, both
    nearest-even.  Returns ``(hi, delta, overflow)``; entries with
    ``|x| > 65504`` are flagged, get ``hi = ±inf`` and a signed-zero delta.
    """
    x = np.asarray(x, dtype=np.float32)
    hi_bits = f32_to_f16_bits(x)
    hi32 = f16_bits_to_f32(hi_bits)
    with np.errstate(invalid="ignore", over="ignore"):
        residual = (x - hi32) * np.float32(SPLIT_SCALE)
    delta_bits = f32_to_f16_bits(residual)

    overflow = np.isfinite(x) & (np.abs(x) > F16_MAX)
    sign = np.signbit(x)
    signed_inf = np.where(sign, np.uint16(0xFC00), np.uint16(0x7C00))
    signed_zero = np.where(sign, np.uint16(0x8000), np.uint16(0x0000))
    hi_bits = np.where(overflow, signed_inf, hi_bits).astype(np.uint16)
    zero_res = (residual == 0) | overflow | ~np.isfinite(x)
    delta_bits = np.where(zero_res, signed_zero, delta_bits).astype(np.uint16)
    return hi_bits.view(np.float16), delta_bits.view(np.float16), overflow


def reconstruct_array(hi, delta) -> np.ndarray:
    hi32 = widen_f16(hi)
    lo32 = widen_f16(delta) * np.float32(1.0 / SPLIT_SCALE)
    return (hi32 + lo32).astype(np.float32)


# ---------------------------------------------------------------------------
# scalar surface


@dataclass(frozen=True)
class Half:
    """A binary16 value held as its 16-bit pattern."""

    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise ValueError(f"not a 16-bit pattern: {self.bits:#x}")

    @classmethod
    def from_float(cls, x: float, mode: RoundingMode = RoundingMode.NEAREST_EVEN) -> "Half":
        return f32_to_f16(x, mode)

    @property
    def sign(self) -> int:
        return self.bits >> 15

    @property
    def exponent(self) -> int:
        return (self.bits >> 10) & 0x1F

    @property
    def significand(self) -> int:
        return self.bits & 0x3FF

    def is_nan(self) -> bool:
        return self.exponent == 0x1F and self.significand != 0

    def is_inf(self) -> bool:
        return self.exponent == 0x1F and self.significand == 0

    def __float__(self) -> float:
        return float(f16_to_f32(self))

    def __repr__(self) -> str:
        return f"Half({float(self)!r}, bits={self.bits:#06x})"


@dataclass(frozen=True)
class SplitPair:
    hi: Half
    delta: Half
    overflow: bool = False


def f32_to_f16(x: float, mode: RoundingMode = RoundingMode.NEAREST_EVEN) -> Half:
    return Half(int(f32_to_f16_bits(np.float32(x), mode)))


def f16_to_f32(h: Half) -> np.float32:
    return f16_bits_to_f32(np.uint16(h.bits))[()]


def split_f32(x: float) -> SplitPair:
    hi, delta, overflow = split_f32_array(np.float32(x))
    return SplitPair(
        Half(int(hi.view(np.uint16))),
        Half(int(delta.view(np.uint16))),
        bool(overflow),
    )


def reconstruct(p: SplitPair) -> np.float32:
    hi = np.uint16(p.hi.bits).view(np.float16)
    delta = np.uint16(p.delta.bits).view(np.float16)
    return reconstruct_array(hi, delta)[()]


def add_f32(a: float, b: float, mode: RoundingMode) -> np.float32:
    return add_f32_array(np.float32(a), np.float32(b), mode)[()]
