"""Roofline, register-budget and shared-memory traffic model.

Everything here is against the *shared-memory* tier: the question is how
many bytes the register blocking pulls out of shared memory per flop, and
whether the shared bandwidth or the Tensor-Core peak caps the kernel.
Closed forms return :class:`fractions.Fraction` so they can be checked
exactly.

Units: bandwidth in GB/s, throughput in TFlop/s, intensity in Flop/B.
"""

from __future__ import annotations

import dataclasses
import enum
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .mma_engine import Instruction

WARP_SIZE = 32
FP16_BYTES = 2
FP32_BYTES = 4


@dataclass(frozen=True)
class HardwareSpec:
    name: str
    sm_count: int
    clock_mhz: float
    dram_bw_gb_s: float
    shared_bw_gb_s: float
    fp32_tflops: float
    fp16_tflops: float
    fp16_tc_tflops: float
    tf32_tc_tflops: float | None = None
    max_regs_per_thread: int = 255
    spill_threshold: int = 256

    def __post_init__(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "name" or value is None:
                continue
            if value <= 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        if self.shared_bw_gb_s <= self.dram_bw_gb_s:
            raise ValueError("shared-memory bandwidth must exceed device-memory bandwidth")


PRESETS: dict[str, HardwareSpec] = {
    "v100": HardwareSpec("v100", 80, 1380.0, 900.0, 14131.0, 15.7, 31.4, 112.0),
    "v100s": HardwareSpec("v100s", 80, 1597.0, 1134.0, 16353.0, 16.4, 32.8, 125.0),
    "a100": HardwareSpec("a100", 108, 1410.0, 1555.0, 19491.0, 19.5, 39.0, 312.0, 156.0),
    "a100-80gb": HardwareSpec("a100-80gb", 108, 1410.0, 2039.0, 19491.0, 19.5, 39.0, 312.0, 156.0),
}
PRESETS["v100-sxm2"] = PRESETS["v100"]
PRESETS["v100s-pcie"] = PRESETS["v100s"]

_INT_FIELDS = {"sm_count", "max_regs_per_thread", "spill_threshold"}
_FIELD_NAMES = {f.name for f in dataclasses.fields(HardwareSpec)}


def parse_spec_file(path: str | os.PathLike) -> HardwareSpec:
    """Read ``key = value`` lines (``#`` comments).

    Keys are :class:`HardwareSpec` field names.  ``base = <preset>`` starts
    from a preset and overrides only the keys given.
    """
    values: dict[str, object] = {}
    base = None
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "base":
            base = value.lower()
        elif key == "name":
            values[key] = value
        elif key in _FIELD_NAMES:
            values[key] = int(value) if key in _INT_FIELDS else float(value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    if base is not None:
        if base not in PRESETS:
            raise ValueError(f"{path}: unknown base preset {base!r}")
        merged = dataclasses.asdict(PRESETS[base])
        merged.update(values)
        values = merged
    values.setdefault("name", Path(path).stem)
    try:
        return HardwareSpec(**values)
    except TypeError as exc:
        raise ValueError(f"{path}: incomplete spec ({exc})") from None


def load_spec(name_or_path: str) -> HardwareSpec:
    """Resolve a preset name, a spec file, or ``<name>.cfg`` in ``TCEMU_SPEC_DIR``."""
    key = name_or_path.lower()
    spec_dir = os.environ.get("TCEMU_SPEC_DIR")
    if spec_dir:
        for suffix in (".cfg", ".spec", ".txt"):
            candidate = Path(spec_dir) / f"{name_or_path}{suffix}"
            if candidate.is_file():
                return parse_spec_file(candidate)
    if key in PRESETS:
        return PRESETS[key]
    if Path(name_or_path).is_file():
        return parse_spec_file(name_or_path)
    raise ValueError(f"unknown hardware spec {name_or_path!r} (presets: {', '.join(sorted(PRESETS))})")


# ---------------------------------------------------------------------------
# closed forms


def _check_n(n: int):
    if n < 1:
        raise ValueError(f"blocking size must be >= 1, got {n}")


def ai_simple(n: int) -> Fraction:
    """Simple-MMA intensity, n/5.

    The byte count written out term by term (fp16 A, B plus fp32 C, D) is
    12n^2, which would give n/6.  n/5 is the contracted value and the one
    the rest of the model is calibrated against.
    """
    _check_n(n)
    return Fraction(n, 5)


def regs_simple(n: int) -> Fraction:
    """32-bit registers per thread for fp16 A, B and a shared fp32 C/D, no duplication."""
    _check_n(n)
    return Fraction(n * n + n * n, 2 * WARP_SIZE) + Fraction(n * n, WARP_SIZE)


class TcecTraffic(enum.Enum):
    WMMA_ONLY = "wmma-only"
    WMMAE = "wmmae"


def tcec_step_bytes(n: int, traffic: TcecTraffic) -> int:
    """Shared bytes per (n,n,n) register step for the A and B input sides.

    Direct loading reads each fp32 input once.  Plain WMMA also writes the
    fp16 hi and delta tiles and reads them back, tripling it.
    """
    _check_n(n)
    direct = 2 * FP32_BYTES * n * n
    return direct if traffic is TcecTraffic.WMMAE else 3 * direct


def ai_tcec(n: int, traffic: TcecTraffic) -> Fraction:
    return Fraction(2 * n**3, tcec_step_bytes(n, traffic))


def tcec_peak(spec: HardwareSpec) -> float:
    """Three fp16 Tensor-Core products per corrected product."""
    return spec.fp16_tc_tflops / 3


def regs_tcec(n: int, instruction: Instruction | str = Instruction.MMA) -> Fraction:
    """Registers for A_hi, dA, B_hi, dB (fp16) plus separate fp32 C and D fragments.

    ``wmma`` keeps two copies of every fp16 operand element.
    """
    _check_n(n)
    instruction = Instruction(instruction.lower()) if isinstance(instruction, str) else instruction
    fp16_regs = Fraction(4 * n * n, 2)
    if instruction is Instruction.WMMA:
        fp16_regs *= 2
    return (fp16_regs + 2 * n * n) / WARP_SIZE


def predicted_input_traffic(
    m: int, n: int, k: int, reg_blocking: tuple[int, int, int], staged: bool
) -> int:
    """Shared->register bytes the blocked driver should move for one m x n x k product."""
    mr, nr, kr = reg_blocking
    steps = (m // mr) * (n // nr) * (k // kr)
    per_step = FP32_BYTES * (mr * kr + kr * nr)
    return steps * per_step * (3 if staged else 1)


def predicted_fill_traffic(m: int, n: int, k: int, blocking: tuple[int, int, int]) -> int:
    """Global->shared bytes: every shared block of A and B written once."""
    mb, nb, kb = blocking
    steps = (m // mb) * (n // nb) * (k // kb)
    return steps * FP32_BYTES * (mb * kb + kb * nb)


# ---------------------------------------------------------------------------
# roofline


class Binding(enum.Enum):
    MEMORY = "memory"
    COMPUTE = "compute"


@dataclass(frozen=True)
class RooflineResult:
    ai: float
    bw_bound_tflops: float
    compute_bound_tflops: float
    attained_tflops: float
    binding: Binding
    ridge_ai: float


def roofline(ai, spec: HardwareSpec, peak_tflops: float | None = None) -> RooflineResult:
    """Shared-memory roofline: ``min(ai * shared_bw, peak)``."""
    peak = spec.fp16_tc_tflops if peak_tflops is None else peak_tflops
    ai = float(ai)
    if ai < 0 or peak <= 0:
        raise ValueError("intensity must be >= 0 and peak > 0")
    bw_bound = ai * spec.shared_bw_gb_s / 1000.0
    if bw_bound < peak:
        attained, binding = bw_bound, Binding.MEMORY
    else:
        attained, binding = peak, Binding.COMPUTE
    return RooflineResult(
        ai=ai,
        bw_bound_tflops=bw_bound,
        compute_bound_tflops=peak,
        attained_tflops=attained,
        binding=binding,
        ridge_ai=peak * 1000.0 / spec.shared_bw_gb_s,
    )


@dataclass(frozen=True)
class TrafficCheck:
    tier: str
    measured: int
    predicted: int
    relative_deviation: float
    passed: bool


def traffic_model_check(measured: dict[str, int], predicted: dict[str, int]) -> list[TrafficCheck]:
    """Compare emulator byte counters with the analytic model, tier by tier; exact match required."""
    if set(measured) != set(predicted):
        raise ValueError(f"tiers differ: {sorted(measured)} vs {sorted(predicted)}")
    report = []
    for tier in sorted(measured):
        got, want = int(measured[tier]), int(predicted[tier])
        if want == 0:
            dev = 0.0 if got == 0 else float("inf")
        else:
            dev = abs(got - want) / want
        report.append(TrafficCheck(tier, got, want, dev, got == want))
    return report
