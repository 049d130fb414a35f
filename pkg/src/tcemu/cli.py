"""Command-line front end: ``tcemu {roofline,accuracy,mapping,bench}``.

Every command writes a table (CSV with a header row, or JSON with one object
per row) to ``--out`` (default stdout).  Output depends only on the flags
and ``--seed``; no wall-clock numbers are reported.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import perf_model as pm
from .mma_engine import Instruction, MmaPolicy, gemm_oracle_f64, gemm_ref_f32
from .numerics import RoundingMode
from .structured_kernels import (
    GenPath,
    GivensParams,
    HouseholderInput,
    batched_givens,
    batched_householder,
    givens_matrix,
    householder_matrix,
    scan_via_matmul,
)
from .tcec import LoadPath, TcecPolicy, blocked_batched_gemm, error_report
from .warp_model import Duplication, FragmentKind, Layout, Use, dump_mapping


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    spec: str = "a100"
    model: str = "simple"
    n_range: list[int] = field(default_factory=list)
    dims: tuple[int, int, int] = (256, 256, 256)
    blocking: tuple[int, int, int] = (128, 128, 32)
    reg_blocking: tuple[int, int, int] = (32, 32, 32)
    batch: int = 8
    seed: int = 42
    methods: tuple[str, ...] = ("tcec", "fp16-plain", "fp32-simt")
    instruction: str = "mma"
    rounding: str = "rz"
    path: str = "direct"
    fmt: str = "csv"
    out: str = "-"
    workers: int = 1

    def validate(self) -> None:
        if self.batch < 1:
            raise UsageError("--batch must be >= 1")
        if self.fmt not in ("csv", "json"):
            raise UsageError("--format must be csv or json")
        if any(d < 1 for d in self.dims):
            raise UsageError("matrix dimensions must be >= 1")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")

    @property
    def mma_policy(self) -> MmaPolicy:
        return MmaPolicy(Instruction(self.instruction), RoundingMode.parse(self.rounding))


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_n_range(text: str) -> list[int]:
    """``32``, ``16..128`` or ``16..128:16`` (inclusive)."""
    try:
        if ".." in text:
            lo, rest = text.split("..", 1)
            hi, _, step = rest.partition(":")
            values = list(range(int(lo), int(hi) + 1, int(step) if step else 1))
        else:
            values = [int(text)]
    except ValueError:
        raise UsageError(f"bad --n value {text!r}; expected N, A..B or A..B:STEP") from None
    if not values or min(values) < 1:
        raise UsageError(f"--n must select blocking sizes >= 1, got {text!r}")
    return values


def parse_triple(text: str, flag: str) -> tuple[int, int, int]:
    parts = text.split(",")
    try:
        triple = tuple(int(p) for p in parts)
    except ValueError:
        triple = ()
    if len(triple) != 3 or min(triple) < 1:
        raise UsageError(f"{flag} expects three positive integers 'm,n,k', got {text!r}")
    return triple


def _fmt(value):
    if isinstance(value, float):
        return round(value, 9)
    return value


def render(rows: list[dict], fmt: str) -> str:
    rows = [{k: _fmt(v) for k, v in row.items()} for row in rows]
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


MODELS = ("simple", "tcec-wmma-only", "tcec-wmmae")


def cmd_roofline(cfg: RunConfig) -> list[dict]:
    if cfg.model not in MODELS:
        raise UsageError(f"unknown model {cfg.model!r}; choose from {', '.join(MODELS)}")
    try:
        spec = pm.load_spec(cfg.spec)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None
    rows = []
    for n in cfg.n_range:
        if cfg.model == "simple":
            ai = pm.ai_simple(n)
            peak = spec.fp16_tc_tflops
            regs = pm.regs_simple(n)
        else:
            traffic = pm.TcecTraffic.WMMA_ONLY if cfg.model == "tcec-wmma-only" else pm.TcecTraffic.WMMAE
            ai = pm.ai_tcec(n, traffic)
            peak = pm.tcec_peak(spec)
            regs = pm.regs_tcec(n, cfg.instruction)
        r = pm.roofline(ai, spec, peak)
        rows.append(
            {
                "spec": spec.name,
                "model": cfg.model,
                "n": n,
                "ai": float(ai),
                "bw_bound_tflops": r.bw_bound_tflops,
                "compute_bound_tflops": r.compute_bound_tflops,
                "attained_tflops": r.attained_tflops,
                "binding": r.binding.value,
                "ridge_ai": r.ridge_ai,
                "regs": float(regs),
                "spills": bool(regs >= spec.spill_threshold),
            }
        )
    return rows


def make_gemm_inputs(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    m, n, k = cfg.dims
    rng = np.random.default_rng(cfg.seed)
    A = rng.uniform(-1.0, 1.0, (cfg.batch, m, k)).astype(np.float32)
    B = rng.uniform(-1.0, 1.0, (cfg.batch, k, n)).astype(np.float32)
    return A, B


def cmd_accuracy(cfg: RunConfig) -> list[dict]:
    m, n, k = cfg.dims
    A, B = make_gemm_inputs(cfg)
    oracle = gemm_oracle_f64(A, B)
    via = LoadPath(cfg.path)
    rows = []
    for method in cfg.methods:
        traffic = None
        overflow = False
        if method == "fp32-simt":
            C = gemm_ref_f32(A, B)
        elif method in ("tcec", "fp16-plain"):
            policy = TcecPolicy(method == "tcec", cfg.mma_policy)
            try:
                run = blocked_batched_gemm(A, B, cfg.blocking, cfg.reg_blocking, policy, via, workers=cfg.workers)
            except ValueError as exc:
                raise UsageError(str(exc)) from None
            C = np.stack(run.matrices)
            traffic = run.traffic
            overflow = run.overflow
        else:
            raise UsageError(f"unknown method {method!r}")
        err = error_report(C, oracle)
        rows.append(
            {
                "method": method,
                "m": m,
                "n": n,
                "k": k,
                "batch": cfg.batch,
                "seed": cfg.seed,
                "path": cfg.path if traffic else "",
                "max_relative_error": err.max_relative,
                "normalized_max_error": err.normalized_max,
                "zero_reference_entries": err.zero_reference_entries,
                "global_to_shared_bytes": traffic.global_to_shared if traffic else 0,
                "shared_to_register_bytes": traffic.shared_to_register if traffic else 0,
                "overflow": overflow,
            }
        )
    return rows


def cmd_mapping(kind: FragmentKind) -> str:
    return dump_mapping(kind)


def cmd_bench(
    cfg: RunConfig, kernel: str, size: int, plane: tuple[int, int], theta: float | None = None
) -> list[dict]:
    if kernel not in ("householder", "givens", "scan"):
        raise UsageError(f"unknown kernel {kernel!r}")
    if kernel == "scan":
        if size != 16:
            raise UsageError("scan works on one 16-wide fragment; use --size 16")
    elif size not in (16, 32):
        raise UsageError("--size must be 16 or 32")
    rng = np.random.default_rng(cfg.seed)
    policy = cfg.mma_policy
    paths = (GenPath.BASELINE, GenPath.DIRECT)
    rows = []

    if kernel == "scan":
        vectors = rng.integers(0, 256, (cfg.batch, 16)).astype(np.float64)
        results = {p: [scan_via_matmul(a, p, policy) for a in vectors] for p in paths}
        same = all(
            np.array_equal(x.prefix, y.prefix) for x, y in zip(results[paths[0]], results[paths[1]])
        )
        for p in paths:
            res = results[p]
            exact = all(np.array_equal(r.prefix, np.cumsum(a)) for r, a in zip(res, vectors))
            resid = max(float(np.max(np.abs(r.prefix - np.cumsum(a)))) for r, a in zip(res, vectors))
            rows.append(_bench_row(kernel, size, cfg.batch, p, _per_item([r.generated_bytes for r in res]), resid, same, exact))
        return rows

    k = size
    if kernel == "householder":
        inputs = [
            HouseholderInput(rng.normal(size=size), rng.uniform(-1, 1, (size, k)), index=b)
            for b in range(cfg.batch)
        ]
        runs = {p: batched_householder(inputs, p, policy, cfg.workers) for p in paths}
        refs = [householder_matrix(x.v).astype(np.float64) @ x.A.astype(np.float64) for x in inputs]
    else:
        i, j = plane
        if not (0 <= i < size and 0 <= j < size and i != j):
            raise UsageError(f"--plane {i},{j} invalid for size {size}")
        thetas = rng.uniform(-math.pi, math.pi, cfg.batch) if theta is None else [theta] * cfg.batch
        params = [GivensParams(i, j, float(t)) for t in thetas]
        mats = [rng.uniform(-1, 1, (size, k)) for _ in range(cfg.batch)]
        runs = {p: batched_givens(mats, params, p, policy, cfg.workers) for p in paths}
        refs = [
            givens_matrix(pp, size).astype(np.float64) @ np.asarray(a, np.float16).astype(np.float64)
            for pp, a in zip(params, mats)
        ]
    same = all(
        np.array_equal(x, y) for x, y in zip(runs[paths[0]].outputs, runs[paths[1]].outputs)
    )
    for p in paths:
        run = runs[p]
        resid = max(float(np.max(np.abs(out - ref))) for out, ref in zip(run.outputs, refs))
        rows.append(_bench_row(kernel, size, cfg.batch, p, _per_item(run.generated_bytes), resid, same, None))
    return rows


def _per_item(counts: list[int]) -> int:
    # every item generates the same matrix shape, so one number describes the path
    if len(set(counts)) != 1:
        raise RuntimeError(f"per-item generation traffic differs: {sorted(set(counts))}")
    return counts[0]


def _bench_row(kernel, size, batch, path, generated, resid, same, exact):
    return {
        "kernel": kernel,
        "size": size,
        "batch": batch,
        "path": path.value,
        "generated_shared_bytes": generated,
        "max_abs_residual": resid,
        "paths_bit_identical": same,
        "exact_match": "" if exact is None else exact,
    }


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcemu", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, stochastic=False):
        p.add_argument("--format", dest="fmt", default="csv", choices=("csv", "json"))
        p.add_argument("--out", default="-", help="output file, '-' for stdout")
        if stochastic:
            p.add_argument("--seed", type=int, default=42)
            p.add_argument("--batch", type=int, default=8)
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--instruction", choices=("mma", "wmma"), default="mma")
            p.add_argument("--rounding", choices=("rz", "rn"), default="rz")

    p = sub.add_parser("roofline", help="analytic roofline table")
    p.add_argument("--spec", default="a100", help="preset name or key=value spec file")
    p.add_argument("--model", default="simple")
    p.add_argument("--n", dest="n_range", default="4..128:4", help="N, A..B or A..B:STEP")
    p.add_argument("--instruction", choices=("mma", "wmma"), default="mma")
    common(p)

    p = sub.add_parser("accuracy", help="batched GEMM error versus an fp64 oracle")
    p.add_argument("--m", type=int, default=256)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--k", type=int, default=256)
    p.add_argument("--blocking", default="128,128,32")
    p.add_argument("--reg-blocking", default="32,32,32")
    p.add_argument(
        "--method",
        action="append",
        choices=("tcec", "fp16-plain", "fp32-simt"),
        help="repeatable; default all three",
    )
    p.add_argument("--path", choices=("direct", "staged"), default="direct")
    common(p, stochastic=True)

    p = sub.add_parser("mapping", help="dump a fragment's register mapping as CSV")
    p.add_argument("--use", choices=("a", "b", "accumulator"), default="a")
    p.add_argument("--shape", default="16x16x16", help="MxNxK")
    p.add_argument("--layout", choices=("col", "row"), default="col")
    p.add_argument("--duplication", choices=("single", "dual"), default="single")
    p.add_argument("--mapping", choices=("canonical", "scrambled"), default="canonical")
    p.add_argument("--out", default="-")

    p = sub.add_parser("bench", help="structured-kernel correctness and traffic")
    p.add_argument("--kernel", required=True)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--plane", default="0,1", help="Givens rotation plane i,j")
    p.add_argument("--theta", type=float, default=None, help="fixed Givens angle (default: seeded random per item)")
    common(p, stochastic=True)
    return parser


def _write(text: str, out: str) -> None:
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def run(argv: list[str] | None = None) -> str:
    args = build_parser().parse_args(argv)
    if args.command == "mapping":
        try:
            m, n, k = (int(v) for v in args.shape.lower().split("x"))
            kind = FragmentKind(
                Use(args.use),
                m,
                n,
                k,
                layout=Layout(args.layout),
                duplication=Duplication[args.duplication.upper()],
                mapping=args.mapping,
            )
        except ValueError as exc:
            raise UsageError(f"invalid fragment kind: {exc}") from None
        text = cmd_mapping(kind)
        _write(text, args.out)
        return text

    cfg = RunConfig(command=args.command, fmt=args.fmt, out=args.out)
    if args.command == "roofline":
        cfg.spec = args.spec
        cfg.model = args.model
        cfg.n_range = parse_n_range(args.n_range)
        cfg.instruction = args.instruction
    else:
        cfg.seed = args.seed
        cfg.batch = args.batch
        cfg.workers = args.workers
        cfg.instruction = args.instruction
        cfg.rounding = args.rounding
    cfg.validate()

    if args.command == "roofline":
        rows = cmd_roofline(cfg)
    elif args.command == "accuracy":
        cfg.dims = (args.m, args.n, args.k)
        cfg.blocking = parse_triple(args.blocking, "--blocking")
        cfg.reg_blocking = parse_triple(args.reg_blocking, "--reg-blocking")
        cfg.methods = tuple(args.method) if args.method else cfg.methods
        cfg.path = args.path
        cfg.validate()
        rows = cmd_accuracy(cfg)
    else:
        i, _, j = args.plane.partition(",")
        try:
            plane = (int(i), int(j))
        except ValueError:
            raise UsageError(f"--plane expects 'i,j', got {args.plane!r}") from None
        rows = cmd_bench(cfg, args.kernel, args.size, plane, args.theta)
    text = render(rows, cfg.fmt)
    _write(text, cfg.out)
    return text


def main(argv: list[str] | None = None) -> int:
    try:
        run(argv)
    except UsageError as exc:
        print(f"tcemu: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"tcemu: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
