"""Warp-distributed fragments and the shared-memory tiles they are loaded from.

A :class:`Fragment` holds a ``(32, num_elements)`` register array: row ``l``
is what lane ``l`` owns.  Which register holds which matrix element is
decided by a *mapping scheme*.  Two schemes ship:

``canonical``
    ``p = i + rows*j`` (col-major) or ``p = j + cols*i`` (row-major),
    ``lane = p % 32``, ``fid = p // 32``.
``scrambled``
    same ``fid`` but ``lane = (17*p + 5) % 32``.

With dual duplication (the ``wmma`` register layout) every element gets a
second slot at ``lane' = (lane + 16) % 32``, ``fid' = fid + rows*cols/32``.
Nothing downstream depends on the scheme; the scrambled one exists to prove
that.  The scheme in force for newly built kinds comes from the
``TCEMU_MAPPING`` environment variable or :func:`mapping_scheme`.
"""

from __future__ import annotations

import contextlib
import contextvars
import dataclasses
import enum
import functools
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .numerics import to_f16

WARP_SIZE = 32
SUPPORTED_SHAPES = {(16, 16, 16), (32, 8, 16), (8, 32, 16)}
MAPPING_SCHEMES = ("canonical", "scrambled")

_MAPPING = contextvars.ContextVar(
    "tcemu_mapping", default=os.environ.get("TCEMU_MAPPING", "canonical")
)


def current_mapping() -> str:
    return _MAPPING.get()


def parallel_map(fn: Callable, items, workers: int = 1) -> list:
    """``[fn(x) for x in items]``, threaded when ``workers > 1``.

    Each task runs in a copy of the caller's context so an active
    :func:`mapping_scheme` reaches the worker threads.
    """
    items = list(items)
    if workers <= 1:
        return [fn(x) for x in items]
    ctx = contextvars.copy_context()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda x: ctx.copy().run(fn, x), items))


@contextlib.contextmanager
def mapping_scheme(name: str) -> Iterator[None]:
    """Make ``name`` the mapping scheme for kinds created inside the block."""
    if name not in MAPPING_SCHEMES:
        raise MappingError(f"unknown mapping scheme {name!r}")
    token = _MAPPING.set(name)
    try:
        yield
    finally:
        _MAPPING.reset(token)


class MappingError(ValueError):
    pass


class DuplicationError(ValueError):
    """The two register copies of one matrix element disagree."""


class Use(enum.Enum):
    MATRIX_A = "a"
    MATRIX_B = "b"
    ACCUMULATOR = "accumulator"


class Layout(enum.Enum):
    COL_MAJOR = "col"
    ROW_MAJOR = "row"


class ElementType(enum.Enum):
    FP16 = "fp16"
    FP32 = "fp32"

    @property
    def itemsize(self) -> int:
        return 2 if self is ElementType.FP16 else 4

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float16 if self is ElementType.FP16 else np.float32)


class Duplication(enum.Enum):
    SINGLE = 1
    DUAL = 2


def _cast(values, element_type: ElementType) -> np.ndarray:
    values = np.asarray(values)
    if element_type is ElementType.FP16:
        if values.dtype == np.float16:
            return values.copy()
        return to_f16(values.astype(np.float64))
    return values.astype(np.float32)


@dataclass(frozen=True)
class FragmentKind:
    use: Use
    m: int = 16
    n: int = 16
    k: int = 16
    layout: Layout = Layout.COL_MAJOR
    element_type: ElementType | None = None
    duplication: Duplication = Duplication.SINGLE
    mapping: str = field(default_factory=current_mapping)

    def __post_init__(self):
        if (self.m, self.n, self.k) not in SUPPORTED_SHAPES:
            raise MappingError(f"unsupported fragment shape {(self.m, self.n, self.k)}")
        if self.mapping not in MAPPING_SCHEMES:
            raise MappingError(f"unknown mapping scheme {self.mapping!r}")
        if self.element_type is None:
            default = ElementType.FP32 if self.use is Use.ACCUMULATOR else ElementType.FP16
            object.__setattr__(self, "element_type", default)
        if self.use is not Use.ACCUMULATOR and self.element_type is not ElementType.FP16:
            raise MappingError("matrix_a / matrix_b fragments hold fp16 only")

    @property
    def shape(self) -> tuple[int, int]:
        if self.use is Use.MATRIX_A:
            return self.m, self.k
        if self.use is Use.MATRIX_B:
            return self.k, self.n
        return self.m, self.n

    @property
    def dup(self) -> int:
        return self.duplication.value

    @property
    def num_elements(self) -> int:
        rows, cols = self.shape
        return rows * cols * self.dup // WARP_SIZE

    def replace(self, **changes) -> "FragmentKind":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class MappingEntry:
    i: int
    j: int
    slots: tuple[tuple[int, int], ...]


def linear_index(kind: FragmentKind, i, j):
    rows, cols = kind.shape
    if kind.layout is Layout.COL_MAJOR:
        return i + rows * j
    return j + cols * i


@functools.lru_cache(maxsize=None)
def _slot_arrays(kind: FragmentKind) -> tuple[np.ndarray, np.ndarray]:
    """(lane, fid) arrays of shape ``(rows, cols, dup)``."""
    rows, cols = kind.shape
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    p = linear_index(kind, ii, jj)
    if kind.mapping == "canonical":
        lane = p % WARP_SIZE
    else:
        lane = (17 * p + 5) % WARP_SIZE
    fid = p // WARP_SIZE
    lanes = [lane]
    fids = [fid]
    if kind.duplication is Duplication.DUAL:
        lanes.append((lane + 16) % WARP_SIZE)
        fids.append(fid + rows * cols // WARP_SIZE)
    lane_arr = np.stack(lanes, axis=-1)
    fid_arr = np.stack(fids, axis=-1)
    lane_arr.flags.writeable = False
    fid_arr.flags.writeable = False
    return lane_arr, fid_arr


def mapping_table(kind: FragmentKind) -> list[MappingEntry]:
    """Every matrix position with its register slots, in row-major order."""
    lane, fid = _slot_arrays(kind)
    rows, cols = kind.shape
    return [
        MappingEntry(i, j, tuple((int(lane[i, j, d]), int(fid[i, j, d])) for d in range(kind.dup)))
        for i in range(rows)
        for j in range(cols)
    ]


def canonical_mapping(kind: FragmentKind) -> list[MappingEntry]:
    return mapping_table(kind.replace(mapping="canonical"))


def map_ij(kind: FragmentKind, i: int, j: int) -> tuple[tuple[int, int], ...]:
    """(lane, fid) slots holding element ``(i, j)``; the WMMAe ``map``."""
    rows, cols = kind.shape
    if not (0 <= i < rows and 0 <= j < cols):
        raise IndexError(f"({i}, {j}) outside a {rows}x{cols} fragment")
    lane, fid = _slot_arrays(kind)
    return tuple((int(lane[i, j, d]), int(fid[i, j, d])) for d in range(kind.dup))


class Fragment:
    """Register tile of one warp.  ``x[lane, fid]`` is one register."""

    def __init__(self, kind: FragmentKind, x: np.ndarray | None = None):
        self.kind = kind
        shape = (WARP_SIZE, kind.num_elements)
        if x is None:
            x = np.zeros(shape, dtype=kind.element_type.dtype)
        elif x.shape != shape or x.dtype != kind.element_type.dtype:
            raise MappingError(f"register array must be {shape} {kind.element_type.dtype}")
        self.x = x

    @classmethod
    def from_matrix(cls, kind: FragmentKind, matrix) -> "Fragment":
        matrix = _cast(matrix, kind.element_type)
        if matrix.shape != kind.shape:
            raise MappingError(f"matrix shape {matrix.shape} != fragment shape {kind.shape}")
        frag = cls(kind)
        lane, fid = _slot_arrays(kind)
        for d in range(kind.dup):
            frag.x[lane[..., d], fid[..., d]] = matrix
        return frag

    def to_matrix(self) -> np.ndarray:
        lane, fid = _slot_arrays(self.kind)
        matrix = self.x[lane[..., 0], fid[..., 0]]
        for d in range(1, self.kind.dup):
            copy = self.x[lane[..., d], fid[..., d]]
            if not np.array_equal(matrix.view(_bits_dtype(matrix)), copy.view(_bits_dtype(copy))):
                raise DuplicationError("duplicated register copies disagree")
        return matrix

    def copy(self) -> "Fragment":
        return Fragment(self.kind, self.x.copy())

    def __eq__(self, other):
        if not isinstance(other, Fragment):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(
            self.x.view(_bits_dtype(self.x)), other.x.view(_bits_dtype(other.x))
        )

    def __repr__(self) -> str:
        k = self.kind
        return f"Fragment({k.use.value}, {k.m}x{k.n}x{k.k}, {k.element_type.value}, dup={k.dup})"


def _bits_dtype(a: np.ndarray):
    return np.uint16 if a.dtype == np.float16 else np.uint32


class SharedTile:
    """Column-major 2-D buffer standing in for a shared-memory array.

    Element ``(r, c)`` lives at ``data[r + c*ld]``.  ``read_window`` and
    ``write_window`` are the only accessors and they keep byte counters;
    ``from_array`` is initial content and is not counted.
    """

    def __init__(self, element_type: ElementType, rows: int, cols: int, ld: int | None = None):
        ld = rows if ld is None else ld
        if ld < rows:
            raise ValueError(f"leading dimension {ld} < rows {rows}")
        self.element_type = element_type
        self.rows = rows
        self.cols = cols
        self.ld = ld
        self.data = np.zeros(ld * cols, dtype=element_type.dtype)
        self.bytes_read = 0
        self.bytes_written = 0

    @classmethod
    def from_array(cls, matrix, element_type: ElementType, ld: int | None = None) -> "SharedTile":
        matrix = np.asarray(matrix)
        tile = cls(element_type, matrix.shape[0], matrix.shape[1], ld)
        tile._view()[: tile.rows, :] = _cast(matrix, element_type)
        return tile

    def _view(self) -> np.ndarray:
        return self.data.reshape(self.cols, self.ld).T

    def to_array(self) -> np.ndarray:
        """Uncounted snapshot of the logical ``rows x cols`` content."""
        return self._view()[: self.rows, :].copy()

    @property
    def traffic(self) -> int:
        return self.bytes_read + self.bytes_written

    def _check(self, origin, shape):
        r0, c0 = origin
        rows, cols = shape
        if r0 < 0 or c0 < 0 or r0 + rows > self.rows or c0 + cols > self.cols:
            raise IndexError(
                f"window {shape} at {origin} outside {self.rows}x{self.cols} tile"
            )

    def read_window(self, origin: tuple[int, int], shape: tuple[int, int]) -> np.ndarray:
        self._check(origin, shape)
        r0, c0 = origin
        block = self._view()[r0 : r0 + shape[0], c0 : c0 + shape[1]].copy()
        self.bytes_read += block.size * self.element_type.itemsize
        return block

    def write_window(self, origin: tuple[int, int], block) -> None:
        block = _cast(block, self.element_type)
        self._check(origin, block.shape)
        r0, c0 = origin
        self._view()[r0 : r0 + block.shape[0], c0 : c0 + block.shape[1]] = block
        self.bytes_written += block.size * self.element_type.itemsize


def _check_ld(tile: SharedTile, ld: int | None):
    if ld is not None and ld != tile.ld:
        raise ValueError(f"ld {ld} does not match the tile's leading dimension {tile.ld}")


def load_matrix_sync(
    kind: FragmentKind, tile: SharedTile, origin: tuple[int, int] = (0, 0), ld: int | None = None
) -> Fragment:
    _check_ld(tile, ld)
    if tile.element_type is not kind.element_type:
        raise TypeError(
            f"cannot load {tile.element_type.value} memory into a {kind.element_type.value} fragment"
        )
    return Fragment.from_matrix(kind, tile.read_window(origin, kind.shape))


def store_matrix_sync(
    tile: SharedTile, frag: Fragment, origin: tuple[int, int] = (0, 0), ld: int | None = None
) -> None:
    _check_ld(tile, ld)
    if tile.element_type is not frag.kind.element_type:
        raise TypeError(
            f"cannot store a {frag.kind.element_type.value} fragment to {tile.element_type.value} memory"
        )
    tile.write_window(origin, frag.to_matrix())


def fill_fragment(kind: FragmentKind, value: float) -> Fragment:
    frag = Fragment(kind)
    frag.x[...] = _cast(np.asarray(value, dtype=np.float64), kind.element_type)
    return frag


def foreach_ij(kind: FragmentKind, body: Callable) -> Fragment:
    """Visit every matrix position once, row-major, as ``body(slots, i, j)``.

    A non-``None`` return value is written to all of the position's slots in
    the returned fragment.  A body that fills other fragments itself (one
    traversal shared by several fragments) returns ``None``.
    """
    frag = Fragment(kind)
    for entry in mapping_table(kind):
        value = body(entry.slots, entry.i, entry.j)
        if value is None:
            continue
        value = _cast(np.asarray(value, dtype=np.float64), kind.element_type)
        for lane, fid in entry.slots:
            frag.x[lane, fid] = value
    return frag


def fragment_from_rule(kind: FragmentKind, rule: Callable) -> Fragment:
    """Vectorised ``foreach_ij``: ``rule(i, j)`` gets index arrays of the tile shape."""
    rows, cols = kind.shape
    ii, jj = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    return Fragment.from_matrix(kind, rule(ii, jj))


def dump_mapping(kind: FragmentKind) -> str:
    """CSV in the shape of the mapping-investigation kernel's printout."""
    rows_out = []
    for entry in mapping_table(kind):
        p = linear_index(kind, entry.i, entry.j)
        for lane, fid in entry.slots:
            rows_out.append((lane, fid, p, entry.i, entry.j))
    rows_out.sort()
    buf = io.StringIO()
    buf.write("lane,fid,linear_index,i,j\n")
    for row in rows_out:
        buf.write(",".join(str(v) for v in row) + "\n")
    return buf.getvalue()


def parse_mapping_dump(text: str) -> dict[tuple[int, int], list[tuple[int, int]]]:
    """Invert a :func:`dump_mapping` table into ``{(i, j): [(lane, fid), ...]}``."""
    lines = text.strip().splitlines()
    if lines[0] != "lane,fid,linear_index,i,j":
        raise ValueError("not a mapping dump")
    out: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for line in lines[1:]:
        lane, fid, _, i, j = (int(v) for v in line.split(","))
        out.setdefault((i, j), []).append((lane, fid))
    return out
