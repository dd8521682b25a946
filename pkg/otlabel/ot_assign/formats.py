# formats.py
"""
File formats of the assignment pipeline

OTCM  cost matrix:   b"OTCM", u16 version, u32 n, u32 k, n*k f64 (LE, row-major)
OTPL  plan:          as OTCM with magic b"OTPL", then u32 iterations_used, f64 final_violation
PSLG  pseudo-labels: b"PSLG", u16 version, u32 n, k, b, H, W, n*k f64 q,
                     ceil(n/8) bytes of packed gate bits, f64 gamma
QSET  query set:     b"QSET", u32 N, k, H, W, then per query k+1 f64 scores and H*W f32 mask values
CSV   cost matrix:   first line "n,k", then n lines of k comma-separated values

Label maps are 8-bit single-channel PNGs with 255 marking ignore pixels.
"""

import struct
from pathlib import Path
from typing import List, Tuple, Union

import cv2
import numpy as np

from .errors import FormatError, SolveStatus
from .pixel_loss import GateMask, PseudoLabelGrid
from .queries import QuerySet
from .transport import DEFAULT_TOLERANCE, CostMatrix, LayoutDescriptor, TransportPlan

PathLike = Union[str, Path]

FORMAT_VERSION = 1
COST_MAGIC = b"OTCM"
PLAN_MAGIC = b"OTPL"
PSEUDO_LABEL_MAGIC = b"PSLG"
QUERY_SET_MAGIC = b"QSET"

_HEADER = struct.Struct("<4sHII")
_PLAN_TRAILER = struct.Struct("<Id")
_GRID = struct.Struct("<III")
_QSET_HEADER = struct.Struct("<4sIIII")
_F64 = struct.Struct("<d")


class _ByteReader:
    """Sequential reader that reports the byte offset of any failure."""

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def unpack(self, layout: struct.Struct) -> tuple:
        if self.offset + layout.size > len(self.data):
            raise FormatError(f"truncated file: need {layout.size} more bytes", self.offset)
        values = layout.unpack_from(self.data, self.offset)
        self.offset += layout.size
        return values

    def array(self, count: int, dtype: str) -> np.ndarray:
        size = count * np.dtype(dtype).itemsize
        if self.offset + size > len(self.data):
            raise FormatError(f"truncated file: need {size} bytes of payload", self.offset)
        values = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return values.astype(np.float64) if values.dtype.kind == "f" else values.copy()

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def finish(self):
        if self.offset != len(self.data):
            raise FormatError(f"{len(self.data) - self.offset} trailing bytes", self.offset)


def _read_header(reader: _ByteReader, magic: bytes) -> Tuple[int, int]:
    found, version, n, k = reader.unpack(_HEADER)
    if found != magic:
        raise FormatError(f"bad magic {found!r}, expected {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    return n, k


def _finite(values: np.ndarray, offset: int, what: str) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"non-finite {what} value", offset + 8 * int(bad[0]))
    return values


# Cost matrices

def encode_cost_matrix(c: CostMatrix) -> bytes:
    header = _HEADER.pack(COST_MAGIC, FORMAT_VERSION, c.n, c.k)
    return header + np.ascontiguousarray(c.data, dtype="<f8").tobytes()


def decode_cost_matrix(data: bytes) -> CostMatrix:
    reader = _ByteReader(data)
    n, k = _read_header(reader, COST_MAGIC)
    start = reader.offset
    values = _finite(reader.array(n * k, "<f8"), start, "cost")
    reader.finish()
    try:
        return CostMatrix(values.reshape(n, k))
    except ValueError as exc:
        raise FormatError(str(exc), start) from exc


def write_cost_matrix(path: PathLike, c: CostMatrix):
    Path(path).write_bytes(encode_cost_matrix(c))


def read_cost_matrix(path: PathLike) -> CostMatrix:
    return decode_cost_matrix(Path(path).read_bytes())


def format_cost_csv(c: CostMatrix) -> str:
    lines = [f"{c.n},{c.k}"]
    lines.extend(",".join(repr(float(x)) for x in row) for row in c.data)
    return "\n".join(lines) + "\n"


def parse_cost_csv(text: Union[str, bytes]) -> CostMatrix:
    """
    Parse a CSV cost matrix.

    Raises:
        FormatError: With the byte offset of the first bad line or field
    """
    raw = text.encode() if isinstance(text, str) else text
    lines = raw.split(b"\n")
    offsets = []
    position = 0
    for line in lines:
        offsets.append(position)
        position += len(line) + 1

    rows: List[Tuple[int, bytes]] = [
        (offset, line.rstrip(b"\r")) for offset, line in zip(offsets, lines) if line.strip()
    ]
    if not rows:
        raise FormatError("empty CSV", 0)

    header_offset, header = rows[0]
    fields = header.split(b",")
    try:
        n, k = (int(f) for f in fields)
    except ValueError:
        raise FormatError("header must be 'n,k'", header_offset)
    if n < 1 or k < 1:
        raise FormatError(f"header sizes must be positive, got {n},{k}", header_offset)
    if len(rows) - 1 != n:
        raise FormatError(f"expected {n} data rows, found {len(rows) - 1}", rows[-1][0])

    data = np.empty((n, k))
    for i, (offset, line) in enumerate(rows[1:]):
        fields = line.split(b",")
        if len(fields) != k:
            raise FormatError(f"row {i} has {len(fields)} fields, expected {k}", offset)
        field_offset = offset
        for j, field in enumerate(fields):
            try:
                data[i, j] = float(field)
            except ValueError:
                raise FormatError(f"not a number: {field.decode(errors='replace')!r}", field_offset)
            field_offset += len(field) + 1
    try:
        return CostMatrix(data)
    except ValueError as exc:
        raise FormatError(str(exc), rows[1][0]) from exc


def load_cost_file(path: PathLike) -> CostMatrix:
    """Read an OTCM binary or a CSV cost matrix, chosen by the leading magic."""
    data = Path(path).read_bytes()
    if data[:4] == COST_MAGIC:
        return decode_cost_matrix(data)
    return parse_cost_csv(data)


# Transport plans

def encode_plan(plan: TransportPlan) -> bytes:
    header = _HEADER.pack(PLAN_MAGIC, FORMAT_VERSION, plan.n, plan.k)
    body = np.ascontiguousarray(plan.data, dtype="<f8").tobytes()
    return header + body + _PLAN_TRAILER.pack(plan.iterations_used, plan.final_violation)


def decode_plan(data: bytes, tolerance: float = DEFAULT_TOLERANCE) -> TransportPlan:
    """
    Decode an OTPL plan. Scaling vectors are not stored; status is recovered
    from the trailer (zero iterations marks an exact oracle plan).
    """
    reader = _ByteReader(data)
    n, k = _read_header(reader, PLAN_MAGIC)
    start = reader.offset
    values = _finite(reader.array(n * k, "<f8"), start, "plan")
    iterations, violation = reader.unpack(_PLAN_TRAILER)
    reader.finish()
    if iterations == 0:
        status = SolveStatus.EXACT
    elif violation <= tolerance:
        status = SolveStatus.CONVERGED
    else:
        status = SolveStatus.NOT_CONVERGED
    return TransportPlan(
        data=values.reshape(n, k),
        iterations_used=iterations,
        final_violation=violation,
        status=status,
    )


def write_plan(path: PathLike, plan: TransportPlan):
    Path(path).write_bytes(encode_plan(plan))


def read_plan(path: PathLike) -> TransportPlan:
    return decode_plan(Path(path).read_bytes())


# Pseudo-label grids

def encode_pseudo_labels(pl: PseudoLabelGrid) -> bytes:
    n, k = pl.q.shape
    layout = pl.layout
    parts = [
        _HEADER.pack(PSEUDO_LABEL_MAGIC, FORMAT_VERSION, n, k),
        _GRID.pack(layout.batch, layout.height, layout.width),
        np.ascontiguousarray(pl.q, dtype="<f8").tobytes(),
        np.packbits(pl.gate.flags.astype(np.uint8)).tobytes(),
        _F64.pack(pl.gate.gamma),
    ]
    return b"".join(parts)


def decode_pseudo_labels(data: bytes) -> PseudoLabelGrid:
    reader = _ByteReader(data)
    n, k = _read_header(reader, PSEUDO_LABEL_MAGIC)
    grid_offset = reader.offset
    b, h, w = reader.unpack(_GRID)
    if b * h * w != n:
        raise FormatError(f"layout {b}x{h}x{w} does not hold {n} rows", grid_offset)
    q_offset = reader.offset
    q = _finite(reader.array(n * k, "<f8"), q_offset, "pseudo-label")
    packed = reader.array((n + 7) // 8, "u1")
    flags = np.unpackbits(packed, count=n).astype(bool)
    (gamma,) = reader.unpack(_F64)
    reader.finish()
    try:
        return PseudoLabelGrid(
            q=q.reshape(n, k),
            gate=GateMask(flags=flags, gamma=gamma),
            layout=LayoutDescriptor(batch=b, height=h, width=w),
        )
    except ValueError as exc:
        raise FormatError(str(exc), q_offset) from exc


def write_pseudo_labels(path: PathLike, pl: PseudoLabelGrid):
    Path(path).write_bytes(encode_pseudo_labels(pl))


def read_pseudo_labels(path: PathLike) -> PseudoLabelGrid:
    return decode_pseudo_labels(Path(path).read_bytes())


# Query sets

def encode_query_set(z: QuerySet) -> bytes:
    n, k, h, w = z.shape
    parts = [_QSET_HEADER.pack(QUERY_SET_MAGIC, n, k, h, w)]
    for scores, mask in zip(z.scores, z.masks):
        parts.append(np.ascontiguousarray(scores, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(mask, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_query_set(data: bytes) -> QuerySet:
    reader = _ByteReader(data)
    magic, n, k, h, w = reader.unpack(_QSET_HEADER)
    if magic != QUERY_SET_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {QUERY_SET_MAGIC!r}", 0)
    payload = n * ((k + 1) * 8 + h * w * 4)
    if payload != reader.remaining:
        raise FormatError(
            f"header declares {n}x{k}x{h}x{w} queries ({payload} payload bytes), file carries {reader.remaining}",
            reader.offset,
        )
    scores = np.empty((n, k + 1))
    masks = np.empty((n, h, w))
    for q in range(n):
        scores[q] = reader.array(k + 1, "<f8")
        masks[q] = reader.array(h * w, "<f4").reshape(h, w)
    reader.finish()
    try:
        return QuerySet(scores=scores, masks=masks)
    except ValueError as exc:
        raise FormatError(str(exc), _QSET_HEADER.size) from exc


def write_query_set(path: PathLike, z: QuerySet):
    Path(path).write_bytes(encode_query_set(z))


def read_query_set(path: PathLike) -> QuerySet:
    return decode_query_set(Path(path).read_bytes())


# Images

def write_label_png(path: PathLike, labels: np.ndarray):
    """Write a (H, W) label map as an 8-bit PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise FormatError("label values must fit in 8 bits")
    if not cv2.imwrite(str(path), labels.astype(np.uint8)):
        raise OSError(f"could not write {path}")


def read_label_png(path: PathLike) -> np.ndarray:
    """Read an 8-bit single-channel label PNG as an int64 (H, W) array."""
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FormatError(f"cannot decode label image {path}")
    if image.ndim != 2 or image.dtype != np.uint8:
        raise FormatError(f"label image {path} must be 8-bit single-channel")
    return image.astype(np.int64)


def read_image(path: PathLike) -> np.ndarray:
    """
    Decode a PNG/PPM/PGM image.

    Returns:
        (H, W) uint8 for gray images, (H, W, 3) uint8 RGB otherwise
    """
    image = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if image is None:
        raise FormatError(f"cannot decode image {path}")
    if image.dtype != np.uint8:
        image = cv2.convertScaleAbs(image, alpha=255.0 / max(float(image.max()), 1.0))
    if image.ndim == 2:
        return image
    if image.shape[2] == 4:
        return cv2.cvtColor(image, cv2.COLOR_BGRA2RGB)
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def write_image(path: PathLike, image: np.ndarray):
    """Encode a gray (H, W) or RGB (H, W, 3) uint8 image; codec chosen by suffix."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 3:
        image = cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), image):
        raise OSError(f"could not write {path}")
