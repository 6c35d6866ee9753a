"""Run-record files: a CSV table with unit-bearing header and a compact binary format.

Binary layout (version 1, all integers and floats little-endian)::

    offset  size  field
    0       8     magic b"APXTRACE"
    8       2     uint16 format version (1)
    10      2     uint16 number of columns C
    12      4     uint32 status code (0 completed, 1 particle lost)
    16      8     uint64 number of rows N
    24      8     float64 sample rate (Hz)
    32      8     int64 base seed
    40      4     uint32 controller fault count
    44      64    ASCII scenario hash (sha256 hex digest)
    108     ...   C column descriptors: uint8 length + UTF-8 name, uint8 length + UTF-8 unit
    ...     8*N*C float64 samples, row-major
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from .dynamics import RECORD_COLUMNS, RunRecord

MAGIC = b"APXTRACE"
VERSION = 1
_HEAD = struct.Struct("<8sHHIQdqI64s")
_STATUS = {"completed": 0, "particle lost": 1}
_STATUS_NAME = {v: k for k, v in _STATUS.items()}
_UNITS = dict(RECORD_COLUMNS)


class TraceFormatError(ValueError):
    """Malformed or unsupported trace file."""


def _unit_tag(unit: str) -> str:
    return unit.replace("/", "_per_")


def _base_seed(rec: RunRecord) -> int:
    return int(rec.seeds.get("base", 0))


def to_bytes(rec: RunRecord) -> bytes:
    buf = io.BytesIO()
    h = rec.scenario_hash.encode("ascii")[:64].ljust(64, b"\0")
    buf.write(_HEAD.pack(MAGIC, VERSION, len(rec.columns), _STATUS[rec.status], len(rec), float(rec.sample_rate),
                         _base_seed(rec), int(rec.faults), h))
    for name in rec.columns:
        for s in (name, _UNITS.get(name, "")):
            b = s.encode()
            buf.write(struct.pack("<B", len(b)) + b)
    buf.write(np.ascontiguousarray(rec.data, dtype="<f8").tobytes())
    return buf.getvalue()


def from_bytes(raw: bytes) -> RunRecord:
    if len(raw) < _HEAD.size:
        raise TraceFormatError("file too short for a trace header")
    magic, ver, ncol, status, nrow, rate, seed, faults, h = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise TraceFormatError("not a trace file (bad magic)")
    if ver != VERSION:
        raise TraceFormatError(f"unsupported trace version {ver}")
    pos = _HEAD.size
    cols = []
    for _ in range(ncol):
        parts = []
        for _ in range(2):
            (n,) = struct.unpack_from("<B", raw, pos)
            parts.append(raw[pos + 1:pos + 1 + n].decode())
            pos += 1 + n
        cols.append(parts[0])
    need = 8 * nrow * ncol
    if len(raw) - pos != need:
        raise TraceFormatError(f"expected {need} data bytes, found {len(raw) - pos}")
    data = np.frombuffer(raw, dtype="<f8", count=nrow * ncol, offset=pos).reshape(nrow, ncol).astype(float)
    return RunRecord(data=data, sample_rate=rate, seeds={"base": seed}, scenario_hash=h.rstrip(b"\0").decode(),
                     status=_STATUS_NAME.get(status, "completed"), faults=faults, columns=tuple(cols))


def write_binary(rec: RunRecord, path) -> None:
    Path(path).write_bytes(to_bytes(rec))


def read_binary(path) -> RunRecord:
    return from_bytes(Path(path).read_bytes())


def write_csv(rec: RunRecord, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# apexlqg trace v{VERSION}\n")
        fh.write(f"# sample_rate_hz={rec.sample_rate!r} seed={_base_seed(rec)} scenario_hash={rec.scenario_hash} "
                 f"status={rec.status.replace(' ', '_')} faults={rec.faults}\n")
        wr = csv.writer(fh)
        wr.writerow([f"{c}_{_unit_tag(_UNITS.get(c, ''))}" for c in rec.columns])
        for row in rec.data:
            wr.writerow([repr(float(v)) for v in row])


def read_csv(path) -> RunRecord:
    meta = {}
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for ln in lines:
        if ln.startswith("#"):
            for tok in ln[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
        else:
            body.append(ln)
    if not body:
        raise TraceFormatError("CSV trace has no header row")
    rows = list(csv.reader(body))
    header = rows[0]
    cols = []
    for h in header:
        name = next((c for c in sorted(_UNITS, key=len, reverse=True) if h == f"{c}_{_unit_tag(_UNITS[c])}"), None)
        cols.append(name if name is not None else h)
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(cols))
    try:
        rate = float(meta["sample_rate_hz"])
    except KeyError as e:
        raise TraceFormatError("CSV trace lacks the sample_rate_hz header") from e
    return RunRecord(data=data, sample_rate=rate, seeds={"base": int(meta.get("seed", 0))},
                     scenario_hash=meta.get("scenario_hash", ""), status=meta.get("status", "completed").replace("_", " "),
                     faults=int(meta.get("faults", 0)), columns=tuple(cols))


def write_record(rec: RunRecord, path, fmt: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or ("bin" if path.suffix == ".bin" else "csv")
    if fmt == "bin":
        write_binary(rec, path)
    elif fmt == "csv":
        write_csv(rec, path)
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    return path


def read_record(path) -> RunRecord:
    """Read a trace, detecting the format from the leading bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    return read_binary(path) if head == MAGIC else read_csv(path)
