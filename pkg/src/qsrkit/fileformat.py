"""``QSRKIT01`` binary model files for float graphs and integer models.

Layout (all integers little-endian)::

    magic    8 bytes  b"QSRKIT01"
    version  u16
    desc     u32 length + UTF-8 JSON (graph structure, model kind)
    count    u32 number of records
    records  name (u16 length + UTF-8), dtype tag u8 (0 f32, 1 i8, 2 i32),
             ndim u8, dims u32 each, payload, then u8 flag and, if set,
             a QuantParams record: granularity u8 (0 per-tensor,
             1 per-channel), flags u8 (bit0 signed, bit1 narrow), bits u8,
             count u32, scales f32[count], zero points i32[count]

Integer models store int8 weights and int32 biases with their parameters,
``<node>:requant`` int32 fixed-point tables and ``<node>:out`` int32
``[lo, hi]`` output clamps carrying the node's activation parameters.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import ModelGraph
from .quant.fuse import output_producer
from .quant.model import QuantizedModel
from .quant.params import PIXEL_QPARAMS, QuantParams

MAGIC = b"QSRKIT01"
VERSION = 1
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("i1"), 2: np.dtype("<i4")}
_TAG_OF = {np.dtype("float32"): 0, np.dtype("int8"): 1, np.dtype("int32"): 2}


class FormatError(ValueError):
    pass


@dataclass
class Record:
    name: str
    array: np.ndarray
    qparams: QuantParams | None = None

    @property
    def tag(self) -> str:
        return {0: "f32", 1: "i8", 2: "i32"}[_TAG_OF[self.array.dtype]]


def _pack_qparams(qp: QuantParams) -> bytes:
    scale = np.atleast_1d(np.asarray(qp.scale, "<f4"))
    zp = np.atleast_1d(np.asarray(qp.zero_point, "<i4"))
    flags = (1 if qp.signed else 0) | (2 if qp.narrow else 0)
    head = struct.pack("<BBBI", 1 if qp.per_channel else 0, flags, qp.bits, len(scale))
    return head + scale.tobytes() + zp.tobytes()


def _pack_record(rec: Record) -> bytes:
    a = np.asarray(rec.array)
    if a.dtype not in _TAG_OF:
        raise FormatError(f"record {rec.name}: unsupported dtype {a.dtype}")
    name = rec.name.encode()
    out = [struct.pack("<H", len(name)), name, struct.pack("<BB", _TAG_OF[a.dtype], a.ndim),
           struct.pack(f"<{a.ndim}I", *a.shape), np.ascontiguousarray(a, _TAGS[_TAG_OF[a.dtype]]).tobytes()]
    if rec.qparams is None:
        out.append(b"\x00")
    else:
        out += [b"\x01", _pack_qparams(rec.qparams)]
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file at byte {self.pos} (need {n} more)")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _read_qparams(r: _Reader) -> QuantParams:
    gran, flags, bits, count = r.unpack("<BBBI")
    scale = np.frombuffer(r.take(4 * count), "<f4").astype(np.float64)
    zp = np.frombuffer(r.take(4 * count), "<i4").astype(np.int64)
    if gran == 0:
        if count != 1:
            raise FormatError("per-tensor QuantParams must hold one scale")
        scale, zp = float(scale[0]), int(zp[0])
    return QuantParams(scale, zp, bits, bool(flags & 1), bool(flags & 2))


def _read_record(r: _Reader) -> Record:
    (n,) = r.unpack("<H")
    name = r.take(n).decode()
    tag, ndim = r.unpack("<BB")
    if tag not in _TAGS:
        raise FormatError(f"record {name}: unknown dtype tag {tag}")
    shape = r.unpack(f"<{ndim}I") if ndim else ()
    dt = _TAGS[tag]
    size = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(r.take(size * dt.itemsize), dt).reshape(shape).astype(dt.newbyteorder("="))
    (has_q,) = r.unpack("<B")
    return Record(name, arr, _read_qparams(r) if has_q else None)


def write_file(path, desc: dict, records: list[Record]) -> None:
    text = json.dumps(desc, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(text)), text,
             struct.pack("<I", len(records))]
    parts += [_pack_record(r) for r in records]
    Path(path).write_bytes(b"".join(parts))


def read_file(path) -> tuple[dict, list[Record]]:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(8) != MAGIC:
        raise FormatError(f"{path}: not a QSRKIT01 file (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    (n,) = r.unpack("<I")
    desc = json.loads(r.take(n).decode())
    (count,) = r.unpack("<I")
    records = [_read_record(r) for _ in range(count)]
    if r.pos != len(data):
        raise FormatError(f"{path}: {len(data) - r.pos} trailing bytes")
    return desc, records


def save_model(model, path) -> None:
    """Write a ``ModelGraph`` (float32 records) or a ``QuantizedModel`` (integer records)."""
    if isinstance(model, QuantizedModel):
        g = model.graph
        records = []
        for n in g.nodes:
            if n.op == "conv":
                wq = model.weight_qparams[n.name]
                s_in = model.act[n.inputs[0]].scale
                bq = QuantParams(np.asarray(s_in * wq.scale, np.float32), np.zeros_like(wq.zero_point), 32, True)
                records.append(Record(f"{n.name}.weight", g.params[f"{n.name}.weight"].astype(np.int8), wq))
                records.append(Record(f"{n.name}.bias", g.params[f"{n.name}.bias"].astype(np.int32), bq))
            if n.name in model.requant:
                records.append(Record(f"{n.name}:requant", np.asarray(model.requant[n.name], np.int32)))
            qp = model.act[n.name]
            lo, hi = model.clamps.get(n.name, (qp.qmin, qp.qmax))
            records.append(Record(f"{n.name}:out", np.array([lo, hi], np.int32), qp))
        desc = {"kind": "int8", "graph": g.describe()}
    elif isinstance(model, ModelGraph):
        records = [Record(k, np.asarray(v, np.float32)) for k, v in sorted(model.params.items())]
        desc = {"kind": "float", "graph": model.describe()}
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    write_file(path, desc, records)


def load_model(path):
    """Inverse of ``save_model``."""
    desc, records = read_file(path)
    kind = desc.get("kind")
    by_name = {r.name: r for r in records}
    if kind == "float":
        params = {r.name: r.array.astype(np.float32) for r in records}
        g = ModelGraph.from_description(desc["graph"], params)
        g.validate()
        return g
    if kind != "int8":
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    g = ModelGraph.from_description(desc["graph"], {})
    act, wqs, requant, clamps = {}, {}, {}, {}
    for n in g.nodes:
        out = by_name.get(f"{n.name}:out")
        if out is None or out.qparams is None:
            raise FormatError(f"{path}: node {n.name} has no output parameters")
        act[n.name] = out.qparams
        clamps[n.name] = (int(out.array[0]), int(out.array[1]))
        if f"{n.name}:requant" in by_name:
            requant[n.name] = by_name[f"{n.name}:requant"].array.astype(np.int64)
        if n.op == "conv":
            w, b = by_name[f"{n.name}.weight"], by_name[f"{n.name}.bias"]
            g.params[f"{n.name}.weight"] = w.array
            g.params[f"{n.name}.bias"] = b.array
            wqs[n.name] = w.qparams
    g.validate()
    requant_nodes = set(requant)
    clamps = {k: v for k, v in clamps.items() if k in requant_nodes}
    return QuantizedModel(g, act, wqs, requant, clamps)


@dataclass
class ScanResult:
    kind: str
    float_records: list[str]
    output_pinned: bool

    @property
    def fully_quantized(self) -> bool:
        return self.kind == "int8" and not self.float_records and self.output_pinned


def scan_file(path) -> ScanResult:
    """Structural check: list float payloads and whether output dequantization is the identity on [0, 255]."""
    desc, records = read_file(path)
    floats = [r.name for r in records if r.array.dtype == np.float32]
    pinned = False
    if desc.get("kind") == "int8":
        g = ModelGraph.from_description(desc["graph"], {})
        by_name = {r.name: r for r in records}
        names = {g.output, output_producer(g).name}
        pinned = all(by_name.get(f"{nm}:out") is not None and by_name[f"{nm}:out"].qparams == PIXEL_QPARAMS
                     for nm in names)
    return ScanResult(desc.get("kind", "?"), floats, pinned)


def assert_fully_quantized(path) -> ScanResult:
    res = scan_file(path)
    if res.kind != "int8":
        raise FormatError(f"{path}: not an integer model (kind {res.kind!r})")
    if res.float_records:
        raise FormatError(f"{path}: float payloads found: {', '.join(res.float_records)}")
    if not res.output_pinned:
        raise FormatError(f"{path}: output parameters are not pinned to scale 1, zero point 0")
    return res


__all__ = ["FormatError", "MAGIC", "Record", "ScanResult", "assert_fully_quantized", "load_model", "read_file",
           "save_model", "scan_file", "write_file"]
