"""On-disk formats: .evt/.evb events, .flo32 flow grids, .f32 rasters, PGM/PPM, .tsr tensors."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import OutOfBounds, ParseError, ValidationError
from .events import EventStream

EVB_MAGIC = b"EVB1"
EVB_HEADER = struct.Struct("<4sHHQ")
EVB_RECORD = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")]
)
TSR_MAGIC = b"TSR1"

_POLARITY_TOKENS = {"1": 1, "+1": 1, "-1": -1, "0": -1}


def format_for(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".evt":
        return "evt"
    if suffix == ".evb":
        return "evb"
    raise ValidationError(f"cannot infer event format from {str(path)!r}")


def read_events(path, format=None):
    format = format or format_for(path)
    data = Path(path).read_bytes()
    if format == "evt":
        return _parse_evt(data)
    if format == "evb":
        return _parse_evb(data)
    raise ValidationError(f"unknown event format {format!r}")


def write_events(stream, path, format=None):
    format = format or format_for(path)
    if format == "evt":
        payload = _dump_evt(stream)
    elif format == "evb":
        payload = _dump_evb(stream)
    else:
        raise ValidationError(f"unknown event format {format!r}")
    Path(path).write_bytes(payload)


def _parse_evt(data):
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError("non-ASCII byte in text event file", offset=exc.start) from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing header", line=1)
    head = lines[0].split()
    if len(head) != 3 or head[0] != "evt1":
        raise ParseError("expected header 'evt1 <width> <height>'", line=1)
    try:
        width, height = int(head[1]), int(head[2])
    except ValueError:
        raise ParseError("sensor size must be integers", line=1) from None
    if width <= 0 or height <= 0:
        raise ParseError("sensor size must be positive", line=1)

    n = len(lines) - 1
    t = np.empty(n, dtype=np.uint64)
    x = np.empty(n, dtype=np.int64)
    y = np.empty(n, dtype=np.int64)
    p = np.empty(n, dtype=np.int8)
    prev = 0
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        parts = line.split(",")
        if len(parts) != 4:
            raise ParseError("expected 't_us,x,y,p'", line=lineno)
        try:
            ti, xi, yi = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise ParseError("non-integer field", line=lineno) from None
        if parts[0].strip() != parts[0] or ti < 0 or xi < 0 or yi < 0:
            raise ParseError("fields must be non-negative decimal integers", line=lineno)
        pi = _POLARITY_TOKENS.get(parts[3])
        if pi is None:
            raise ParseError(f"bad polarity token {parts[3]!r}", line=lineno)
        if xi >= width or yi >= height:
            raise OutOfBounds(f"event ({xi},{yi}) outside {width}x{height} sensor (line {lineno})")
        if ti < prev:
            raise ParseError("timestamps must be non-decreasing", line=lineno)
        prev = ti
        t[i], x[i], y[i], p[i] = ti, xi, yi, pi
    return EventStream(t, x, y, p, width, height)


def _dump_evt(stream):
    out = [f"evt1 {stream.width} {stream.height}\n"]
    for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(), stream.p.tolist()):
        out.append(f"{t},{x},{y},{p}\n")
    return "".join(out).encode("ascii")


def _parse_evb(data):
    if len(data) < EVB_HEADER.size:
        raise ParseError("truncated header", offset=len(data))
    magic, width, height, count = EVB_HEADER.unpack_from(data, 0)
    if magic != EVB_MAGIC:
        raise ParseError("bad magic, expected EVB1", offset=0)
    expected = EVB_HEADER.size + count * EVB_RECORD.itemsize
    if len(data) != expected:
        raise ParseError(
            f"expected {expected} bytes for {count} events, found {len(data)}",
            offset=min(len(data), expected),
        )
    rec = np.frombuffer(data, dtype=EVB_RECORD, count=count, offset=EVB_HEADER.size)
    bad = np.flatnonzero((rec["p"] != 1) & (rec["p"] != -1))
    if bad.size:
        raise ParseError("polarity byte must be +1 or -1", offset=EVB_HEADER.size + int(bad[0]) * 16 + 12)
    pads = np.frombuffer(rec["pad"].tobytes(), dtype=np.uint8).reshape(-1, 3)
    bad = np.flatnonzero(pads.any(axis=1))
    if bad.size:
        raise ParseError("non-zero padding", offset=EVB_HEADER.size + int(bad[0]) * 16 + 13)
    if count and (rec["x"].max() >= width or rec["y"].max() >= height):
        raise OutOfBounds(f"event outside declared {width}x{height} sensor")
    t = rec["t"].astype(np.uint64)
    if count > 1:
        bad = np.flatnonzero(t[1:] < t[:-1])
        if bad.size:
            raise ParseError("timestamps must be non-decreasing", offset=EVB_HEADER.size + int(bad[0] + 1) * 16)
    return EventStream(t, rec["x"], rec["y"], rec["p"], width, height)


def _dump_evb(stream):
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise ValidationError("sensor size does not fit the u16 header fields")
    rec = np.zeros(len(stream), dtype=EVB_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    return EVB_HEADER.pack(EVB_MAGIC, stream.width, stream.height, len(stream)) + rec.tobytes()


# -- flow grids ---------------------------------------------------------------

def write_flow(path, control, height, width):
    """Write a 2 x Gh x Gw control grid as ``.flo32``."""
    control = np.asarray(control)
    _, gh, gw = control.shape
    head = f"FLO1 {gh} {gw} {height} {width}\n".encode("ascii")
    Path(path).write_bytes(head + control.astype("<f4").tobytes(order="C"))


def read_flow(path):
    """Returns ``(control, height, width)``; control is float64 2 x Gh x Gw."""
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise ParseError("missing header line", offset=0)
    head = data[:nl].decode("ascii", errors="replace").split()
    if len(head) != 5 or head[0] != "FLO1":
        raise ParseError("expected header 'FLO1 <Gh> <Gw> <H> <W>'", line=1)
    try:
        gh, gw, h, w = (int(v) for v in head[1:])
    except ValueError:
        raise ParseError("non-integer header field", line=1) from None
    n = 2 * gh * gw
    body = data[nl + 1:]
    if len(body) != 4 * n:
        raise ParseError(f"expected {4 * n} payload bytes, found {len(body)}", offset=nl + 1 + min(len(body), 4 * n))
    control = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(2, gh, gw)
    return control, h, w


# -- raw rasters and images -----------------------------------------------------

def write_f32(path, array, **meta):
    """JSON header line, then the array as row-major little-endian float32."""
    array = np.asarray(array)
    header = dict(meta, shape=list(array.shape), dtype="f32", order="C", endian="little")
    Path(path).write_bytes(
        json.dumps(header, sort_keys=True).encode("ascii") + b"\n" + array.astype("<f4").tobytes()
    )


def read_f32(path):
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise ParseError("missing JSON header", offset=0)
    try:
        header = json.loads(data[:nl])
    except ValueError:
        raise ParseError("malformed JSON header", line=1) from None
    shape = tuple(header["shape"])
    body = data[nl + 1:]
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(body) != expected:
        raise ParseError(f"expected {expected} payload bytes, found {len(body)}", offset=nl + 1)
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float64), header


def write_pgm16(path, image):
    """Affinely normalize to 16-bit P5 and record the mapping in ``<path>.json``.

    Returns the sidecar dict ``{"min", "max", "maxval"}``.
    """
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if hi > lo:
        q = np.rint((image - lo) / (hi - lo) * 65535.0)
    else:
        q = np.zeros_like(image)
    h, w = image.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode("ascii") + q.astype(">u2").tobytes())
    side = {"min": lo, "max": hi, "maxval": 65535}
    Path(str(path) + ".json").write_text(json.dumps(side, sort_keys=True) + "\n")
    return side


def read_pgm16(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", offset=pos)
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ParseError("not a binary PGM", offset=0)
    w, h, maxval = (int(v) for v in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data[pos:], dtype=dtype, count=w * h).reshape(h, w)


def write_ppm(path, rgb):
    rgb = np.asarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes())


# -- tensor bundles -----------------------------------------------------------

def write_tsr(path, tensors):
    """Store named float arrays: ``TSR1``, u32 manifest length, JSON manifest, payload.

    Offsets in the manifest are relative to the start of the payload.
    """
    manifest = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = arr.astype("<f4").tobytes(order="C")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "f32", "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(TSR_MAGIC + struct.pack("<I", len(blob)) + blob + b"".join(chunks))


def read_tsr(path):
    """Returns an insertion-ordered dict of float64 arrays."""
    data = Path(path).read_bytes()
    if data[:4] != TSR_MAGIC or len(data) < 8:
        raise ParseError("bad magic, expected TSR1", offset=0)
    (mlen,) = struct.unpack_from("<I", data, 4)
    try:
        manifest = json.loads(data[8:8 + mlen])
    except ValueError:
        raise ParseError("malformed manifest", offset=8) from None
    payload = data[8 + mlen:]
    out = {}
    for entry in manifest:
        if entry.get("dtype") != "f32":
            raise ParseError(f"unsupported dtype {entry.get('dtype')!r} for {entry.get('name')!r}", offset=8)
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = int(entry["offset"])
        if start + 4 * count > len(payload):
            raise ParseError(f"tensor {entry['name']!r} overruns payload", offset=8 + mlen + start)
        out[entry["name"]] = (
            np.frombuffer(payload, dtype="<f4", count=count, offset=start).astype(np.float64).reshape(shape)
        )
    return out
