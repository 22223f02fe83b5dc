"""Binary raster and checkpoint files, the dataset manifest and PPM rendering.

Raster layout (little-endian)::

    magic   4 bytes   b"IGRM" | b"COHR" | b"PHSE"
    version u8        1
    height  u32
    width   u32
    payload f32       row-major; IGRM interleaves (real, imag)

Checkpoint layout (little-endian)::

    magic "CNNM", version u8, descriptor length u32, descriptor utf-8,
    layer count u32, then per layer: out, in, kh, kw (u32 each),
    kernel values f32, bias values f32
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

RASTER_KINDS = {b"IGRM": "IGRM", b"COHR": "COHR", b"PHSE": "PHSE"}
VERSION = 1
HEADER = struct.Struct("<4sBII")
MAX_PIXELS = 1 << 30


class RasterFormatError(ValueError):
    """Malformed file.  ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class BadMagicError(RasterFormatError):
    pass


class UnsupportedVersionError(RasterFormatError):
    pass


class TruncatedFileError(RasterFormatError):
    def __init__(self, expected, actual, offset=0):
        super().__init__(f"truncated file: expected {expected} bytes, found {actual}", offset)
        self.expected = expected
        self.actual = actual


class DimensionOverflowError(RasterFormatError):
    pass


class CoherenceRangeError(RasterFormatError):
    pass


def _atomic_write(path, data):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _infer_kind(arr):
    if np.iscomplexobj(arr):
        return "IGRM"
    return "PHSE"


def encode_raster(raster, kind=None):
    arr = np.asarray(raster)
    kind = kind or _infer_kind(arr)
    if kind not in RASTER_KINDS.values():
        raise ValueError(f"unknown raster kind {kind!r}")
    if arr.ndim != 2:
        raise ValueError(f"raster must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if kind == "IGRM":
        arr = arr.astype(np.complex64)
        payload = np.stack([arr.real, arr.imag], axis=-1)
    else:
        if np.iscomplexobj(arr):
            raise ValueError(f"{kind} rasters are real-valued")
        payload = arr
        if kind == "COHR" and (payload.min() < 0 or payload.max() > 1):
            raise ValueError("coherence values must lie in [0, 1]")
    payload = np.ascontiguousarray(payload, dtype="<f4")
    return HEADER.pack(kind.encode(), VERSION, h, w) + payload.tobytes()


def decode_raster(data):
    """Parse raster bytes; returns ``(kind, array)``."""
    if len(data) < HEADER.size:
        raise TruncatedFileError(HEADER.size, len(data), offset=len(data))
    magic, version, h, w = HEADER.unpack_from(data)
    if magic not in RASTER_KINDS:
        raise BadMagicError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if h == 0 or w == 0 or h * w > MAX_PIXELS:
        raise DimensionOverflowError(f"invalid dimensions {h} x {w}", 5)
    kind = RASTER_KINDS[magic]
    per_pixel = 2 if kind == "IGRM" else 1
    expected = HEADER.size + 4 * per_pixel * h * w
    if len(data) != expected:
        if len(data) < expected:
            raise TruncatedFileError(expected, len(data), offset=len(data))
        raise RasterFormatError(f"trailing data: expected {expected} bytes, found {len(data)}",
                                expected)
    values = np.frombuffer(data, dtype="<f4", offset=HEADER.size).astype(np.float32)
    if kind == "IGRM":
        pairs = values.reshape(h, w, 2)
        return kind, (pairs[..., 0] + 1j * pairs[..., 1]).astype(np.complex64)
    arr = values.reshape(h, w)
    if kind == "COHR":
        bad = np.flatnonzero((arr < 0) | (arr > 1) | ~np.isfinite(arr))
        if bad.size:
            raise CoherenceRangeError(
                f"coherence value {arr.flat[bad[0]]} outside [0, 1]",
                HEADER.size + 4 * int(bad[0]))
    return kind, arr


def write_raster(raster, path, kind=None):
    """Write a raster; ``kind`` defaults to IGRM for complex input, else PHSE."""
    _atomic_write(path, encode_raster(raster, kind))


def read_raster(path, expect=None):
    """Read a raster file.  With ``expect`` set, other kinds are rejected."""
    with open(path, "rb") as fh:
        data = fh.read()
    kind, arr = decode_raster(data)
    if expect is not None and kind != expect:
        raise BadMagicError(f"{path}: expected a {expect} raster, found {kind}", 0)
    return arr


def read_raster_kind(path):
    with open(path, "rb") as fh:
        return decode_raster(fh.read())


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"CNNM"


def encode_checkpoint(network):
    desc = network.descriptor.encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<B", VERSION), struct.pack("<I", len(desc)), desc,
             struct.pack("<I", len(network.layers))]
    for layer in network.layers:
        parts.append(struct.pack("<4I", *layer.kernels.shape))
        parts.append(np.ascontiguousarray(layer.kernels.values, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.bias.values, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(data):
    from .network import Network

    def need(pos, n):
        if pos + n > len(data):
            raise TruncatedFileError(pos + n, len(data), offset=len(data))

    need(0, 9)
    if data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}", 0)
    if data[4] != VERSION:
        raise UnsupportedVersionError(f"unsupported version {data[4]}", 4)
    (dlen,) = struct.unpack_from("<I", data, 5)
    pos = 9
    need(pos, dlen + 4)
    descriptor = data[pos:pos + dlen].decode("utf-8")
    pos += dlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    network = Network(descriptor)
    if count != len(network.layers):
        raise RasterFormatError(
            f"descriptor has {len(network.layers)} conv layers, file declares {count}", pos - 4)
    weights = []
    for layer in network.layers:
        need(pos, 16)
        shape = struct.unpack_from("<4I", data, pos)
        if shape != layer.kernels.shape:
            raise DimensionOverflowError(
                f"layer shape {shape} does not match descriptor {layer.kernels.shape}", pos)
        pos += 16
        nk = int(np.prod(shape))
        need(pos, 4 * (nk + shape[0]))
        k = np.frombuffer(data, "<f4", nk, pos).reshape(shape)
        pos += 4 * nk
        b = np.frombuffer(data, "<f4", shape[0], pos)
        pos += 4 * shape[0]
        weights.append((k, b))
    if pos != len(data):
        raise RasterFormatError(f"trailing data after {pos} bytes", pos)
    network.set_weights(weights)
    return network


def save_checkpoint(network, path):
    _atomic_write(path, encode_checkpoint(network))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


# --------------------------------------------------------------------------
# manifest

@dataclass
class ManifestRecord:
    index: int
    seed: int
    clean: str
    noisy: str
    gamma: str


def write_manifest(records, path, config=None, master_seed=None):
    lines = ["# interfero manifest v1"]
    if config is not None:
        lines.append(f"# config {config.to_json()}")
    if master_seed is not None:
        lines.append(f"# master_seed {master_seed}")
    lines.append("# index seed clean noisy gamma")
    for r in records:
        lines.append(f"{r.index} {r.seed} {r.clean} {r.noisy} {r.gamma}")
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
    return path


def read_manifest(path):
    """Return ``(records, config_or_None)``; file names resolve against the manifest dir."""
    from .simulator import SceneConfig

    base = os.path.dirname(os.path.abspath(path))
    records, config = [], None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# config "):
                    config = SceneConfig.from_json(line[len("# config "):])
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            idx, seed, *names = parts
            names = [os.path.join(base, n) for n in names]
            records.append(ManifestRecord(int(idx), int(seed), *names))
    return records, config


# --------------------------------------------------------------------------
# rendering

RENDER_MODES = ("phase", "coherence", "amplitude")


def phase_colors(phase):
    """RGB floats in [0, 1]: -pi is blue (hue 240), +pi red (hue 0), via green."""
    wrapped = np.angle(np.exp(1j * np.asarray(phase, dtype=np.float64)))
    t = (wrapped + np.pi) / (2 * np.pi)
    hue = (240.0 * (1.0 - t)) / 60.0
    sector = np.floor(hue).astype(int) % 6
    frac = hue - np.floor(hue)
    q = 1.0 - frac
    one = np.ones_like(frac)
    zero = np.zeros_like(frac)
    table = [
        (one, frac, zero),
        (q, one, zero),
        (zero, one, frac),
        (zero, q, one),
        (frac, zero, one),
        (one, zero, q),
    ]
    rgb = np.zeros(wrapped.shape + (3,))
    for s, (r, g, b) in enumerate(table):
        sel = sector == s
        rgb[sel] = np.stack([r[sel], g[sel], b[sel]], axis=-1)
    return rgb


def render_rgb(raster, mode):
    """Return a ``(H, W, 3)`` uint8 image for ``raster`` in ``mode``."""
    if mode not in RENDER_MODES:
        raise ValueError(f"mode must be one of {RENDER_MODES}, got {mode!r}")
    arr = np.asarray(raster)
    if mode == "phase":
        phase = np.angle(arr) if np.iscomplexobj(arr) else arr
        rgb = phase_colors(phase)
    else:
        if mode == "coherence":
            gray = np.clip(np.abs(arr).astype(np.float64), 0.0, 1.0)
        else:
            amp = np.log1p(np.abs(arr).astype(np.float64))
            peak = amp.max()
            gray = amp / peak if peak > 0 else amp
        rgb = np.repeat(gray[..., None], 3, axis=-1)
    return np.round(rgb * 255.0).astype(np.uint8)


def encode_ppm(rgb):
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb).tobytes()


def render_ppm(raster, path, mode):
    _atomic_write(path, encode_ppm(render_rgb(raster, mode)))
