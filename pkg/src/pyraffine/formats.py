"""Binary file formats: flow (PFF1), affine field (PAF1), feature map (PFM1),
parameter checkpoint (PNP1), and binary PGM/PPM image I/O.

All multi-byte integers are 32-bit little-endian unsigned; float payloads are
IEEE-754 little-endian (32-bit for flow/field/feature data, 64-bit for
checkpoints), row-major.
"""

from __future__ import annotations

import struct

import numpy as np

MAX_DIM = 1 << 20  # dimension sanity bound for parsed headers


class FormatError(ValueError):
    """Base class for file parsing failures."""


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class TruncationError(FormatError):
    """File ended before the declared payload was complete."""


class DimensionError(FormatError):
    """Header declares an implausible or overflowing dimension."""


def _read_exact(data: bytes, offset: int, count: int, what: str) -> bytes:
    if offset + count > len(data):
        raise TruncationError(
            f"truncated {what}: expected {offset + count} bytes, file has {len(data)}")
    return data[offset:offset + count]


def _check_dims(*dims: int) -> None:
    total = 1
    for d in dims:
        if d == 0 or d > MAX_DIM:
            raise DimensionError(f"implausible dimension {d}")
        total *= d
    if total > (1 << 34):
        raise DimensionError(f"payload of {total} elements exceeds sanity bound")


def _write_array(path, magic: bytes, dims: tuple[int, ...], arr: np.ndarray) -> None:
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<" + "I" * len(dims), *dims))
        fh.write(payload)


def _read_array(path, magic: bytes, n_dims: int, channels: int) -> tuple[tuple[int, ...], np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    got = _read_exact(data, 0, 4, "magic")
    if got != magic:
        raise MagicError(f"bad magic {got!r}, expected {magic!r}")
    header = _read_exact(data, 4, 4 * n_dims, "header")
    dims = struct.unpack("<" + "I" * n_dims, header)
    _check_dims(*dims)
    count = int(np.prod(dims)) * channels
    payload = _read_exact(data, 4 + 4 * n_dims, count * 4, "payload")
    extra = len(data) - (4 + 4 * n_dims + count * 4)
    if extra:
        raise FormatError(f"{extra} trailing bytes after payload")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims + (channels,))
    return dims, arr


def save_flow(path, flow: np.ndarray) -> None:
    """Write an (H, W, 2) flow as PFF1: magic, H, W, then interleaved (dx, dy)."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must be (H, W, 2), got {flow.shape}")
    _write_array(path, b"PFF1", flow.shape[:2], flow)


def load_flow(path) -> np.ndarray:
    _, arr = _read_array(path, b"PFF1", 2, 2)
    return arr.astype(np.float64)


def save_affine_field(path, params: np.ndarray) -> None:
    """Write (H, W, 6) affine params as PAF1 in order a11,a12,tx,a21,a22,ty."""
    params = np.asarray(params)
    if params.ndim != 3 or params.shape[2] != 6:
        raise ValueError(f"affine field must be (H, W, 6), got {params.shape}")
    _write_array(path, b"PAF1", params.shape[:2], params)


def load_affine_field(path) -> np.ndarray:
    _, arr = _read_array(path, b"PAF1", 2, 6)
    return arr.astype(np.float64)


def save_feature_map(path, data: np.ndarray) -> None:
    """Write an (H, W, D) feature map as PFM1 (channel-fastest payload)."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"feature map must be (H, W, D), got {data.shape}")
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    h, w, d = data.shape
    with open(path, "wb") as fh:
        fh.write(b"PFM1")
        fh.write(struct.pack("<III", h, w, d))
        fh.write(payload)


def load_feature_map(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    got = _read_exact(data, 0, 4, "magic")
    if got != b"PFM1":
        raise MagicError(f"bad magic {got!r}, expected b'PFM1'")
    h, w, d = struct.unpack("<III", _read_exact(data, 4, 12, "header"))
    _check_dims(h, w, d)
    count = h * w * d
    payload = _read_exact(data, 16, count * 4, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w, d).astype(np.float32)


def save_checkpoint(path, blocks: list[tuple[str, np.ndarray]]) -> None:
    """Write named float64 arrays as PNP1: magic, count, then per block
    name length+bytes, rank+dims, float64 payload."""
    with open(path, "wb") as fh:
        fh.write(b"PNP1")
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            raw = name.encode("utf-8")
            # ascontiguousarray would promote rank-0 blocks to rank 1
            arr = np.asarray(arr, dtype="<f8", order="C")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack("<" + "I" * arr.ndim, *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    got = _read_exact(data, 0, 4, "magic")
    if got != b"PNP1":
        raise MagicError(f"bad magic {got!r}, expected b'PNP1'")
    (count,) = struct.unpack("<I", _read_exact(data, 4, 4, "block count"))
    offset = 8
    blocks = []
    for _ in range(count):
        (name_len,) = struct.unpack("<I", _read_exact(data, offset, 4, "name length"))
        offset += 4
        name = _read_exact(data, offset, name_len, "name").decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack("<I", _read_exact(data, offset, 4, "rank"))
        offset += 4
        if rank > 8:
            raise DimensionError(f"implausible rank {rank} for block {name!r}")
        dims = struct.unpack("<" + "I" * rank, _read_exact(data, offset, 4 * rank, "dims"))
        offset += 4 * rank
        if rank:
            _check_dims(*dims)
        n = int(np.prod(dims)) if rank else 1
        payload = _read_exact(data, offset, n * 8, f"payload of {name!r}")
        offset += n * 8
        blocks.append((name, np.frombuffer(payload, dtype="<f8").reshape(dims).copy()))
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes after payload")
    return blocks


def save_image(path, img: np.ndarray) -> None:
    """Write a grayscale (H, W) or RGB (H, W, 3) uint8 image as binary PGM/PPM."""
    img = np.asarray(img)
    arr = np.clip(np.round(img), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        header = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"P6"
    else:
        raise ValueError(f"image must be (H, W) or (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(header + b"\n%d %d\n255\n" % (w, h))
        fh.write(arr.tobytes())


def load_image(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) image as a float64 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise MagicError(f"bad magic {magic!r}, expected b'P5' or b'P6'")
    # header tokens: magic, width, height, maxval; # comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncationError("truncated header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    _check_dims(h, w)
    channels = 3 if magic == b"P6" else 1
    count = h * w * channels
    payload = _read_exact(data, pos, count, "pixel payload")
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
    if channels == 3:
        return arr.reshape(h, w, 3)
    return arr.reshape(h, w)
