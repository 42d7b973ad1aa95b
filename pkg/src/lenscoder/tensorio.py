"""On-disk tensor format plus PPM/PFM image export.

Tensor file layout (little-endian throughout):

========  =====================================================
bytes     contents
========  =====================================================
0-3       magic ``LCT1``
4         dtype code: 0 = float64, 1 = complex128
5         rank (1..8)
6..       ``rank`` u32 dims
..        f64 pixel pitch in meters (0.0 = absent)
..        payload, row-major
========  =====================================================
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"LCT1"
_DTYPE_REAL = 0
_DTYPE_COMPLEX = 1
_MAX_RANK = 8
_MAX_DIM = 2**32 - 1


def write_tensor(path, data, pitch_m=None):
    """Write an array to ``path`` in the LCT1 format.

    Parameters
    ----------
    data : ndarray
        Real (stored float64) or complex (stored complex128) array, rank 1-8.
    pitch_m : float, optional
        Physical pixel pitch in meters; stored as 0.0 when omitted.
    """
    data = np.asarray(data)
    if data.ndim < 1 or data.ndim > _MAX_RANK:
        raise FormatError(f"rank {data.ndim} outside supported range 1..{_MAX_RANK}")
    if any(d > _MAX_DIM for d in data.shape):
        raise FormatError("dimension overflows u32")
    if pitch_m is not None and not pitch_m > 0:
        raise ValueError("pitch_m must be positive when given")
    if np.iscomplexobj(data):
        code, payload = _DTYPE_COMPLEX, data.astype(np.complex128, copy=False)
    else:
        code, payload = _DTYPE_REAL, data.astype(np.float64, copy=False)
    header = MAGIC + struct.pack("<BB", code, data.ndim)
    header += struct.pack(f"<{data.ndim}I", *data.shape)
    header += struct.pack("<d", 0.0 if pitch_m is None else float(pitch_m))
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(payload).tobytes())


def read_tensor(path):
    """Read an LCT1 tensor; returns ``(array, pitch_m_or_None)``."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    if len(raw) < 6:
        raise FormatError("truncated header")
    code, rank = struct.unpack_from("<BB", raw, 4)
    if code not in (_DTYPE_REAL, _DTYPE_COMPLEX):
        raise FormatError(f"unknown dtype code {code}")
    if rank < 1 or rank > _MAX_RANK:
        raise FormatError(f"rank {rank} outside supported range 1..{_MAX_RANK}")
    off = 6
    if len(raw) < off + 4 * rank + 8:
        raise FormatError("truncated header")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    (pitch,) = struct.unpack_from("<d", raw, off)
    off += 8
    dtype = np.float64 if code == _DTYPE_REAL else np.complex128
    count = int(np.prod(dims, dtype=np.int64))
    expected = count * np.dtype(dtype).itemsize
    if len(raw) - off != expected:
        raise FormatError(f"payload is {len(raw) - off} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=off).reshape(dims)
    return data.copy(), (pitch if pitch > 0 else None)


def write_ppm(path, img):
    """Write an 8-bit binary PPM (P6). Input is (H, W) or (H, W, 3) in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM wants (H, W) or (H, W, 3), got {img.shape}")
    u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(u8.tobytes())


def write_pfm(path, img):
    """Write a little-endian PFM (``Pf`` grayscale or ``PF`` color).

    PFM stores rows bottom-up; a negative scale marks little-endian data.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        header = b"Pf\n"
    elif img.ndim == 3 and img.shape[2] == 3:
        header = b"PF\n"
    else:
        raise FormatError(f"PFM wants (H, W) or (H, W, 3), got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(img[::-1]).tobytes())


def read_pfm(path):
    """Read a PFM file; returns a float64 array, (H, W) or (H, W, 3)."""
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(raw):  # magic, width, height, scale
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":  # comment line
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if len(tokens) < 4:
        raise FormatError("truncated PFM header")
    magic = tokens[0]
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"bad PFM magic {magic!r}")
    pos += 1  # single whitespace after the scale token
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError as e:
        raise FormatError(f"bad PFM header: {e}") from None
    channels = 3 if magic == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(raw) - pos < count * 4:
        raise FormatError("truncated PFM payload")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    img = data.reshape(h, w, channels)[::-1].astype(np.float64)
    return img[:, :, 0] if channels == 1 else img.copy()
