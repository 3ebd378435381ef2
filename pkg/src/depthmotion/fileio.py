"""PPM / PGM / PFM readers and writers plus plain-text scene manifests.

PFM scanlines are stored bottom-to-top per the format; all float data is
64-bit in memory and 32-bit in PFM files (the format is single precision),
so exact round-trips quantize to float32.
"""

import numpy as np


def write_ppm(path, img):
    """img: 3 x H x W float in [0, 1] -> binary 8-bit P6."""
    c, h, w = img.shape
    if c != 3:
        raise ValueError("PPM needs 3 channels, got %d" % c)
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(data.transpose(1, 2, 0).tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P6":
            raise ValueError("not a binary PPM: %r" % magic)
        w, h = _read_header_ints(f, 2)
        maxval = _read_header_ints(f, 1)[0]
        raw = np.frombuffer(f.read(w * h * 3), dtype=np.uint8)
    img = raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / maxval
    return img


def write_pgm(path, values):
    """values: H x W integers in [0, 255] -> binary P5."""
    data = np.asarray(values)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(data.astype(np.uint8).tobytes())


def read_pgm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError("not a binary PGM: %r" % magic)
        w, h = _read_header_ints(f, 2)
        _read_header_ints(f, 1)
        raw = np.frombuffer(f.read(w * h), dtype=np.uint8)
    return raw.reshape(h, w).copy()


def _read_header_ints(f, n):
    vals = []
    while len(vals) < n:
        line = f.readline()
        if not line:
            raise ValueError("truncated header")
        line = line.split(b"#")[0]
        vals.extend(int(tok) for tok in line.split())
    return vals


def write_pfm(path, arr):
    """arr: (H, W) or (C, H, W) with C = 3; stored little-endian float32."""
    data = np.asarray(arr, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
        h, w = data.shape
        rows = data
    elif data.ndim == 3 and data.shape[0] == 3:
        header = b"PF"
        _, h, w = data.shape
        rows = data.transpose(1, 2, 0)
    else:
        raise ValueError("PFM supports (H,W) or (3,H,W), got %s" % (data.shape,))
    with open(path, "wb") as f:
        f.write(header + b"\n%d %d\n-1.0\n" % (w, h))
        f.write(rows[::-1].astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ValueError("not a PFM file: %r" % magic)
        w, h = (int(t) for t in f.readline().split())
        scale = float(f.readline())
        ch = 3 if magic == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        raw = np.frombuffer(f.read(w * h * ch * 4), dtype=dtype)
    rows = raw.reshape(h, w, ch)[::-1]
    out = rows.transpose(2, 0, 1).astype(np.float64)
    return out[0] if ch == 1 else out


def format_floats(values):
    return " ".join("%.17g" % v for v in np.asarray(values).ravel())
