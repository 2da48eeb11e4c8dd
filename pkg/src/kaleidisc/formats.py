"""File codecs: PMAP pointmap interchange, pose text files, 8-bit images,
and heatmap emission.

PMAP v1 layout, all little-endian: magic ``PMAP``, u32 version, u32 H,
u32 W, then H*W records of three float32 (x, y, z) row-major, then H*W
validity bytes (0/1). Round trips are bit-exact.
"""

import struct

import numpy as np
from PIL import Image

from .errors import (BadMagicError, FormatError, InvalidInputError,
                     TruncatedDataError, VersionMismatchError)
from .pose import CameraPose
from .scene import Pointmap

PMAP_MAGIC = b"PMAP"
PMAP_VERSION = 1


def encode_pmap(pm):
    coords = np.ascontiguousarray(pm.coords, dtype="<f4")
    valid = np.ascontiguousarray(pm.valid, dtype=np.uint8)
    if coords.ndim != 3 or coords.shape[2] != 3 or valid.shape != coords.shape[:2]:
        raise InvalidInputError("pointmap must be (H, W, 3) with an (H, W) mask")
    h, w = coords.shape[:2]
    header = PMAP_MAGIC + struct.pack("<III", PMAP_VERSION, h, w)
    return header + coords.tobytes() + valid.tobytes()


def decode_pmap(data):
    if len(data) < 4 or data[:4] != PMAP_MAGIC:
        raise BadMagicError("not a PMAP stream")
    if len(data) < 16:
        raise TruncatedDataError("PMAP header incomplete")
    version, h, w = struct.unpack("<III", data[4:16])
    if version != PMAP_VERSION:
        raise VersionMismatchError(f"unsupported PMAP version {version}")
    body = 16 + h * w * 12
    total = body + h * w
    if len(data) < total:
        raise TruncatedDataError(f"PMAP payload short: {len(data)} < {total} bytes")
    if len(data) > total:
        raise FormatError(f"PMAP stream has {len(data) - total} trailing bytes")
    coords = np.frombuffer(data, dtype="<f4", count=h * w * 3, offset=16)
    valid = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=body)
    if not np.all((valid == 0) | (valid == 1)):
        raise FormatError("PMAP validity bytes must be 0 or 1")
    return Pointmap(coords.reshape(h, w, 3).astype("<f4"),
                    valid.reshape(h, w).astype(bool))


def read_pmap(path):
    with open(path, "rb") as f:
        return decode_pmap(f.read())


def write_pmap(path, pm):
    with open(path, "wb") as f:
        f.write(encode_pmap(pm))


def save_poses(path, poses):
    """One camera per line: nine row-major rotation entries then the
    translation, world-to-camera, at 17 significant digits."""
    with open(path, "w") as f:
        for p in poses:
            vals = list(p.rotation.ravel()) + list(p.translation)
            f.write(" ".join(f"{v:.17g}" for v in vals) + "\n")


def load_poses(path):
    poses = []
    with open(path) as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 12:
                raise FormatError(f"{path}:{ln}: expected 12 values, got {len(parts)}")
            try:
                vals = np.array([float(x) for x in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{ln}: {exc}") from exc
            poses.append(CameraPose(vals[:9].reshape(3, 3), vals[9:]))
    return poses


def quantize(values):
    """[0, 1] floats to uint8 with deterministic round-half-up."""
    v = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_image(path, pixels):
    """Write an RGB float image in [0, 1] as an 8-bit PNG."""
    Image.fromarray(quantize(pixels), mode="RGB").save(path)


def load_image(path):
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=float) / 255.0


def save_mask(path, mask):
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask(path):
    img = Image.open(path).convert("L")
    return np.asarray(img) > 127


# 17 anchors of a perceptually uniform dark-to-bright ramp.
_RAMP = np.array([
    [68, 1, 84], [71, 24, 106], [72, 40, 120], [69, 55, 129],
    [64, 70, 136], [57, 85, 140], [51, 99, 141], [45, 112, 142],
    [40, 125, 142], [35, 138, 141], [31, 150, 139], [32, 163, 134],
    [41, 175, 127], [60, 187, 117], [86, 198, 103], [143, 215, 68],
    [253, 231, 37],
], dtype=float) / 255.0


def heatmap_colors(normalized):
    """Map [0, 1] scalars through the fixed color ramp."""
    t = np.clip(np.asarray(normalized, dtype=float), 0.0, 1.0) * (len(_RAMP) - 1)
    i0 = np.floor(t).astype(int)
    i1 = np.minimum(i0 + 1, len(_RAMP) - 1)
    f = (t - i0)[..., None]
    return (1 - f) * _RAMP[i0] + f * _RAMP[i1]


def emit_heatmap(channel, mask, path):
    """Min-max normalize a scalar grid over the mask, colorize, and write it.

    Masked-out pixels come out black; their values (NaN included) are
    ignored by the normalization.
    """
    channel = np.asarray(channel, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    vals = channel[mask]
    if vals.size and np.any(~np.isfinite(vals)):
        raise InvalidInputError("non-finite values inside the mask")
    out = np.zeros(channel.shape + (3,))
    if vals.size:
        lo, hi = vals.min(), vals.max()
        span = hi - lo
        norm = (channel - lo) / span if span > 0 else np.full_like(channel, 0.5)
        out[mask] = heatmap_colors(norm[mask])
    save_image(path, out)
