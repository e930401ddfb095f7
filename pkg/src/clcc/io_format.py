"""On-disk formats: raw images, datasets (manifest + images), checkpoints.

Image file (little-endian)::

    0   8   magic b"CLCCIMG1"
    8   4   width  (u32)
    12  4   height (u32)
    16  4   channels (u32, always 3)
    20  ... height*width*3 float32, row-major, interleaved RGB

Checkpoint file (little-endian)::

    magic b"CLCCCKPT", u32 format version, u32 n, n bytes of JSON config,
    u32 tensor count, then per tensor: u32 name length, UTF-8 name,
    u32 ndim, ndim x u32 shape, float32 payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .scene_synth import LabeledImage

IMAGE_MAGIC = b"CLCCIMG1"
IMAGE_MAGIC_PREFIX = b"CLCCIMG"
CKPT_MAGIC = b"CLCCCKPT"
CKPT_VERSION = 1
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedVersion(FormatError):
    pass


def encode_image(img) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {img.shape}")
    h, w, c = img.shape
    return IMAGE_MAGIC + struct.pack("<III", w, h, c) + np.ascontiguousarray(img, dtype="<f4").tobytes()


def decode_image(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise FormatError("truncated magic", len(buf))
    magic = bytes(buf[:8])
    if magic != IMAGE_MAGIC:
        if magic.startswith(IMAGE_MAGIC_PREFIX):
            raise UnsupportedVersion(f"unsupported image version {magic!r}", 0)
        raise FormatError(f"bad image magic {magic!r}", 0)
    if len(buf) < 20:
        raise FormatError("truncated header", len(buf))
    w, h, c = struct.unpack_from("<III", buf, 8)
    if c != 3:
        raise FormatError(f"expected 3 channels, found {c}", 16)
    need = 20 + 4 * w * h * c
    if len(buf) < need:
        raise FormatError(f"truncated payload: need {need} bytes, have {len(buf)}", len(buf))
    if len(buf) > need:
        raise FormatError("trailing bytes after payload", need)
    return np.frombuffer(buf, dtype="<f4", count=w * h * c, offset=20).reshape(h, w, c).astype(np.float32)


def write_image(path, img) -> None:
    Path(path).write_bytes(encode_image(img))


def read_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def _image_name(i: int) -> str:
    return f"img_{i:05d}.clccimg"


def write_dataset(directory, samples, meta: dict | None = None) -> Path:
    """Write images plus ``manifest.json`` (floats are written with repr, so exact)."""
    d = Path(directory)
    (d / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        name = f"images/{_image_name(i)}"
        write_image(d / name, s.image)
        records.append({
            "file": name,
            "scene_id": int(s.scene_id),
            "illuminant_id": int(s.illuminant_id),
            "illuminant": [float(v) for v in s.illuminant],
            "checker": [[float(v) for v in row] for row in s.checker],
            "checker_region": [int(v) for v in s.checker_region],
            **({"meta": s.meta} if s.meta else {}),
        })
    manifest = {"format_version": MANIFEST_VERSION, **(meta or {}), "images": records}
    (d / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return d


def read_dataset(directory):
    """Load ``(samples, manifest)``; validates files and id consistency."""
    d = Path(directory)
    manifest = json.loads((d / MANIFEST_NAME).read_text())
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('format_version')!r}")
    samples = []
    illum_by_id = {}
    for rec in manifest["images"]:
        img = read_image(d / rec["file"])
        checker = np.asarray(rec["checker"], dtype=np.float64)
        if checker.shape != (24, 3):
            raise ValueError(f"{rec['file']}: checker must be 24x3")
        illum = np.asarray(rec["illuminant"], dtype=np.float64)
        region = tuple(int(v) for v in rec["checker_region"])
        y0, x0, h, w = region
        if y0 < 0 or x0 < 0 or y0 + h > img.shape[0] or x0 + w > img.shape[1]:
            raise ValueError(f"{rec['file']}: checker region outside image")
        samples.append(LabeledImage(img, illum, checker, int(rec["scene_id"]),
                                    int(rec["illuminant_id"]), region, rec.get("meta", {})))
        illum_by_id.setdefault(int(rec["illuminant_id"]), []).append(illum / np.linalg.norm(illum))
    for iid, dirs in illum_by_id.items():
        if np.max(np.abs(np.asarray(dirs) - dirs[0])) > 1e-6:
            raise ValueError(f"illuminant_id {iid} labels disagree across images")
    return samples, manifest


def write_checkpoint(path, params, config: dict) -> None:
    """Serialize model tensors (as float32) with a JSON config echo."""
    blob = json.dumps(config, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(blob)), blob,
             struct.pack("<I", len(params.tensors))]
    for name, t in params.tensors.items():
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path):
    """Return ``(tensors, config)``; tensors is an ordered dict of float32 arrays."""
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {buf[:8]!r}", 0)
    off = 8

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise FormatError("truncated checkpoint", off)
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    version, n = take("<II")
    if version != CKPT_VERSION:
        raise UnsupportedVersion(f"unsupported checkpoint version {version}", 8)
    if off + n > len(buf):
        raise FormatError("truncated config", off)
    config = json.loads(buf[off:off + n].decode())
    off += n
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        (ln,) = take("<I")
        name = buf[off:off + ln].decode()
        off += ln
        (ndim,) = take("<I")
        shape = take(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape)) if ndim else 1
        if off + 4 * size > len(buf):
            raise FormatError(f"truncated tensor {name!r}", off)
        tensors[name] = np.frombuffer(buf, "<f4", size, off).reshape(shape).astype(np.float32)
        off += 4 * size
    if off != len(buf):
        raise FormatError("trailing bytes in checkpoint", off)
    return tensors, config
