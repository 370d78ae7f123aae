"""Binary file formats, images and manifests.

All integers and floats are little-endian.

EETW (weights): ``b"EETW"``, u32 version=1, u32 tensor count, then per
tensor u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims, float32 data.

EETB (binary codes): ``b"EETB"``, u32 version=1, u32 k, u64 n,
n * ceil(k/8) packed bytes (LSB-first), n x u32 labels.

EETC (real code / feature matrix): ``b"EETC"``, u32 k, u32 n, n x k float32
row-major (one row per item).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .retrieval import BinaryCodeSet, code_bytes
from .vit import ModelWeights, ViTConfig

PIXEL_MEAN = 0.5
PIXEL_STD = 0.5


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"unexpected end of file (wanted {n} bytes, got {len(data)})")
    return data


def _check_magic(fh, magic: bytes) -> None:
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(b"EETW")
        fh.write(struct.pack("<II", 1, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    tensors = {}
    with open(path, "rb") as fh:
        _check_magic(fh, b"EETW")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != 1:
            raise FormatError(f"unsupported EETW version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
            size = int(np.prod(dims)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 4 * size), dtype="<f4")
            tensors[name] = data.astype(np.float64).reshape(dims)
        if fh.read(1):
            raise FormatError("trailing bytes after last tensor")
    return tensors


def save_weights(path, w: ModelWeights) -> None:
    write_tensors(path, w.tensors)


def load_weights(path, cfg: ViTConfig) -> ModelWeights:
    return ModelWeights(cfg, read_tensors(path))


def write_codes(path, codes: BinaryCodeSet) -> None:
    with open(path, "wb") as fh:
        fh.write(b"EETB")
        fh.write(struct.pack("<IIQ", 1, codes.k, codes.n))
        fh.write(codes.bits.tobytes())
        fh.write(codes.labels.astype("<u4").tobytes())


def read_codes(path) -> BinaryCodeSet:
    with open(path, "rb") as fh:
        _check_magic(fh, b"EETB")
        version, k, n = struct.unpack("<IIQ", _read_exact(fh, 16))
        if version != 1:
            raise FormatError(f"unsupported EETB version {version}")
        width = code_bytes(k)
        bits = np.frombuffer(_read_exact(fh, n * width), dtype=np.uint8).reshape(n, width)
        labels = np.frombuffer(_read_exact(fh, 4 * n), dtype="<u4").astype(np.int64)
        if fh.read(1):
            raise FormatError("trailing bytes after labels")
    return BinaryCodeSet(k=k, bits=bits.copy(), labels=labels)


def write_matrix(path, rows) -> None:
    """Write an n x k real matrix in the EETC layout."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise FormatError("EETC payload must be 2-D")
    n, k = rows.shape
    with open(path, "wb") as fh:
        fh.write(b"EETC")
        fh.write(struct.pack("<II", k, n))
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_magic(fh, b"EETC")
        k, n = struct.unpack("<II", _read_exact(fh, 8))
        data = np.frombuffer(_read_exact(fh, 4 * n * k), dtype="<f4")
        if fh.read(1):
            raise FormatError("trailing bytes after EETC payload")
    return data.astype(np.float64).reshape(n, k)


def load_pixels(path) -> np.ndarray:
    """(H, W, C) pixel values in [0, 1] from a binary PPM or a raw ``.f32`` file.

    ``.f32`` files hold u32 h, w, c followed by h*w*c float32 values.
    """
    path = Path(path)
    if path.suffix == ".f32":
        with open(path, "rb") as fh:
            h, w, c = struct.unpack("<III", _read_exact(fh, 12))
            data = np.frombuffer(_read_exact(fh, 4 * h * w * c), dtype="<f4")
        return data.astype(np.float64).reshape(h, w, c)
    with Image.open(path) as img:
        if img.format != "PPM" or img.mode != "RGB":
            raise FormatError(f"{path}: expected an 8-bit binary PPM (P6), got {img.format} {img.mode}")
        return np.asarray(img, dtype=np.float64) / 255.0


def normalize(pixels: np.ndarray) -> np.ndarray:
    return (pixels - PIXEL_MEAN) / PIXEL_STD


def load_image(path) -> np.ndarray:
    """Model input for an image file: pixels scaled to [0, 1] then normalized."""
    return normalize(load_pixels(path))


def write_ppm(path, pixels_u8: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels_u8, dtype=np.uint8), mode="RGB").save(path, format="PPM")


def write_f32_image(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.float64)
    h, w, c = pixels.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<III", h, w, c))
        fh.write(np.ascontiguousarray(pixels, dtype="<f4").tobytes())


@dataclass(frozen=True)
class Manifest:
    root: Path
    entries: list[tuple[str, int]]

    @property
    def labels(self) -> np.ndarray:
        return np.array([label for _, label in self.entries], dtype=np.int64)

    def path(self, i: int) -> Path:
        return self.root / self.entries[i][0]

    def __len__(self) -> int:
        return len(self.entries)


def read_manifest(path, root=None) -> Manifest:
    """``relative_path,label_id`` rows, no header; root defaults to the file's directory."""
    path = Path(path)
    root = Path(root) if root is not None else path.parent
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'relative_path,label_id'")
            rel, label = row[0].strip(), row[1].strip()
            if Path(rel).is_absolute() or ".." in Path(rel).parts:
                raise FormatError(f"{path}:{lineno}: path must stay under the manifest root")
            try:
                entries.append((rel, int(label)))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: label {label!r} is not an integer") from None
    labels = sorted({label for _, label in entries})
    if labels and labels != list(range(labels[-1] + 1)):
        raise FormatError(f"{path}: labels must be dense in [0, C), got {labels[:10]}")
    return Manifest(root=root, entries=entries)


def write_manifest(path, entries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for rel, label in entries:
            writer.writerow([rel, label])


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
