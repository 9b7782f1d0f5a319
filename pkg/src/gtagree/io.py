"""File formats: masks, response maps, colour images, manifests and reports.

Masks are 8-bit PGM (P5) or PNG; any nonzero pixel loads as 1 and writes
store 0/255.  Response maps are 8/16-bit PGM or PNG (scaled to [0, 1] by the
maximum value) or a CSV whose first line is ``X,Y`` followed by one value
per line in row-major order.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import DimensionError, GtAgreeError, InputError
from .features import ColorImage
from .masks import AnnotationStack

REPORT_SCHEMA = 1


class ManifestError(GtAgreeError, ValueError):
    """A manifest is malformed or refers to unusable files."""


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.array(im)
    if arr.ndim == 3:
        arr = arr.any(axis=-1)
    return (arr != 0).astype(np.uint8)


def write_mask(path, mask) -> None:
    arr = (np.asarray(mask) != 0).astype(np.uint8) * 255
    Image.fromarray(arr).save(path)


def write_gray8(path, values) -> None:
    Image.fromarray(np.asarray(values, dtype=np.uint8)).save(path)


def read_response(path) -> np.ndarray:
    """Load a response map as float64 in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_response_csv(path)
    with Image.open(path) as im:
        mode = im.mode
        arr = np.array(im)
    if arr.ndim == 3:
        raise InputError(f"{path}: response maps must be single-channel")
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode in ("I", "I;16", "I;16B", "I;16L"):
        return arr.astype(np.float64) / 65535.0
    if mode == "F":
        return _normalise(arr.astype(np.float64))
    raise InputError(f"{path}: unsupported image mode {mode}")


def _normalise(values: np.ndarray) -> np.ndarray:
    if not np.isfinite(values).all():
        raise InputError("response contains non-finite values")
    lo, hi = float(values.min()), float(values.max())
    if lo >= 0.0 and hi <= 1.0:
        return values
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def _read_response_csv(path: Path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        try:
            x, y = (int(v) for v in header.split(","))
        except ValueError:
            raise InputError(f"{path}: first line must be 'X,Y', got {header!r}") from None
        values = np.array([float(line) for line in fh if line.strip()], dtype=np.float64)
    if values.size != x * y:
        raise DimensionError(f"{path}: header says {x}x{y} but {values.size} values follow")
    return _normalise(values.reshape(y, x))


def write_response_csv(path, values) -> None:
    arr = np.asarray(values, dtype=np.float64)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{arr.shape[1]},{arr.shape[0]}\n")
        for v in arr.ravel().tolist():
            fh.write(f"{v!r}\n")


def read_image(path) -> ColorImage:
    """Load an image with every channel scaled to [0, 255].

    8-bit data is kept as is, 16-bit data is divided by 257 and floating
    point data outside [0, 255] is min-max rescaled.
    """
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("L", "I", "I;16", "I;16B", "I;16L", "F"):
            arr = np.array(im).astype(np.float64)
        else:
            arr = np.array(im.convert("RGB")).astype(np.float64)
    if mode.startswith("I"):
        arr = arr * (255.0 / 65535.0)
    elif mode == "F" and (arr.min() < 0 or arr.max() > 255):
        arr = 255.0 * _normalise(arr)
    return ColorImage.from_array(arr)


def write_rgb(path, img: ColorImage) -> None:
    rgb = np.stack([img.channel(c) for c in ("R", "G", "B")], axis=-1)
    Image.fromarray(np.clip(np.round(rgb), 0, 255).astype(np.uint8)).save(path)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False)
        fh.write("\n")


@dataclass
class StackManifest:
    """Annotation stack description; relative paths resolve against ``base``."""

    annotations: list[tuple[str, Path]]
    image: Optional[Path] = None
    roi: Optional[Path] = None
    extents: Optional[list[tuple[int, int, int, int]]] = None
    base: Path = field(default_factory=Path.cwd)

    @property
    def input_paths(self) -> list[Path]:
        paths = [p for _, p in self.annotations]
        paths += [p for p in (self.image, self.roi) if p is not None]
        return paths

    def load_stack(self) -> AnnotationStack:
        masks = [read_mask(p) for _, p in self.annotations]
        roi = read_mask(self.roi) if self.roi is not None else None
        stack = AnnotationStack.from_masks(masks, ids=[a for a, _ in self.annotations], roi=roi)
        if self.extents:
            check_extents(self.extents, stack.grid.width, stack.grid.height)
        return stack

    def load_image(self) -> Optional[ColorImage]:
        return read_image(self.image) if self.image is not None else None

    def to_dict(self) -> dict:
        out: dict = {"annotations": [{"id": a, "path": _rel(p, self.base)} for a, p in self.annotations]}
        if self.image is not None:
            out["image"] = _rel(self.image, self.base)
        if self.roi is not None:
            out["roi"] = _rel(self.roi, self.base)
        if self.extents:
            out["extents"] = [list(e) for e in self.extents]
        return out


def _rel(p: Path, base: Path) -> str:
    try:
        return Path(os.path.relpath(p, base)).as_posix()
    except ValueError:
        return str(p)


def check_extents(extents, width: int, height: int) -> None:
    """Sub-image rectangles must tile the grid exactly, without overlap."""
    cover = np.zeros((height, width), dtype=np.int32)
    for x, y, w, h in extents:
        if w <= 0 or h <= 0 or x < 0 or y < 0 or x + w > width or y + h > height:
            raise ManifestError(f"extent {(x, y, w, h)} lies outside the {width}x{height} grid")
        cover[y:y + h, x:x + w] += 1
    if (cover != 1).any():
        raise ManifestError("extents must tile the grid without gaps or overlap")


def load_manifest(path) -> StackManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    base = path.parent.resolve()
    entries = data.get("annotations") or []
    if not entries:
        raise ManifestError(f"{path}: at least one annotation entry is required")

    def resolve(p: str) -> Path:
        full = (base / p).resolve()
        if not full.exists():
            raise ManifestError(f"{path}: referenced file {p} does not exist")
        return full

    annotations = [(str(e["id"]), resolve(e["path"])) for e in entries]
    extents = data.get("extents")
    return StackManifest(
        annotations,
        image=resolve(data["image"]) if data.get("image") else None,
        roi=resolve(data["roi"]) if data.get("roi") else None,
        extents=[tuple(int(v) for v in e) for e in extents] if extents else None,
        base=base,
    )


def load_named_paths(path, key: str) -> list[tuple[str, Path]]:
    """Read ``{key: [{"name": ..., "path": ...}, ...]}`` with relative paths resolved."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    entries = data.get(key) or []
    if not entries:
        raise ManifestError(f"{path}: no entries under {key!r}")
    base = path.parent.resolve()
    out = []
    for e in entries:
        full = (base / e["path"]).resolve()
        if not full.exists():
            raise ManifestError(f"{path}: referenced file {e['path']} does not exist")
        out.append((str(e["name"]), full))
    return out
