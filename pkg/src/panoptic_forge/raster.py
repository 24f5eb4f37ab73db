"""Panoptic maps, semantic logits and their on-disk formats.

Panoptic maps use the COCO panoptic layout: an 8-bit RGB PNG whose pixels
encode a segment id as ``R + 256*G + 256**2*B`` plus a JSON record listing
the segments. Logits use a small raw tensor format (``PTNS``)::

    magic   4 bytes  b"PTNS"
    version u8       1
    dtype   u8       1 = float32 LE, 2 = uint32 LE
    ndim    u8
    dims    ndim x u32 LE
    payload row-major
"""

import io
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from PIL import Image

from panoptic_forge.errors import (
    BadMagicError,
    PayloadLengthError,
    RasterError,
    StructuralError,
    UnsupportedDtypeError,
    UnsupportedVersionError,
)

MAX_ID = 1 << 24
VOID = 0

TENSOR_MAGIC = b"PTNS"
TENSOR_VERSION = 1
DTYPE_FLOAT32 = 1
DTYPE_UINT32 = 2
_DTYPES = {DTYPE_FLOAT32: np.dtype("<f4"), DTYPE_UINT32: np.dtype("<u4")}


# -- id <-> RGB ---------------------------------------------------------------

def encode_id_rgb(segment_id: int) -> tuple:
    if not 0 <= segment_id < MAX_ID:
        raise RasterError(f"segment id {segment_id} outside [0, 2^24)")
    return (segment_id & 0xFF, (segment_id >> 8) & 0xFF, (segment_id >> 16) & 0xFF)


def decode_id_rgb(r: int, g: int, b: int) -> int:
    for c in (r, g, b):
        if not 0 <= c <= 255:
            raise RasterError(f"channel value {c} outside [0, 255]")
    return r + 256 * g + 65536 * b


def ids_to_rgb(ids: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= MAX_ID):
        raise RasterError("segment ids must lie in [0, 2^24)")
    ids = ids.astype(np.uint32)
    rgb = np.empty(ids.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = ids & 0xFF
    rgb[..., 1] = (ids >> 8) & 0xFF
    rgb[..., 2] = (ids >> 16) & 0xFF
    return rgb


def rgb_to_ids(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.uint32)
    return rgb[..., 0] + (rgb[..., 1] << 8) + (rgb[..., 2] << 16)


# -- data types -----------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    segment_id: int
    class_id: int
    area: int
    ignore: bool = False


def _segment_areas(pixels, seg_ids):
    """Exact pixel counts for ``seg_ids`` (sorted) plus the ids lacking a segment."""
    flat = pixels.ravel()
    nonvoid = flat[flat != VOID]
    if len(seg_ids) == 0:
        missing = np.unique(nonvoid)
        return np.zeros(0, dtype=np.int64), missing
    ids = np.asarray(seg_ids, dtype=np.uint32)
    pos = np.searchsorted(ids, nonvoid)
    pos_c = np.minimum(pos, len(ids) - 1)
    hit = ids[pos_c] == nonvoid
    missing = np.unique(nonvoid[~hit]) if not hit.all() else np.zeros(0, np.uint32)
    areas = np.bincount(pos_c[hit], minlength=len(ids)).astype(np.int64)
    return areas, missing


@dataclass(frozen=True, eq=False)
class PanopticMap:
    """Segment-id raster plus its segment table.

    ``pixels`` is an (H, W) uint32 array; 0 is void. Segments are kept sorted
    by id, and construction checks that the table and raster agree exactly.
    """

    pixels: np.ndarray
    segments: tuple = ()

    def __post_init__(self):
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise RasterError(f"pixels must be a non-empty 2-D array, got shape {pixels.shape}")
        if pixels.dtype != np.uint32:
            if pixels.size and (pixels.min() < 0 or pixels.max() >= MAX_ID):
                raise RasterError("segment ids must lie in [0, 2^24)")
            pixels = pixels.astype(np.uint32)
        elif pixels.size and pixels.max() >= MAX_ID:
            raise RasterError("segment ids must lie in [0, 2^24)")
        pixels = np.ascontiguousarray(pixels)
        pixels.setflags(write=False)
        segs = tuple(sorted(self.segments, key=lambda s: s.segment_id))
        ids = [s.segment_id for s in segs]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise StructuralError(f"duplicate segment ids {dup}", dup)
        if any(i == VOID or not 0 < i < MAX_ID for i in ids):
            raise StructuralError("segment ids must lie in [1, 2^24)", [i for i in ids if not 0 < i < MAX_ID])
        areas, missing = _segment_areas(pixels, ids)
        if len(missing):
            raise StructuralError(f"pixel ids without a segment entry: {missing.tolist()}", missing.tolist())
        empty = [s.segment_id for s, a in zip(segs, areas) if a == 0]
        if empty:
            raise StructuralError(f"segments with no pixels: {empty}", empty)
        wrong = [s.segment_id for s, a in zip(segs, areas) if s.area != a]
        if wrong:
            raise StructuralError(f"segment areas disagree with pixel counts: {wrong}", wrong)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_pixels(cls, pixels, classes: Mapping[int, int], ignore: Iterable[int] = ()) -> "PanopticMap":
        """Build a map from a raster and ``{segment_id: class_id}``; areas are counted.

        Ids listed in ``classes`` but absent from the raster are dropped.
        """
        pixels = np.asarray(pixels)
        ignore = set(ignore)
        ids = sorted(classes)
        areas, _ = _segment_areas(pixels.astype(np.uint32, copy=False), ids)
        segs = [
            Segment(int(i), int(classes[i]), int(a), i in ignore)
            for i, a in zip(ids, areas)
            if a > 0
        ]
        return cls(pixels, tuple(segs))

    @classmethod
    def void(cls, width: int, height: int) -> "PanopticMap":
        return cls(np.zeros((height, width), dtype=np.uint32), ())

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def size(self) -> tuple:
        return (self.width, self.height)

    def segment(self, segment_id: int) -> Segment:
        for s in self.segments:
            if s.segment_id == segment_id:
                return s
        raise KeyError(segment_id)

    def with_pixels(self, pixels) -> "PanopticMap":
        """New map over ``pixels`` keeping the class/ignore of surviving segments."""
        return PanopticMap.from_pixels(
            pixels,
            {s.segment_id: s.class_id for s in self.segments},
            [s.segment_id for s in self.segments if s.ignore],
        )

    def __eq__(self, other):
        if not isinstance(other, PanopticMap):
            return NotImplemented
        return (
            self.pixels.shape == other.pixels.shape
            and self.segments == other.segments
            and bool(np.array_equal(self.pixels, other.pixels))
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SemanticLogits:
    """(C, H, W) class scores with the joint class of every channel."""

    logits: np.ndarray
    channel_classes: tuple
    stuff_channels: tuple = field(default=())

    def __post_init__(self):
        logits = np.asarray(self.logits)
        if logits.ndim != 3:
            raise RasterError(f"logits must have shape (C, H, W), got {logits.shape}")
        classes = tuple(int(c) for c in self.channel_classes)
        if len(classes) != logits.shape[0]:
            raise RasterError(f"{len(classes)} channel classes for {logits.shape[0]} channels")
        if len(set(classes)) != len(classes):
            raise RasterError("channel classes must be distinct")
        stuff = tuple(sorted(int(c) for c in self.stuff_channels))
        if len(set(stuff)) != len(stuff) or any(not 0 <= c < len(classes) for c in stuff):
            raise RasterError(f"stuff channels {stuff} not a subset of [0, {len(classes)})")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "channel_classes", classes)
        object.__setattr__(self, "stuff_channels", stuff)

    @property
    def num_channels(self) -> int:
        return self.logits.shape[0]

    @property
    def height(self) -> int:
        return self.logits.shape[1]

    @property
    def width(self) -> int:
        return self.logits.shape[2]

    def channel_of(self, class_id: int) -> int:
        try:
            return self.channel_classes.index(class_id)
        except ValueError:
            raise KeyError(class_id) from None

    def __eq__(self, other):
        if not isinstance(other, SemanticLogits):
            return NotImplemented
        return (
            self.channel_classes == other.channel_classes
            and self.stuff_channels == other.stuff_channels
            and self.logits.shape == other.logits.shape
            and self.logits.dtype == other.logits.dtype
            and self.logits.tobytes() == other.logits.tobytes()
        )

    __hash__ = None


# -- atomic file output -----------------------------------------------------------

def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


# -- panoptic PNG + JSON ---------------------------------------------------------------

def sidecar_json(png_path) -> Path:
    return Path(png_path).with_suffix(".json")


def segments_record(pmap: PanopticMap, file_name: str = "") -> dict:
    return {
        "file_name": file_name,
        "height": pmap.height,
        "width": pmap.width,
        "segments_info": [
            {
                "id": s.segment_id,
                "category_id": s.class_id,
                "area": s.area,
                "iscrowd": int(s.ignore),
            }
            for s in pmap.segments
        ],
    }


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(ids_to_rgb(pixels), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def read_png_ids(png_path) -> np.ndarray:
    with Image.open(png_path) as im:
        if im.mode != "RGB":
            raise RasterError(f"{png_path}: expected an 8-bit RGB PNG, got mode {im.mode}")
        rgb = np.asarray(im, dtype=np.uint8)
    return rgb_to_ids(rgb)


def write_panoptic(pmap: PanopticMap, png_path, json_path=None) -> dict:
    """Write the PNG and its JSON record atomically; returns the record.

    Areas in the record are recounted from the raster.
    """
    png_path = Path(png_path)
    json_path = Path(json_path) if json_path is not None else sidecar_json(png_path)
    recounted = pmap.with_pixels(pmap.pixels)
    record = segments_record(recounted, png_path.name)
    atomic_write_bytes(png_path, encode_png(recounted.pixels))
    atomic_write_bytes(json_path, dump_json_bytes(record))
    return record


def read_panoptic(png_path, json_record=None) -> PanopticMap:
    """Read a panoptic PNG with its segment record.

    ``json_record`` may be a dict, a path, or None for the ``.json`` sidecar.
    """
    if json_record is None:
        json_record = sidecar_json(png_path)
    if not isinstance(json_record, Mapping):
        with open(json_record, "r", encoding="utf-8") as fh:
            json_record = json.load(fh)
    pixels = read_png_ids(png_path)
    h, w = pixels.shape
    rh, rw = json_record.get("height"), json_record.get("width")
    if (rh is not None and rh != h) or (rw is not None and rw != w):
        raise RasterError(f"{png_path}: PNG is {w}x{h} but record says {rw}x{rh}")
    segs = []
    for info in json_record.get("segments_info", []):
        segs.append(
            Segment(
                int(info["id"]),
                int(info["category_id"]),
                int(info.get("area", -1)),
                bool(info.get("iscrowd", 0)),
            )
        )
    # areas are optional in the record; fill from the raster before validating
    if any(s.area < 0 for s in segs):
        ids = sorted(s.segment_id for s in segs)
        areas, _ = _segment_areas(pixels, ids)
        by_id = dict(zip(ids, areas.tolist()))
        segs = [s if s.area >= 0 else Segment(s.segment_id, s.class_id, by_id[s.segment_id], s.ignore) for s in segs]
    return PanopticMap(pixels, tuple(segs))


# -- tensor files --------------------------------------------------------------------------

def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code = DTYPE_FLOAT32
    elif arr.dtype.kind in "ui":
        code = DTYPE_UINT32
    else:
        raise UnsupportedDtypeError(f"cannot store dtype {arr.dtype}")
    if arr.ndim > 255:
        raise RasterError("too many dimensions")
    data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    header = TENSOR_MAGIC + struct.pack("<BBB", TENSOR_VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + data.tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 7 or blob[:4] != TENSOR_MAGIC:
        raise BadMagicError("not a PTNS tensor file")
    version, code, ndim = struct.unpack_from("<BBB", blob, 4)
    if version != TENSOR_VERSION:
        raise UnsupportedVersionError(f"unsupported tensor version {version}")
    if code not in _DTYPES:
        raise UnsupportedDtypeError(f"unsupported dtype code {code}")
    head = 7 + 4 * ndim
    if len(blob) < head:
        raise PayloadLengthError("header truncated")
    dims = struct.unpack_from(f"<{ndim}I", blob, 7)
    dtype = _DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(blob) - head != expected:
        raise PayloadLengthError(f"payload is {len(blob) - head} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=dtype, offset=head).reshape(dims).copy()


def write_tensor(path, arr) -> None:
    atomic_write_bytes(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def logits_meta_path(path) -> Path:
    return Path(path).with_suffix(".meta.json")


def write_logits(path, sem: SemanticLogits) -> None:
    """Tensor file plus a ``.meta.json`` sidecar holding the channel classes."""
    write_tensor(path, np.asarray(sem.logits, dtype=np.float32))
    meta = {"channel_classes": list(sem.channel_classes), "stuff_channels": list(sem.stuff_channels)}
    atomic_write_bytes(logits_meta_path(path), dump_json_bytes(meta))


def read_logits(path, channel_classes: Optional[Sequence[int]] = None, stuff_channels=None) -> SemanticLogits:
    """Read a (C, H, W) float tensor.

    Channel metadata comes from explicit arguments, else the sidecar, else
    defaults to classes ``1..C`` with every channel treated as stuff.
    """
    arr = read_tensor(path)
    if arr.ndim != 3:
        raise RasterError(f"{path}: logits must be 3-D (C, H, W), got {arr.ndim}-D")
    if arr.dtype != np.float32:
        raise UnsupportedDtypeError(f"{path}: logits must be float32")
    meta_path = logits_meta_path(path)
    meta = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    c = arr.shape[0]
    if channel_classes is None:
        channel_classes = meta.get("channel_classes", list(range(1, c + 1)))
    if stuff_channels is None:
        stuff_channels = meta.get("stuff_channels", list(range(c)))
    return SemanticLogits(arr, tuple(channel_classes), tuple(stuff_channels))
