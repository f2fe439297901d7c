"""Artifact persistence: adapter files, registry manifest, backbone, references.

Adapter file layout (all integers little-endian):

    magic "CHAD" (4 bytes)
    format version   u16
    character id     u16 length + UTF-8 bytes
    rank             u16
    layer count      u16
    per layer:
        layer index  u16
        d_out        u32
        d_in         u32
        B factor     float32 LE, row-major (d_out * rank values)
        A factor     float32 LE, row-major (rank * d_in values)
    crc32            u32, over every preceding byte

Factors are stored single-precision; in-memory arrays are double precision, so
a freshly trained adapter rounds to float32 on its first save and round-trips
bit-exactly from then on.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..backbone import BackboneParams, FeatureFrame
from ..lowrank import LowRankUpdate
from ..prompts import CharacterCard
from ..trainer import AdapterWeights

MAGIC = b"CHAD"
FORMAT_VERSION = 1


class AdapterFormatError(ValueError):
    """Adapter file is malformed; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def adapter_file_size(character_id: str, rank: int,
                      shapes: Sequence[Tuple[int, int]]) -> int:
    """Exact on-disk size in bytes for an adapter with the given geometry."""
    header = 4 + 2 + 2 + len(character_id.encode("utf-8")) + 2 + 2
    layers = sum(
        2 + 4 + 4 + 4 * (d_out * rank + rank * d_in) for d_out, d_in in shapes
    )
    return header + layers + 4


def save_adapter(adapter: AdapterWeights, path) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<H", FORMAT_VERSION)
    cid = adapter.character_id.encode("utf-8")
    buf += struct.pack("<H", len(cid)) + cid
    buf += struct.pack("<H", adapter.rank)
    buf += struct.pack("<H", len(adapter.layers))
    for index, update in enumerate(adapter.layers):
        buf += struct.pack("<HII", index, update.d_out, update.d_in)
        buf += update.b.astype("<f4").tobytes(order="C")
        buf += update.a.astype("<f4").tobytes(order="C")
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise AdapterFormatError(f"truncated while reading {what}", self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def load_adapter(path) -> AdapterWeights:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise AdapterFormatError("bad magic", 0)
    version = r.u16("version")
    if version != FORMAT_VERSION:
        raise AdapterFormatError(f"unsupported format version {version}", 4)
    cid_len = r.u16("character id length")
    character_id = r.take(cid_len, "character id").decode("utf-8")
    rank = r.u16("rank")
    n_layers = r.u16("layer count")
    layers: List[LowRankUpdate] = []
    for i in range(n_layers):
        index = r.u16("layer index")
        if index != i:
            raise AdapterFormatError(
                f"layer index {index} out of order (expected {i})", r.pos - 2
            )
        d_out = r.u32("d_out")
        d_in = r.u32("d_in")
        b_bytes = r.take(4 * d_out * rank, "B factor")
        a_bytes = r.take(4 * rank * d_in, "A factor")
        b = np.frombuffer(b_bytes, dtype="<f4").reshape(d_out, rank).astype(float)
        a = np.frombuffer(a_bytes, dtype="<f4").reshape(rank, d_in).astype(float)
        layers.append(LowRankUpdate(b=b, a=a))
    crc_offset = r.pos
    stored = r.u32("crc32")
    if r.pos != len(data):
        raise AdapterFormatError("trailing bytes after crc", r.pos)
    actual = zlib.crc32(data[:crc_offset]) & 0xFFFFFFFF
    if stored != actual:
        raise AdapterFormatError(
            f"crc mismatch: stored {stored:#010x}, computed {actual:#010x}",
            crc_offset,
        )
    return AdapterWeights(character_id=character_id, layers=tuple(layers),
                          rank=rank)


def save_backbone(params: BackboneParams, path) -> None:
    np.savez(
        path,
        w_in=params.w_in, b_in=params.b_in,
        w_mid1=params.w_mid1, b_mid1=params.b_mid1,
        w_mid2=params.w_mid2, b_mid2=params.b_mid2,
        w_out=params.w_out, b_out=params.b_out,
    )


def load_backbone(path) -> BackboneParams:
    with np.load(path) as z:
        return BackboneParams(**{k: z[k] for k in z.files})


def save_references(card: CharacterCard, path) -> None:
    np.savez(
        path,
        values=np.stack([f.values for f in card.reference_set]),
        anchor=card.anchor,
    )


def load_references(path, character_id: str) -> Tuple[Tuple[FeatureFrame, ...], np.ndarray]:
    with np.load(path) as z:
        values = z["values"]
        anchor = z["anchor"]
    frames = tuple(
        FeatureFrame(values=values[i], scene_index=i,
                     characters_present=(character_id,))
        for i in range(values.shape[0])
    )
    return frames, anchor


def write_registry(entries: Sequence[Dict[str, str]], path) -> None:
    """Manifest: array of {character_id, trigger, attributes, adapter_path,
    reference_path}."""
    keys = {"character_id", "trigger", "attributes", "adapter_path",
            "reference_path"}
    for e in entries:
        missing = keys - set(e)
        if missing:
            raise ValueError(f"registry entry missing fields: {sorted(missing)}")
    Path(path).write_text(
        json.dumps(list(entries), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def read_registry(path) -> List[Dict[str, str]]:
    return json.loads(Path(path).read_text(encoding="utf-8"))
