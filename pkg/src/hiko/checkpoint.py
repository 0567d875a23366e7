"""Checkpoint container and its on-disk formats.

Binary layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"HIKO"
    4       4     uint32 format_version
    8       4     uint32 m
    12      4     uint32 r
    16      8     uint64 H, byte length of the header
    24      H     UTF-8 JSON header (sorted keys, compact separators)
    24+H    8     uint64 D, byte length of the data section
    32+H    D     float64 little-endian tensor data

The header holds the hidden widths, dropout rate, network layout flag, the
frozen set, training metadata and one ``tensors`` entry per array with its
``path``, ``role``, ``name``, ``shape`` and ``offset`` (in float64 elements
from the start of the data section). Tensors appear in canonical order: tree
depth-first, roles ``enc``, ``dec_left``, ``dec_right``, parameter names
``W0 b0 W1 b1 W2 b2 W3 b3 alpha``.

The text export is a single JSON document with the same header fields plus
``magic``, ``format_version``, ``m``, ``r`` and the tensor values inline.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hiko.codes import build_plotkin_tree
from hiko.errors import CheckpointError
from hiko.ko import ROLES, NeuralCodec

MAGIC = b"HIKO"
FORMAT_VERSION = 1
PARAM_ORDER = ("W0", "b0", "W1", "b1", "W2", "b2", "W3", "b3", "alpha")

Key = tuple[str, str]


@dataclass
class Checkpoint:
    m: int
    r: int
    enc_hidden: int
    dec_hidden: int
    dropout: float
    coordinatewise: bool
    arrays: dict[Key, dict[str, np.ndarray]]
    frozen: list[Key] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_codec(cls, codec: NeuralCodec, metadata: dict | None = None) -> Checkpoint:
        arrays = {
            key: {name: np.array(p, dtype=np.float64) for name, p in codec.nets[key].params.items()}
            for key in codec.keys()
        }
        return cls(
            m=codec.m,
            r=codec.r,
            enc_hidden=codec.enc_hidden,
            dec_hidden=codec.dec_hidden,
            dropout=codec.dropout,
            coordinatewise=codec.coordinatewise,
            arrays=arrays,
            frozen=sorted(codec.frozen),
            metadata=dict(metadata or {}),
        )

    def to_codec(self) -> NeuralCodec:
        codec = NeuralCodec.create(
            self.m, self.r, self.enc_hidden, self.dec_hidden, self.dropout, self.coordinatewise
        )
        for key in codec.keys():
            net = codec.nets[key]
            for name, p in net.params.items():
                p[...] = self.arrays[key][name]
        codec.frozen = set(self.frozen)
        codec.touch()
        return codec

    def keys(self) -> list[Key]:
        tree = build_plotkin_tree(self.m, self.r)
        return [(node.path, role) for node in tree.branches() for role in ROLES]

    def validate(self) -> None:
        expected = self.keys()
        if sorted(self.arrays) != sorted(expected):
            raise CheckpointError("checkpoint keys do not match the branch nodes of the code tree")
        reference = NeuralCodec.create(
            self.m, self.r, self.enc_hidden, self.dec_hidden, self.dropout, self.coordinatewise
        )
        for key in expected:
            net = reference.nets[key]
            if sorted(self.arrays[key]) != sorted(net.params):
                raise CheckpointError(f"parameter names differ at {key}")
            for name, p in net.params.items():
                if self.arrays[key][name].shape != p.shape:
                    raise CheckpointError(
                        f"shape of {key}/{name} is {self.arrays[key][name].shape}, expected {p.shape}"
                    )
        for key in self.frozen:
            if key not in self.arrays:
                raise CheckpointError(f"frozen marker {key} names no network")

    # -- serialization -----------------------------------------------------

    def _header(self) -> tuple[dict, list[np.ndarray]]:
        tensors, chunks = [], []
        offset = 0
        for key in self.keys():
            for name in PARAM_ORDER:
                if name not in self.arrays[key]:
                    continue
                a = np.asarray(self.arrays[key][name], dtype="<f8")
                tensors.append(
                    {"path": key[0], "role": key[1], "name": name, "shape": list(a.shape), "offset": offset}
                )
                chunks.append(a)
                offset += a.size
        header = {
            "enc_hidden": self.enc_hidden,
            "dec_hidden": self.dec_hidden,
            "dropout": self.dropout,
            "coordinatewise": self.coordinatewise,
            "frozen": [list(k) for k in sorted(self.frozen)],
            "metadata": self.metadata,
            "tensors": tensors,
        }
        return header, chunks

    def to_bytes(self) -> bytes:
        header, chunks = self._header()
        head = _dumps(header).encode("utf-8")
        data = b"".join(c.tobytes(order="C") for c in chunks)
        return b"".join(
            [
                MAGIC,
                struct.pack("<III", FORMAT_VERSION, self.m, self.r),
                struct.pack("<Q", len(head)),
                head,
                struct.pack("<Q", len(data)),
                data,
            ]
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> Checkpoint:
        try:
            if blob[:4] != MAGIC:
                raise CheckpointError("missing HIKO magic")
            version, m, r = struct.unpack_from("<III", blob, 4)
            if version != FORMAT_VERSION:
                raise CheckpointError(f"unsupported format version {version}")
            (head_len,) = struct.unpack_from("<Q", blob, 16)
            header = json.loads(blob[24 : 24 + head_len].decode("utf-8"))
            (data_len,) = struct.unpack_from("<Q", blob, 24 + head_len)
            start = 32 + head_len
            if len(blob) != start + data_len:
                raise CheckpointError("truncated or oversized data section")
            data = np.frombuffer(blob, dtype="<f8", count=data_len // 8, offset=start)
            return cls._from_header(m, r, header, lambda t, size: data[t["offset"] : t["offset"] + size])
        except CheckpointError:
            raise
        except (struct.error, ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc

    @classmethod
    def _from_header(cls, m, r, header, values) -> Checkpoint:
        arrays: dict[Key, dict[str, np.ndarray]] = {}
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            size = int(np.prod(shape, dtype=np.int64))
            flat = np.asarray(values(t, size), dtype=np.float64)
            if flat.size != size:
                raise CheckpointError(f"tensor {t['path']}/{t['role']}/{t['name']} is truncated")
            arrays.setdefault((t["path"], t["role"]), {})[t["name"]] = flat.reshape(shape).copy()
        ckpt = cls(
            m=m,
            r=r,
            enc_hidden=header["enc_hidden"],
            dec_hidden=header["dec_hidden"],
            dropout=header["dropout"],
            coordinatewise=header["coordinatewise"],
            arrays=arrays,
            frozen=[tuple(k) for k in header["frozen"]],
            metadata=header["metadata"],
        )
        ckpt.validate()
        return ckpt

    def to_text(self) -> str:
        header, chunks = self._header()
        doc = {"magic": MAGIC.decode(), "format_version": FORMAT_VERSION, "m": self.m, "r": self.r}
        doc.update(header)
        for t, chunk in zip(doc["tensors"], chunks):
            t["values"] = chunk.reshape(-1).tolist()
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_text(cls, text: str) -> Checkpoint:
        try:
            doc = json.loads(text)
            if doc.get("magic") != MAGIC.decode():
                raise CheckpointError("missing HIKO magic")
            if doc["format_version"] != FORMAT_VERSION:
                raise CheckpointError(f"unsupported format version {doc['format_version']}")
            return cls._from_header(doc["m"], doc["r"], doc, lambda t, size: t["values"])
        except CheckpointError:
            raise
        except (ValueError, KeyError, TypeError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def atomic_write(path: str | os.PathLike, payload: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike, text: bool = False) -> None:
    atomic_write(path, ckpt.to_text() if text else ckpt.to_bytes())


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    """Load a binary or text checkpoint, telling them apart by the leading magic."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    if blob[:4] == MAGIC:
        return Checkpoint.from_bytes(blob)
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path} is neither a binary nor a text checkpoint") from exc
    return Checkpoint.from_text(text)
