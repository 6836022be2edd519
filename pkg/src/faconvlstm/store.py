"""Named parameter container and its on-disk checkpoint format."""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from . import t4d
from .tensor import Tensor

CKPT_MAGIC = b"FACKPT\x00\x00"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<8sII")


class ParameterStore:
    """Ordered mapping ``path -> Tensor`` of learnable parameters.

    Each parameter is a leaf tensor with ``requires_grad`` set; its
    ``.grad`` slot has the parameter's shape after :meth:`zero_grad`.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=path)
        t.grad = np.zeros(t.shape)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def size(self) -> int:
        """Total number of learnable scalars."""
        return sum(p.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = np.zeros(p.shape)

    def merged(self, other: "ParameterStore") -> "ParameterStore":
        out = ParameterStore()
        for src in (self, other):
            for k, v in src.items():
                if k in out:
                    raise KeyError(f"duplicate parameter path {k!r}")
                out._params[k] = v
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self._params[k].shape != np.shape(v):
                raise ValueError(f"shape mismatch for {k}: {self._params[k].shape} vs {np.shape(v)}")
            self._params[k].data = np.array(v, dtype=np.float64)

    # checkpoint: head | manifest json | concatenated T4D payloads
    def save(self, path: str | Path, meta: dict | None = None) -> None:
        entries, blobs, offset = [], [], 0
        for k, p in self._params.items():
            blob = t4d.to_bytes(p.data)
            entries.append({"path": k, "dims": list(p.shape), "offset": offset})
            blobs.append(blob)
            offset += len(blob)
        manifest = json.dumps(
            {"version": CKPT_VERSION, "params": entries, "meta": meta or {}},
            sort_keys=True,
        ).encode()
        with open(path, "wb") as f:
            f.write(_CKPT_HEAD.pack(CKPT_MAGIC, CKPT_VERSION, len(manifest)))
            f.write(manifest)
            for b in blobs:
                f.write(b)

    @classmethod
    def load(cls, path: str | Path) -> tuple["ParameterStore", dict]:
        raw = Path(path).read_bytes()
        if len(raw) < _CKPT_HEAD.size:
            raise t4d.T4DFormatError(f"truncated checkpoint: {path}")
        magic, version, mlen = _CKPT_HEAD.unpack_from(raw)
        if magic != CKPT_MAGIC or version != CKPT_VERSION:
            raise t4d.T4DFormatError(f"not a version-{CKPT_VERSION} checkpoint: {path}")
        start = _CKPT_HEAD.size
        manifest = json.loads(raw[start : start + mlen])
        payload = raw[start + mlen :]
        store = cls()
        for e in manifest["params"]:
            arr = t4d.read_stream(io.BytesIO(payload[e["offset"] :]))
            store.add(e["path"], arr.reshape(e["dims"]))
        return store, manifest.get("meta", {})
