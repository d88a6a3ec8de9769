"""Named-record binary container for checkpoints and persisted indexes.

Layout: a u32 little-endian length, then that many bytes of UTF-8 JSON
metadata, then zero or more records of
  u32 name length | name bytes | u8 dtype tag | u8 rank | u32 dims... | payload
with the payload row-major little-endian. Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .corpus import Vocabulary
from .nn import ModelConfig
from .model import LocateGenModel
from . import autodiff as ad

FORMAT_VERSION = 1

_DTYPE_TAGS = {0: "<f4", 1: "<f8", 2: "<i4"}
_TAG_FOR_KIND = {"f": {4: 0, 8: 1}, "i": {4: 2}}


def _tag_for(arr: np.ndarray) -> int:
    try:
        return _TAG_FOR_KIND[arr.dtype.kind][arr.dtype.itemsize]
    except KeyError:
        raise ValueError(f"unsupported array dtype {arr.dtype}") from None


def write_container(path, metadata: dict, arrays: dict[str, np.ndarray]) -> None:
    header = json.dumps(metadata, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for name, arr in arrays.items():
            tag = _tag_for(arr)
            data = np.ascontiguousarray(arr).astype(_DTYPE_TAGS[tag], copy=False)
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<I", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", tag, arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(data.tobytes())


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    offset = 0

    def take(n):
        nonlocal offset
        if offset + n > len(raw):
            raise ValueError("truncated container file")
        chunk = raw[offset : offset + n]
        offset += n
        return chunk

    (header_len,) = struct.unpack("<I", take(4))
    metadata = json.loads(take(header_len).decode("utf-8"))
    arrays: dict[str, np.ndarray] = {}
    while offset < len(raw):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2))
        if tag not in _DTYPE_TAGS:
            raise ValueError(f"unknown dtype tag {tag}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        dtype = np.dtype(_DTYPE_TAGS[tag])
        count = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(take(count * dtype.itemsize), dtype=dtype).reshape(dims)
        arrays[name] = arr.copy()
    return metadata, arrays


def checkpoint_id(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def save_checkpoint(path, model: LocateGenModel, kind: str = "locate_gen") -> None:
    metadata = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "model_config": model.config.to_dict(),
        "vocab_checksum": model.vocab.checksum(),
        "vocab_tokens": model.vocab.tokens,
    }
    arrays = {name: p.data for name, p in model.params.items()}
    write_container(path, metadata, arrays)


def load_checkpoint(path, expected_kind: str = "locate_gen") -> LocateGenModel:
    metadata, arrays = read_container(path)
    if metadata.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {metadata.get('format_version')}")
    if metadata.get("kind") != expected_kind:
        raise ValueError(
            f"checkpoint kind {metadata.get('kind')!r}, expected {expected_kind!r}"
        )
    from .corpus import SPECIAL_TOKEN_STRINGS

    tokens = metadata["vocab_tokens"]
    vocab = Vocabulary(tokens[len(SPECIAL_TOKEN_STRINGS) :])
    if vocab.checksum() != metadata["vocab_checksum"]:
        raise ValueError("vocabulary checksum mismatch")
    config = ModelConfig.from_dict(metadata["model_config"])
    params = {name: ad.Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    return LocateGenModel(config, vocab, params=params)
