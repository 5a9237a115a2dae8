import hashlib
import json
import logging
import os
import struct
import zlib
from collections.abc import Iterable, Iterator

import numpy as np

from errors import DataError, FingerprintError

logger = logging.getLogger(__name__)

_CONTAINER_PREFIX = struct.Struct("<4sII")


def read_jsonl(path: str) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, object)`` for every non-blank line of a JSON-lines file."""
    if not os.path.exists(path):
        raise DataError("file does not exist", path=path)
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw_line in enumerate(handle, start=1):
            line = raw_line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"malformed JSON ({e.msg})", path=path, line=line_no)
            if not isinstance(obj, dict):
                raise DataError("expected a JSON object", path=path, line=line_no)
            yield line_no, obj


def write_jsonl(path: str, rows: Iterable[dict]) -> int:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False))
            handle.write("\n")
            count += 1
    return count


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def stable_hash(text: str) -> int:
    # python's hash() is salted per process; crc32 is not
    return zlib.crc32(text.encode("utf-8"))


def fnv1a_32(text: str) -> int:
    h = 2166136261
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 16777619) & 0xFFFFFFFF
    return h


def derive_seed(seed: int, *labels: str | int) -> int:
    """Child seed for a named component, stable across runs and platforms."""
    material = ":".join([str(seed), *(str(label) for label in labels)])
    return int.from_bytes(hashlib.sha256(material.encode("utf-8")).digest()[:8], "little")


def write_model_container(
    path: str, magic: bytes, version: int, header: dict, arrays: dict[str, np.ndarray]
) -> None:
    """Versioned binary file: magic, version, JSON header, then raw little-endian arrays."""
    array_specs = []
    payload = []
    for name, array in arrays.items():
        array = np.ascontiguousarray(array)
        dtype = array.dtype.newbyteorder("<")
        array_specs.append(
            {"name": name, "dtype": dtype.str, "shape": list(array.shape)}
        )
        payload.append(array.astype(dtype, copy=False).tobytes())
    full_header = dict(header)
    full_header["arrays"] = array_specs
    header_bytes = json.dumps(full_header, sort_keys=True, ensure_ascii=False).encode(
        "utf-8"
    )
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(_CONTAINER_PREFIX.pack(magic, version, len(header_bytes)))
        handle.write(header_bytes)
        for chunk in payload:
            handle.write(chunk)


def read_model_container(
    path: str, magic: bytes, version: int
) -> tuple[dict, dict[str, np.ndarray]]:
    if not os.path.exists(path):
        raise DataError("model file does not exist", path=path)
    with open(path, "rb") as handle:
        data = handle.read()
    if len(data) < _CONTAINER_PREFIX.size:
        raise DataError("truncated model file", path=path)
    file_magic, file_version, header_len = _CONTAINER_PREFIX.unpack_from(data, 0)
    if file_magic != magic:
        raise FingerprintError(
            f"{path}: not a {magic.decode('ascii', 'replace')} file (magic {file_magic!r})"
        )
    if file_version != version:
        raise FingerprintError(
            f"{path}: unsupported format version {file_version} (expected {version})"
        )
    offset = _CONTAINER_PREFIX.size
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    arrays = {}
    for spec in header.pop("arrays"):
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(data):
            raise DataError(f"truncated array '{spec['name']}'", path=path)
        arrays[spec["name"]] = (
            np.frombuffer(data, dtype=dtype, count=count, offset=offset)
            .reshape(shape)
            .astype(dtype.newbyteorder("="))
        )
        offset += nbytes
    return header, arrays
