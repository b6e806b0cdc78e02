"""Binary tensor files and parameter checkpoints.

Layout (little-endian)::

    b"TNSR" | version 0x01 | dtype (0x00 float32, 0x01 int32) | rank | rank x uint32 dims | payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import ParameterSet
from .errors import FormatError

MAGIC = b"TNSR"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr, code = arr.astype("<f4"), 0
    elif arr.dtype.kind in "iub":
        arr, code = arr.astype("<i4"), 1
    else:
        raise FormatError(f"unsupported dtype {arr.dtype}", 0)
    if arr.ndim > 255:
        raise FormatError("rank above 255", 7)
    header = MAGIC + bytes([VERSION, code, arr.ndim]) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr).tobytes()


def decode_tensor(buf: bytes, expect_dtype: str | None = None) -> np.ndarray:
    if len(buf) < 7:
        raise FormatError("truncated header", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    if buf[4] != VERSION:
        raise FormatError(f"unsupported version {buf[4]}", 4)
    if buf[5] not in _DTYPES:
        raise FormatError(f"unknown dtype code {buf[5]}", 5)
    dtype = _DTYPES[buf[5]]
    if expect_dtype is not None and dtype != np.dtype(expect_dtype).newbyteorder("<"):
        raise FormatError(f"dtype mismatch: file holds {dtype}, expected {expect_dtype}", 5)
    rank = buf[6]
    end = 7 + 4 * rank
    if len(buf) < end:
        raise FormatError("truncated dimension list", len(buf))
    dims = struct.unpack(f"<{rank}I", buf[7:end])
    size = int(np.prod(dims, dtype=np.int64)) * 4
    if len(buf) < end + size:
        raise FormatError(f"truncated payload: expected {size} bytes", len(buf))
    if len(buf) > end + size:
        raise FormatError("trailing bytes after payload", end + size)
    return np.frombuffer(buf, dtype=dtype, count=size // 4, offset=end).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path, expect_dtype: str | None = None) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), expect_dtype)


def save_checkpoint(directory, params: ParameterSet, config: dict | None = None,
                    seed: int | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, t in params.items():
        fname = name.replace("/", "_") + ".tnsr"
        write_tensor(d / fname, t.data.astype(np.float32))
        files[name] = fname
    manifest = {"params": files, "config": config or {}, "seed": seed}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory) -> tuple[ParameterSet, dict]:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise FormatError(f"{d}: missing manifest.json", 0) from None
    params = ParameterSet({name: read_tensor(d / f, "float32") for name, f in manifest["params"].items()})
    return params, manifest


def write_tensor_dir(directory, arrays: dict[str, np.ndarray]) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for key, arr in arrays.items():
        write_tensor(d / f"{key}.tnsr", arr)


def read_tensor_dir(directory, expect_dtype: str | None = None) -> dict[str, np.ndarray]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    return {p.stem: read_tensor(p, expect_dtype) for p in sorted(d.glob("*.tnsr"))}
