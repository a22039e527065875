"""Binary checkpoint files: flat name -> (shape, values) map plus optimizer state.

Layout: 8-byte magic, little-endian u32 header length, UTF-8 JSON header,
then the raw tensor payloads in header order as little-endian floats.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor, default_dtype

MAGIC = b"GDTCKPT1"
FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): "<f4", np.dtype(np.float64): "<f8"}


def save_checkpoint(path, params: dict[str, Tensor],
                    opt_state: dict | None = None,
                    extra: dict | None = None) -> None:
    entries = []
    payloads = []

    def put(name, arr):
        arr = np.ascontiguousarray(arr)
        tag = _DTYPE_TAGS[arr.dtype]
        entries.append({"name": name, "shape": list(arr.shape), "dtype": tag})
        payloads.append(arr.astype(tag))

    for name in sorted(params):
        put(f"param/{name}", params[name].data)
    opt_meta = None
    if opt_state is not None:
        opt_meta = {"t": int(opt_state["t"])}
        for name in sorted(opt_state["m"]):
            put(f"opt.m/{name}", opt_state["m"][name])
            put(f"opt.v/{name}", opt_state["v"][name])
    header = {
        "format_version": FORMAT_VERSION,
        "tensors": entries,
        "opt": opt_meta,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in payloads:
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns (params, opt_state, extra); params are Tensors in the current precision."""
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['format_version']}")
        arrays = {}
        for ent in header["tensors"]:
            shape = tuple(ent["shape"])
            count = int(np.prod(shape)) if shape else 1
            dt = np.dtype(ent["dtype"])
            raw = fh.read(count * dt.itemsize)
            arrays[ent["name"]] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()

    params = {}
    opt_state = None
    if header["opt"] is not None:
        opt_state = {"t": header["opt"]["t"], "m": {}, "v": {}}
    for name, arr in arrays.items():
        kind, _, key = name.partition("/")
        if kind == "param":
            params[key] = Tensor(arr.astype(default_dtype()), requires_grad=True)
        elif kind == "opt.m":
            opt_state["m"][key] = arr.astype(default_dtype())
        elif kind == "opt.v":
            opt_state["v"][key] = arr.astype(default_dtype())
    return params, opt_state, header.get("extra", {})
