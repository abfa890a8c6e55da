"""Versioned binary checkpoint format.

Layout (all integers little-endian):

    bytes 0..7    magic  b"CWTCKPT1"
    bytes 8..11   u32    format version (currently 1)
    bytes 12..15  u32    header length H
    bytes 16..16+H-1     header, canonical JSON (sorted keys, no spaces)
    bytes 16+H..         payload, raw little-endian float32

The header records the run configuration, the step counter, a manifest of
(name, shape, element offset) for every parameter, the optimizer moment
arrays (appended after the parameters in the same order), and a SHA-256 of
the payload. Loading refuses any checksum mismatch. Serialization is
canonical, so save -> load -> save reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from .errors import CheckpointError

MAGIC = b"CWTCKPT1"
VERSION = 1


def _canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, run_config, params, optimizer_state, step):
    """Write parameters plus optimizer state under a checksummed header.

    run_config: JSON-serializable dict. params: the Parameters store.
    optimizer_state: dict with "t", "m", "v" (from Adam.state_dict) or None.
    """
    chunks = []
    manifest = []
    offset = 0

    def push(name, arr):
        nonlocal offset
        a = np.ascontiguousarray(arr, dtype="<f4")
        chunks.append(a.tobytes())
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size

    for tensor in params:
        push(tensor.name, tensor.data)
    opt_header = None
    if optimizer_state is not None:
        for i, m in enumerate(optimizer_state["m"]):
            push(f"optim.m.{i}", m)
        for i, v in enumerate(optimizer_state["v"]):
            push(f"optim.v.{i}", v)
        opt_header = {"t": int(optimizer_state["t"]), "count": len(optimizer_state["m"])}

    payload = b"".join(chunks)
    header = {
        "version": VERSION,
        "step": int(step),
        "config": run_config,
        "parameters": manifest,
        "optimizer": opt_header,
        "payload_len": offset,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = _canonical_json(header)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(VERSION).tobytes())
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Read a checkpoint, verifying magic, version, and payload checksum.

    Returns (config dict, {name: array}, optimizer_state or None, step).
    """
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint missing: {path}")
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = int(np.frombuffer(blob[8:12], dtype="<u4")[0])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(blob[12:16], dtype="<u4")[0])
    if len(blob) < 16 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc

    payload = blob[16 + header_len:]
    expected_len = int(header["payload_len"]) * 4
    if len(payload) != expected_len:
        raise CheckpointError(
            f"{path}: payload length {len(payload)} does not match header "
            f"({expected_len} bytes)"
        )
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch, refusing to load")

    flat = np.frombuffer(payload, dtype="<f4")
    arrays = {}
    for entry in header["parameters"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = flat[start:start + size].reshape(shape).copy()

    opt_state = None
    if header.get("optimizer"):
        count = header["optimizer"]["count"]
        opt_state = {
            "t": header["optimizer"]["t"],
            "m": [arrays.pop(f"optim.m.{i}") for i in range(count)],
            "v": [arrays.pop(f"optim.v.{i}") for i in range(count)],
        }
    return header["config"], arrays, opt_state, int(header["step"])
