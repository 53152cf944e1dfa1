"""Flat binary container for named float64 arrays plus JSON metadata.

Layout, all little-endian:

    bytes 0..8    magic b"F64CHKPT"
    bytes 8..12   uint32 format version (currently 1)
    bytes 12..20  uint64 manifest length L in bytes
    bytes 20..    UTF-8 JSON manifest, L bytes:
                  {"meta": {...},
                   "arrays": [{"name": str, "shape": [int, ...],
                               "offset": int}, ...]}
    then          concatenated float64 C-order array data; each offset is
                  a byte position relative to the start of the data block

Arrays are stored sorted by name so identical content always produces
identical bytes. Anything non-numeric (counters, RNG state, config) goes
in the manifest's meta object.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct

import numpy as np

from .agent import Agent, AgentConfig
from .nn import ConfigurationError
from .replay import ReplayBuffer

MAGIC = b"F64CHKPT"
VERSION = 1
AGENT_KIND = "slacksac/agent"


def write_checkpoint(path, arrays: dict, meta: dict) -> None:
    """Serialize arrays and meta to path atomically (write then rename)."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    try:
        manifest = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    except TypeError as exc:
        raise ConfigurationError(f"checkpoint meta is not JSON-serializable: {exc}") from exc
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_checkpoint(path):
    """Return (arrays, meta); raises ConfigurationError on any malformation."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 20 or raw[:8] != MAGIC:
        raise ConfigurationError(f"{path} is not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version} in {path}")
    (manifest_len,) = struct.unpack_from("<Q", raw, 12)
    data_start = 20 + manifest_len
    if data_start > len(raw):
        raise ConfigurationError(f"truncated checkpoint manifest in {path}")
    try:
        manifest = json.loads(raw[20:data_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"corrupt checkpoint manifest in {path}: {exc}") from exc
    if not isinstance(manifest, dict) or "arrays" not in manifest or "meta" not in manifest:
        raise ConfigurationError(f"checkpoint manifest missing required keys in {path}")
    data = raw[data_start:]
    arrays = {}
    expected_end = 0
    for entry in manifest["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8
        start = int(entry["offset"])
        if start + n_bytes > len(data):
            raise ConfigurationError(f"truncated checkpoint data in {path}")
        arrays[entry["name"]] = (
            np.frombuffer(data, dtype="<f8", count=n_bytes // 8, offset=start)
            .reshape(shape)
            .copy()
        )
        expected_end = max(expected_end, start + n_bytes)
    if expected_end != len(data):
        raise ConfigurationError(f"checkpoint data length mismatch in {path}")
    return arrays, manifest["meta"]


def dump_buffer(buffer: ReplayBuffer) -> tuple[dict, dict]:
    """Arrays and meta capturing the filled portion of a replay buffer."""
    n = buffer.count
    arrays = {
        "replay/states": buffer.states[:n],
        "replay/actions": buffer.actions[:n],
        "replay/next_states": buffer.next_states[:n],
        "replay/rewards": buffer.rewards[:n],
        "replay/dones": buffer.dones[:n],
        "replay/truncateds": buffer.truncateds[:n],
    }
    meta = {
        "capacity": buffer.capacity,
        "count": buffer.count,
        "write_index": buffer.write_index,
        "state_dim": buffer.state_dim,
        "action_dim": buffer.action_dim,
    }
    return arrays, meta


def load_buffer(arrays: dict, meta: dict) -> ReplayBuffer:
    buffer = ReplayBuffer(int(meta["state_dim"]), int(meta["action_dim"]), int(meta["capacity"]))
    n = int(meta["count"])
    buffer.states[:n] = arrays["replay/states"]
    buffer.actions[:n] = arrays["replay/actions"]
    buffer.next_states[:n] = arrays["replay/next_states"]
    buffer.rewards[:n] = arrays["replay/rewards"]
    buffer.dones[:n] = arrays["replay/dones"]
    buffer.truncateds[:n] = arrays["replay/truncateds"]
    buffer.count = n
    buffer.write_index = int(meta["write_index"])
    return buffer


def save_agent(path, agent: Agent, buffer: ReplayBuffer | None = None, rng=None, extra_meta=None) -> None:
    """Bundle agent networks, optimizers, counters, and optionally the
    replay buffer and run RNG state into one resumable checkpoint."""
    arrays = dict(agent.state_arrays())
    meta = {
        "kind": AGENT_KIND,
        "config": dataclasses.asdict(agent.config),
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "agent": agent.state_meta(),
    }
    if buffer is not None:
        buffer_arrays, buffer_meta = dump_buffer(buffer)
        arrays.update(buffer_arrays)
        meta["buffer"] = buffer_meta
    if rng is not None:
        meta["rng_state"] = rng.bit_generator.state
    if extra_meta:
        meta["extra"] = extra_meta
    write_checkpoint(path, arrays, meta)


def load_agent(path):
    """Inverse of save_agent: (agent, buffer or None, rng or None, meta)."""
    arrays, meta = read_checkpoint(path)
    if meta.get("kind") != AGENT_KIND:
        raise ConfigurationError(f"{path} is not an agent checkpoint")
    raw_config = dict(meta["config"])
    raw_config["hidden"] = tuple(raw_config["hidden"])
    config = AgentConfig(**raw_config)
    agent = Agent(int(meta["state_dim"]), int(meta["action_dim"]), config)
    for name, target in agent.state_arrays().items():
        if name not in arrays:
            raise ConfigurationError(f"checkpoint missing array {name!r}")
        if arrays[name].shape != target.shape:
            raise ConfigurationError(
                f"checkpoint array {name!r} has shape {arrays[name].shape}, "
                f"expected {target.shape}"
            )
        target[...] = arrays[name]
    agent.restore_meta(meta["agent"])
    buffer = load_buffer(arrays, meta["buffer"]) if "buffer" in meta else None
    rng = None
    if "rng_state" in meta:
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
    return agent, buffer, rng, meta
