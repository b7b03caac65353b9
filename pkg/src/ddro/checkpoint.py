"""Versioned binary checkpoints for parameter records and training state.

Layout: magic string, format version, a length-prefixed JSON header (the
architecture block, dtype tag, array names/shapes, and optional metadata
such as optimizer counters and RNG state), then the named arrays flattened
little-endian in header order, and a trailing CRC32 checksum over
everything before it.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .denoiser import DenoiserArch, DenoiserParams

MAGIC = b"DDROCKPT"
VERSION = 1
DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


def _arch_to_dict(arch: DenoiserArch) -> dict:
    return {"data_dim": arch.data_dim, "hidden": list(arch.hidden),
            "n_conditions": arch.n_conditions, "cond_dim": arch.cond_dim,
            "n_freq": arch.n_freq, "horizon": arch.horizon}


def _arch_from_dict(d: dict) -> DenoiserArch:
    return DenoiserArch(data_dim=d["data_dim"], hidden=tuple(d["hidden"]),
                        n_conditions=d["n_conditions"], cond_dim=d["cond_dim"],
                        n_freq=d["n_freq"], horizon=d["horizon"])


def _pack(header: dict, arrays: dict) -> bytes:
    names = sorted(arrays)
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(arrays[k]))} for k in names]
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", VERSION)
    body += struct.pack("<I", len(header_bytes)) + header_bytes
    for k in names:
        body += np.ascontiguousarray(arrays[k], dtype=DTYPE).tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def _unpack(blob: bytes):
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    stored_crc, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError("checksum mismatch: file is corrupted")
    off = len(MAGIC)
    version, = struct.unpack_from("<I", blob, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    hlen, = struct.unpack_from("<I", blob, off)
    off += 4
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype=DTYPE, count=count, offset=off)
        arrays[entry["name"]] = arr.reshape(shape).astype(float)
        off += arr.nbytes
    return header, arrays


def save_params(path, params: DenoiserParams, extra: dict | None = None):
    header = {"kind": "denoiser", "dtype": DTYPE, "arch": _arch_to_dict(params.arch)}
    if extra:
        header["extra"] = extra
    with open(path, "wb") as fh:
        fh.write(_pack(header, params.values))


def load_params(path) -> DenoiserParams:
    with open(path, "rb") as fh:
        header, arrays = _unpack(fh.read())
    if header.get("kind") != "denoiser":
        raise CheckpointError(f"expected a denoiser checkpoint, got {header.get('kind')!r}")
    return DenoiserParams(_arch_from_dict(header["arch"]), arrays)


def _rng_state_to_json(state: dict) -> dict:
    inner = state["state"]
    return {"bit_generator": state["bit_generator"],
            "counter": np.asarray(inner["counter"], dtype=np.uint64).tolist(),
            "key": np.asarray(inner["key"], dtype=np.uint64).tolist(),
            "buffer": np.asarray(state["buffer"], dtype=np.uint64).tolist(),
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"])}


def _rng_state_from_json(d: dict) -> dict:
    return {"bit_generator": d["bit_generator"],
            "state": {"counter": np.asarray(d["counter"], dtype=np.uint64),
                      "key": np.asarray(d["key"], dtype=np.uint64)},
            "buffer": np.asarray(d["buffer"], dtype=np.uint64),
            "buffer_pos": d["buffer_pos"],
            "has_uint32": d["has_uint32"],
            "uinteger": d["uinteger"]}


def save_train_state(path, state):
    """Serialize a full training state (learner, policy, EMA, optimizer, RNG)."""
    from .trainer import TrainState  # local import to avoid a cycle

    assert isinstance(state, TrainState)
    arrays = {}
    for prefix, record in (("phi", state.phi), ("policy", state.policy),
                           ("ema", state.ema.shadow)):
        for k, v in record.values.items():
            arrays[f"{prefix}.{k}"] = v
    for k, v in state.opt.m.items():
        arrays[f"opt.m.{k}"] = v
    for k, v in state.opt.v.items():
        arrays[f"opt.v.{k}"] = v
    header = {"kind": "train_state", "dtype": DTYPE,
              "arch": _arch_to_dict(state.phi.arch),
              "step": state.step,
              "opt_step": state.opt.step,
              "ema_decay": state.ema.decay,
              "rng_state": _rng_state_to_json(state.rng_state)}
    with open(path, "wb") as fh:
        fh.write(_pack(header, arrays))


def load_train_state(path):
    from .denoiser import EmaState
    from .trainer import OptimizerState, TrainState

    with open(path, "rb") as fh:
        header, arrays = _unpack(fh.read())
    if header.get("kind") != "train_state":
        raise CheckpointError(f"expected a train-state checkpoint, got {header.get('kind')!r}")
    arch = _arch_from_dict(header["arch"])

    def record(prefix):
        values = {k[len(prefix) + 1:]: v for k, v in arrays.items()
                  if k.startswith(prefix + ".") and not k.startswith("opt.")}
        return DenoiserParams(arch, values)

    phi = record("phi")
    policy = record("policy")
    ema_shadow = record("ema")
    m = {k[len("opt.m."):]: v for k, v in arrays.items() if k.startswith("opt.m.")}
    v = {k[len("opt.v."):]: v for k, v in arrays.items() if k.startswith("opt.v.")}
    opt = OptimizerState(m=m, v=v, step=header["opt_step"])
    return TrainState(phi=phi, policy=policy,
                      ema=EmaState(shadow=ema_shadow, decay=header["ema_decay"]),
                      opt=opt, step=header["step"],
                      rng_state=_rng_state_from_json(header["rng_state"]))
