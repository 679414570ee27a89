"""Binary checkpoint format.

Layout (little-endian)::

    b"ARBD01"
    u32 record count
    per record: u16 name length, utf-8 name, u8 ndim, u32 * ndim shape,
                float32 * prod(shape) row-major data

Learner checkpoints hold every network tensor, the Adam moments and step
counters, ``log_alpha``, the architecture under ``meta/arch`` and the training
step under ``meta/step``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .sac import VARIANTS, LearnerConfig, SACLearner

MAGIC = b"ARBD01"
_ADAPTER_FROM = ("penultimate", "first")


class CheckpointError(RuntimeError):
    pass


def write_tensors(path, tensors: dict[str, np.ndarray]):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(np.asarray(arr, dtype="<f4"))
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:6] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:6]!r}")
    try:
        (count,) = struct.unpack_from("<I", blob, 6)
        off = 10
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape).copy()
            off += 4 * size
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    return out


def learner_tensors(learner: SACLearner, step: int = 0) -> dict[str, np.ndarray]:
    cfg = learner.config
    t = {
        "meta/arch": np.array([VARIANTS.index(learner.variant), cfg.embed_width, cfg.hidden, cfg.adapter_width,
                               cfg.act_width, _ADAPTER_FROM.index(cfg.adapter_from), learner.flat_dim],
                              dtype=np.float64),
        "meta/step": np.array([step], dtype=np.float64),
        "log_alpha": learner.log_alpha,
    }
    for mname, mod in learner.modules().items():
        for pname, p in mod.named_parameters():
            t[f"{mname}.{pname}"] = p
    for oname, opt in learner.optimizers().items():
        t[f"opt/{oname}/t"] = np.array([opt.t], dtype=np.float64)
        for k, (m, v) in enumerate(zip(opt.m, opt.v)):
            t[f"opt/{oname}/m/{k}"] = m
            t[f"opt/{oname}/v/{k}"] = v
    return t


def save_learner(learner: SACLearner, path, step: int = 0):
    write_tensors(path, learner_tensors(learner, step))


def load_learner(path, config: LearnerConfig | None = None, dtype=np.float32) -> tuple[SACLearner, int]:
    """Rebuild a learner from a checkpoint. Architecture fields in ``config`` are overridden."""
    t = read_tensors(path)
    if "meta/arch" not in t:
        raise CheckpointError(f"{path}: missing meta/arch record")
    arch = [int(round(float(x))) for x in t["meta/arch"]]
    if len(arch) != 7 or not 0 <= arch[0] < len(VARIANTS):
        raise CheckpointError(f"{path}: unrecognised architecture record {arch}")
    base = config or LearnerConfig()
    kw = {f: getattr(base, f) for f in base.__dataclass_fields__}
    kw.update(embed_width=arch[1], hidden=arch[2], adapter_width=arch[3], act_width=arch[4],
              adapter_from=_ADAPTER_FROM[arch[5]])
    learner = SACLearner(VARIANTS[arch[0]], LearnerConfig(**kw), flat_dim=arch[6], dtype=dtype)
    for mname, mod in learner.modules().items():
        for pname, p in mod.named_parameters():
            key = f"{mname}.{pname}"
            if key not in t:
                raise CheckpointError(f"{path}: missing tensor {key}")
            if t[key].shape != p.shape:
                raise CheckpointError(f"{path}: tensor {key} has shape {t[key].shape}, network expects {p.shape}")
            p[...] = t[key]
        mod.bump()
    learner.log_alpha[...] = t["log_alpha"]
    for oname, opt in learner.optimizers().items():
        if f"opt/{oname}/t" in t:
            opt.t = int(round(float(t[f"opt/{oname}/t"][0])))
            for k in range(len(opt.m)):
                opt.m[k][...] = t[f"opt/{oname}/m/{k}"]
                opt.v[k][...] = t[f"opt/{oname}/v/{k}"]
    step = int(round(float(t["meta/step"][0]))) if "meta/step" in t else 0
    return learner, step
