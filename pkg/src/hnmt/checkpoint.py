"""Savepoints, parameter averaging and the binary checkpoint format.

File layout::

    b"HNMTCKPT"            magic
    uint32 LE              format version
    uint64 LE              header length in bytes
    header                 UTF-8 JSON: label, config, vocabularies, scores,
                           parameter manifest (name, shape, offset, nbytes)
    payload                little-endian float32 arrays in manifest order
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import CheckpointError, ContractError
from .model import INIT_CONVENTION, HNMTModel, ModelConfig
from .vocab import Vocabulary

MAGIC = b"HNMTCKPT"
VERSION = 1
_LE_F32 = np.dtype("<f4")


@dataclass
class Savepoint:
    label: str
    params: dict
    config: ModelConfig
    vocabs: dict
    scores: dict = field(default_factory=dict)
    step: int = 0
    model_id: str = "model"
    seed: int = 0

    @classmethod
    def of(cls, model, label=None, step=0, scores=None, model_id="model"):
        return cls(
            label=label or f"{model_id}@{step}",
            params=model.state_dict(),
            config=ModelConfig.from_dict(model.config.to_dict()),
            vocabs=model.vocabularies(),
            scores=dict(scores or {}),
            step=step,
            model_id=model_id,
            seed=model.seed,
        )

    def to_model(self):
        model = HNMTModel.from_vocabularies(self.config, self.vocabs, seed=self.seed)
        model.load_state_dict(self.params)
        return model

    def load_into(self, model):
        """Copy parameters into an existing model, refusing any mismatch."""
        if model.config.to_dict() != self.config.to_dict():
            diff = {
                k: (v, self.config.to_dict()[k])
                for k, v in model.config.to_dict().items()
                if self.config.to_dict().get(k) != v
            }
            raise CheckpointError(f"model config differs from checkpoint: {diff}")
        model.load_state_dict(self.params)
        return model


def _check_compatible(savepoints):
    ref = savepoints[0].params
    for sp in savepoints[1:]:
        for name in ref:
            if name not in sp.params:
                raise ContractError(f"savepoint {sp.label!r} lacks parameter {name!r}")
            if sp.params[name].shape != ref[name].shape:
                raise ContractError(
                    f"parameter {name!r}: shape {sp.params[name].shape} in {sp.label!r} "
                    f"vs {ref[name].shape}"
                )
        for name in sp.params:
            if name not in ref:
                raise ContractError(f"savepoint {sp.label!r} has unexpected parameter {name!r}")


def average_parameters(savepoints):
    """Elementwise mean of every named parameter over the savepoints.

    Values are summed in sorted order in float64, so the result does not
    depend on the order of ``savepoints``.
    """
    savepoints = list(savepoints)
    if not savepoints:
        raise ContractError("nothing to average")
    _check_compatible(savepoints)
    first = savepoints[0]
    if len(savepoints) == 1:
        params = {k: v.copy() for k, v in first.params.items()}
    else:
        params = {}
        for name in first.params:
            stack = np.sort(np.stack([sp.params[name] for sp in savepoints]).astype(np.float64), axis=0)
            params[name] = (stack.sum(axis=0) / len(savepoints)).astype(np.float32)
    return Savepoint(
        label="avg(" + ",".join(sp.label for sp in savepoints) + ")",
        params=params,
        config=first.config,
        vocabs=first.vocabs,
        step=max(sp.step for sp in savepoints),
        model_id=first.model_id,
        seed=first.seed,
    )


def select_best_savepoint(savepoints, metric="chrf3"):
    """Savepoint with the highest heldout ``metric``; ties go to the later one."""
    if not savepoints:
        raise ContractError("no savepoints to choose from")
    best = None
    for sp in savepoints:
        if metric not in sp.scores:
            raise ContractError(f"savepoint {sp.label!r} has no {metric} score")
        if best is None or sp.scores[metric] >= best.scores[metric]:
            best = sp
    return best


def save_checkpoint(savepoint, path):
    manifest, offset = [], 0
    blobs = []
    for name, value in savepoint.params.items():
        blob = np.ascontiguousarray(value, dtype=_LE_F32).tobytes()
        manifest.append({"name": name, "shape": list(value.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "label": savepoint.label,
        "step": savepoint.step,
        "model_id": savepoint.model_id,
        "seed": savepoint.seed,
        "config": savepoint.config.to_dict(),
        "init": INIT_CONVENTION,
        "vocabularies": {k: v.to_dict() for k, v in savepoint.vocabs.items()},
        "scores": savepoint.scores,
        "manifest": manifest,
    }
    raw = json.dumps(header, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(raw)))
        f.write(raw)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an HNMT checkpoint (bad magic bytes)")
    pos = len(MAGIC)
    if len(data) < pos + 12:
        raise CheckpointError(f"{path}: truncated before header")
    version, hlen = struct.unpack_from("<IQ", data, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    pos += 12
    if len(data) < pos + hlen:
        raise CheckpointError(f"{path}: truncated header ({len(data) - pos} of {hlen} bytes)")
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    pos += hlen
    payload = memoryview(data)[pos:]
    params, expected = {}, 0
    for entry in header.get("manifest", []):
        name, shape = entry["name"], tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if entry["offset"] != expected or entry["nbytes"] != n:
            raise CheckpointError(f"{path}: manifest entry {name!r} is inconsistent")
        if entry["offset"] + n > len(payload):
            raise CheckpointError(f"{path}: truncated payload at parameter {name!r}")
        arr = np.frombuffer(payload[entry["offset"] : entry["offset"] + n], dtype=_LE_F32)
        params[name] = arr.astype(np.float32).reshape(shape)
        expected += n
    if expected != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - expected} trailing payload bytes")
    try:
        config = ModelConfig.from_dict(header["config"])
        vocabs = {k: Vocabulary.from_dict(v) for k, v in header["vocabularies"].items()}
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: bad header field: {e}") from e
    return Savepoint(
        label=header["label"],
        params=params,
        config=config,
        vocabs=vocabs,
        scores=header.get("scores", {}),
        step=header.get("step", 0),
        model_id=header.get("model_id", "model"),
        seed=header.get("seed", 0),
    )
