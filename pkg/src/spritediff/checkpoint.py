"""Checkpoint files: a JSON manifest line followed by raw float64 tensors.

Layout::

    SPRITEDIFF1 <manifest byte length>\\n
    <manifest JSON, sorted keys>\\n
    <payload: little-endian float64 buffers, in manifest order>

The manifest's tensor table maps each name to its shape, byte offset and
byte length; the offsets tile the payload exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SPRITEDIFF1"
FORMAT_VERSION = 1
_LE = np.dtype("<f8")


@dataclass
class Checkpoint:
    stage: str
    meta: dict = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        table = {}
        chunks = []
        offset = 0
        for name in sorted(self.tensors):
            arr = np.asarray(self.tensors[name], dtype=_LE, order="C")
            raw = arr.tobytes()
            table[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
            chunks.append(raw)
            offset += len(raw)
        manifest = {"format_version": FORMAT_VERSION, "stage": self.stage, "meta": self.meta, "tensors": table}
        head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
        return MAGIC + b" " + str(len(head)).encode() + b"\n" + head + b"\n" + b"".join(chunks)

    @classmethod
    def from_bytes(cls, raw: bytes) -> Checkpoint:
        line_end = raw.find(b"\n")
        first = raw[:line_end].split(b" ") if line_end > 0 else []
        if len(first) != 2 or first[0] != MAGIC or not first[1].isdigit():
            raise CheckpointError("not a checkpoint file (bad magic line)")
        n = int(first[1])
        start = line_end + 1
        if len(raw) < start + n + 1 or raw[start + n : start + n + 1] != b"\n":
            raise CheckpointError("truncated or corrupt manifest")
        try:
            manifest = json.loads(raw[start : start + n])
        except ValueError as e:
            raise CheckpointError(f"manifest is not valid JSON: {e}") from None
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported format version {manifest.get('format_version')!r}")
        payload = memoryview(raw)[start + n + 1 :]
        tensors = {}
        expect = 0
        for name, entry in sorted(manifest["tensors"].items(), key=lambda kv: kv[1]["offset"]):
            off, nbytes, shape = entry["offset"], entry["nbytes"], tuple(entry["shape"])
            if off != expect or nbytes != 8 * int(np.prod(shape, dtype=np.int64)) or off + nbytes > len(payload):
                raise CheckpointError(f"tensor table does not tile the payload at {name!r}")
            expect = off + nbytes
            tensors[name] = np.frombuffer(payload[off : off + nbytes], dtype=_LE).reshape(shape).astype(np.float64)
        if expect != len(payload):
            raise CheckpointError(f"payload has {len(payload)} bytes, table covers {expect}")
        return cls(manifest["stage"], manifest["meta"], tensors)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> Checkpoint:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"checkpoint not found: {p}")
        return cls.from_bytes(p.read_bytes())

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Tensors under ``prefix`` with the prefix stripped."""
        return {k[len(prefix) :]: v for k, v in self.tensors.items() if k.startswith(prefix)}


def model_checkpoint(model, stage: str, meta: dict | None = None, optimizer=None, extra: dict | None = None) -> Checkpoint:
    """Bundle weights, configs, schedule and (optionally) optimizer state."""
    info = {"model": model.cfg.to_dict(), "schedule": model.schedule.to_dict()}
    info.update(meta or {})
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        tensors.update({f"optim.{k}": v for k, v in optimizer.state_dict().items()})
    tensors.update(extra or {})
    return Checkpoint(stage, info, tensors)


def load_model(ckpt: Checkpoint):
    from .model import ModelConfig, SpriteDiffusion

    try:
        cfg = ModelConfig.from_dict(ckpt.meta["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"checkpoint has no usable model config: {e}") from None
    model = SpriteDiffusion(cfg)
    try:
        model.load_state_dict(ckpt.subset("model."))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint weights do not match the model config: {e}") from None
    return model


def optimizer_state(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    return ckpt.subset("optim.")
