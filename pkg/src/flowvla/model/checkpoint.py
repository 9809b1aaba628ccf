"""Checkpoint file: a text manifest followed by a float64 little-endian blob.

Layout::

    flowvla-checkpoint 1
    variant: two-expert
    config.<field>: <value>       (one line per ModelConfig field)
    meta.<key>: <value>           (optional free-form metadata)
    tensor <name> <d0>,<d1>,...   (manifest order == blob order)
    end
    <raw bytes>
"""

from __future__ import annotations

import io
import os

import numpy as np

from ..numerics import Tensor
from .base import PolicyModel
from .config import ModelConfig

MAGIC = "flowvla-checkpoint 1"


def model_class(variant: str) -> type[PolicyModel]:
    from .small import SmallPolicy
    from .two_expert import TwoExpertPolicy

    classes = {TwoExpertPolicy.variant: TwoExpertPolicy, SmallPolicy.variant: SmallPolicy}
    try:
        return classes[variant]
    except KeyError:
        raise ValueError(f"unknown model variant {variant!r}; expected one of {sorted(classes)}") from None


def dumps(model: PolicyModel, meta: dict | None = None) -> bytes:
    lines = [MAGIC, f"variant: {model.variant}"]
    lines += [f"config.{k}: {v!r}" for k, v in model.config.to_dict().items()]
    for k, v in sorted((meta or {}).items()):
        text = str(v)
        if "\n" in text:
            raise ValueError(f"metadata value for {k!r} must be a single line")
        lines.append(f"meta.{k}: {text}")
    names = sorted(model.params)
    for name in names:
        shape = ",".join(str(n) for n in model.params[name].shape)
        lines.append(f"tensor {name} {shape}")
    lines.append("end")
    buf = io.BytesIO()
    buf.write(("\n".join(lines) + "\n").encode("utf-8"))
    for name in names:
        buf.write(np.ascontiguousarray(model.params[name].data, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> tuple[PolicyModel, dict]:
    end = blob.find(b"\nend\n")
    if not blob.startswith(MAGIC.encode()) or end < 0:
        raise ValueError("not a flowvla checkpoint")
    header = blob[:end].decode("utf-8").split("\n")[1:]
    data = memoryview(blob)[end + len(b"\nend\n"):]
    variant = None
    config: dict = {}
    meta: dict = {}
    tensors: list[tuple[str, tuple[int, ...]]] = []
    for line in header:
        if line.startswith("tensor "):
            _, name, shape = line.split(" ")
            tensors.append((name, tuple(int(n) for n in shape.split(",") if n)))
            continue
        key, _, value = line.partition(": ")
        if key == "variant":
            variant = value
        elif key.startswith("config."):
            config[key[len("config."):]] = value.strip("'")
        elif key.startswith("meta."):
            meta[key[len("meta."):]] = value
        else:
            raise ValueError(f"unrecognised checkpoint manifest line {line!r}")
    cls = model_class(variant)
    params = {}
    offset = 0
    for name, shape in tensors:
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset * 8).reshape(shape).astype(np.float64)
        params[name] = Tensor(arr, requires_grad=True, name=name)
        offset += n
    if offset * 8 != len(data):
        raise ValueError(f"checkpoint blob has {len(data)} bytes, manifest describes {offset * 8}")
    return cls(ModelConfig.from_dict(config), params), meta


def save(path: str | os.PathLike, model: PolicyModel, meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(dumps(model, meta))


def load(path: str | os.PathLike) -> tuple[PolicyModel, dict]:
    with open(path, "rb") as f:
        return loads(f.read())
