"""Model checkpoints: JSON manifest plus one flat float32 blob.

The manifest records the topology tag, builder configuration, and the
offset/shape of every parameter and batchnorm buffer inside the blob, so
a checkpoint can rebuild its model without external context.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .models import BUILDERS


def save_checkpoint(model, path_prefix, extra_meta=None) -> tuple[str, str]:
    """Write <prefix>.json and <prefix>.f32; returns both paths."""
    tensors = dict(model.params())
    arrays = {name: p.data for name, p in tensors.items()}
    arrays.update({f"buffer:{n}": b for n, b in model.buffers().items()})
    manifest_tensors = []
    offset = 0
    blob_parts = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        manifest_tensors.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
        })
        blob_parts.append(arr.reshape(-1))
        offset += arr.size
    manifest = {
        "topology": model.topology,
        "config": model.config,
        "total_values": offset,
        "tensors": manifest_tensors,
    }
    if extra_meta:
        manifest["meta"] = extra_meta
    json_path = f"{path_prefix}.json"
    blob_path = f"{path_prefix}.f32"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    np.concatenate(blob_parts).astype("<f4").tofile(blob_path)
    return json_path, blob_path


def load_checkpoint(path_prefix):
    """Rebuild the model named by <prefix>.json and load its weights."""
    json_path = f"{path_prefix}.json"
    blob_path = f"{path_prefix}.f32"
    if not os.path.exists(json_path):
        raise FileNotFoundError(json_path)
    with open(json_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    topology = manifest["topology"]
    if topology not in BUILDERS:
        raise ValueError(f"unknown model topology {topology!r}")
    model = BUILDERS[topology](**manifest["config"])
    blob = np.fromfile(blob_path, dtype="<f4")
    if blob.size != int(manifest["total_values"]):
        raise ValueError(
            f"{blob_path}: holds {blob.size} values, manifest declares "
            f"{manifest['total_values']}"
        )
    params = model.params()
    buffers = model.buffers()
    for entry in manifest["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        start = int(entry["offset"])
        count = int(np.prod(shape)) if shape else 1
        chunk = blob[start:start + count].reshape(shape)
        if name.startswith("buffer:"):
            target = buffers[name[len("buffer:"):]]
        else:
            target = params[name].data
        if target.shape != shape:
            raise ValueError(
                f"tensor {name}: checkpoint shape {shape} != model shape "
                f"{target.shape}"
            )
        target[...] = chunk.astype(target.dtype)
    return model
