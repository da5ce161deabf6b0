"""Weight checkpoints: a zip holding tensors.npz plus a JSON manifest.

The manifest lists every tensor's name, shape, and dtype, and embeds the
architecture config so checkpoints are self-describing.
"""

import hashlib
import io
import json
import zipfile

import numpy as np
import torch

FORMAT_VERSION = 1


def state_to_numpy(module):
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def weights_hash(module):
    """Stable hash of a module's weights (names + raw float64 bytes)."""
    h = hashlib.sha256()
    for name, tensor in sorted(state_to_numpy(module).items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(tensor, dtype=np.float64).tobytes())
    return h.hexdigest()


def save_checkpoint(path, module, config=None, extra=None):
    tensors = state_to_numpy(module)
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config or {},
        "extra": extra or {},
        "tensors": [
            {"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
            for k, v in sorted(tensors.items())
        ],
    }
    buf = io.BytesIO()
    np.savez(buf, **tensors)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2))
        zf.writestr("tensors.npz", buf.getvalue())
    return manifest


def read_manifest(path):
    with zipfile.ZipFile(path) as zf:
        return json.loads(zf.read("manifest.json"))


def load_checkpoint(path, module=None):
    """Return (tensors, manifest); loads into `module` when given."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        with np.load(io.BytesIO(zf.read("tensors.npz"))) as npz:
            tensors = {k: npz[k] for k in npz.files}
    for entry in manifest["tensors"]:
        t = tensors[entry["name"]]
        if list(t.shape) != entry["shape"] or str(t.dtype) != entry["dtype"]:
            raise ValueError(f"manifest mismatch for tensor {entry['name']}")
    if module is not None:
        state = {k: torch.from_numpy(v) for k, v in tensors.items()}
        module.load_state_dict(state)
    return tensors, manifest
