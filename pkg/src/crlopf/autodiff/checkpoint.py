"""Parameter checkpoints as versioned JSON: name -> shape, dtype and row-major values."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

FORMAT = "crlopf-params"
VERSION = 1


class CheckpointError(ValueError):
    pass


def params_to_dict(params: dict[str, Tensor]) -> dict:
    out = {}
    for name, p in params.items():
        a = np.ascontiguousarray(p.data)
        cplx = a.dtype.kind == "c"
        flat = a.view(np.float64).ravel() if cplx else a.ravel()
        out[name] = {"shape": list(a.shape), "dtype": "complex" if cplx else "real",
                     "values": flat.tolist()}
    return {"format": FORMAT, "version": VERSION, "params": out}


def arrays_from_dict(doc: dict) -> dict[str, np.ndarray]:
    if doc.get("format") != FORMAT:
        raise CheckpointError("not a parameter checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    arrays = {}
    for name, rec in doc["params"].items():
        shape = tuple(rec["shape"])
        vals = np.asarray(rec["values"], dtype=np.float64)
        if rec["dtype"] == "complex":
            arrays[name] = vals.view(np.complex128).reshape(shape)
        elif rec["dtype"] == "real":
            arrays[name] = vals.reshape(shape)
        else:
            raise CheckpointError(f"{name}: unknown dtype {rec['dtype']!r}")
    return arrays


def save_params(path: str | Path, params: dict[str, Tensor]) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path: str | Path, params: dict[str, Tensor]) -> None:
    """Overwrite ``params`` in place; names and shapes must match exactly."""
    arrays = arrays_from_dict(json.loads(Path(path).read_text()))
    assign_arrays(params, arrays)


def assign_arrays(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    if set(arrays) != set(params):
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        raise CheckpointError(f"parameter names differ (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        a = arrays[name]
        if a.shape != p.shape or (a.dtype.kind == "c") != p.is_complex:
            raise CheckpointError(f"{name}: checkpoint has {a.dtype} {a.shape}, model {p.data.dtype} {p.shape}")
        p.data[...] = a
