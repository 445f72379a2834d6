"""Model files.

Layout of a ``.ngm`` file::

    b"NGM1" | uint32 LE header length | header JSON (UTF-8, sorted keys)
    | float64 LE arrays, row-major, in header order

The header lists every array's name and shape.  A binned variant is stored
inside the same file under the ``variant/`` prefix.  Nothing time- or
host-dependent is written, so equal models give equal bytes.  A readable
JSON sidecar (``<file>.json``) repeats the metadata.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import FeatureSchema
from .graph import DependencyGraph, DependencyMask, Edge
from .learning import NgmModel, TrainConfig
from .numerics import MlpParams

MAGIC = b"NGM1"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _labels(labels):
    return [list(x) if isinstance(x, tuple) else x for x in labels]


def _unlabels(labels):
    return tuple(tuple(x) if isinstance(x, list) else x for x in labels)


def graph_to_json(g: DependencyGraph | None):
    if g is None:
        return None
    return {"nodes": list(g.nodes), "dag": bool(g.dag),
            "edges": [[e.source, e.target, e.kind, e.sign, e.weight] for e in g.edges]}


def graph_from_json(d) -> DependencyGraph | None:
    if d is None:
        return None
    return DependencyGraph(tuple(d["nodes"]), tuple(Edge(*e) for e in d["edges"]), dag=d["dag"])


def _model_parts(model: NgmModel, prefix: str = ""):
    meta = {
        "activations": list(model.params.activations),
        "binned": bool(model.binned),
        "config": model.config.to_json(),
        "final_losses": {k: (v if isinstance(v, bool) else float(v))
                         for k, v in model.final_losses.items()},
        "graph": graph_to_json(model.graph),
        "history": {k: [float(x) for x in v] for k, v in model.history.items()},
        "lambda_trace": [float(x) for x in model.lambda_trace],
        "layer_dims": [model.params.in_dim] + [w.shape[0] for w in model.params.weights],
        "masks": {},
        "schema": model.schema.to_json() if model.schema is not None else None,
        "segments": list(model.segments),
    }
    arrays = []
    for l, (w, b) in enumerate(zip(model.params.weights, model.params.biases)):
        arrays.append((f"{prefix}W{l}", w))
        arrays.append((f"{prefix}b{l}", b))
    for key in ("mask", "enc_mask", "dec_mask"):
        m = getattr(model, key)
        if m is None:
            continue
        meta["masks"][key] = {"rows": _labels(m.row_labels), "cols": _labels(m.col_labels)}
        arrays.append((f"{prefix}{key}", m.matrix.astype(float)))
    if model.variant is not None:
        vmeta, varrays = _model_parts(model.variant, prefix + "variant/")
        meta["variant"] = vmeta
        arrays.extend(varrays)
    return meta, arrays


def model_to_bytes(model: NgmModel) -> bytes:
    meta, arrays = _model_parts(model)
    meta["format_version"] = FORMAT_VERSION
    meta["arrays"] = [[name, list(a.shape)] for name, a in arrays]
    header = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    return MAGIC + struct.pack("<I", len(header)) + header + body


def _model_from_parts(meta, arrays, prefix=""):
    n = len(meta["activations"])
    params = MlpParams([arrays[f"{prefix}W{l}"] for l in range(n)],
                       [arrays[f"{prefix}b{l}"] for l in range(n)], tuple(meta["activations"]))
    masks = {}
    for key, lab in meta["masks"].items():
        masks[key] = DependencyMask(arrays[f"{prefix}{key}"].astype(np.int8),
                                    _unlabels(lab["rows"]), _unlabels(lab["cols"]))
    schema = FeatureSchema.from_json(meta["schema"]) if meta["schema"] is not None else None
    variant = None
    if "variant" in meta:
        variant = _model_from_parts(meta["variant"], arrays, prefix + "variant/")
    return NgmModel(params=params, schema=schema, mask=masks["mask"],
                    config=TrainConfig.from_json(meta["config"]), binned=meta["binned"],
                    segments=tuple(meta["segments"]), enc_mask=masks.get("enc_mask"),
                    dec_mask=masks.get("dec_mask"), lambda_trace=list(meta["lambda_trace"]),
                    history={k: list(v) for k, v in meta["history"].items()},
                    final_losses=dict(meta["final_losses"]), graph=graph_from_json(meta["graph"]),
                    variant=variant)


def model_from_bytes(buf: bytes) -> NgmModel:
    if buf[:4] != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    if len(buf) < 8:
        raise ModelFormatError("truncated model file")
    (hlen,) = struct.unpack("<I", buf[4:8])
    try:
        meta = json.loads(buf[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"corrupt header: {exc}") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format version {meta.get('format_version')!r}")
    arrays = {}
    off = 8 + hlen
    for name, shape in meta["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        end = off + 8 * count
        if end > len(buf):
            raise ModelFormatError("truncated model file")
        arrays[name] = np.frombuffer(buf[off:end], dtype="<f8").reshape(shape).astype(float)
        off = end
    if off != len(buf):
        raise ModelFormatError("trailing bytes after arrays")
    return _model_from_parts(meta, arrays)


def sidecar(model: NgmModel) -> dict:
    meta, arrays = _model_parts(model)
    meta.pop("history", None)
    if "variant" in meta:
        meta["variant"].pop("history", None)
    meta["format_version"] = FORMAT_VERSION
    meta["arrays"] = [[name, list(a.shape)] for name, a in arrays]
    return meta


def save_model(model: NgmModel, path) -> Path:
    """Write the model file and its ``.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    path.write_bytes(model_to_bytes(model))
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps(sidecar(model), indent=2, sort_keys=True) + "\n")
    return side


def load_model(path) -> NgmModel:
    return model_from_bytes(Path(path).read_bytes())
