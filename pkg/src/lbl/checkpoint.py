"""Model checkpoints: a single ``.npz`` with named arrays plus a JSON header.

Layout (``format_version`` 1):

* ``param/<name>``: gradient-trained parameters
* ``ema/<name>``: EMA target copies
* ``extra/<name>``: optional arrays stored alongside (e.g. a probe)
* ``meta``: UTF-8 JSON with ``format``, ``format_version``, ``kind``,
  ``config`` and ``seed``

No pickled objects are written, so files load with ``allow_pickle=False``.
"""
import json

import numpy as np

from lbl.models import ArModel, BJepaModel, JepaModel, VaeModel, VJepaModel

FORMAT = "lbl-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def save_model(model, path, seed=None, extra=None):
    meta = {
        "format": FORMAT,
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "config": {k: _jsonable(v) for k, v in model.config.items()},
        "seed": _jsonable(seed),
    }
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays.update({f"ema/{k}": v for k, v in model.ema.items()})
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def _build(kind, cfg):
    d_x, d_z = cfg["d_x"], cfg["d_z"]
    if kind == "vae":
        return VaeModel(d_x, d_z, beta=cfg["beta"])
    if kind == "ar":
        return ArModel(d_x, d_z)
    if kind == "jepa":
        return JepaModel(d_x, d_z, vicreg=tuple(cfg["vicreg"]))
    if kind == "vjepa":
        return VJepaModel(d_x, d_z, beta=cfg["beta"], d_u=cfg.get("d_u", 0))
    if kind == "bjepa":
        return BJepaModel(d_x, d_z, beta=cfg["beta"], gamma=cfg["gamma"], d_u=cfg.get("d_u", 0))
    raise CheckpointError(f"unknown model kind {kind!r}")


def load_model(path):
    """Returns ``(model, meta, extra)``."""
    with np.load(path, allow_pickle=False) as f:
        if "meta" not in f.files:
            raise CheckpointError(f"{path}: not an lbl checkpoint (no meta record)")
        meta = json.loads(str(f["meta"]))
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unexpected format {meta.get('format')!r}")
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format_version {meta.get('format_version')}")
        model = _build(meta["kind"], meta["config"])
        extra = {}
        for name in f.files:
            group, _, key = name.partition("/")
            if group == "param":
                target = model.params
            elif group == "ema":
                target = model.ema
            elif group == "extra":
                extra[key] = f[name]
                continue
            else:
                continue
            if key not in target or target[key].shape != f[name].shape:
                raise CheckpointError(f"{path}: array {name} does not match a {meta['kind']} model")
            target[key] = np.array(f[name], dtype=np.float64)
    return model, meta, extra
