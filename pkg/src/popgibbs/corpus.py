"""Corpus files: a flat little-endian float64 blob of points
(instances x points x 2) plus a JSON sidecar recording the generation
settings, with ground truth in a companion blob for diagnostics."""

from __future__ import annotations

import json
import os

import numpy as np

DIM = 2


def write_corpus(base: str, x: np.ndarray, sidecar: dict,
                 truth: dict | None = None) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(base)), exist_ok=True)
    x = np.ascontiguousarray(x, dtype="<f8")
    meta = dict(sidecar)
    meta["instances"], meta["n_points"], meta["dim"] = x.shape
    meta["layout"] = "instances x n_points x dim, little-endian float64"
    with open(base + ".bin", "wb") as f:
        f.write(x.tobytes())
    if truth is not None:
        order = sorted(truth)
        meta["truth"] = {k: list(np.asarray(truth[k]).shape) for k in order}
        with open(base + ".truth.bin", "wb") as f:
            for k in order:
                f.write(np.ascontiguousarray(truth[k], dtype="<f8").tobytes())
    with open(base + ".json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1, sort_keys=True)


def read_corpus(base: str):
    with open(base + ".json", encoding="utf-8") as f:
        meta = json.load(f)
    shape = (meta["instances"], meta["n_points"], meta["dim"])
    x = np.fromfile(base + ".bin", dtype="<f8").reshape(shape)
    truth = None
    if "truth" in meta and os.path.exists(base + ".truth.bin"):
        blob = np.fromfile(base + ".truth.bin", dtype="<f8")
        truth = {}
        offset = 0
        for k in sorted(meta["truth"]):
            tshape = tuple(meta["truth"][k])
            size = int(np.prod(tshape))
            arr = blob[offset:offset + size].reshape(tshape)
            truth[k] = arr.astype(np.int64) if k == "c" else arr
            offset += size
    return x, meta, truth
