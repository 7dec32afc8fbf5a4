"""Flat-binary grid serialization and byte-stable CSV export.

Format "divlab-grid-v1": a JSON header file (grid geometry, array directory,
free-form meta) next to a raw little-endian binary blob holding the arrays
back to back.  Nothing here depends on the coefficient field; loaders that
need one take it as an argument, since fields are code, not data.

CSV writers format every float with a fixed "%.12g" so that equal numbers
produce equal bytes; the determinism checks in the harness diff these files
directly.
"""

from __future__ import annotations

import json
import os
from typing import Sequence

import numpy as np

from .model import SpaceTimeGrid

FORMAT_TAG = "divlab-grid-v1"
FLOAT_FMT = "%.12g"

_DTYPES = {"float64": "<f8", "int32": "<i4", "int64": "<i8"}


def save_grid_arrays(path_base: str, grid: SpaceTimeGrid,
                     arrays: dict[str, np.ndarray],
                     meta: dict | None = None) -> None:
    directory = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        key = str(arr.dtype)
        if key not in _DTYPES:
            arr = arr.astype(np.float64)
            key = "float64"
        raw = arr.astype(_DTYPES[key], copy=False).tobytes()
        directory.append({"name": name, "shape": list(arr.shape),
                          "dtype": key, "offset": offset,
                          "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "format": FORMAT_TAG,
        "grid": {"box": [list(b) for b in grid.box],
                 "shape": list(grid.shape), "nt": grid.nt,
                 "horizon": grid.horizon},
        "arrays": directory,
        "meta": meta or {},
    }
    with open(path_base + ".json", "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(path_base + ".bin", "wb") as fh:
        for raw in blobs:
            fh.write(raw)


def load_grid_arrays(path_base: str):
    with open(path_base + ".json") as fh:
        header = json.load(fh)
    if header.get("format") != FORMAT_TAG:
        raise ValueError(f"not a {FORMAT_TAG} file: {path_base}")
    g = header["grid"]
    grid = SpaceTimeGrid(box=tuple(tuple(b) for b in g["box"]),
                         shape=tuple(g["shape"]), nt=int(g["nt"]),
                         horizon=float(g["horizon"]))
    arrays = {}
    with open(path_base + ".bin", "rb") as fh:
        blob = fh.read()
    for ent in header["arrays"]:
        dt = np.dtype(_DTYPES[ent["dtype"]])
        arr = np.frombuffer(blob, dtype=dt, count=ent["nbytes"] // dt.itemsize,
                            offset=ent["offset"])
        arrays[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return grid, arrays, header["meta"]


def save_kernel(path_base: str, kernel) -> None:
    arrays = {"p": kernel.p, "masses": kernel.masses,
              "clamped": np.asarray(kernel.clamped)}
    if kernel.score is not None:
        arrays["score"] = kernel.score
        arrays["grad"] = kernel.grad
    save_grid_arrays(path_base, kernel.grid, arrays,
                     meta={"kind": "kernel", "s_idx": kernel.s_idx,
                           "x": np.atleast_1d(kernel.x).astype(float).tolist(),
                           "substeps": kernel.substeps,
                           "tiny": kernel.tiny})


def load_kernel(path_base: str, cf):
    from .pde import TransitionKernel
    grid, arrays, meta = load_grid_arrays(path_base)
    if meta.get("kind") != "kernel":
        raise ValueError("file does not hold a kernel")
    return TransitionKernel(
        grid=grid, cf=cf, s_idx=int(meta["s_idx"]),
        x=np.asarray(meta["x"]), substeps=int(meta["substeps"]),
        p=arrays["p"], score=arrays.get("score"), grad=arrays.get("grad"),
        masses=arrays["masses"],
        clamped=arrays.get("clamped", np.zeros(arrays["p"].shape[0])),
        tiny=float(meta.get("tiny", 1e-12)))


def save_ensemble(path_base: str, e) -> None:
    save_grid_arrays(
        path_base, e.grid,
        {"nodes": e.nodes.astype(np.int64), "offsets": e.offsets,
         "positions": e.positions},
        meta={"kind": "ensemble", "s_idx": e.s_idx,
              "x": list(np.atleast_1d(e.x).astype(float)),
              "seed": e.seed,
              "boundary_touches": int(e.boundary_touches)})


def load_ensemble(path_base: str, chain):
    from .sampling import PathEnsemble
    grid, arrays, meta = load_grid_arrays(path_base)
    if meta.get("kind") != "ensemble":
        raise ValueError("file does not hold an ensemble")
    s_idx = int(meta["s_idx"])
    nodes = arrays["nodes"].astype(np.int32)
    times = grid.times[s_idx:s_idx + nodes.shape[1]]
    return PathEnsemble(
        grid=grid, cf=chain.cf, chain=chain, s_idx=s_idx,
        x=np.asarray(meta["x"]), seed=int(meta["seed"]), times=times,
        nodes=nodes, positions=arrays["positions"], offsets=arrays["offsets"],
        boundary_touches=int(meta.get("boundary_touches", 0)))


# ---------------------------------------------------------------------------
# CSV


def write_csv(path: str, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(columns)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(FLOAT_FMT % float(v))
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def ladder_csv(path: str, ladder) -> None:
    """One row per rung: param, value, se (when present), fitted slope."""
    ses = ladder.extra.get("ses", [float("nan")] * len(ladder.values))
    slope = ladder.extra.get("slope", float("nan"))
    rows = [(p, v, s, slope)
            for p, v, s in zip(ladder.params, ladder.values, ses)]
    write_csv(path, ["param", "value", "se", "slope"], rows)


def slice_csv(path: str, grid: SpaceTimeGrid, values: np.ndarray,
              axis: int = 0) -> None:
    """1-d slice through the spatial center along one axis, one value column."""
    idx = [s // 2 for s in grid.shape]
    take = []
    for i in range(grid.d):
        take.append(slice(None) if i == axis else idx[i])
    sliced = np.asarray(values).reshape(grid.shape)[tuple(take)]
    xs = grid.axes[axis]
    write_csv(path, ["x", "value"], list(zip(xs, sliced)))


def curve_csv(path: str, fs, max_paths: int = 8) -> None:
    """Mean curve with its standard error plus a few raw paths."""
    cols = ["t", "mean", "se"] + [f"path{i}" for i in range(min(max_paths, fs.values.shape[0]))]
    mean = fs.mean_curve()
    se = fs.se_curve()
    rows = []
    for k, t in enumerate(fs.times):
        row = [t, mean[k], se[k]]
        row += [fs.values[i, k] for i in range(min(max_paths, fs.values.shape[0]))]
        rows.append(row)
    write_csv(path, cols, rows)
