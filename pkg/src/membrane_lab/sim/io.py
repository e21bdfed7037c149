"""Bundle files.

Binary layout: 8-byte magic, little-endian uint32 header length, a UTF-8
JSON header (sorted keys), then each array in header order as raw
little-endian bytes.  The CSV form has one row per (path, grid time) and
starts with ``#`` comment lines carrying the tool version and config hash.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .. import __version__
from .bundle import PathBatch

MAGIC = b"MLBNDL01"
_FIELDS = ("x", "y", "local_time_total", "weighted_ltime_beta", "weighted_ltime_theta",
           "weighted_ltime_gamma", "a_functional", "escaped_window")


def _le(a: np.ndarray) -> np.ndarray:
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|", "<") else a.dtype
    return np.ascontiguousarray(a, dtype=dt)


def write_bundle(path, batch: PathBatch, config_hash: str = "", seed: int | None = None) -> None:
    arrays = {"times": batch.times}
    arrays.update({k: getattr(batch, k) for k in _FIELDS})
    arrays["escaped_window"] = arrays["escaped_window"].astype(np.uint8)
    header = {
        "version": __version__,
        "config_hash": config_hash,
        "seed": batch.meta.get("seed") if seed is None else seed,
        "first_index": batch.first_index,
        "meta": batch.meta,
        "arrays": [{"name": k, "dtype": _le(v).dtype.str, "shape": list(v.shape)}
                   for k, v in arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":"), default=str).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(_le(v).tobytes())


def read_bundle(path) -> tuple[PathBatch, dict]:
    """Inverse of :func:`write_bundle`; returns the batch and the header."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a bundle file")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + n])
    pos = 12 + n
    out = {}
    for spec in header["arrays"]:
        dt = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        out[spec["name"]] = np.frombuffer(data, dt, count, pos).reshape(spec["shape"]).copy()
        pos += count * dt.itemsize
    batch = PathBatch(out["times"], out["x"], out["y"], out["local_time_total"],
                      out["weighted_ltime_beta"], out["weighted_ltime_theta"],
                      out["weighted_ltime_gamma"], out["a_functional"],
                      out["escaped_window"].astype(bool), header["meta"], header["first_index"])
    return batch, header


def header_lines(config_hash: str, **extra) -> list[str]:
    lines = [f"# membrane-lab {__version__}", f"# config_hash {config_hash}"]
    lines += [f"# {k} {v}" for k, v in extra.items()]
    return lines


def write_bundle_csv(path, batch: PathBatch, config_hash: str = "", max_paths: int | None = None,
                     **extra) -> int:
    """Write one row per grid time per path; returns the number of paths written."""
    n = batch.n_paths if max_paths is None else min(batch.n_paths, max_paths)
    g = batch.times.size
    dy = batch.dim_y
    cols = ["path", "t", "x"] + [f"y{i + 1}" for i in range(dy)] + [
        "local_time_total", "weighted_ltime_beta", "weighted_ltime_gamma", "a", "escaped"]
    idx = np.repeat(np.arange(n) + batch.first_index, g)
    parts = [np.tile(batch.times, n), batch.x[:n].ravel()]
    parts += [batch.y[:n, :, i].ravel() for i in range(dy)]
    parts += [batch.local_time_total[:n].ravel(), batch.weighted_ltime_beta[:n].ravel(),
              batch.weighted_ltime_gamma[:n].ravel(), batch.a_functional[:n].ravel()]
    esc = np.repeat(batch.escaped_window[:n].astype(np.int64), g)
    body = np.column_stack(parts)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in header_lines(config_hash, paths_written=f"{n} of {batch.n_paths}", **extra):
            fh.write(line + "\n")
        fh.write(",".join(cols) + "\n")
        for k in range(body.shape[0]):
            vals = ",".join(format(v, ".17g") for v in body[k])
            fh.write(f"{idx[k]},{vals},{esc[k]}\n")
    return n
