"""Binary and text persistence for trajectories, checkpoints and records.

Binary layouts (all little-endian):

``SPG1`` trajectory
    ``4s magic | u32 n | f64 length | u32 n_snapshots | f64 dt_snapshot``
    followed by ``n_snapshots * n`` f64 values, row-major (one row per snapshot).

``SPGN`` dense-network checkpoint
    ``4s magic | u32 n_sizes | n_sizes * u32 layer sizes`` followed, for each
    layer, by the f64 weight matrix (fan_in x fan_out, row-major) and then
    the f64 bias vector.

``SPGO`` spectral-operator checkpoint
    ``4s magic | u32 k_max | u32 width | u32 n_layers | u32 n | u32 residual``
    followed by f64 blocks in the order listed by
    :data:`spectra_gauntlet.surrogate.PARAM_ORDER`; complex blocks are stored
    as interleaved (real, imag) pairs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

TRAJ_MAGIC = b"SPG1"
NET_MAGIC = b"SPGN"
OP_MAGIC = b"SPGO"

_TRAJ_HEADER = struct.Struct("<4sIdId")


class ArtifactFormatError(ValueError):
    """Raised when a file does not carry a recognised artifact layout."""


def read_magic(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(4)


def write_trajectory(path, snapshots: np.ndarray, length: float, dt_snapshot: float) -> None:
    snapshots = np.ascontiguousarray(snapshots, dtype="<f8")
    if snapshots.ndim != 2:
        raise ValueError("snapshots must be a 2-D array (n_snapshots, n)")
    n_snap, n = snapshots.shape
    with open(path, "wb") as fh:
        fh.write(_TRAJ_HEADER.pack(TRAJ_MAGIC, n, float(length), n_snap, float(dt_snapshot)))
        fh.write(snapshots.tobytes())


def read_trajectory(path) -> dict:
    """Return ``{"n", "length", "dt_snapshot", "snapshots"}`` from an SPG1 file."""
    data = Path(path).read_bytes()
    if len(data) < _TRAJ_HEADER.size:
        raise ArtifactFormatError(f"{path}: file too short for an SPG1 header")
    magic, n, length, n_snap, dt = _TRAJ_HEADER.unpack_from(data)
    if magic != TRAJ_MAGIC:
        raise ArtifactFormatError(f"{path}: expected magic {TRAJ_MAGIC!r}, found {magic!r}")
    body = data[_TRAJ_HEADER.size:]
    if len(body) != 8 * n * n_snap:
        raise ArtifactFormatError(
            f"{path}: payload holds {len(body)} bytes, header implies {8 * n * n_snap}"
        )
    snaps = np.frombuffer(body, dtype="<f8").reshape(n_snap, n).astype(np.float64)
    return {"n": n, "length": length, "dt_snapshot": dt, "snapshots": snaps}


def write_trajectory_csv(path, snapshots: np.ndarray, length: float, dt_snapshot: float) -> None:
    snapshots = np.asarray(snapshots, dtype=np.float64)
    n_snap, n = snapshots.shape
    with open(path, "w", newline="") as fh:
        fh.write(f"# SPG1 n={n} length={float(length)!r} dt_snapshot={float(dt_snapshot)!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"u{j}" for j in range(n)])
        for i, row in enumerate(snapshots):
            writer.writerow([repr(i * float(dt_snapshot))] + [repr(float(v)) for v in row])


def read_trajectory_csv(path) -> dict:
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.startswith("# SPG1"):
            raise ArtifactFormatError(f"{path}: not a trajectory CSV (missing '# SPG1' line)")
        meta = dict(item.split("=", 1) for item in header[len("# SPG1"):].split())
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(v) for v in row[1:]] for row in reader if row]
    n = int(meta["n"])
    snaps = np.array(rows, dtype=np.float64).reshape(len(rows), n)
    return {
        "n": n,
        "length": float(meta["length"]),
        "dt_snapshot": float(meta["dt_snapshot"]),
        "snapshots": snaps,
    }


def write_network(path, sizes, weights, biases) -> None:
    with open(path, "wb") as fh:
        fh.write(NET_MAGIC)
        fh.write(struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes))
        for W, b in zip(weights, biases):
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def read_network(path):
    data = Path(path).read_bytes()
    if data[:4] != NET_MAGIC:
        raise ArtifactFormatError(f"{path}: expected magic {NET_MAGIC!r}, found {data[:4]!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    sizes = list(struct.unpack_from(f"<{count}I", data, 8))
    offset = 8 + 4 * count
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        W = np.frombuffer(data, "<f8", fan_in * fan_out, offset).reshape(fan_in, fan_out)
        offset += 8 * fan_in * fan_out
        b = np.frombuffer(data, "<f8", fan_out, offset)
        offset += 8 * fan_out
        weights.append(W.astype(np.float64))
        biases.append(b.astype(np.float64))
    if offset != len(data):
        raise ArtifactFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return sizes, weights, biases


def write_operator(path, header: tuple[int, ...], blocks: list[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(OP_MAGIC)
        fh.write(struct.pack("<5I", *header))
        for arr in blocks:
            arr = np.asarray(arr)
            if np.iscomplexobj(arr):
                arr = np.stack([arr.real, arr.imag], axis=-1)
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_operator(path, shapes_for_header):
    """Read an SPGO file; ``shapes_for_header(header)`` yields ``(shape, is_complex)``."""
    data = Path(path).read_bytes()
    if data[:4] != OP_MAGIC:
        raise ArtifactFormatError(f"{path}: expected magic {OP_MAGIC!r}, found {data[:4]!r}")
    header = struct.unpack_from("<5I", data, 4)
    offset = 24
    blocks = []
    for shape, is_complex in shapes_for_header(header):
        count = int(np.prod(shape)) * (2 if is_complex else 1)
        arr = np.frombuffer(data, "<f8", count, offset).astype(np.float64)
        offset += 8 * count
        if is_complex:
            arr = arr.reshape(*shape, 2)
            arr = arr[..., 0] + 1j * arr[..., 1]
        else:
            arr = arr.reshape(shape)
        blocks.append(arr)
    if offset != len(data):
        raise ArtifactFormatError(f"{path}: {len(data) - offset} trailing bytes")
    return header, blocks


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_csv_cell(v) for v in row])


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
