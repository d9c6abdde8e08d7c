"""Persistence: a small binary container, heatmaps, JSON and CSV helpers.

Container layout (all integers little-endian u32, floats little-endian f64)::

    b"AINV"  version  tag  count
    count x [ rank  dim_1 .. dim_rank  payload ]

Complex arrays are stored as interleaved real/imag pairs; their manifest
keeps the complex shape and the tag says the payload is complex.
"""

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .fields import FieldGrid, Grid, SineCoeffs
from .nn import Dataset, NetConfig, NetWeights
from .priors import DiskSpec, FourierCoeffs
from .scatter import Measurement

MAGIC = b"AINV"
VERSION = 1

TAG_FIELD = 1
TAG_COEFFS = 2
TAG_MEASUREMENT = 3
TAG_DISKS = 4
TAG_FOURIER = 5
TAG_WEIGHTS = 6
TAG_DATASET = 7

_COMPLEX_TAGS = {TAG_MEASUREMENT}


class FormatError(ValueError):
    pass


def _pack_array(a, complex_payload=False):
    a = np.asarray(a)
    head = struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape)
    if complex_payload:
        a = np.stack([a.real, a.imag], axis=-1)
    return head + np.ascontiguousarray(a, dtype="<f8").tobytes()


def write_container(path, tag, arrays):
    body = [MAGIC, struct.pack("<III", VERSION, tag, len(arrays))]
    body += [_pack_array(a, tag in _COMPLEX_TAGS) for a in arrays]
    data = b"".join(body)
    Path(path).write_bytes(data)
    return data


def read_container(path, expect_tag=None):
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise FormatError(f"{path}: not an AINV container")
    version, tag, count = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"{path}: container version {version}, expected {VERSION}")
    if expect_tag is not None and tag != expect_tag:
        raise FormatError(f"{path}: record type {tag}, expected {expect_tag}")
    off = 16
    arrays = []
    for _ in range(count):
        (rank,) = struct.unpack_from("<I", buf, off)
        shape = struct.unpack_from(f"<{rank}I", buf, off + 4)
        off += 4 + 4 * rank
        n = int(np.prod(shape)) if rank else 1
        if tag in _COMPLEX_TAGS:
            flat = np.frombuffer(buf, "<f8", 2 * n, off)
            a = (flat[0::2] + 1j * flat[1::2]).reshape(shape)
            off += 16 * n
        else:
            a = np.frombuffer(buf, "<f8", n, off).reshape(shape).copy()
            off += 8 * n
        arrays.append(a)
    if off != len(buf):
        raise FormatError(f"{path}: {len(buf) - off} trailing bytes")
    return tag, arrays


# typed wrappers


def save_field(path, f: FieldGrid):
    write_container(path, TAG_FIELD, [f.values])


def load_field(path) -> FieldGrid:
    _, (v,) = read_container(path, TAG_FIELD)
    return FieldGrid(Grid(v.shape[0]), v)


def save_coeffs(path, c: SineCoeffs):
    write_container(path, TAG_COEFFS, [c.coeffs])


def load_coeffs(path) -> SineCoeffs:
    _, (v,) = read_container(path, TAG_COEFFS)
    return SineCoeffs(int(round(np.sqrt(len(v)))), v)


def save_measurement(path, m: Measurement):
    write_container(path, TAG_MEASUREMENT, [m.data])


def load_measurement(path) -> Measurement:
    _, (v,) = read_container(path, TAG_MEASUREMENT)
    return Measurement(v)


def save_disks(path, spec: DiskSpec):
    write_container(path, TAG_DISKS, [spec.disks])


def load_disks(path) -> DiskSpec:
    _, (v,) = read_container(path, TAG_DISKS)
    return DiskSpec(v)


def save_fourier(path, fc: FourierCoeffs):
    write_container(path, TAG_FOURIER, [fc.c, fc.d])


def load_fourier(path) -> FourierCoeffs:
    _, (c, d) = read_container(path, TAG_FOURIER)
    return FourierCoeffs((c.shape[0] - 1) // 2, c, d)


def save_weights(path, w: NetWeights):
    write_container(path, TAG_WEIGHTS, [np.array([len(w.conv), len(w.fc)], float)] + w.arrays())


def load_weights(path) -> NetWeights:
    _, arrays = read_container(path, TAG_WEIGHTS)
    n_conv, n_fc = (int(v) for v in arrays[0])
    rest = arrays[1:]
    if len(rest) != 2 * (n_conv + n_fc):
        raise FormatError(f"{path}: weight manifest does not match the payload")
    pairs = [(rest[2 * i], rest[2 * i + 1]) for i in range(n_conv + n_fc)]
    return NetWeights(pairs[:n_conv], pairs[n_conv:])


def save_dataset(path, d: Dataset):
    arrays = [d.X, d.Y]
    if d.stats is not None:
        arrays += [d.stats[0], d.stats[1]]
    write_container(path, TAG_DATASET, arrays)


def load_dataset(path) -> Dataset:
    _, arrays = read_container(path, TAG_DATASET)
    stats = (arrays[2], arrays[3]) if len(arrays) == 4 else None
    return Dataset(arrays[0], arrays[1], stats)


# human-readable outputs


def write_pgm(path, values):
    """8-bit binary PGM with linear min-max scaling (constant input maps to 0)."""
    v = np.asarray(values, dtype=float)
    lo, hi = v.min(), v.max()
    img = np.zeros(v.shape, np.uint8) if hi <= lo else np.round(255 * (v - lo) / (hi - lo)).astype(np.uint8)
    rows, cols = img.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode() + img.tobytes())


def read_pgm(path):
    buf = Path(path).read_bytes()
    parts = buf.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    cols, rows = (int(t) for t in parts[1].split())
    return np.frombuffer(parts[3], np.uint8).reshape(rows, cols)


def write_matrix_csv(path, values):
    np.savetxt(path, np.asarray(values, dtype=float), delimiter=",", fmt="%.17g")


def write_heatmap(stem, values):
    """``stem.pgm`` and ``stem.csv`` for one field; returns both paths."""
    stem = Path(stem)
    write_pgm(stem.with_suffix(".pgm"), values)
    write_matrix_csv(stem.with_suffix(".csv"), values)
    return [stem.with_suffix(".pgm"), stem.with_suffix(".csv")]


def write_csv(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fieldnames})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def point_to_dict(point):
    if isinstance(point, DiskSpec):
        return {"kind": "disk", **point.to_dict()}
    if isinstance(point, FourierCoeffs):
        return {"kind": "fourier", **point.to_dict()}
    raise TypeError(f"cannot serialize {type(point).__name__}")


def point_from_dict(d):
    if d.get("kind") == "disk":
        return DiskSpec.from_dict(d)
    if d.get("kind") == "fourier":
        return FourierCoeffs.from_dict(d)
    raise FormatError(f"unknown prior point kind {d.get('kind')!r}")


def sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, files, extra=None):
    """``manifest.json`` listing every produced file with its size and sha256."""
    out_dir = Path(out_dir)
    entries = []
    for f in sorted({Path(f).resolve() for f in files}):
        entries.append({
            "path": str(f.relative_to(out_dir.resolve())),
            "bytes": f.stat().st_size,
            "sha256": sha256_file(f),
        })
    doc = {"files": entries}
    if extra:
        doc.update(extra)
    write_json(out_dir / "manifest.json", doc)
    return out_dir / "manifest.json"


def history_rows(history):
    return [{"epoch": h["epoch"], "train_mse": repr(h["train_mse"]), "val_mse": repr(h["val_mse"])}
            for h in history]


def write_history(path, history):
    write_csv(path, history_rows(history), ["epoch", "train_mse", "val_mse"])


def net_config_from_dict(d) -> NetConfig:
    return NetConfig(**d)
