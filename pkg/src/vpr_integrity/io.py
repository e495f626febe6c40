"""Dataset and model file formats.

Dataset directory::

    poses.csv      index,x,y,theta[,odom]    (index is 1-based)
    features.bin   b"VPRF", u32 version, u32 n, u32 m, n*m little-endian f32
    provenance.csv optional synthetic truth (query directories only)

A traverse can also be a single CSV whose rows are
``index,x,y,theta[,odom],f1,...,fm``.

Model file (all little-endian)::

    b"VPRM", u32 format version, u32 catalogue version, u32 layer count
    per layer: u32 rows, u32 cols, rows*cols f32 weights (row-major), rows f32 biases
    u32 input dim, input-dim f32 means, input-dim f32 std-devs
    f64 decision threshold, f64 alpha used
    u32 CRC32 of every preceding byte
"""

from __future__ import annotations

import csv
import enum
import io as _io
import struct
import zlib
from pathlib import Path

import numpy as np

from .core import QueryStream, SynthTruth, Traverse
from .errors import ChecksumError, DatasetError, DimensionError, ModelFormatError, VersionError
from .featurizer import CATALOGUE_VERSION
from .mlp import MlpModel

FEATURES_MAGIC = b"VPRF"
FEATURES_VERSION = 1
MODEL_MAGIC = b"VPRM"
MODEL_VERSION = 1


class TraverseFormat(str, enum.Enum):
    DIRECTORY = "dir"
    CSV = "csv"


def _fmt(x: float) -> str:
    return repr(float(x))


# -- features.bin ----------------------------------------------------------

def write_features(path, features: np.ndarray) -> None:
    f = np.ascontiguousarray(features, dtype="<f4")
    n, m = f.shape
    with open(path, "wb") as fh:
        fh.write(FEATURES_MAGIC + struct.pack("<III", FEATURES_VERSION, n, m))
        fh.write(f.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != FEATURES_MAGIC:
        raise DatasetError(f"{path}: not a VPRF feature file")
    version, n, m = struct.unpack_from("<III", data, 4)
    if version != FEATURES_VERSION:
        raise DatasetError(f"{path}: unsupported feature file version {version}")
    expected = 16 + 4 * n * m
    if len(data) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes for {n}x{m} features, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(n, m).astype(np.float32)


# -- poses.csv -------------------------------------------------------------

def _write_poses(path, poses: np.ndarray, odom: np.ndarray | None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "x", "y", "theta"] + (["odom"] if odom is not None else []))
        for i, (x, y, t) in enumerate(poses):
            row = [i + 1, _fmt(x), _fmt(y), _fmt(t)]
            if odom is not None:
                row.append(_fmt(odom[i]))
            w.writerow(row)


def _parse_float(text, row, what):
    try:
        return float(text)
    except ValueError:
        raise DatasetError(f"cannot parse {what} {text!r}", row=row) from None


def _read_pose_rows(path, allow_features: bool):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:4] != ["index", "x", "y", "theta"]:
        raise DatasetError(f"{path}: header must start with index,x,y,theta, got {header[:4]}")
    has_odom = len(header) > 4 and header[4] == "odom"
    n_fixed = 5 if has_odom else 4
    n_feat = len(header) - n_fixed
    if n_feat and not allow_features:
        raise DatasetError(f"{path}: unexpected columns {header[n_fixed:]}")
    poses, odom, feats = [], [], []
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            if allow_features and len(row) > n_fixed:
                raise DatasetError(
                    f"feature dimension {len(row) - n_fixed}, expected {n_feat}", row=r)
            raise DatasetError(f"expected {len(header)} fields, got {len(row)}", row=r)
        poses.append([_parse_float(v, r, c) for v, c in zip(row[1:4], ("x", "y", "theta"))])
        if has_odom:
            odom.append(_parse_float(row[4], r, "odom"))
        if n_feat:
            feats.append([_parse_float(v, r, "feature") for v in row[n_fixed:]])
    if not poses:
        raise DatasetError(f"{path}: no data rows")
    return (np.array(poses), np.array(odom) if has_odom else None,
            np.array(feats, dtype=np.float32) if n_feat else None)


def _rebased_odom(odom, where):
    if odom is None:
        return None
    if not np.all(np.isfinite(odom)):
        raise DatasetError(f"{where}: non-finite odometry", row=int(np.argmax(~np.isfinite(odom))))
    bad = np.flatnonzero(np.diff(odom) < 0)
    if bad.size:
        raise DatasetError(f"{where}: odometry decreases", row=int(bad[0]) + 1)
    return odom - odom[0]


# -- traverse --------------------------------------------------------------

def save_traverse(traverse: Traverse, path, fmt=TraverseFormat.DIRECTORY, with_odom: bool = True) -> None:
    fmt = TraverseFormat(fmt)
    path = Path(path)
    odom = traverse.odom if with_odom else None
    if fmt is TraverseFormat.DIRECTORY:
        path.mkdir(parents=True, exist_ok=True)
        _write_poses(path / "poses.csv", traverse.poses, odom)
        write_features(path / "features.bin", traverse.features)
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["index", "x", "y", "theta"] + (["odom"] if with_odom else [])
        w.writerow(head + [f"f{j + 1}" for j in range(traverse.dim)])
        for i in range(len(traverse)):
            row = [i + 1] + [_fmt(v) for v in traverse.poses[i]]
            if with_odom:
                row.append(_fmt(traverse.odom[i]))
            w.writerow(row + [_fmt(v) for v in traverse.features[i]])


def load_traverse(path, fmt=TraverseFormat.DIRECTORY, label: str | None = None) -> Traverse:
    """Load and validate a reference traverse.

    Odometry is taken from the file when present (rebased to start at 0);
    otherwise it is the running sum of pose gaps.
    """
    fmt = TraverseFormat(fmt)
    path = Path(path)
    if fmt is TraverseFormat.DIRECTORY:
        poses, odom, _ = _read_pose_rows(path / "poses.csv", allow_features=False)
        feats = read_features(path / "features.bin")
        if feats.shape[0] != poses.shape[0]:
            raise DimensionError(f"{path}: {poses.shape[0]} poses but {feats.shape[0]} feature rows")
    else:
        poses, odom, feats = _read_pose_rows(path, allow_features=True)
        if feats is None:
            raise DatasetError(f"{path}: no feature columns")
    return Traverse(poses, feats, _rebased_odom(odom, path), label=label if label is not None else path.stem)


# -- query stream ----------------------------------------------------------

def save_queries(queries: QueryStream, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_poses(path / "poses.csv", queries.gt_poses, queries.odometer)
    write_features(path / "features.bin", queries.features)
    if queries.truth is not None:
        t = queries.truth
        with open(path / "provenance.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query", "gt_index", "aliased", "source_index"])
            for k in range(len(t.gt_index)):
                w.writerow([k + 1, int(t.gt_index[k]) + 1, int(t.aliased[k]), int(t.source_index[k]) + 1])


def load_queries(path, rate_hint: float = 10.0) -> QueryStream:
    path = Path(path)
    poses, odom, _ = _read_pose_rows(path / "poses.csv", allow_features=False)
    if odom is None:
        raise DatasetError(f"{path}: query poses.csv needs an odom (odometer) column")
    feats = read_features(path / "features.bin")
    if feats.shape[0] != poses.shape[0]:
        raise DimensionError(f"{path}: {poses.shape[0]} poses but {feats.shape[0]} feature rows")
    truth = None
    prov = path / "provenance.csv"
    if prov.exists():
        with open(prov, newline="") as fh:
            rows = list(csv.DictReader(fh))
        truth = SynthTruth(
            gt_index=np.array([int(r["gt_index"]) - 1 for r in rows]),
            aliased=np.array([r["aliased"] == "1" for r in rows]),
            source_index=np.array([int(r["source_index"]) - 1 for r in rows]),
        )
    return QueryStream(feats, poses, odom, rate_hint=rate_hint, truth=truth)


def save_dataset(traverse: Traverse, queries: QueryStream, path) -> None:
    """Write ``reference/`` and ``query/`` subdirectories under ``path``."""
    path = Path(path)
    save_traverse(traverse, path / "reference")
    save_queries(queries, path / "query")


def load_dataset(path) -> tuple[Traverse, QueryStream]:
    path = Path(path)
    if not (path / "reference").is_dir() or not (path / "query").is_dir():
        raise DatasetError(f"{path}: expected reference/ and query/ subdirectories")
    traverse = load_traverse(path / "reference", label=path.name)
    queries = load_queries(path / "query")
    if queries.dim != traverse.dim:
        raise DimensionError(f"query dimension {queries.dim} != reference dimension {traverse.dim}")
    return traverse, queries


# -- model -----------------------------------------------------------------

def model_to_bytes(model: MlpModel) -> bytes:
    if model.n_hidden < 1:
        raise ModelFormatError("model has no hidden layers")
    buf = _io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<III", MODEL_VERSION, model.catalogue_version, len(model.weights)))
    for w, b in zip(model.weights, model.biases):
        rows, cols = w.shape
        buf.write(struct.pack("<II", rows, cols))
        buf.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f4").tobytes())
    buf.write(struct.pack("<I", model.input_dim))
    buf.write(np.ascontiguousarray(model.input_mean, dtype="<f4").tobytes())
    buf.write(np.ascontiguousarray(model.input_std, dtype="<f4").tobytes())
    buf.write(struct.pack("<dd", model.threshold, model.alpha_used))
    payload = buf.getvalue()
    return payload + struct.pack("<I", zlib.crc32(payload))


def model_from_bytes(data: bytes, expected_catalogue: int | None = CATALOGUE_VERSION) -> MlpModel:
    if len(data) < 8 or data[:4] != MODEL_MAGIC:
        raise ModelFormatError("not a VPRM model file")
    payload, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(payload) != crc:
        raise ChecksumError("model checksum mismatch (file truncated or corrupt)")
    try:
        off = 4
        version, cat_version, n_layers = struct.unpack_from("<III", payload, off)
        off += 12
        if version != MODEL_VERSION:
            raise VersionError(f"unsupported model format version {version}")
        if expected_catalogue is not None and cat_version != expected_catalogue:
            raise VersionError(
                f"model uses statistic catalogue v{cat_version}, this build has v{expected_catalogue}")
        weights, biases = [], []
        for _ in range(n_layers):
            rows, cols = struct.unpack_from("<II", payload, off)
            off += 8
            w = np.frombuffer(payload, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
            off += 4 * rows * cols
            b = np.frombuffer(payload, dtype="<f4", count=rows, offset=off)
            off += 4 * rows
            weights.append(w.astype(np.float32))
            biases.append(b.astype(np.float32))
        (dim,) = struct.unpack_from("<I", payload, off)
        off += 4
        mean = np.frombuffer(payload, dtype="<f4", count=dim, offset=off).astype(np.float32)
        off += 4 * dim
        std = np.frombuffer(payload, dtype="<f4", count=dim, offset=off).astype(np.float32)
        off += 4 * dim
        threshold, alpha = struct.unpack_from("<dd", payload, off)
        off += 16
    except (struct.error, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"model file is malformed: {exc}") from None
    if off != len(payload):
        raise ModelFormatError(f"{len(payload) - off} trailing bytes in model file")
    if n_layers < 2:
        raise ModelFormatError("model has no hidden layers")
    return MlpModel(tuple(weights), tuple(biases), mean, std, threshold, cat_version, alpha)


def save_model(model: MlpModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path, expected_catalogue: int | None = CATALOGUE_VERSION) -> MlpModel:
    return model_from_bytes(Path(path).read_bytes(), expected_catalogue)
